//! Linear-fractional minimization over a box via the Charnes-Cooper transform.
//!
//! `min (c·p + β) / (d·p + γ)` over `lo ≤ p ≤ hi` becomes, with `z = 1/(d·p+γ)`
//! and `q = p z`, the linear program
//!
//! ```text
//! min c·q + β z   s.t.   d·q + γ z = 1,   z ≥ ε,   z·lo ≤ q ≤ z·hi
//! ```
//!
//! which has three variables, so its vertices can be enumerated exactly.

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

use crate::model::Vec2;

/// Lower bound standing in for the open constraint `z > 0`.
pub const Z_MIN: f64 = 1e-12;

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
pub enum LpError {
    #[error("linear program is infeasible")]
    Infeasible,
    #[error("linear program is unbounded (denominator changes sign on the box)")]
    Unbounded,
}

/// `min objective·(q, z)` subject to `constraint·(q, z) = rhs`, `z ≥ Z_MIN`
/// and `z·lo ≤ q ≤ z·hi`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxLp {
    pub objective: [f64; 3],
    pub constraint: [f64; 3],
    pub rhs: f64,
    pub lo: Vec2,
    pub hi: Vec2,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LpSolution {
    pub q: Vec2,
    pub z: f64,
    pub value: f64,
}

fn corners(lo: Vec2, hi: Vec2) -> [Vec2; 4] {
    [
        Vec2::new(lo.x, lo.y),
        Vec2::new(hi.x, lo.y),
        Vec2::new(lo.x, hi.y),
        Vec2::new(hi.x, hi.y),
    ]
}

impl BoxLp {
    fn affine(&self, p: Vec2) -> f64 {
        self.constraint[0] * p.x + self.constraint[1] * p.y + self.constraint[2]
    }

    fn value(&self, x: &Vector3<f64>) -> f64 {
        Vector3::from(self.objective).dot(x)
    }

    /// Inequalities as rows `r` with `r·x ≥ s`.
    fn inequalities(&self) -> [([f64; 3], f64); 5] {
        [
            ([1.0, 0.0, -self.lo.x], 0.0),
            ([0.0, 1.0, -self.lo.y], 0.0),
            ([-1.0, 0.0, self.hi.x], 0.0),
            ([0.0, -1.0, self.hi.y], 0.0),
            ([0.0, 0.0, 1.0], Z_MIN),
        ]
    }
}

/// Solve a [`BoxLp`] exactly by enumerating its vertices.
///
/// Ties are broken deterministically: if every vertex attains the optimum the
/// image of the box center is returned, otherwise the mean of the optimal
/// vertices (a point of the optimal face).
pub fn solve_box_lp(lp: &BoxLp) -> Result<LpSolution, LpError> {
    if !(lp.lo.x <= lp.hi.x && lp.lo.y <= lp.hi.y) || lp.rhs <= 0.0 {
        return Err(LpError::Infeasible);
    }
    let signs: Vec<f64> = corners(lp.lo, lp.hi).iter().map(|&c| lp.affine(c)).collect();
    if signs.iter().all(|&s| s <= 0.0) {
        return Err(LpError::Infeasible);
    }
    if signs.iter().any(|&s| s <= 0.0) {
        return Err(LpError::Unbounded);
    }

    let ineq = lp.inequalities();
    let scale = 1.0 + lp.lo.abs().max().max(lp.hi.abs().max());
    let mut vertices: Vec<Vector3<f64>> = Vec::with_capacity(10);
    for a in 0..ineq.len() {
        for b in a + 1..ineq.len() {
            let m = Matrix3::from_rows(&[
                Vector3::from(lp.constraint).transpose(),
                Vector3::from(ineq[a].0).transpose(),
                Vector3::from(ineq[b].0).transpose(),
            ]);
            let Some(x) = m.lu().solve(&Vector3::new(lp.rhs, ineq[a].1, ineq[b].1)) else {
                continue;
            };
            let feasible = ineq.iter().all(|(row, s)| {
                Vector3::from(*row).dot(&x) >= s - 1e-12 * scale * x[2].abs().max(1.0)
            });
            if feasible && x.iter().all(|v| v.is_finite()) {
                vertices.push(x);
            }
        }
    }
    if vertices.is_empty() {
        return Err(LpError::Infeasible);
    }

    let values: Vec<f64> = vertices.iter().map(|x| lp.value(x)).collect();
    let best = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let tol = 1e-12 * (1.0 + best.abs());
    let tied: Vec<&Vector3<f64>> = vertices
        .iter()
        .zip(&values)
        .filter(|(_, v)| **v <= best + tol)
        .map(|(x, _)| x)
        .collect();
    let x = if tied.len() == vertices.len() {
        let center = (lp.lo + lp.hi) * 0.5;
        let z = lp.rhs / lp.affine(center);
        Vector3::new(center.x * z, center.y * z, z)
    } else {
        tied.iter().fold(Vector3::zeros(), |acc, x| acc + **x) / tied.len() as f64
    };
    Ok(LpSolution {
        q: Vec2::new(x[0], x[1]),
        z: x[2],
        value: lp.value(&x),
    })
}

/// Ratio `(c·p + β) / (d·p + γ)` restricted to an axis-aligned box.
#[derive(Debug, Clone, PartialEq)]
pub struct LinFrac {
    pub num_c: Vec2,
    pub num_beta: f64,
    pub den_d: Vec2,
    pub den_gamma: f64,
    pub center: Vec2,
    /// Half-width of the box in each axis.
    pub radius: f64,
}

impl LinFrac {
    pub fn numerator(&self, p: Vec2) -> f64 {
        self.num_c.dot(&p) + self.num_beta
    }

    pub fn denominator(&self, p: Vec2) -> f64 {
        self.den_d.dot(&p) + self.den_gamma
    }

    pub fn ratio(&self, p: Vec2) -> f64 {
        self.numerator(p) / self.denominator(p)
    }

    pub fn lo(&self) -> Vec2 {
        self.center - Vec2::repeat(self.radius)
    }

    pub fn hi(&self) -> Vec2 {
        self.center + Vec2::repeat(self.radius)
    }

    pub fn corners(&self) -> [Vec2; 4] {
        corners(self.lo(), self.hi())
    }

    /// True when the denominator is positive on the whole box. Checking the
    /// corners suffices because the denominator is affine.
    pub fn denominator_positive(&self) -> bool {
        self.corners().iter().all(|&c| self.denominator(c) > 0.0)
    }
}

/// Minimize a [`LinFrac`] over its box.
pub fn charnes_cooper_min(frac: &LinFrac) -> Result<Vec2, LpError> {
    if !(frac.radius > 0.0) {
        return Err(LpError::Infeasible);
    }
    let lp = BoxLp {
        objective: [frac.num_c.x, frac.num_c.y, frac.num_beta],
        constraint: [frac.den_d.x, frac.den_d.y, frac.den_gamma],
        rhs: 1.0,
        lo: frac.lo(),
        hi: frac.hi(),
    };
    let sol = solve_box_lp(&lp)?;
    let p = sol.q / sol.z;
    let (lo, hi) = (frac.lo(), frac.hi());
    Ok(Vec2::new(p.x.clamp(lo.x, hi.x), p.y.clamp(lo.y, hi.y)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frac(c: (f64, f64), beta: f64, d: (f64, f64), gamma: f64) -> LinFrac {
        LinFrac {
            num_c: Vec2::new(c.0, c.1),
            num_beta: beta,
            den_d: Vec2::new(d.0, d.1),
            den_gamma: gamma,
            center: Vec2::new(1.0, -2.0),
            radius: 0.5,
        }
    }

    #[test]
    fn constant_denominator_goes_against_c() {
        let f = frac((1.0, -2.0), 3.0, (0.0, 0.0), 1.0);
        let p = charnes_cooper_min(&f).unwrap();
        assert!((p - Vec2::new(0.5, -1.5)).norm() < 1e-12, "{p}");
    }

    #[test]
    fn constant_numerator_maximizes_denominator() {
        let f = frac((0.0, 0.0), 1.0, (0.3, 0.7), 5.0);
        let p = charnes_cooper_min(&f).unwrap();
        assert!((p - Vec2::new(1.5, -1.5)).norm() < 1e-12, "{p}");
    }

    #[test]
    fn zero_objective_returns_center() {
        let lp = BoxLp {
            objective: [0.0; 3],
            constraint: [0.1, 0.2, 3.0],
            rhs: 1.0,
            lo: Vec2::new(-1.0, -1.0),
            hi: Vec2::new(3.0, 1.0),
        };
        let sol = solve_box_lp(&lp).unwrap();
        let p = sol.q / sol.z;
        assert!((p - Vec2::new(1.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn objective_aligned_with_corner() {
        // Minimizing −x − y with a constant denominator picks the (hi, hi) corner.
        let f = frac((-1.0, -1.0), 0.0, (0.0, 0.0), 2.0);
        assert!((charnes_cooper_min(&f).unwrap() - Vec2::new(1.5, -1.5)).norm() < 1e-12);
    }

    #[test]
    fn sign_change_is_unbounded() {
        let f = frac((1.0, 0.0), 0.0, (1.0, 0.0), -1.0);
        assert_eq!(charnes_cooper_min(&f), Err(LpError::Unbounded));
        let f = frac((1.0, 0.0), 0.0, (0.0, 0.0), -1.0);
        assert_eq!(charnes_cooper_min(&f), Err(LpError::Infeasible));
    }

    #[test]
    fn tied_edge_returns_point_on_edge() {
        // Objective depends on x only: every point with x = lo.x is optimal.
        let f = frac((1.0, 0.0), 0.0, (0.0, 0.0), 1.0);
        let p = charnes_cooper_min(&f).unwrap();
        assert!((p.x - 0.5).abs() < 1e-12);
        assert!((p.y + 2.0).abs() < 1e-12);
    }
}
