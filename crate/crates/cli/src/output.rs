//! Output directories and the run manifest.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

/// Version string in `git describe` style.
pub fn version() -> String {
    format!("v{}", env!("CARGO_PKG_VERSION"))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunManifest {
    pub scenario: PathBuf,
    pub command: String,
    pub output: PathBuf,
    pub seed: u64,
    pub version: String,
}

impl RunManifest {
    pub fn to_text(&self) -> String {
        format!(
            "scenario = {}\ncommand = {}\noutput = {}\nseed = {}\nversion = {}\n",
            self.scenario.display(),
            self.command,
            self.output.display(),
            self.seed,
            self.version
        )
    }
}

/// Results are written into a hidden staging directory next to the target
/// and renamed into place on [`OutputDir::commit`], so a failed run never
/// leaves a half-written output directory. An existing non-empty target is
/// an error unless `force` is set.
#[derive(Debug)]
pub struct OutputDir {
    staging: PathBuf,
    target: PathBuf,
    force: bool,
    committed: bool,
}

impl OutputDir {
    pub fn create(target: &Path, force: bool) -> io::Result<Self> {
        let parent = match target.parent() {
            Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
            _ => PathBuf::from("."),
        };
        let name = target
            .file_name()
            .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, "output path has no final component"))?;
        if !force && target.exists() && fs::read_dir(target)?.next().is_some() {
            return Err(io::Error::new(
                io::ErrorKind::AlreadyExists,
                format!("{} exists and is not empty (use --force)", target.display()),
            ));
        }
        fs::create_dir_all(&parent)?;
        let staging = parent.join(format!(".{}.partial-{}", name.to_string_lossy(), std::process::id()));
        if staging.exists() {
            fs::remove_dir_all(&staging)?;
        }
        fs::create_dir(&staging)?;
        Ok(Self {
            staging,
            target: target.to_path_buf(),
            force,
            committed: false,
        })
    }

    pub fn write(&self, name: &str, contents: &str) -> io::Result<()> {
        fs::write(self.staging.join(name), contents)
    }

    pub fn commit(mut self) -> io::Result<PathBuf> {
        if self.force && self.target.exists() {
            fs::remove_dir_all(&self.target)?;
        }
        fs::rename(&self.staging, &self.target)?;
        self.committed = true;
        Ok(self.target.clone())
    }
}

impl Drop for OutputDir {
    fn drop(&mut self) {
        if !self.committed {
            let _ = fs::remove_dir_all(&self.staging);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn commit_moves_files_into_place() {
        let tmp = tempfile::tempdir().unwrap();
        let target = tmp.path().join("run");
        let out = OutputDir::create(&target, false).unwrap();
        out.write("a.txt", "hi").unwrap();
        assert!(!target.exists());
        out.commit().unwrap();
        assert_eq!(fs::read_to_string(target.join("a.txt")).unwrap(), "hi");
        // Only the committed directory is left behind.
        assert_eq!(fs::read_dir(tmp.path()).unwrap().count(), 1);
    }

    #[test]
    fn dropped_output_leaves_nothing() {
        let tmp = tempfile::tempdir().unwrap();
        let target = tmp.path().join("run");
        {
            let out = OutputDir::create(&target, false).unwrap();
            out.write("a.txt", "hi").unwrap();
        }
        assert_eq!(fs::read_dir(tmp.path()).unwrap().count(), 0);
    }

    #[test]
    fn refuses_non_empty_target_without_force() {
        let tmp = tempfile::tempdir().unwrap();
        let target = tmp.path().join("run");
        fs::create_dir(&target).unwrap();
        fs::write(target.join("old"), "x").unwrap();
        assert!(OutputDir::create(&target, false).is_err());
        let out = OutputDir::create(&target, true).unwrap();
        out.write("new", "y").unwrap();
        out.commit().unwrap();
        assert!(!target.join("old").exists());
        assert!(target.join("new").exists());
    }
}
