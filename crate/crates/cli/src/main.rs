fn main() {
    std::process::exit(skyfed::run(std::env::args_os()));
}
