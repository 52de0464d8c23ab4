fn main() {
    std::process::exit(decam::cli::run(std::env::args_os()));
}
