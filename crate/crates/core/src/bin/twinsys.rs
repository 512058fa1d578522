fn main() {
    std::process::exit(twinsys::cli::run(std::env::args_os()));
}
