fn main() {
    std::process::exit(mnmt::cli::run(std::env::args_os()));
}
