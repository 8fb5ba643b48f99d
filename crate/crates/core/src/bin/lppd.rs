fn main() {
    std::process::exit(lppd::cli::run(std::env::args_os()));
}
