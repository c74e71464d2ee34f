fn main() {
    std::process::exit(netmoments::cli::run(std::env::args_os()));
}
