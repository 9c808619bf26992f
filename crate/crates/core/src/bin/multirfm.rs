fn main() {
    std::process::exit(multirfm::cli::run(std::env::args_os()));
}
