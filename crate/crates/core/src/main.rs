fn main() {
    std::process::exit(tmm::cli::run(std::env::args_os()));
}
