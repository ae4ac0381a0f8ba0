fn main() {
    std::process::exit(dgppo::cli::run(std::env::args_os()));
}
