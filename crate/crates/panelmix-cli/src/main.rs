fn main() {
    std::process::exit(panelmix_cli::run(std::env::args_os()));
}
