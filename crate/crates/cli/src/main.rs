fn main() {
    std::process::exit(qe_cli::run(std::env::args_os()));
}
