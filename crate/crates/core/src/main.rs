fn main() {
    std::process::exit(posi::cli::run(std::env::args_os()));
}
