fn main() {
    std::process::exit(appeal::cli::run(std::env::args_os()));
}
