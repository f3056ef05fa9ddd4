fn main() {
    std::process::exit(rawgat_cli::run(std::env::args_os()));
}
