fn main() {
    std::process::exit(artiwave_cli::run(std::env::args_os()));
}
