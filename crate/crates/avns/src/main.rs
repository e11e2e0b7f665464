fn main() {
    std::process::exit(avns::cli::main_with_args(std::env::args_os()));
}
