fn main() {
    std::process::exit(wholebody_cli::main_with_args(std::env::args_os()));
}
