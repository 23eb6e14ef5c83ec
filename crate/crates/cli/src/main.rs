fn main() {
    std::process::exit(bllab_cli::main_with_args(std::env::args_os()));
}
