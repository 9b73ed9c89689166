fn main() {
    std::process::exit(hornlab_cli::commands::main_with_args(std::env::args_os()));
}
