fn main() {
    std::process::exit(modens::cli::main_with_args(std::env::args_os()));
}
