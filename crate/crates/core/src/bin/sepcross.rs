fn main() {
    std::process::exit(sepcross::cli::main_with_args(std::env::args_os()));
}
