fn main() {
    std::process::exit(hamexpand::cli::main_with_args(std::env::args_os()));
}
