fn main() {
    std::process::exit(rbwalk::cli::main_with_args(std::env::args_os()));
}
