fn main() {
    std::process::exit(tcbench::cli::main_with_args(std::env::args_os()));
}
