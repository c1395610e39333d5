fn main() {
    std::process::exit(cutmove::cli::main_with_args(std::env::args_os()));
}
