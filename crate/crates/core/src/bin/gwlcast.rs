fn main() {
    std::process::exit(gwlcast::cli::main_with_args(std::env::args_os()));
}
