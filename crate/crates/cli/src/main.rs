fn main() {
    std::process::exit(fairscope_cli::run(std::env::args_os()));
}
