fn main() {
    std::process::exit(exprb::cli::run(std::env::args_os()));
}
