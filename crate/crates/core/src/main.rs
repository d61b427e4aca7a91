fn main() {
    std::process::exit(toolken::cli::run(std::env::args_os()));
}
