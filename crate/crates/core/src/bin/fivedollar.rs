fn main() {
    std::process::exit(fivedollar::cli::run(std::env::args_os()));
}
