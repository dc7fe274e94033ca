fn main() {
    std::process::exit(ldf::cli::run(std::env::args_os()));
}
