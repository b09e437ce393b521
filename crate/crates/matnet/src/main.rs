fn main() {
    std::process::exit(matnet::cli::run(std::env::args_os()));
}
