fn main() {
    std::process::exit(heteroview::cli::run(std::env::args_os()));
}
