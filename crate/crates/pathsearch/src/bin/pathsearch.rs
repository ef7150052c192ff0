fn main() {
    std::process::exit(pathsearch::cli::run(std::env::args().collect()));
}
