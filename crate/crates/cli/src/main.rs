fn main() {
    std::process::exit(hbmlab_cli::run(std::env::args().collect()));
}
