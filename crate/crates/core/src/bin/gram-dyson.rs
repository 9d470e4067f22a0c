fn main() {
    std::process::exit(gram_dyson::cli::run(std::env::args_os()));
}
