fn main() {
    std::process::exit(zubov::cli::run(std::env::args_os()));
}
