fn main() {
    std::process::exit(conner::cli::run(std::env::args_os()));
}
