fn main() {
    std::process::exit(rcsdid::cli::run(std::env::args_os()));
}
