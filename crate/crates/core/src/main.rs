fn main() {
    std::process::exit(fanotrap::cli::main(std::env::args_os()));
}
