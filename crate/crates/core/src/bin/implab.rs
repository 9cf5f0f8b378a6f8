fn main() {
    std::process::exit(implab::cli::main_from_args());
}
