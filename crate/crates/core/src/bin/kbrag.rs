fn main() {
    std::process::exit(kbrag::cli::main());
}
