fn main() {
    std::process::exit(hashbreak::cli::main());
}
