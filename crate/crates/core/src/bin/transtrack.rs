fn main() {
    std::process::exit(transtrack::cli::main());
}
