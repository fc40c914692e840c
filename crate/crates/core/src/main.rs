fn main() {
    std::process::exit(headwise::cli::main());
}
