fn main() {
    std::process::exit(codeie::cli::main());
}
