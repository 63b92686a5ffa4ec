fn main() {
    std::process::exit(lmdl::cli::main());
}
