fn main() {
    std::process::exit(dwl_core::cli::main());
}
