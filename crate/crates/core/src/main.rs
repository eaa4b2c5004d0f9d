fn main() {
    std::process::exit(atp_core::cli::main());
}
