fn main() -> std::process::ExitCode {
    fbl_core::cli::main()
}
