fn main() -> std::process::ExitCode {
    normalign::cli::main()
}
