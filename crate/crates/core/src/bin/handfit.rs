fn main() -> std::process::ExitCode {
    handfit::cli::main()
}
