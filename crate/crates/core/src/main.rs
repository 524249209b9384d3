fn main() -> std::process::ExitCode {
    sarsr::cli::main()
}
