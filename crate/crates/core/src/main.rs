fn main() -> std::process::ExitCode {
    rsm::cli::main()
}
