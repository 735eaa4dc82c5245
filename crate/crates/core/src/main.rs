fn main() -> std::process::ExitCode {
    persiland::cli::main()
}
