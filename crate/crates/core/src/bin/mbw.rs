fn main() -> std::process::ExitCode {
    mbw::cli::main()
}
