fn main() -> std::process::ExitCode {
    amech::cli::main()
}
