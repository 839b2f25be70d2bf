fn main() -> std::process::ExitCode {
    compostruct::harness::cli::main()
}
