fn main() -> std::process::ExitCode {
    shield_mppi::cli::main()
}
