fn main() -> std::process::ExitCode {
    morse_cells_cli::app::main()
}
