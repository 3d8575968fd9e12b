fn main() -> std::process::ExitCode {
    pbdcae::cli::main_with(std::env::args_os())
}
