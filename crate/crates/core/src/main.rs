fn main() -> std::process::ExitCode {
    qpburst::cli::main_with_args(std::env::args_os())
}
