fn main() -> std::process::ExitCode {
    fsdn::cli::main_with_args(std::env::args_os())
}
