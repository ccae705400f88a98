fn main() -> std::process::ExitCode {
    wbgnn::cli::main_from(std::env::args_os())
}
