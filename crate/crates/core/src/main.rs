fn main() -> std::process::ExitCode {
    risplan::harness::main_with_args(std::env::args_os())
}
