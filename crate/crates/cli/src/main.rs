fn main() -> std::process::ExitCode {
    partner_cli::main_entry()
}
