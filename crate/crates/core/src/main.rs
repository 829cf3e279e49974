use clap::Parser;

fn main() -> std::process::ExitCode {
    msign::cli::main_with(msign::cli::Cli::parse())
}
