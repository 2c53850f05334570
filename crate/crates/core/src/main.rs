//! `milne` command-line entry point.

fn main() {
    std::process::exit(milne::cli::run_from_args(std::env::args_os()));
}
