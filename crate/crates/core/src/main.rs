fn main() {
    std::process::exit(sast_triage::cli::main_with_args(std::env::args_os()));
}
