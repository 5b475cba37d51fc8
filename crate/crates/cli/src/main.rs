fn main() {
    std::process::exit(ivkit_cli::run_cli(std::env::args_os()));
}
