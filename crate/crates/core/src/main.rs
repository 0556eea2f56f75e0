fn main() {
    std::process::exit(mbpetc::cli::run_cli(std::env::args_os()));
}
