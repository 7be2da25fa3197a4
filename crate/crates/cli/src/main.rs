fn main() {
    std::process::exit(solmplan_cli::run(std::env::args_os()));
}
