fn main() {
    std::process::exit(neurotraj_cli::run(std::env::args_os()));
}
