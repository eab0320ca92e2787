fn main() {
    std::process::exit(mlmc_cli::run(std::env::args_os()));
}
