fn main() {
    std::process::exit(smad_cli::run(std::env::args_os()));
}
