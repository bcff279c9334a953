fn main() {
    std::process::exit(nonhol_cli::run(std::env::args_os()));
}
