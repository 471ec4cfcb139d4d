fn main() {
    std::process::exit(seawatch_cli::run(std::env::args_os()));
}
