fn main() {
    std::process::exit(ringfed_cli::run(std::env::args_os()));
}
