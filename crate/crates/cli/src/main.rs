fn main() {
    std::process::exit(maxgain_cli::run(std::env::args_os()));
}
