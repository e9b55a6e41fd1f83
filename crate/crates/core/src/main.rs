fn main() {
    std::process::exit(smearnet::cli::run(std::env::args_os()));
}
