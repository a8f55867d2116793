fn main() {
    corrguide::cli::init_logging();
    std::process::exit(corrguide::cli::main_with(std::env::args_os()));
}
