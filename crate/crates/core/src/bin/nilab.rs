fn main() {
    env_logger::init();
    std::process::exit(nilab::cli::run(std::env::args_os()));
}
