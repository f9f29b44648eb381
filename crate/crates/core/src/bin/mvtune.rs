fn main() {
    env_logger::init();
    std::process::exit(mvtune::cli::run(std::env::args_os()));
}
