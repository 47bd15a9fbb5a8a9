fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("CFB_LOG_LEVEL", "warn")).init();
    std::process::exit(cfb::cli::run(std::env::args().skip(1)));
}
