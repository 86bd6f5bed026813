fn main() {
    env_logger::Builder::new().filter_level(log::LevelFilter::Warn).parse_default_env().init();
    std::process::exit(sphere_osr::cli::main_with(std::env::args_os()));
}
