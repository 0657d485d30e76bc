fn main() {
    std::process::exit(stratascan::cli::run(std::env::args_os()));
}
