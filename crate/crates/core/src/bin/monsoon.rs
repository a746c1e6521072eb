fn main() {
    std::process::exit(monsoon_core::cli::run(std::env::args_os()));
}
