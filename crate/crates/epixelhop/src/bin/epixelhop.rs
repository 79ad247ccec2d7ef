fn main() {
    std::process::exit(epixelhop::cli::run(std::env::args_os()));
}
