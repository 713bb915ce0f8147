fn main() {
    std::process::exit(bregaccel::cli::run(std::env::args_os()));
}
