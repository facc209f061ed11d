fn main() {
    std::process::exit(seg4d::cli::run(std::env::args_os()));
}
