fn main() {
    std::process::exit(zfmaser::cli::run(std::env::args_os()));
}
