fn main() {
    std::process::exit(gabor_splat::cli::run(std::env::args_os()));
}
