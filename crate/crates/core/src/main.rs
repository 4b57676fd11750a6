fn main() {
    std::process::exit(pixelmeta::cli::dispatch(std::env::args_os()));
}
