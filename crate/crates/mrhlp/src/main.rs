fn main() {
    std::process::exit(mrhlp::cli::dispatch(std::env::args_os()));
}
