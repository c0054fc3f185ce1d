fn main() {
    std::process::exit(console_core::cli::dispatch(std::env::args_os()));
}
