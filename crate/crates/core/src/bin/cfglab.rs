fn main() {
    std::process::exit(cfglab::cli::dispatch(std::env::args_os()));
}
