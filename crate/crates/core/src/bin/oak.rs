fn main() {
    std::process::exit(oak_core::cli::dispatch(std::env::args()));
}
