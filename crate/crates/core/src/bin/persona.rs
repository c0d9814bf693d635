fn main() {
    std::process::exit(persona::cli::dispatch(std::env::args_os()));
}
