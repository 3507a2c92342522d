fn main() {
    std::process::exit(cascade_lab::cli::run(std::env::args_os()));
}
