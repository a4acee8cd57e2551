fn main() {
    std::process::exit(graft::cli::run(std::env::args_os()));
}
