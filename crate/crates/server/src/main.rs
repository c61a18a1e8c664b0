fn main() {
    std::process::exit(kinetune_server::cli::run(std::env::args_os()));
}
