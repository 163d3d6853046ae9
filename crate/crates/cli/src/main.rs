fn main() {
    if let Err(e) = wcnn_cli::configure_threads() {
        eprintln!("error: {e}");
        std::process::exit(2);
    }
    std::process::exit(wcnn_cli::run(std::env::args_os()));
}
