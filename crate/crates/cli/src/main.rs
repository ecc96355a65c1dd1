fn main() {
    if let Err(e) = maca_cli::run(std::env::args_os()) {
        eprintln!("maca: {e}");
        std::process::exit(e.exit_code());
    }
}
