fn main() {
    std::process::exit(dcnet_cli::app::main_with(std::env::args_os()));
}
