fn main() {
    std::process::exit(densewarp_cli::main_with(std::env::args_os()));
}
