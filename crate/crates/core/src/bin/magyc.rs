fn main() {
    std::process::exit(magyc::cli::main_with(std::env::args_os()));
}
