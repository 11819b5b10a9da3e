fn main() {
    std::process::exit(cap_core::cli::main_with(std::env::args_os()));
}
