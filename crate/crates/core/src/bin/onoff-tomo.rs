fn main() {
    std::process::exit(onoff_tomo::cli::main_with_args(std::env::args_os()));
}
