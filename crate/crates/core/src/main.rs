fn main() {
    std::process::exit(sar_roughness::cli::main_with_args(std::env::args_os()));
}
