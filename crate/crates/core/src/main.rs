fn main() {
    std::process::exit(smgof::cli::main_with_args(std::env::args_os()));
}
