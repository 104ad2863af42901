fn main() {
    std::process::exit(drgbt_core::cli::main_from(std::env::args_os()));
}
