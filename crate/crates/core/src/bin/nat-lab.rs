fn main() {
    std::process::exit(nat_lab::cli::main_with(std::env::args_os()));
}
