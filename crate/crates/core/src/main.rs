fn main() {
    std::process::exit(kgfl::cli::main_with(std::env::args_os()));
}
