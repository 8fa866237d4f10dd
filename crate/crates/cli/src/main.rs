fn main() {
    std::process::exit(reconverge_cli::main_with(std::env::args_os()));
}
