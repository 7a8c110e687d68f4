fn main() {
    std::process::exit(hbtsim::main_with_args(std::env::args_os()));
}
