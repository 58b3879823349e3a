fn main() {
    std::process::exit(warp_dirac::cli_runner::main_with_args(std::env::args_os()));
}
