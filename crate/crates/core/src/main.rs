fn main() {
    std::process::exit(agar_lab::harness::cli(std::env::args_os()));
}
