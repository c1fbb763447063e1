fn main() {
    std::process::exit(mcfg::harness::cli_main(std::env::args_os()));
}
