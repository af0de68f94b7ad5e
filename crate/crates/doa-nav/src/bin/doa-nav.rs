fn main() {
    std::process::exit(doa_nav::harness::cli_main());
}
