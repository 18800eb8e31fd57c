fn main() {
    std::process::exit(gdm::cli::cli_main(std::env::args_os()));
}
