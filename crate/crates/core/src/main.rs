fn main() {
    std::process::exit(lrpn::cli::run(std::env::args_os()));
}
