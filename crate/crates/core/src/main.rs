fn main() {
    std::process::exit(pkgscore::cli::run(std::env::args_os()));
}
