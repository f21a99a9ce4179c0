fn main() {
    let code = bandshare::cli::parse_and_dispatch(std::env::args_os());
    std::process::exit(code);
}
