fn main() {
    std::process::exit(kdv_core::experiments::cli_dispatch(std::env::args_os()));
}
