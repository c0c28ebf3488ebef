fn main() {
    std::process::exit(troplift::cli::run(std::env::args_os()));
}
