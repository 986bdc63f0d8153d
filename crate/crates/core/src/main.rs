fn main() {
    std::process::exit(gptcm::cli::run(std::env::args_os()));
}
