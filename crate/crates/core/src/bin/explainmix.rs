fn main() {
    std::process::exit(explainmix::cli::run(std::env::args_os()));
}
