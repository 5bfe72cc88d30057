fn main() {
    std::process::exit(marl_regalloc::cli::run(std::env::args_os()));
}
