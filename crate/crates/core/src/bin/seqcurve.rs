fn main() {
    std::process::exit(seqcurve::cli::run(std::env::args_os()));
}
