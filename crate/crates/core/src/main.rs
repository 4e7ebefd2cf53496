fn main() {
    std::process::exit(tiltlink::cli::run());
}
