fn main() {
    std::process::exit(surfscatter::run(std::env::args_os()));
}
