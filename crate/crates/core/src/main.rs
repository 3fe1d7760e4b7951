fn main() {
    std::process::exit(asymdistil::cli::run());
}
