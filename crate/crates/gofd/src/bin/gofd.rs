fn main() {
    std::process::exit(gofd::experiment::run(std::env::args_os()));
}
