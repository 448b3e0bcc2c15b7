fn main() {
    std::process::exit(patchflow::commands::run(std::env::args_os()));
}
