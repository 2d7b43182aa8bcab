fn main() {
    std::process::exit(evsynth::cli::main());
}
