fn main() {
    std::process::exit(ustpile::cli::main_with_args(std::env::args_os()));
}
