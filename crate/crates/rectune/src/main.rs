fn main() {
    std::process::exit(rectune::cli::main_entry());
}
