fn main() {
    std::process::exit(ringlaw::cli::main_entry());
}
