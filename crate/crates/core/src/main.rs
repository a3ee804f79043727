fn main() {
    std::process::exit(ntuplex::cli::main_entry());
}
