fn main() {
    std::process::exit(dustflow_cli::main_entry());
}
