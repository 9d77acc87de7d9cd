fn main() {
    std::process::exit(vlcsim_cli::run_command(std::env::args_os()));
}
