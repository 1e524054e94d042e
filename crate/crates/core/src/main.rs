fn main() {
    std::process::exit(spike_assoc::cli::run(std::env::args_os()));
}
