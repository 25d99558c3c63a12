fn main() {
    eprintln!("phaselab: scenario driver not wired up yet");
    std::process::exit(2);
}
