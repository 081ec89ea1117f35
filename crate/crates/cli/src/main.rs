fn main() {
    let mut stdout = std::io::stdout().lock();
    let mut stderr = std::io::stderr().lock();
    let code = crosscam_cli::run(std::env::args_os(), &mut stdout, &mut stderr);
    drop(stdout);
    std::process::exit(code);
}
