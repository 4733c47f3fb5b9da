fn main() {
    let argv: Vec<String> = std::env::args().collect();
    smae_cli::init_logging(&argv);
    let code = smae_cli::run(&argv, &mut std::io::stdout().lock(), &mut std::io::stderr());
    std::process::exit(code);
}
