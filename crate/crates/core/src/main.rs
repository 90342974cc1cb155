use clap::Parser;

fn main() {
    let cli = match meshvox::cli::Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap prints its own message; usage problems exit with 1,
            // --help/--version with 0.
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    std::process::exit(meshvox::cli::run(cli));
}
