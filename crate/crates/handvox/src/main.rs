use clap::Parser;
use handvox::commands::{exit_code, run, Cli};

fn main() {
    let cli = Cli::parse();
    if let Some(workers) = cli.workers {
        // Data-pipeline parallelism only; ignored if a pool already exists.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build_global();
    }
    if let Err(err) = run(&cli) {
        eprintln!("error: {err}");
        std::process::exit(exit_code(&cli.cmd, &err));
    }
}
