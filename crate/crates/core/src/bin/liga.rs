use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use liga::harness::{self, RunConfig};

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Command {
    Gen,
    Gradcheck,
    Train,
    Eval,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Switch {
    On,
    Off,
}

/// Synthetic stereo 3D detection experiments.
#[derive(Debug, Parser)]
#[command(name = "liga", version)]
struct Cli {
    command: Command,
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Train with or without the imitation loss.
    #[arg(long, value_enum, default_value = "on")]
    imitation: Switch,
    /// Overrides the scene seed for `gen` and the command seed otherwise.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the scene directory for `gen` and the output directory otherwise.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write depth distribution, voxel volume and BEV maps.
    #[arg(long)]
    dump_volume: bool,
}

fn run(cli: &Cli) -> liga::Result<()> {
    let mut cfg = RunConfig::load(&cli.config)?;
    let is_gen = matches!(cli.command, Command::Gen);
    if let Some(seed) = cli.seed {
        match cli.command {
            Command::Gen => cfg.scenes.seed = seed,
            Command::Gradcheck => cfg.gradcheck.seed = seed,
            Command::Train | Command::Eval => cfg.train.seed = seed,
        }
    }
    if let Some(out) = &cli.out {
        if is_gen {
            cfg.scene_dir = out.clone();
        } else {
            cfg.out_dir = out.clone();
        }
    }
    match cli.command {
        Command::Gen => {
            let (train, val) = harness::cmd_gen(&cfg)?;
            println!(
                "wrote {} training and {} validation scenes to {}",
                train.scenes.len(),
                val.scenes.len(),
                cfg.scene_dir.display()
            );
        }
        Command::Gradcheck => {
            let result = harness::cmd_gradcheck(&cfg);
            let path = cfg.out_dir.join(harness::GRADCHECK_FILE);
            if let Ok(csv) = std::fs::read_to_string(&path) {
                print!("{csv}");
            }
            result?;
        }
        Command::Train => {
            let rows = harness::cmd_train(&cfg, matches!(cli.imitation, Switch::On), cli.dump_volume)?;
            if let Some(last) = rows.last() {
                println!("step {} total loss {}", last.step, last.total);
            }
        }
        Command::Eval => {
            let out = harness::cmd_eval(&cfg, cli.dump_volume)?;
            print!("{}", out.ap_csv);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(harness::exit_code(&e) as u8)
        }
    }
}
