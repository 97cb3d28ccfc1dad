use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use abtrack::graph::{random_strongly_connected, Digraph};
use abtrack::harness::experiment::{certify_graphs, CSV_SCHEMA};
use abtrack::harness::{preset_fig_left, preset_fig_right, run_experiment, ExperimentConfig, SolverKind, StepSize};

const EXIT_OK: u8 = 0;
const EXIT_USAGE: u8 = 1;
const EXIT_FAILED: u8 = 2;

#[derive(Parser)]
#[command(
    name = "abtrack",
    version,
    about = "Gradient tracking over directed graphs: experiments, certificates and graph tools",
    after_long_help = CSV_SCHEMA
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a key=value config file.
    Run {
        config: PathBuf,
        /// Override a config entry, e.g. --set iterations=500. Repeatable.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[command(flatten)]
        out: OutArg,
    },
    /// Print the convergence certificate for every graph of a config.
    Certify {
        config: PathBuf,
        /// Evaluate at this step instead of eta_max / 2.
        #[arg(long)]
        eta: Option<f64>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Generate or check edge-list files.
    #[command(subcommand)]
    Graph(GraphCommand),
    /// Run a built-in experiment.
    Preset {
        which: PresetName,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Step size of ab: a number or 'theorem1'. Baselines keep their preset steps.
        #[arg(long, value_parser = parse_step)]
        eta: Option<StepSize>,
        #[arg(long)]
        iters: Option<usize>,
        #[command(flatten)]
        out: OutArg,
    },
}

#[derive(Args)]
struct OutArg {
    /// Output directory; overrides the config.
    #[arg(long = "out", env = "ABTRACK_OUT", value_name = "DIR")]
    dir: Option<PathBuf>,
}

#[derive(Subcommand)]
enum GraphCommand {
    /// Draw a seeded strongly connected graph and write its edge list.
    Gen {
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        extra_edges: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Destination file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Parse an edge list and report strong connectivity.
    Check { path: PathBuf },
}

#[derive(Clone, Copy, ValueEnum)]
enum PresetName {
    FigLeft,
    FigRight,
}

fn parse_step(s: &str) -> Result<StepSize, String> {
    s.parse().map_err(|e: abtrack::Error| e.to_string())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { EXIT_OK });
        }
    };
    match dispatch(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            let code = match e {
                abtrack::Error::Diverged { .. }
                | abtrack::Error::Certificate(_)
                | abtrack::Error::NotStronglyConnected => EXIT_FAILED,
                _ => EXIT_USAGE,
            };
            ExitCode::from(code)
        }
    }
}

fn dispatch(cmd: Command) -> abtrack::Result<u8> {
    match cmd {
        Command::Run { config, overrides, out } => {
            let mut cfg = ExperimentConfig::from_file_with(&config, &overrides)?;
            if let Some(dir) = out.dir {
                cfg.output = dir;
            }
            report(run_experiment(&cfg)?)
        }
        Command::Certify { config, eta, overrides } => {
            let cfg = ExperimentConfig::from_file_with(&config, &overrides)?;
            let mut code = EXIT_OK;
            for (i, (g, res)) in certify_graphs(&cfg, eta)?.into_iter().enumerate() {
                println!("graph {} ({} edges, hash {})", i + 1, g.num_edges(), g.content_hash());
                match res {
                    Ok(s) => {
                        print!("{s}");
                        for (k, v) in s.key_values() {
                            println!("{k}={v}");
                        }
                        if !s.lemma8 || s.rho_j >= 1.0 {
                            code = EXIT_FAILED;
                        }
                    }
                    Err(e) => {
                        println!("  certificate failed: {e}");
                        code = EXIT_FAILED;
                    }
                }
            }
            Ok(code)
        }
        Command::Graph(GraphCommand::Gen {
            n,
            extra_edges,
            seed,
            out,
        }) => {
            let g = random_strongly_connected(n, extra_edges, seed)?;
            match out {
                Some(p) => g.save_edge_list(p)?,
                None => print!("{}", g.to_edge_list_string()),
            }
            Ok(EXIT_OK)
        }
        Command::Graph(GraphCommand::Check { path }) => {
            let g = Digraph::load_edge_list(&path)?;
            let sc = g.is_strongly_connected();
            println!(
                "n = {}, edges = {}, strongly connected = {}, hash = {}",
                g.n(),
                g.num_edges(),
                sc,
                g.content_hash()
            );
            Ok(if sc { EXIT_OK } else { EXIT_FAILED })
        }
        Command::Preset {
            which,
            seed,
            eta,
            iters,
            out,
        } => {
            let mut cfg = match which {
                PresetName::FigLeft => preset_fig_left(seed),
                PresetName::FigRight => preset_fig_right(seed),
            };
            if let Some(eta) = eta {
                for s in cfg.solvers.iter_mut().filter(|s| s.kind == SolverKind::Ab) {
                    s.eta = eta;
                }
            }
            if let Some(k) = iters {
                cfg.iterations = k;
            }
            if let Some(dir) = out.dir {
                cfg.output = dir;
            }
            cfg.validate()?;
            report(run_experiment(&cfg)?)
        }
    }
}

fn report(outcome: abtrack::harness::ExperimentOutcome) -> abtrack::Result<u8> {
    print!("{}", outcome.render_summary());
    for p in &outcome.written {
        println!("wrote {}", p.display());
    }
    Ok(if outcome.failed() { EXIT_FAILED } else { EXIT_OK })
}
