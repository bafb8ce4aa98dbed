use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use cmppi::pipeline::{evaluate_safety, run_episode, Variant};
use cmppi::sim::Environment;
use cmppi_bench::{emit_csv, emit_svg, generate_env, run_benchmark, BenchConfig, BenchError};

#[derive(Parser)]
#[command(name = "bench", about = "Contingency MPPI benchmark harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the variant comparison and write aggregate metrics.
    Run {
        #[arg(long, value_delimiter = ',', default_value = "mppi,base,mpc,ais-mpc")]
        variants: Vec<String>,
        #[arg(long, default_value_t = 30)]
        envs: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        svg_dir: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Generate one random environment.
    GenEnv {
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Run a single episode and dump its trace.
    Episode {
        #[arg(long)]
        env: PathBuf,
        #[arg(long, default_value = "ais-mpc")]
        variant: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        trace: Option<PathBuf>,
        #[arg(long)]
        svg: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn load_config(path: Option<&PathBuf>) -> Result<BenchConfig, BenchError> {
    match path {
        Some(p) => BenchConfig::load(p),
        None => Ok(BenchConfig::default()),
    }
}

fn parse_variant(s: &str) -> Result<Variant, BenchError> {
    s.trim().parse().map_err(|e: cmppi::Error| BenchError::Config(e.to_string()))
}

fn run(cli: Cli) -> Result<(), BenchError> {
    match cli.command {
        Command::Run { variants, envs, seed, out, svg_dir, config } => {
            let cfg = load_config(config.as_ref())?;
            let variants = variants.iter().map(|s| parse_variant(s)).collect::<Result<Vec<_>, _>>()?;
            let res = run_benchmark(&variants, envs, seed, &cfg)?;
            emit_csv(&res.records, &out)?;
            if let Some(dir) = svg_dir {
                std::fs::create_dir_all(&dir)?;
                for ep in &res.episodes {
                    let path = dir.join(format!("env{:03}_{}.svg", ep.env_index, ep.variant));
                    emit_svg(&ep.trace, &res.envs[ep.env_index], &path)?;
                }
            }
            for r in &res.records {
                eprintln!(
                    "{:8} reached {:6.2}%  unsafe {:6.3}%  steps {}  finite {}",
                    r.variant,
                    r.reached_goal_rate,
                    r.unsafe_state_rate,
                    r.avg_steps_to_goal.map_or("-".into(), |s| format!("{s:.1}")),
                    r.finite_cost_pct.map_or("-".into(), |f| format!("{f:.2}%")),
                );
            }
        }
        Command::GenEnv { seed, out, config } => {
            let cfg = load_config(config.as_ref())?;
            generate_env(&cfg.envgen, seed)?.save(&out)?;
        }
        Command::Episode { env, variant, seed, trace, svg, config } => {
            let cfg = load_config(config.as_ref())?;
            let variant = parse_variant(&variant)?;
            let env = Environment::load(&env)?;
            env.validate()?;
            let t = run_episode(&env, &cfg.planner, variant, seed)?;
            let safety = evaluate_safety(&env, &t, &cfg.planner, seed);
            if let Some(p) = trace {
                t.write_jsonl(std::io::BufWriter::new(std::fs::File::create(p)?))?;
            }
            if let Some(p) = svg {
                emit_svg(&t, &env, &p)?;
            }
            eprintln!(
                "{variant}: {} steps, reached goal: {}, unsafe states: {}/{}",
                t.steps.len(),
                t.reached_goal,
                safety.unsafe_states,
                safety.executed
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                BenchError::Config(_) => 2,
                _ => 1,
            })
        }
    }
}
