use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use pathagg::{Error, Result};
use pathagg_cli::pipeline::{self, Run};
use pathagg_cli::{exit_code, ExperimentConfig};

#[derive(Parser, Debug)]
#[command(
    name = "pathagg",
    version,
    about = "Random-walk LM and rule-aggregation experiments"
)]
struct Cli {
    /// Experiment configuration (TOML); defaults are used when omitted.
    #[arg(short, long, global = true)]
    config: Option<PathBuf>,
    /// Override a config field, e.g. `--set walk.l_max=[1,5]`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    sets: Vec<String>,
    /// Root directory for run directories.
    #[arg(long, env = pipeline::RUNS_ENV, default_value = "runs", global = true)]
    runs: PathBuf,
    /// Worker threads; 1 runs every stage serially.
    #[arg(short, long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a configuration file with every default filled in.
    Init {
        #[arg(short, long, default_value = "pathagg.toml")]
        out: PathBuf,
        #[arg(long)]
        force: bool,
    },
    /// Load and validate the dataset (and CoT records, if configured).
    Ingest,
    /// Sample one walk corpus per configured L_max.
    GenCorpus,
    /// Train one LM per corpus.
    TrainLm {
        /// Train only this L_max.
        #[arg(long)]
        l_max: Option<usize>,
    },
    /// Mine rules for every queried relation.
    MineRules,
    /// Fit rule weights for every configured N_max.
    LearnWeights,
    /// Test accuracy of the LMs and both aggregators.
    Eval {
        /// Skip LM checkpoints and evaluate the aggregators only.
        #[arg(long)]
        no_lm: bool,
    },
    /// KL grid between aggregation distributions and the LMs.
    KlGrid,
    /// Random check of the rule-marginalisation KL bound.
    Prop1Check,
    /// Cluster CoT states into a latent graph.
    CotGraph,
    /// Emit random-walk paths over the latent graph.
    CotWalk,
    /// Write the random-walk / SFT training plan.
    CotPlan,
}

fn run(cli: Cli) -> Result<()> {
    if let Some(j) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(j.max(1))
            .build_global()
            .map_err(|e| Error::Config(format!("--jobs: {e}")))?;
    }
    let base = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    let config = base.with_overrides(&cli.sets)?;
    if let Command::Init { out, force } = &cli.command {
        if out.exists() && !force {
            return Err(Error::Config(format!(
                "{} exists; pass --force to overwrite",
                out.display()
            )));
        }
        std::fs::write(out, config.to_toml()?).map_err(|e| Error::io(out, e))?;
        println!("wrote {}", out.display());
        return Ok(());
    }
    let run = Run::open(config, &cli.runs)?;
    println!("run directory: {}", run.dir.display());
    let show =
        |v: serde_json::Value| println!("{}", serde_json::to_string_pretty(&v).unwrap_or_default());
    match cli.command {
        Command::Init { .. } => unreachable!(),
        Command::Ingest => show(serde_json::to_value(pipeline::cmd_ingest(&run)?)?),
        Command::GenCorpus => show(serde_json::to_value(pipeline::cmd_gen_corpus(&run)?)?),
        Command::TrainLm { l_max } => {
            show(serde_json::to_value(pipeline::cmd_train_lm(&run, l_max)?)?)
        }
        Command::MineRules => {
            let book = pipeline::cmd_mine_rules(&run)?;
            for s in &book.sets {
                println!("relation {}: {} rules", s.relation, s.len());
            }
        }
        Command::LearnWeights => {
            let books = pipeline::cmd_learn_weights(&run)?;
            println!("weights for N_max {:?}", books.keys().collect::<Vec<_>>());
        }
        Command::Eval { no_lm } => show(serde_json::to_value(pipeline::cmd_eval(&run, !no_lm)?)?),
        Command::KlGrid => print!("{}", pipeline::cmd_kl_grid(&run)?.to_csv(None)),
        Command::Prop1Check => {
            let reports = pipeline::cmd_prop1_check(&run)?;
            print!("{}", pathagg::analysis::prop1_csv(&reports, None));
            if reports.iter().any(|r| !r.passed()) {
                return Err(Error::Data("the KL bound was violated".into()));
            }
        }
        Command::CotGraph => {
            let g = pipeline::cmd_cot_graph(&run)?;
            let sizes: Vec<usize> = g.members.iter().map(Vec::len).collect();
            println!("{} nodes, sizes {:?}", g.k, sizes);
        }
        Command::CotWalk => show(serde_json::to_value(pipeline::cmd_cot_walk(&run)?.1)?),
        Command::CotPlan => show(serde_json::to_value(pipeline::cmd_cot_plan(&run)?)?),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
