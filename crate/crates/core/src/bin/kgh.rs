use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use kgh_core::config::{OracleKind, RunConfig};
use kgh_core::estimator::ModelKind;
use kgh_core::injection::QualityScope;
use kgh_core::pipeline::{self, RetrieveOptions, Workspace};
use kgh_core::retrieval::SearchMode;
use kgh_core::synth::{planted_graph, write_planted, PlantedGraphConfig};
use kgh_core::{Error, GraphFormat, Result};

#[derive(Parser)]
#[command(name = "kgh", version, about = "Knowledge homophily analysis and knowledge-aware selection over knowledge graphs")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration (TOML). Defaults apply when omitted.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    /// Output directory, overriding the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Graph TSV, overriding the config.
    #[arg(long, global = true)]
    dataset: Option<PathBuf>,
    /// Treat the dataset as head, relation, tail, date.
    #[arg(long, global = true)]
    temporal: bool,
    /// Relation template file, overriding the config.
    #[arg(long, global = true)]
    templates: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    oracle: Option<OracleArg>,
    /// Chat model name for the llm oracle.
    #[arg(long, global = true)]
    model: Option<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum OracleArg {
    Planted,
    Llm,
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    Gnn,
    Mlp,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Semantic,
    KnowledgeAware,
}

#[derive(Subcommand)]
enum Command {
    /// Label triplets with the configured oracle.
    Probe {
        /// Probe a random sample of this many triplets.
        #[arg(long)]
        sample: Option<usize>,
    },
    /// Aggregate triplet labels into entity scores.
    Aggregate,
    /// Per-entity homophily report and SVG histogram.
    Homophily {
        #[arg(long)]
        bins: Option<usize>,
    },
    /// Degree-matched random baseline and z-test.
    Baseline {
        #[arg(long)]
        trials: Option<usize>,
    },
    /// Score correlation between the full graph and sparsified copies.
    Sparsify {
        #[arg(long, value_delimiter = ',')]
        fractions: Option<Vec<f64>>,
    },
    /// Probe anchors and train the knowledgeability estimator.
    Train {
        #[arg(long, value_enum)]
        kind: Option<KindArg>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
    },
    /// Build the estimator-guided and random selection plans.
    Select,
    /// Entity-disjoint held-out triplets.
    Holdout {
        #[arg(long)]
        fraction: Option<f64>,
    },
    /// Fraction of selected triplets the oracle does not know.
    Quality {
        /// Count only estimator-selected triplets, not anchors.
        #[arg(long)]
        selected_only: bool,
    },
    /// Write the fine-tuning and holdout statement files.
    Export,
    /// Generate multi-hop questions from random simple walks.
    Questions {
        #[arg(long)]
        n_per_hop: Option<usize>,
    },
    /// Run path retrieval over the question corpus.
    Retrieve {
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        beam_width: Option<usize>,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        #[arg(long)]
        hops: Option<usize>,
        /// Entity score CSV to use instead of training an estimator.
        #[arg(long)]
        scores: Option<PathBuf>,
    },
    /// Summarize existing artifacts as markdown.
    Report,
    /// Run every stage and write a manifest.
    Pipeline {
        /// Also run the budget sweep.
        #[arg(long)]
        sweep: bool,
    },
    /// Write a synthetic ring-of-clusters graph and its templates.
    Synth {
        #[arg(long, default_value_t = 1000)]
        entities: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        graph: PathBuf,
        #[arg(long = "templates-out")]
        templates_out: PathBuf,
    },
    /// Print the default configuration as TOML.
    DefaultConfig,
}

fn load_config(c: &Common) -> Result<RunConfig> {
    let mut cfg = match &c.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(o) = &c.out {
        cfg.output_dir = o.clone();
    }
    if let Some(d) = &c.dataset {
        cfg.dataset.path = d.clone();
    }
    if c.temporal {
        cfg.dataset.format = GraphFormat::TsvTemporal;
    }
    if let Some(t) = &c.templates {
        cfg.dataset.templates = Some(t.clone());
    }
    if let Some(o) = c.oracle {
        cfg.oracle.kind = match o {
            OracleArg::Planted => OracleKind::Planted,
            OracleArg::Llm => OracleKind::Llm,
        };
    }
    if let Some(m) = &c.model {
        cfg.oracle.llm.model_name = m.clone();
    }
    Ok(cfg)
}

fn emit<T: Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Synth {
            entities,
            seed,
            graph,
            templates_out,
        } => {
            let p = planted_graph(&PlantedGraphConfig {
                n_entities: *entities,
                seed: *seed,
                ..Default::default()
            })?;
            write_planted(&p, graph, templates_out)?;
            println!(
                "wrote {} triplets over {} entities to {}",
                p.graph.num_triplets(),
                p.graph.num_entities(),
                graph.display()
            );
            return Ok(());
        }
        Command::DefaultConfig => {
            let text = toml::to_string_pretty(&RunConfig::default()).map_err(|e| Error::Serde(e.to_string()))?;
            print!("{text}");
            return Ok(());
        }
        _ => {}
    }

    let mut cfg = load_config(&cli.common)?;
    if let Command::Train { epochs, lr, .. } = &cli.command {
        if let Some(e) = epochs {
            cfg.estimator.train.epochs = *e;
        }
        if let Some(l) = lr {
            cfg.estimator.train.learning_rate = *l;
        }
    }
    let ws = Workspace::open(cfg)?;
    match cli.command {
        Command::Probe { sample } => emit(&pipeline::cmd_probe(&ws, sample)?),
        Command::Aggregate => {
            let scores = pipeline::cmd_aggregate(&ws)?;
            println!("scored {} entities", scores.len());
            Ok(())
        }
        Command::Homophily { bins } => {
            let r = pipeline::cmd_homophily(&ws, bins)?;
            println!("mean homophily {:.4} over {} entities", r.graph_mean, r.per_node.len());
            Ok(())
        }
        Command::Baseline { trials } => {
            let r = pipeline::cmd_baseline(&ws, trials)?;
            println!(
                "true mean {:.4}; baseline {:.4} ± {:.4} over {} trials; z = {:.2}, p = {:.3e}",
                r.true_mean, r.baseline_mean, r.baseline_std, r.trials, r.z, r.p_two_tailed
            );
            Ok(())
        }
        Command::Sparsify { fractions } => emit(&pipeline::cmd_sparsify(&ws, fractions.as_deref())?),
        Command::Train { kind, .. } => {
            let kind = kind.map(|k| match k {
                KindArg::Gnn => ModelKind::Gnn,
                KindArg::Mlp => ModelKind::Mlp,
            });
            let r = pipeline::cmd_train(&ws, kind)?;
            println!("final train MSE {:.6} after {} epochs", r.final_train_mse, r.loss_curve.len());
            Ok(())
        }
        Command::Select => {
            let (plan, rand_plan) = pipeline::cmd_select(&ws)?;
            println!(
                "{} anchors, {} selected ({} in the random plan)",
                plan.anchors.triplets.len(),
                plan.selected.len(),
                rand_plan.selected.len()
            );
            Ok(())
        }
        Command::Holdout { fraction } => {
            let h = pipeline::cmd_holdout(&ws, fraction)?;
            println!("{} holdout triplets", h.triplets.len());
            Ok(())
        }
        Command::Quality { selected_only } => {
            let scope = selected_only.then_some(QualityScope::SelectedOnly);
            emit(&pipeline::cmd_quality(&ws, scope)?)
        }
        Command::Export => {
            let n = pipeline::cmd_export(&ws)?;
            println!("exported {n} records");
            Ok(())
        }
        Command::Questions { n_per_hop } => {
            let qs = pipeline::cmd_questions(&ws, n_per_hop)?;
            println!("generated {} questions", qs.len());
            Ok(())
        }
        Command::Retrieve {
            alpha,
            beam_width,
            mode,
            hops,
            scores,
        } => {
            let opts = RetrieveOptions {
                alpha,
                beam_width,
                mode: mode.map(|m| match m {
                    ModeArg::Semantic => SearchMode::Semantic,
                    ModeArg::KnowledgeAware => SearchMode::KnowledgeAware,
                }),
                hops,
                scores,
            };
            emit(&pipeline::cmd_retrieve(&ws, &opts)?.reports)
        }
        Command::Report => {
            print!("{}", pipeline::cmd_report(&ws)?);
            Ok(())
        }
        Command::Pipeline { sweep } => {
            let m = pipeline::cmd_pipeline(&ws, sweep)?;
            println!(
                "pipeline complete: {} artifacts in {}",
                m.artifacts.len(),
                ws.cfg.output_dir.display()
            );
            Ok(())
        }
        Command::Synth { .. } | Command::DefaultConfig => unreachable!("handled above"),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
