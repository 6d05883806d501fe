use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use gcnkit::config::{parse_seeds, ExperimentConfig, TrickSet};
use gcnkit::embeddings::{logistic_probe, pretrain_embeddings, save_embeddings};
use gcnkit::experiment::{ablation_csv, ablation_markdown, build_dataset, metrics_csv, run_row};
use gcnkit::io::{load_node_matrix, save_dataset, save_node_matrix, NodeMatrix, PREDICTION_MAGIC};
use gcnkit::training::{evaluate_probs, Metric};
use gcnkit::tricks::{correct_and_smooth, CorrectSmoothConfig, LabelSet};
use gcnkit::{autodiff::checkpoint, Error};

#[derive(Parser)]
#[command(name = "gcnkit", version, about = "GCN_res node-classification experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Overwrite existing outputs.
    #[arg(long)]
    force: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Build the dataset and write it as a GCNT container plus a summary.
    GenData(Common),
    /// Pre-train structural embeddings and write a GCNE container.
    Pretrain {
        #[command(flatten)]
        common: Common,
        /// Report the test accuracy of a linear probe on the embeddings.
        #[arg(long)]
        probe: bool,
    },
    /// Train the configured model and tricks over the seed list.
    Train {
        #[command(flatten)]
        common: Common,
        /// Seeds, as `a..b` or a comma list; overrides the config.
        #[arg(long)]
        seeds: Option<String>,
    },
    /// Apply Correct & Smooth to saved predictions.
    Postprocess {
        /// GCNP prediction container.
        predictions: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Run every trick combination listed under `[experiment] ablate`.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        seeds: Option<String>,
    },
}

/// A failure with its process exit code.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Numerical { .. } => 3,
            Error::Io(_) => 2,
            _ => 1,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

type CmdResult = Result<(), Failure>;

fn conflict(path: &Path) -> Failure {
    Failure {
        code: 2,
        message: format!("{} already exists (use --force to overwrite)", path.display()),
    }
}

/// Checks every output path up front so a refused run writes nothing.
fn prepare_outputs(common: &Common, names: &[String]) -> Result<Vec<PathBuf>, Failure> {
    let paths: Vec<PathBuf> = names.iter().map(|n| common.out.join(n)).collect();
    if !common.force {
        if let Some(p) = paths.iter().find(|p| p.exists()) {
            return Err(conflict(p));
        }
    }
    fs::create_dir_all(&common.out).map_err(Error::from)?;
    Ok(paths)
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> CmdResult {
    fs::write(path, contents).map_err(Error::from)?;
    Ok(())
}

fn load_config(common: &Common, seeds: Option<&str>) -> Result<ExperimentConfig, Failure> {
    let mut cfg = ExperimentConfig::load(&common.config)?;
    if let Some(s) = seeds {
        cfg.seeds = parse_seeds(s)?;
    }
    Ok(cfg)
}

fn gen_data(common: &Common) -> CmdResult {
    let cfg = load_config(common, None)?;
    let ds = build_dataset(&cfg)?;
    let paths = prepare_outputs(common, &["dataset.gcnt".into(), "dataset.txt".into()])?;
    save_dataset(&paths[0], &ds)?;
    let summary = format!(
        "Nodes Edges Classes Metric\n{} {} {} {}\n",
        ds.num_nodes(),
        ds.graph.num_edges() / 2,
        ds.num_classes,
        cfg.training.metric.name()
    );
    write(&paths[1], &summary)?;
    print!("{summary}");
    println!("wrote {}", paths[0].display());
    Ok(())
}

fn pretrain(common: &Common, probe: bool) -> CmdResult {
    let cfg = load_config(common, None)?;
    let ds = build_dataset(&cfg)?;
    let paths = prepare_outputs(common, &["embeddings.gcne".into()])?;
    let emb = pretrain_embeddings(&ds, &cfg.walks, &cfg.skipgram)?;
    save_embeddings(&paths[0], &emb)?;
    println!("provenance: {}", emb.provenance);
    if probe {
        let acc = logistic_probe(&emb.values, &ds, 200, 0.05, cfg.walks.seed)?;
        println!("probe test accuracy: {acc:.4}");
    }
    println!("wrote {}", paths[0].display());
    Ok(())
}

fn train_cmd(common: &Common, seeds: Option<&str>) -> CmdResult {
    let cfg = load_config(common, seeds)?;
    let ds = build_dataset(&cfg)?;
    let row = cfg.trick_set();
    let mut names = vec!["summary.txt".to_string(), "metrics.csv".to_string()];
    for s in &cfg.seeds {
        names.push(format!("checkpoint_seed{s}.gcnw"));
        names.push(format!("predictions_seed{s}.gcnp"));
    }
    let paths = prepare_outputs(common, &names)?;
    let start = Instant::now();
    let outcome = run_row(&cfg, &ds, &row, &cfg.seeds)?;
    if outcome.input_dim != ds.feature_dim() {
        println!("input width: {} -> {}", ds.feature_dim(), outcome.input_dim);
    }
    let mut summary = format!("method: {row}\nseeds: {}\n", cfg.seeds.len());
    for run in &outcome.runs {
        summary += &format!(
            "seed {}: best epoch {}, valid {:.4}, test {:.4}\n",
            run.seed,
            run.result.best_epoch + 1,
            run.valid,
            run.test
        );
    }
    summary += &outcome.summary.report_line();
    summary.push('\n');
    write(&paths[0], &summary)?;
    write(&paths[1], metrics_csv(&outcome, &cfg))?;
    for (k, run) in outcome.runs.iter().enumerate() {
        checkpoint::save(&paths[2 + 2 * k], &run.checkpoint)?;
        let preds = NodeMatrix {
            values: run.base_probs.clone(),
            provenance: format!("{row} seed={} best_epoch={}", run.seed, run.result.best_epoch + 1),
        };
        save_node_matrix(&paths[3 + 2 * k], PREDICTION_MAGIC, &preds)?;
    }
    eprintln!("trained {} seeds in {:.1?}", cfg.seeds.len(), start.elapsed());
    print!("{summary}");
    Ok(())
}

fn postprocess(predictions: &Path, common: &Common) -> CmdResult {
    let cfg = load_config(common, None)?;
    let ds = build_dataset(&cfg)?;
    let preds = load_node_matrix(predictions, PREDICTION_MAGIC)?;
    if preds.values.shape() != (ds.num_nodes(), ds.num_classes) {
        return Err(Failure {
            code: 1,
            message: format!(
                "predictions are {:?} but the dataset needs {:?}",
                preds.values.shape(),
                (ds.num_nodes(), ds.num_classes)
            ),
        });
    }
    let paths = prepare_outputs(common, &["predictions_cs.gcnp".into()])?;
    let label_set = cfg.tricks.correct_smooth.unwrap_or(LabelSet::V2);
    let cs = CorrectSmoothConfig {
        label_set,
        ..cfg.tricks.cs.clone()
    };
    let name = if label_set == LabelSet::V2 { "v2" } else { "v3" };
    println!("label set: {name} ({} nodes)", label_set.nodes(&ds).len());
    let after = correct_and_smooth(&preds.values, &ds, &cs)?;
    let metric = cfg.training.metric;
    let report = |probs| -> Result<String, Failure> {
        let v = evaluate_probs(probs, &ds, &ds.splits.valid, metric)?;
        let t = evaluate_probs(probs, &ds, &ds.splits.test, metric)?;
        Ok(format!("valid {} {:.4}, test {} {:.4}", metric.name(), v, metric.name(), t))
    };
    println!("before: {}", report(&preds.values)?);
    println!("after: {}", report(&after)?);
    let out = NodeMatrix {
        values: after,
        provenance: format!("{}; correct_and_smooth {name}", preds.provenance),
    };
    save_node_matrix(&paths[0], PREDICTION_MAGIC, &out)?;
    println!("wrote {}", paths[0].display());
    Ok(())
}

fn ablate(common: &Common, seeds: Option<&str>) -> CmdResult {
    let cfg = load_config(common, seeds)?;
    if cfg.ablate.is_empty() {
        return Err(Failure {
            code: 1,
            message: "config lists no rows under [experiment] ablate".into(),
        });
    }
    let ds = build_dataset(&cfg)?;
    let paths = prepare_outputs(common, &["ablation.md".into(), "ablation.csv".into()])?;
    let start = Instant::now();
    let rows: Vec<(TrickSet, _)> = cfg
        .ablate
        .iter()
        .map(|row| {
            let res = run_row(&cfg, &ds, row, &cfg.seeds).map(|o| o.summary);
            match &res {
                Ok(s) => eprintln!("{row}: {}", s.report_line()),
                Err(e) => eprintln!("{row}: failed: {e}"),
            }
            (row.clone(), res)
        })
        .collect();
    let metric_name = match cfg.training.metric {
        Metric::Accuracy => "Accuracy",
        Metric::RocAuc => "ROC-AUC",
    };
    let md = ablation_markdown(&rows, metric_name);
    write(&paths[0], &md)?;
    write(&paths[1], ablation_csv(&rows))?;
    eprintln!("ablation finished in {:.1?}", start.elapsed());
    print!("{md}");
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let result = match &cli.command {
        Command::GenData(common) => gen_data(common),
        Command::Pretrain { common, probe } => pretrain(common, *probe),
        Command::Train { common, seeds } => train_cmd(common, seeds.as_deref()),
        Command::Postprocess { predictions, common } => postprocess(predictions, common),
        Command::Ablate { common, seeds } => ablate(common, seeds.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
