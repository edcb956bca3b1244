//! Command-line front end. Every subcommand starts from a `RunConfig`
//! (defaults, or `--config FILE`) and applies the flags on top.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use skelvit::arrangement::max_dissimilarity;
use skelvit::classifiers::ClassifierKind;
use skelvit::harness::{
    compare_classifiers, encode_all, evaluate_run, load_dataset, prepare_arrangements, render_report, run_ablation,
    run_pipeline, DatasetSource, RunConfig,
};
use skelvit::pseudo_image::{export_png, write_raw};
use skelvit::seed::{derive, label};
use skelvit::skeleton::{SplitPolicy, NUM_JOINTS};
use skelvit::synth::{synth_dataset, write_dataset};
use skelvit::{Error, Result};

#[derive(Parser)]
#[command(name = "skelvit", version, about = "Skeleton action recognition with arrangement ensembles")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic dataset as skeleton text files.
    Synth {
        #[command(flatten)]
        run: RunArgs,
        /// Destination directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Select the arrangement set and write it to the output directory.
    Select {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Encode the test split as pseudo-images, one per sample and arrangement.
    Encode {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_enum, default_value_t = ImageFormat::Png)]
        format: ImageFormat,
        /// Encode at most this many samples.
        #[arg(long)]
        limit: Option<usize>,
    },
    /// Run the whole pipeline: select, encode, train both levels, evaluate.
    Train {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Re-evaluate a finished run from its checkpoints.
    Eval {
        /// Run directory.
        run_dir: PathBuf,
    },
    /// Repeat the pipeline for several values of L.
    Ablate {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_delimiter = ',', required = true)]
        l_values: Vec<usize>,
    },
    /// Train CNN and ViT ensembles on one shared arrangement set.
    Compare {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Print the tables of a run, comparison or ablation directory.
    Report {
        run_dir: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ImageFormat {
    Png,
    Raw,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    CrossSubject,
    CrossView,
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    Vit,
    Cnn,
}

#[derive(Args, Default)]
struct RunArgs {
    /// TOML or JSON run configuration; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Use the synthetic dataset with this many samples per class.
    #[arg(long, conflicts_with = "data_dir")]
    synthetic_per_class: Option<usize>,
    #[arg(long)]
    synthetic_seed: Option<u64>,
    /// Directory of NTU RGB+D skeleton files.
    #[arg(long)]
    data_dir: Option<PathBuf>,
    /// TOML class table for --data-dir.
    #[arg(long, requires = "data_dir")]
    class_table: Option<PathBuf>,
    #[arg(long, value_enum)]
    split: Option<SplitArg>,
    #[arg(long, value_enum)]
    classifier: Option<KindArg>,
    /// Number of arrangements, L.
    #[arg(long)]
    arrangements: Option<usize>,
    /// Random sets scored during selection, N.
    #[arg(long)]
    draws: Option<u64>,
    #[arg(long)]
    frames: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    consensus_epochs: Option<usize>,
    #[arg(long)]
    consensus_holdout: Option<f64>,
    #[arg(long)]
    averaged_posteriors: bool,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    arrangement_file: Option<PathBuf>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

impl RunArgs {
    fn config(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(per_class) = self.synthetic_per_class {
            cfg.dataset = DatasetSource::Synthetic {
                per_class,
                seed: self.synthetic_seed,
            };
        } else if let Some(path) = &self.data_dir {
            cfg.dataset = DatasetSource::NtuDir {
                path: path.clone(),
                class_table: self.class_table.clone(),
            };
        } else if let (Some(s), DatasetSource::Synthetic { seed, .. }) = (self.synthetic_seed, &mut cfg.dataset) {
            *seed = Some(s);
        }
        if let Some(split) = self.split {
            cfg.split = match split {
                SplitArg::CrossSubject => SplitPolicy::cross_subject(),
                SplitArg::CrossView => SplitPolicy::cross_view(),
            };
        }
        if let Some(kind) = self.classifier {
            cfg.classifier = match kind {
                KindArg::Vit => ClassifierKind::Vit,
                KindArg::Cnn => ClassifierKind::Cnn,
            };
        }
        macro_rules! set {
            ($($field:ident),*) => {$(
                if let Some(v) = self.$field.clone() {
                    cfg.$field = v;
                }
            )*};
        }
        set!(arrangements, draws, frames, seed, epochs, lr, batch_size, consensus_holdout, workers, output_dir);
        if self.consensus_epochs.is_some() {
            cfg.consensus_epochs = self.consensus_epochs;
        }
        if self.arrangement_file.is_some() {
            cfg.arrangement_file = self.arrangement_file.clone();
        }
        cfg.averaged_posteriors |= self.averaged_posteriors;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

fn print_json(value: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(value).expect("json values serialize"));
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Synth { run, out } => {
            let cfg = run.config()?;
            let DatasetSource::Synthetic { per_class, seed } = cfg.dataset else {
                return Err(Error::Config("synth needs a synthetic dataset source".into()));
            };
            let seed = seed.unwrap_or_else(|| derive(cfg.seed, &[label("synth")]));
            let samples = synth_dataset(per_class, seed);
            write_dataset(&out, &samples)?;
            print_json(&json!({"dir": out, "samples": samples.len(), "seed": seed}));
        }
        Command::Select { run } => {
            let cfg = run.config()?;
            create_dir(&cfg.output_dir)?;
            let sel = prepare_arrangements(&cfg, &cfg.output_dir)?;
            print_json(&json!({
                "file": cfg.output_dir.join(skelvit::harness::ARRANGEMENT_FILE),
                "score": sel.score,
                "max_score": max_dissimilarity(sel.set.len(), NUM_JOINTS),
                "draw": sel.draw,
                "draws": sel.draws,
            }));
        }
        Command::Encode { run, format, limit } => {
            let cfg = run.config()?;
            create_dir(&cfg.output_dir)?;
            let sel = prepare_arrangements(&cfg, &cfg.output_dir)?;
            let data = load_dataset(&cfg)?;
            let samples = &data.test[..limit.unwrap_or(usize::MAX).min(data.test.len())];
            let images = encode_all(samples, &sel.set, cfg.frames)?;
            let dir = cfg.output_dir.join("images");
            create_dir(&dir)?;
            for (l, per_arr) in images.iter().enumerate() {
                for (img, s) in per_arr.iter().zip(samples) {
                    let stem = format!("{}_arr{l:02}", s.source_id);
                    match format {
                        ImageFormat::Png => export_png(img, &dir.join(format!("{stem}.png")))?,
                        ImageFormat::Raw => {
                            let path = dir.join(format!("{stem}.raw"));
                            let file = fs::File::create(&path).map_err(|e| Error::Io {
                                path: path.clone(),
                                source: e,
                            })?;
                            write_raw(img, std::io::BufWriter::new(file)).map_err(|e| Error::Io { path, source: e })?;
                        }
                    }
                }
            }
            print_json(&json!({"dir": dir, "images": samples.len() * images.len()}));
        }
        Command::Train { run } => {
            let cfg = run.config()?;
            let results = run_pipeline(&cfg)?;
            print_json(&json!({
                "output_dir": cfg.output_dir,
                "config_hash": results.config_hash,
                "average_accuracy": results.report.average.accuracy,
                "consensus_accuracy": results.report.consensus.accuracy,
            }));
        }
        Command::Eval { run_dir } => {
            let report = evaluate_run(&run_dir)?;
            print_json(&serde_json::to_value(&report)?);
        }
        Command::Ablate { run, l_values } => {
            let cfg = run.config()?;
            let rows = run_ablation(&cfg, &l_values)?;
            print_json(&serde_json::to_value(&rows)?);
        }
        Command::Compare { run } => {
            let cfg = run.config()?;
            let cmp = compare_classifiers(&cfg)?;
            print_json(&serde_json::to_value(&cmp)?);
        }
        Command::Report { run_dir } => print!("{}", render_report(&run_dir)?),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            eprintln!("{}", json!({"error": e.to_string().trim(), "kind": "usage"}));
            return ExitCode::from(2);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", json!({"error": e.to_string(), "kind": e.kind()}));
            ExitCode::FAILURE
        }
    }
}
