use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use sinnet_cli::commands;
use sinnet_cli::overlay::{parse_color, OverlayStyle};
use sinnet_cli::RunConfig;
use sinnet_core::label::format_annotations;
use sinnet_core::model::LossReduction;
use sinnet_core::score::render_table;
use sinnet_core::Connectivity;

#[derive(Parser)]
#[command(name = "sinnet", version, about = "Fingerprint singular-point detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write core/delta label masks next to every manifest image.
    Label {
        manifest: PathBuf,
    },
    /// Train a model on a manifest.
    Train {
        manifest: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
        #[command(flatten)]
        train: TrainArgs,
        /// Model file to write.
        #[arg(long, short)]
        model: Option<PathBuf>,
        /// JSON training log to write.
        #[arg(long)]
        log: Option<PathBuf>,
        #[arg(long, short)]
        quiet: bool,
    },
    /// Detect singular points with a trained model.
    Detect {
        #[arg(long, short)]
        model: Option<PathBuf>,
        /// Single image to process; points go to --out or stdout.
        #[arg(long, conflicts_with = "manifest", required_unless_present = "manifest")]
        image: Option<PathBuf>,
        /// Manifest to process; writes per-image detections and a
        /// detections.tsv pair file into --out-dir.
        #[arg(long, requires = "out_dir")]
        manifest: Option<PathBuf>,
        #[arg(long, short, conflicts_with = "manifest")]
        out: Option<PathBuf>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// Also write the probability maps into this directory.
        #[arg(long)]
        maps: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArgs,
        #[command(flatten)]
        blob: BlobArgs,
    },
    /// Score detections against ground truth.
    Score {
        /// File of `detections<TAB>truth` lines.
        pairs: PathBuf,
        #[arg(long)]
        json: Option<PathBuf>,
        #[arg(long)]
        text: Option<PathBuf>,
        /// Row label in the report table.
        #[arg(long, default_value = "SinNet")]
        algorithm: String,
    },
    /// Draw ground truth and detections on an image.
    Overlay {
        image: PathBuf,
        #[arg(long)]
        detections: Option<PathBuf>,
        #[arg(long)]
        truth: Option<PathBuf>,
        #[arg(long, short)]
        out: PathBuf,
        #[arg(long, default_value = "ff0000")]
        truth_color: String,
        #[arg(long, default_value = "00ff00")]
        detection_color: String,
    },
    /// Generate a synthetic corpus with a manifest.
    Synth {
        #[arg(long, short)]
        out: PathBuf,
        #[arg(long, default_value_t = 8)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 96)]
        size: usize,
    },
    /// Print the default configuration file.
    DefaultConfig,
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML run configuration; flags override its values.
    #[arg(long, short)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    momentum: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    width_divisor: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// `sum` or `image_mean`.
    #[arg(long, value_parser = parse_reduction)]
    loss_reduction: Option<LossReduction>,
    #[arg(long)]
    deterministic: Option<bool>,
}

#[derive(Args)]
struct BlobArgs {
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    min_area: Option<usize>,
    #[arg(long)]
    max_area: Option<usize>,
    /// 4 or 8.
    #[arg(long, value_parser = parse_connectivity)]
    connectivity: Option<Connectivity>,
}

fn parse_reduction(s: &str) -> Result<LossReduction, String> {
    match s {
        "sum" => Ok(LossReduction::Sum),
        "image_mean" => Ok(LossReduction::ImageMean),
        _ => Err(format!("expected `sum` or `image_mean`, got `{s}`")),
    }
}

fn parse_connectivity(s: &str) -> Result<Connectivity, String> {
    s.parse::<u8>().map_err(|e| e.to_string()).and_then(Connectivity::try_from)
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

impl TrainArgs {
    fn apply(self, c: &mut RunConfig) {
        let t = &mut c.train;
        set(&mut t.learning_rate, self.lr);
        set(&mut t.momentum, self.momentum);
        set(&mut t.batch_size, self.batch_size);
        set(&mut t.epochs, self.epochs);
        set(&mut t.dropout_rate, self.dropout);
        set(&mut t.width_divisor, self.width_divisor);
        set(&mut t.seed, self.seed);
        set(&mut t.loss_reduction, self.loss_reduction);
        set(&mut c.deterministic_mode, self.deterministic);
    }
}

impl BlobArgs {
    fn apply(self, c: &mut RunConfig) {
        let b = &mut c.blob;
        set(&mut b.threshold, self.threshold);
        set(&mut b.min_area, self.min_area);
        set(&mut b.max_area, self.max_area);
        set(&mut b.connectivity, self.connectivity);
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Label { manifest } => {
            let written = commands::label(&manifest)?;
            eprintln!("wrote {} mask pairs", written.len());
        }
        Command::Train {
            manifest,
            config,
            train,
            model,
            log,
            quiet,
        } => {
            let mut cfg = RunConfig::load_or_default(config.config.as_deref())?;
            train.apply(&mut cfg);
            set(&mut cfg.paths.model, model.map(Some));
            set(&mut cfg.paths.train_log, log.map(Some));
            let epochs = cfg.train.epochs;
            let (_, log) = commands::train(&manifest, &cfg, |e, _| {
                if !quiet {
                    eprintln!(
                        "epoch {}/{}  loss {:.3}  per-pixel {:.5}",
                        e.epoch, epochs, e.mean_loss, e.mean_pixel_bce
                    );
                }
            })?;
            let model = cfg.paths.model.as_deref().expect("checked by train");
            eprintln!("{} steps; model written to {}", log.step_losses.len(), model.display());
        }
        Command::Detect {
            model,
            image,
            manifest,
            out,
            out_dir,
            maps,
            config,
            blob,
        } => {
            let mut cfg = RunConfig::load_or_default(config.config.as_deref())?;
            blob.apply(&mut cfg);
            set(&mut cfg.paths.model, model.map(Some));
            let model = cfg.paths.model.context("no model given (--model or paths.model)")?;
            if let Some(manifest) = manifest {
                let out_dir = out_dir.expect("required by clap");
                let pairs = commands::detect_manifest(&model, &manifest, &cfg.blob, &out_dir, maps.as_deref())?;
                eprintln!("detections listed in {}", pairs.display());
            } else {
                let image = image.expect("required by clap");
                let points = commands::detect_one(&model, &image, &cfg.blob, out.as_deref(), maps.as_deref())?;
                if out.is_none() {
                    print!("{}", format_annotations(&points));
                }
            }
        }
        Command::Score {
            pairs,
            json,
            text,
            algorithm,
        } => {
            let report = commands::score(&pairs)?;
            commands::write_report(&report, &algorithm, text.as_deref(), json.as_deref())?;
            print!("{}", render_table(&report, &algorithm));
        }
        Command::Overlay {
            image,
            detections,
            truth,
            out,
            truth_color,
            detection_color,
        } => {
            let style = OverlayStyle {
                truth: parse_color(&truth_color)?,
                detection: parse_color(&detection_color)?,
            };
            let clipped = commands::overlay(&image, detections.as_deref(), truth.as_deref(), &out, &style)?;
            for p in clipped {
                eprintln!("warning: {} point ({}, {}) lies outside the image", p.ptype, p.x, p.y);
            }
        }
        Command::Synth { out, count, seed, size } => {
            let manifest = commands::synth(&out, count, seed, size)?;
            eprintln!("wrote {count} images; manifest {}", manifest.display());
        }
        Command::DefaultConfig => print!("{}", RunConfig::default().to_toml()),
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
