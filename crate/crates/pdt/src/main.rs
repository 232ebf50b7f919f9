//! Batch experiment front end: dataset generation, training, evaluation,
//! ablation sweeps, and diagnostics.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use pdt::backbone::Backbone;
use pdt::block::PdtBlock;
use pdt::config::RunConfig;
use pdt::data::{gen_dataset, gen_folds, subset_train, Container, Manifest, Split};
use pdt::error::Error;
use pdt::eval::{evaluate_manifest, Direction};
use pdt::gradcheck::{max_rel_err, pipeline_gradcheck, DEFAULT_STEP, DEFAULT_TOLERANCE};
use pdt::metrics::{format_report, write_report, write_roc_csv};
use pdt::tensor::{self, Tensor};
use pdt::trainer::{self, Supervision};

#[derive(Parser)]
#[command(
    name = "pdt",
    about = "Prepended domain transformer experiments on synthetic two-domain data",
    version
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate the synthetic two-domain dataset (optionally as folds).
    GenData {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// generate N independent identity-shuffled folds
        #[arg(long)]
        folds: Option<usize>,
    },
    /// Train the PDT block against the frozen backbone.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// manifest CSV of the training dataset
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// override train.supervision from the config
        #[arg(long)]
        supervision: Option<String>,
        /// train on a seeded identity subset (eval rows untouched)
        #[arg(long)]
        train_fraction: Option<f64>,
    },
    /// Cross-domain evaluation of a checkpoint (or the raw baseline).
    Eval {
        /// PDT checkpoint; required unless --no-pdt
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// evaluate raw probes through the backbone only
        #[arg(long)]
        no_pdt: bool,
        /// st = source gallery, target probes (default); ts swaps them
        #[arg(long, default_value = "st")]
        direction: String,
        /// run config for backbone seed / embed dim (defaults when omitted)
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Train + eval across training-set fractions; emits a CSV table.
    SweepFraction {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// comma-separated fractions, e.g. "0.1,0.5,1.0"
        #[arg(long)]
        fractions: String,
    },
    /// Gradient check, parameter count, or a one-image transform.
    Diagnose {
        /// gradcheck | param-count | transform
        #[arg(long)]
        what: String,
        #[arg(long)]
        config: PathBuf,
        /// input image container (transform only)
        #[arg(long = "in")]
        input: Option<PathBuf>,
        /// output image container (transform only)
        #[arg(long = "out")]
        output: Option<PathBuf>,
    },
}

fn ensure_dir(dir: &Path) -> pdt::Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn cmd_gen_data(config: &Path, out: &Path, folds: Option<usize>) -> pdt::Result<()> {
    let cfg = RunConfig::load(config)?;
    ensure_dir(out)?;
    cfg.echo(out)?;
    match folds {
        None => {
            gen_dataset(&cfg.data, out)?;
            println!("{}", out.join("manifest.csv").display());
        }
        Some(n) => {
            let manifests = gen_folds(&cfg.data, n, out)?;
            for (fold, m) in manifests.iter().enumerate() {
                println!("{}", m.dir.join("manifest.csv").display());
                let _ = fold;
            }
        }
    }
    Ok(())
}

fn cmd_train(
    config: &Path,
    data: &Path,
    out: &Path,
    supervision: Option<&str>,
    train_fraction: Option<f64>,
) -> pdt::Result<()> {
    let mut cfg = RunConfig::load(config)?;
    if let Some(s) = supervision {
        cfg.train.supervision = Supervision::parse(s)?;
    }
    cfg.validate()?;
    let manifest = Manifest::read(data)?;
    let manifest = match train_fraction {
        Some(f) if f < 1.0 => subset_train(&manifest, f, cfg.data.seed)?,
        Some(f) if f > 1.0 => {
            return Err(Error::Config(format!(
                "--train-fraction must be in (0, 1], got {f}"
            )))
        }
        _ => manifest,
    };
    ensure_dir(out)?;
    cfg.echo(out)?;
    let backbone = Backbone::toy(cfg.backbone_seed, cfg.embed_dim)?;
    let block = PdtBlock::init(cfg.pdt, cfg.pdt_seed)?;
    let report = trainer::train(&block, &backbone, &manifest, &cfg.train, out)?;
    println!(
        "trained {} epochs, best epoch {} (val loss {:.6})",
        report.train_losses.len(),
        report.selected_epoch,
        report.val_losses[report.selected_epoch],
    );
    println!("{}", report.checkpoint_path.display());
    Ok(())
}

fn cmd_eval(
    checkpoint: Option<&Path>,
    data: &Path,
    out: &Path,
    no_pdt: bool,
    direction: &str,
    config: Option<&Path>,
) -> pdt::Result<()> {
    let cfg = match config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let direction = Direction::parse(direction)?;
    let manifest = Manifest::read(data)?;
    let backbone = Backbone::toy(cfg.backbone_seed, cfg.embed_dim)?;
    let block = match (no_pdt, checkpoint) {
        (true, _) => None,
        (false, Some(path)) => Some(PdtBlock::load_auto(path)?),
        (false, None) => {
            return Err(Error::Config(
                "--checkpoint is required unless --no-pdt is given".into(),
            ))
        }
    };
    let (report, scores) = evaluate_manifest(&manifest, &backbone, block.as_ref(), direction)?;
    ensure_dir(out)?;
    cfg.echo(out)?;
    write_report(&report, &out.join("report.txt"))?;
    write_roc_csv(&scores, &out.join("roc.csv"))?;
    print!("{}", format_report(&report));
    Ok(())
}

fn cmd_sweep_fraction(config: &Path, data: &Path, out: &Path, fractions: &str) -> pdt::Result<()> {
    let cfg = RunConfig::load(config)?;
    let manifest = Manifest::read(data)?;
    let mut fracs = Vec::new();
    for tok in fractions.split(',') {
        let f: f64 = tok
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("bad fraction '{}'", tok.trim())))?;
        if !(f > 0.0 && f <= 1.0) {
            return Err(Error::Config(format!(
                "fractions must be in (0, 1], got {f}"
            )));
        }
        fracs.push((f, tok.trim().to_string()));
    }
    if fracs.is_empty() {
        return Err(Error::Config("--fractions list is empty".into()));
    }
    ensure_dir(out)?;
    cfg.echo(out)?;
    let backbone = Backbone::toy(cfg.backbone_seed, cfg.embed_dim)?;
    let mut table = String::from("fraction,n_identities,auc,eer,rank1,vr_at_far_1e-3\n");
    for (f, label) in &fracs {
        let f = *f;
        let sub = if f < 1.0 {
            subset_train(&manifest, f, cfg.data.seed)?
        } else {
            manifest.clone()
        };
        let n_ids = sub.ids_in_split(Split::Train).len();
        let run_dir = out.join(format!("fraction_{label}"));
        ensure_dir(&run_dir)?;
        let block = PdtBlock::init(cfg.pdt, cfg.pdt_seed)?;
        trainer::train(&block, &backbone, &sub, &cfg.train, &run_dir)?;
        let (report, scores) =
            evaluate_manifest(&manifest, &backbone, Some(&block), Direction::SourceGallery)?;
        write_report(&report, &run_dir.join("report.txt"))?;
        write_roc_csv(&scores, &run_dir.join("roc.csv"))?;
        let (vr, _) = report.vr(1e-3).expect("vr target");
        table.push_str(&format!(
            "{label},{n_ids},{:.6},{:.6},{:.6},{vr:.6}\n",
            report.auc, report.eer, report.rank1
        ));
    }
    let table_path = out.join("sweep.csv");
    std::fs::write(&table_path, &table).map_err(|e| Error::io(&table_path, e))?;
    print!("{table}");
    Ok(())
}

fn cmd_diagnose(
    what: &str,
    config: &Path,
    input: Option<&Path>,
    output: Option<&Path>,
) -> pdt::Result<()> {
    let cfg = RunConfig::load(config)?;
    match what {
        "param-count" => {
            let table = cfg.pdt.param_table();
            let width = table.iter().map(|(n, _)| n.len()).max().unwrap_or(0);
            for (name, count) in &table {
                println!("{name:width$}  {count}");
            }
            println!("{:width$}  {}", "total", cfg.pdt.param_count());
            Ok(())
        }
        "gradcheck" => {
            let mut worst = 0.0f64;
            for seed in [0u64, 3, 6] {
                let reports = pipeline_gradcheck(
                    cfg.pdt,
                    cfg.backbone_seed,
                    cfg.embed_dim,
                    seed,
                    DEFAULT_STEP,
                )?;
                let m = max_rel_err(&reports);
                println!("seed {seed}: max rel err {m:.3e}");
                worst = worst.max(m);
            }
            println!("max rel err {worst:.3e}");
            if worst < DEFAULT_TOLERANCE {
                Ok(())
            } else {
                Err(Error::NumericDegenerate(format!(
                    "gradient check failed: max rel err {worst:.3e} >= {DEFAULT_TOLERANCE:.0e}"
                )))
            }
        }
        "transform" => {
            let (input, output) = match (input, output) {
                (Some(i), Some(o)) => (i, o),
                _ => {
                    return Err(Error::Config(
                        "diagnose --what transform needs --in and --out".into(),
                    ))
                }
            };
            let container = Container::read(input)?;
            let entry = container
                .get("image")
                .ok_or_else(|| Error::Format("input container has no 'image' entry".into()))?;
            if entry.shape.len() != 3 || !matches!(entry.shape[0], 1 | 3) {
                return Err(Error::Format(format!(
                    "expected an image shaped [1|3,H,W], got {:?}",
                    entry.shape
                )));
            }
            let (c, h, w) = (entry.shape[0], entry.shape[1], entry.shape[2]);
            let x = Tensor::from_vec(vec![1, c, h, w], entry.data.clone())?;
            let x3 = if c == 1 {
                tensor::concat_channels(&[x.clone(), x.clone(), x])?
            } else {
                x
            };
            let block = PdtBlock::init(cfg.pdt, cfg.pdt_seed)?;
            let y = tensor::no_grad(|| block.forward(&x3))?;
            // preserve the input's channel count so shapes round-trip
            let data = if c == 1 {
                let d = y.to_vec();
                (0..h * w)
                    .map(|i| (d[i] + d[h * w + i] + d[2 * h * w + i]) / 3.0)
                    .collect()
            } else {
                y.to_vec()
            };
            let mut out_container = Container::new();
            out_container.insert("image", vec![c, h, w], data)?;
            out_container.write(output)?;
            println!("{}", output.display());
            Ok(())
        }
        other => Err(Error::Config(format!(
            "unknown diagnostic '{other}' (expected gradcheck, param-count, or transform)"
        ))),
    }
}

fn run(cli: Cli) -> pdt::Result<()> {
    match cli.cmd {
        Cmd::GenData { config, out, folds } => cmd_gen_data(&config, &out, folds),
        Cmd::Train {
            config,
            data,
            out,
            supervision,
            train_fraction,
        } => cmd_train(&config, &data, &out, supervision.as_deref(), train_fraction),
        Cmd::Eval {
            checkpoint,
            data,
            out,
            no_pdt,
            direction,
            config,
        } => cmd_eval(
            checkpoint.as_deref(),
            &data,
            &out,
            no_pdt,
            &direction,
            config.as_deref(),
        ),
        Cmd::SweepFraction {
            config,
            data,
            out,
            fractions,
        } => cmd_sweep_fraction(&config, &data, &out, &fractions),
        Cmd::Diagnose {
            what,
            config,
            input,
            output,
        } => cmd_diagnose(&what, &config, input.as_deref(), output.as_deref()),
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
