//! Command-line front end.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{CommandFactory, FromArgMatches, Parser, Subcommand};

use crate::cluster4d::cluster_sequence;
use crate::config::{
    ParamSpec, RunConfig, CLUSTER_KEYS, EVAL_KEYS, GROUND_KEYS, STITCH_KEYS, SYNTH_KEYS,
    TRACKER_KEYS,
};
use crate::error::{Error, Result};
use crate::ground::{segment_ground, GroundMask};
use crate::io;
use crate::matching::ToyFeatureModel;
use crate::metrics::{
    best_iou, filter_small, s_assoc_scanwise, s_assoc_temporal, EvalPair, MetricsReport,
};
use crate::rng::mix_seed;
use crate::stitch::stitch_sequence;
use crate::synth::generate;
use crate::tracker::{
    initial_queries, track_sequence, FeatureProvider, FileFeatureProvider, ToyProvider,
};
use crate::types::{Scan, Sequence};

/// Scan rate assumed for sequences read from disk.
const DEFAULT_HZ: f64 = 10.0;

#[derive(Debug, Parser)]
#[command(
    name = "seg4d",
    version,
    about = "Unsupervised 4D Lidar instance segmentation toolkit"
)]
struct Cli {
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, clap::Args)]
struct ConfigArgs {
    /// `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one key, e.g. `--set cluster.window_scans=20`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic sequence (velodyne/, labels/, poses.txt).
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Segment ground points; writes one .ground mask per scan.
    Ground {
        #[arg(long)]
        seq: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Spatio-temporal clustering into instance labels.
    Cluster {
        #[arg(long)]
        seq: PathBuf,
        /// Precomputed ground masks; computed on the fly when absent.
        #[arg(long)]
        ground: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Online query tracking.
    Track {
        #[arg(long)]
        seq: PathBuf,
        /// `toy`, or a directory of NNNNNN.feat files.
        #[arg(long, default_value = "toy")]
        provider: String,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Carry instance ids across consecutive clustering windows.
    Stitch {
        #[arg(long)]
        seq: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Association metrics of predicted labels against ground truth.
    Eval {
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        pred: PathBuf,
        /// Drop per-scan ground-truth parts with fewer points.
        #[arg(long)]
        filter: Option<usize>,
        /// Also report the scan-wise score.
        #[arg(long)]
        scanwise: bool,
        /// Write the `key = value` report here.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Write the JSON report here.
        #[arg(long)]
        json: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
}

fn sections(name: &str) -> &'static [&'static [ParamSpec]] {
    match name {
        "synth" => &[SYNTH_KEYS],
        "ground" => &[GROUND_KEYS],
        "cluster" => &[GROUND_KEYS, CLUSTER_KEYS],
        "track" => &[TRACKER_KEYS],
        "stitch" => &[STITCH_KEYS],
        "eval" => &[EVAL_KEYS],
        _ => &[],
    }
}

fn key_listing(name: &str) -> String {
    let mut text = String::from("Config keys (default):\n");
    for spec in sections(name).iter().flat_map(|s| s.iter()) {
        text.push_str(&format!(
            "  {} = {}    {}\n",
            spec.key, spec.default, spec.help
        ));
    }
    text
}

fn command() -> clap::Command {
    let mut cmd = Cli::command();
    for name in ["synth", "ground", "cluster", "track", "stitch", "eval"] {
        cmd = cmd.mut_subcommand(name, |sub| sub.after_help(key_listing(name)));
    }
    cmd
}

fn load_config(name: &str, args: &ConfigArgs) -> Result<RunConfig> {
    let mut cfg = RunConfig::new(sections(name));
    for assignment in &args.set {
        cfg.set_flag(assignment)?;
    }
    if let Some(path) = &args.config {
        cfg.apply_file(path)?;
    }
    Ok(cfg)
}

fn save_config(cfg: &RunConfig, out: &Path) -> Result<()> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let path = out.join("config.txt");
    std::fs::write(&path, cfg.render()).map_err(|e| Error::io(&path, e))
}

fn ground_masks(scans: &[Scan], cfg: &RunConfig) -> Result<Vec<GroundMask>> {
    use rayon::prelude::*;
    let params = cfg.ground()?;
    scans
        .par_iter()
        .map(|s| {
            if s.is_empty() {
                Ok(GroundMask(Vec::new()))
            } else {
                segment_ground(s, &params)
            }
        })
        .collect()
}

fn read_masks(dir: &Path, scans: &[Scan]) -> Result<Vec<GroundMask>> {
    let files = io::list_files(dir, "ground")?;
    if files.len() != scans.len() {
        return Err(Error::Shape(format!(
            "{} ground masks for {} scans",
            files.len(),
            scans.len()
        )));
    }
    files
        .iter()
        .map(|f| io::read_ground_mask(f).map(GroundMask))
        .collect()
}

fn run_command(command: Command) -> Result<()> {
    match command {
        Command::Synth { out, cfg } => {
            let cfg = load_config("synth", &cfg)?;
            let scene = cfg.scene()?;
            let out_data = generate(&scene, cfg.get("synth.num_scans")?, cfg.get("synth.hz")?)?;
            io::write_sequence_dir(out_data.sequence.scans(), &out)?;
            io::write_label_dir(&out_data.labels, out.join("labels"))?;
            save_config(&cfg, &out)?;
            eprintln!(
                "synth: wrote {} scans with {} objects to {}",
                out_data.sequence.len(),
                scene.objects.len(),
                out.display()
            );
        }
        Command::Ground { seq, out, cfg } => {
            let cfg = load_config("ground", &cfg)?;
            let seq = io::read_sequence_dir(&seq, DEFAULT_HZ)?;
            let masks = ground_masks(seq.scans(), &cfg)?;
            for (k, m) in masks.iter().enumerate() {
                io::write_ground_mask(&m.0, out.join(io::scan_file_name(k, "ground")))?;
            }
            save_config(&cfg, &out)?;
            let total: usize = masks.iter().map(GroundMask::count).sum();
            eprintln!("ground: {} scans, {total} ground points", masks.len());
        }
        Command::Cluster {
            seq,
            ground,
            out,
            cfg,
        } => {
            let cfg = load_config("cluster", &cfg)?;
            let params = cfg.cluster()?;
            let seq = io::read_sequence_dir(&seq, DEFAULT_HZ)?;
            let masks = match &ground {
                Some(dir) => read_masks(dir, seq.scans())?,
                None => ground_masks(seq.scans(), &cfg)?,
            };
            let labels = io::renumber_sequence(&cluster_sequence(seq.scans(), &masks, &params)?)?;
            io::write_label_dir(&labels, &out)?;
            save_config(&cfg, &out)?;
            eprintln!(
                "cluster: {} scans, {} instances",
                labels.len(),
                crate::types::segments_from_labels(&labels).len()
            );
        }
        Command::Track {
            seq,
            provider,
            out,
            cfg,
        } => {
            let cfg = load_config("track", &cfg)?;
            let params = cfg.tracker()?;
            let dim: usize = cfg.get("tracker.feature_dim")?;
            let seed: u64 = cfg.get("tracker.seed")?;
            if dim < 2 {
                return Err(Error::InvalidParam(
                    "tracker.feature_dim must be >= 2".into(),
                ));
            }
            let seq: Sequence = io::read_sequence_dir(&seq, DEFAULT_HZ)?;
            let queries = initial_queries(params.num_queries, dim, seed);
            let mut provider: Box<dyn FeatureProvider> = if provider == "toy" {
                let model = ToyFeatureModel::seeded(dim, 1, mix_seed(&[seed, 1]), 1.0);
                Box::new(ToyProvider { model })
            } else {
                Box::new(FileFeatureProvider::new(provider))
            };
            let labels = track_sequence(seq.scans(), provider.as_mut(), &params, queries)?;
            let labels = io::renumber_sequence(&labels)?;
            io::write_label_dir(&labels, &out)?;
            save_config(&cfg, &out)?;
            eprintln!(
                "track: {} scans, {} ids",
                labels.len(),
                crate::types::segments_from_labels(&labels).len()
            );
        }
        Command::Stitch {
            seq,
            labels,
            out,
            cfg,
        } => {
            let cfg = load_config("stitch", &cfg)?;
            let params = cfg.stitch()?;
            let seq = io::read_sequence_dir(&seq, DEFAULT_HZ)?;
            let labels = io::read_label_dir(&labels)?;
            let stitched = stitch_sequence(
                seq.scans(),
                &labels,
                cfg.get("stitch.window_scans")?,
                &params,
            )?;
            let stitched = io::renumber_sequence(&stitched)?;
            io::write_label_dir(&stitched, &out)?;
            save_config(&cfg, &out)?;
            eprintln!(
                "stitch: {} instances before, {} after",
                crate::types::segments_from_labels(&labels).len(),
                crate::types::segments_from_labels(&stitched).len()
            );
        }
        Command::Eval {
            gt,
            pred,
            filter,
            scanwise,
            report,
            json,
            cfg,
        } => {
            let cfg = cfg_with_filter(load_config("eval", &cfg)?, filter)?;
            let min_points: usize = cfg.get("eval.min_points")?;
            let gt = io::read_label_dir(&gt)?;
            let pred = io::read_label_dir(&pred)?;
            let mut pair = EvalPair::from_labels(&gt, &pred)?;
            if min_points > 0 {
                pair = filter_small(&pair, min_points);
            }
            let mut r = MetricsReport::default();
            r.push("s_assoc_temporal", s_assoc_temporal(&pair)?);
            if scanwise {
                r.push("s_assoc_scanwise", s_assoc_scanwise(&pair)?);
            }
            r.push("best_iou", best_iou(&pair)?);
            r.push("num_gt", pair.ground_truth.len());
            r.push("num_pred", pair.predictions.len());
            r.push("filter_min_points", min_points);
            print!("{}", r.to_key_value());
            if let Some(path) = report {
                std::fs::write(&path, r.to_key_value()).map_err(|e| Error::io(&path, e))?;
            }
            if let Some(path) = json {
                std::fs::write(&path, r.to_json() + "\n").map_err(|e| Error::io(&path, e))?;
            }
            eprintln!("eval: {} scans", gt.len());
        }
    }
    Ok(())
}

fn cfg_with_filter(mut cfg: RunConfig, filter: Option<usize>) -> Result<RunConfig> {
    if let Some(n) = filter {
        cfg.set(
            "eval.min_points",
            &n.to_string(),
            crate::config::Provenance::Flag,
        )?;
    }
    Ok(cfg)
}

/// Exit code of an error: 2 for unreadable or unwritable files, 1 otherwise.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Io { .. } | Error::Malformed { .. } => 2,
        _ => 1,
    }
}

/// Parses `args` (including the program name) and runs the subcommand.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let matches = match command().try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return 1;
        }
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be >= 1");
            return 1;
        }
        // a second initialization (e.g. repeated in-process runs) keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
    match run_command(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
