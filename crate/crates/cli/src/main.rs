//! `hirl`: demonstrations in, segmented goal chains, learned rewards, and
//! benchmarked agents out.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use hirl_core::envs::generate_demos;
use hirl_core::harness::{
    aggregate_curve, cell_chain, cell_demos, cell_reward, emit_plot, membership_for,
    parse_curves_csv, parse_metrics_csv, render_comparison, run_experiment, write_metrics_csv,
    ArtifactStore, CurveSeries, ExperimentConfig, MetricsRow, RunOutput,
};
use hirl_core::reward::save_reward;
use hirl_core::segmentation::{save_chain, GoalChain};
use hirl_core::trajectory::{featurize, save_demonstrations, FeaturizerSpec};

#[derive(Parser)]
#[command(name = "hirl", version, about = "Sub-goal discovery and reward learning experiments")]
struct Cli {
    /// Overrides the seed: config seed lists collapse to this one seed, and
    /// generation commands use it directly.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate expert demonstrations for a built-in environment.
    GenDemos {
        #[arg(long)]
        env: String,
        #[arg(long, default_value_t = 10)]
        count: usize,
        /// Demonstration file to write.
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Discover a sub-goal chain from a config's demonstrations and print
    /// each demonstration's progress encoding.
    Segment {
        #[arg(short, long)]
        config: PathBuf,
        /// Chain file to write (optional).
        #[arg(short, long)]
        out: Option<PathBuf>,
        /// Report per-goal visit counts instead of binary progress.
        #[arg(long)]
        counting: bool,
        /// Artifact cache directory.
        #[arg(long, default_value = "hirl-work")]
        work: PathBuf,
    },
    /// Learn a reward from a config's demonstrations and save it.
    Irl {
        #[arg(short, long)]
        config: PathBuf,
        /// Reward file to write.
        #[arg(short, long)]
        out: PathBuf,
        /// Artifact cache directory.
        #[arg(long, default_value = "hirl-work")]
        work: PathBuf,
    },
    /// Run one experiment config end to end.
    Train {
        #[arg(short, long)]
        config: PathBuf,
        /// Output directory for curves, metrics, and plots.
        #[arg(short, long, default_value = "hirl-out")]
        out: PathBuf,
    },
    /// Run several configs, then write combined metrics, comparisons, and
    /// plots. Exits non-zero if any cell fails.
    Bench {
        /// Config files, one per cell.
        #[arg(short, long = "config", required = true)]
        configs: Vec<PathBuf>,
        #[arg(short, long, default_value = "hirl-out")]
        out: PathBuf,
    },
    /// Compare rows from metrics CSV files side by side.
    Compare {
        /// Metrics CSV files.
        #[arg(required = true)]
        files: Vec<PathBuf>,
        /// Keep only rows from this environment.
        #[arg(long)]
        env: Option<String>,
    },
    /// Plot curves CSV files into one SVG.
    Plot {
        /// Curve CSV files.
        #[arg(required = true)]
        files: Vec<PathBuf>,
        #[arg(short, long)]
        out: PathBuf,
        #[arg(long, default_value = "")]
        title: String,
        /// Series labels; defaults to each file's run directory name.
        #[arg(long = "label")]
        labels: Vec<String>,
    },
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match cli.cmd {
        Cmd::GenDemos { env, count, out } => gen_demos(&env, count, &out, cli.seed.unwrap_or(0)),
        Cmd::Segment { config, out, counting, work } => {
            segment(&config, out.as_deref(), counting, &work, cli.seed)
        }
        Cmd::Irl { config, out, work } => irl(&config, &out, &work, cli.seed),
        Cmd::Train { config, out } => train(&config, &out, cli.seed),
        Cmd::Bench { configs, out } => bench(&configs, &out, cli.seed),
        Cmd::Compare { files, env } => compare(&files, env.as_deref()),
        Cmd::Plot { files, out, title, labels } => plot(&files, &out, &title, &labels),
    }
}

fn load_config(path: &Path, seed: Option<u64>) -> Result<ExperimentConfig> {
    let text =
        fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    let mut cfg = ExperimentConfig::parse(&text)
        .with_context(|| format!("parsing config {}", path.display()))?;
    if let Some(s) = seed {
        cfg.seeds = vec![s];
    }
    cfg.validate()?;
    Ok(cfg)
}

fn gen_demos(env: &str, count: usize, out: &Path, seed: u64) -> Result<()> {
    let set = generate_demos(env, count, seed)?;
    let mean_len =
        set.demos.iter().map(|d| d.len()).sum::<usize>() as f64 / set.demos.len() as f64;
    save_demonstrations(&set, out)?;
    println!("wrote {} demonstrations (mean length {mean_len:.1}) to {}", set.demos.len(), out.display());
    Ok(())
}

fn describe_chain(chain: &GoalChain) -> String {
    if chain.is_empty() {
        return "no sub-goals found".into();
    }
    let mut s = format!("{} sub-goals (feature dim {}):\n", chain.k(), chain.dim());
    for (i, g) in chain.goals.iter().enumerate() {
        let mu = g
            .mu
            .iter()
            .map(|v| format!("{v:.3}"))
            .collect::<Vec<_>>()
            .join(", ");
        s.push_str(&format!(
            "  goal {i}: mu [{mu}], t {:.2}..{:.2} (mean {:.2}), support {:.2}\n",
            g.t_lo, g.t_hi, g.t_mean, g.support
        ));
    }
    s
}

fn segment(
    config: &Path,
    out: Option<&Path>,
    counting: bool,
    work: &Path,
    seed: Option<u64>,
) -> Result<()> {
    let cfg = load_config(config, seed)?;
    let seed = cfg.seeds[0];
    let store = ArtifactStore::new(work.join("cache"))?;
    let demos = cell_demos(&cfg, seed, &store)?;
    let chain = cell_chain(&cfg, seed, &store)?;
    print!("{}", describe_chain(&chain));
    if let Some(path) = out {
        save_chain(&chain, path)?;
        println!("chain written to {}", path.display());
    }
    if !chain.is_empty() {
        let spec = FeaturizerSpec::parse(&cfg.featurizer)?;
        let membership = membership_for(&cfg, &chain)?;
        for demo in &demos.demos {
            let traj = featurize(demo, &spec)?;
            if counting {
                let (pv, counts) = membership.encode_counting(&traj, cfg.gate_demos)?;
                println!("demo {}: progress {} counts {:?}", demo.id, bits(&pv), counts);
            } else {
                let pv = membership.encode(&traj, cfg.gate_demos)?;
                println!("demo {}: progress {}", demo.id, bits(&pv));
            }
        }
    }
    Ok(())
}

fn bits(pv: &hirl_core::encoding::ProgressVector) -> String {
    pv.bits().iter().map(|&b| if b != 0 { '1' } else { '0' }).collect()
}

fn irl(config: &Path, out: &Path, work: &Path, seed: Option<u64>) -> Result<()> {
    let cfg = load_config(config, seed)?;
    let seed = cfg.seeds[0];
    let store = ArtifactStore::new(work.join("cache"))?;
    let with_chain = cfg.method == "hirl";
    let (chain, reward) = cell_reward(&cfg, seed, &store, with_chain)?;
    if with_chain {
        print!("{}", describe_chain(&chain));
    }
    save_reward(&reward, out)?;
    println!("reward written to {}", out.display());
    Ok(())
}

fn describe_row(row: &MetricsRow) -> String {
    format!(
        "{} on {}: max {:.4} ± {:.4}, auc {:.4} ± {:.4} over {} seed(s)",
        row.method,
        row.env,
        row.max_mean,
        row.max_stderr,
        row.auc_mean,
        row.auc_stderr,
        row.seeds.len()
    )
}

fn train(config: &Path, out: &Path, seed: Option<u64>) -> Result<()> {
    let cfg = load_config(config, seed)?;
    let run = run_experiment(&cfg, out)?;
    println!("{}", describe_row(&run.row));
    println!("outputs in {}", run.dir.display());
    Ok(())
}

fn bench(configs: &[PathBuf], out: &Path, seed: Option<u64>) -> Result<()> {
    let mut done: Vec<(ExperimentConfig, RunOutput)> = Vec::new();
    let mut failures = Vec::new();
    for path in configs {
        let outcome = load_config(path, seed).and_then(|cfg| {
            let run = run_experiment(&cfg, out)?;
            Ok((cfg, run))
        });
        match outcome {
            Ok((cfg, run)) => {
                println!("{}", describe_row(&run.row));
                done.push((cfg, run));
            }
            Err(e) => {
                eprintln!("cell {} failed: {e:#}", path.display());
                failures.push(path.clone());
            }
        }
    }
    if !done.is_empty() {
        fs::create_dir_all(out)?;
        let rows: Vec<MetricsRow> = done.iter().map(|(_, r)| r.row.clone()).collect();
        fs::write(out.join("metrics.csv"), write_metrics_csv(&rows))?;
        let mut by_env: BTreeMap<String, Vec<&(ExperimentConfig, RunOutput)>> = BTreeMap::new();
        for cell in &done {
            by_env.entry(cell.0.env.clone()).or_default().push(cell);
        }
        for (env, cells) in &by_env {
            let series: Vec<CurveSeries> = cells
                .iter()
                .map(|(cfg, run)| CurveSeries {
                    label: cfg.name(),
                    points: aggregate_curve(&run.curves),
                })
                .collect();
            emit_plot(&series, env, &out.join(format!("curves-{env}.svg")))?;
            if cells.len() >= 2 {
                let rows: Vec<MetricsRow> = cells.iter().map(|(_, r)| r.row.clone()).collect();
                println!("\n{}", render_comparison(&rows)?);
            }
        }
    }
    if !failures.is_empty() {
        bail!("{} of {} cells failed", failures.len(), configs.len());
    }
    Ok(())
}

fn compare(files: &[PathBuf], env: Option<&str>) -> Result<()> {
    let mut rows = Vec::new();
    for path in files {
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading metrics {}", path.display()))?;
        rows.extend(parse_metrics_csv(&text)?);
    }
    if let Some(env) = env {
        rows.retain(|r| r.env == env);
    }
    print!("{}", render_comparison(&rows)?);
    Ok(())
}

fn default_label(path: &Path) -> String {
    if path.file_name().is_some_and(|n| n == "curves.csv") {
        if let Some(dir) = path.parent().and_then(|p| p.file_name()) {
            return dir.to_string_lossy().into_owned();
        }
    }
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "curves".into())
}

fn plot(files: &[PathBuf], out: &Path, title: &str, labels: &[String]) -> Result<()> {
    if !labels.is_empty() && labels.len() != files.len() {
        bail!("got {} --label flags for {} files", labels.len(), files.len());
    }
    let mut series = Vec::new();
    for (i, path) in files.iter().enumerate() {
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading curves {}", path.display()))?;
        let records = parse_curves_csv(&text)?;
        if records.is_empty() {
            bail!("{} holds no curves", path.display());
        }
        let label = labels.get(i).cloned().unwrap_or_else(|| default_label(path));
        let mut methods: Vec<String> = records.iter().map(|r| r.method.clone()).collect();
        methods.dedup();
        methods.sort();
        methods.dedup();
        for method in methods {
            let curves: Vec<(u64, hirl_core::agents::LearningCurve)> = records
                .iter()
                .filter(|r| r.method == method)
                .map(|r| (r.seed, r.curve.clone()))
                .collect();
            let label = if records.iter().any(|r| r.method != method) {
                format!("{label}:{method}")
            } else {
                label.clone()
            };
            series.push(CurveSeries { label, points: aggregate_curve(&curves) });
        }
    }
    emit_plot(&series, title, out)?;
    println!("plot written to {}", out.display());
    Ok(())
}
