//! Learning-curve metrics, their CSV forms, and run comparison.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::agents::{EvalPoint, LearningCurve};
use crate::error::{Error, Result};

/// Unit note stamped into every CSV that carries an AUC column.
pub const AUC_UNIT: &str = "mean true reward per evaluation, summed over evaluations";

/// Scalar summary of one learning curve.
#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    /// Best evaluation mean anywhere on the curve.
    pub max: f64,
    /// Sum of evaluation means; see [`AUC_UNIT`].
    pub auc: f64,
}

pub fn compute_metrics(curve: &LearningCurve) -> Result<Metrics> {
    if curve.points.is_empty() {
        return Err(Error::EmptyInput("learning curve has no evaluation points".into()));
    }
    let mut max = f64::NEG_INFINITY;
    let mut auc = 0.0;
    for p in &curve.points {
        max = max.max(p.mean_true_reward);
        auc += p.mean_true_reward;
    }
    Ok(Metrics { max, auc })
}

/// First episode count whose evaluation mean reaches `level`, or `None`.
pub fn episodes_to(curve: &LearningCurve, level: f64) -> Option<usize> {
    curve
        .points
        .iter()
        .find(|p| p.mean_true_reward >= level)
        .map(|p| p.episode)
}

/// One experiment cell aggregated over its seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub method: String,
    pub env: String,
    pub max_mean: f64,
    pub max_stderr: f64,
    pub auc_mean: f64,
    pub auc_stderr: f64,
    pub seeds: Vec<u64>,
}

fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Averages per-seed metrics into one row.
pub fn aggregate_metrics(method: &str, env: &str, per_seed: &[(u64, Metrics)]) -> Result<MetricsRow> {
    if per_seed.is_empty() {
        return Err(Error::EmptyInput("no per-seed metrics to aggregate".into()));
    }
    let maxes: Vec<f64> = per_seed.iter().map(|(_, m)| m.max).collect();
    let aucs: Vec<f64> = per_seed.iter().map(|(_, m)| m.auc).collect();
    let (max_mean, max_stderr) = mean_stderr(&maxes);
    let (auc_mean, auc_stderr) = mean_stderr(&aucs);
    Ok(MetricsRow {
        method: method.to_string(),
        env: env.to_string(),
        max_mean,
        max_stderr,
        auc_mean,
        auc_stderr,
        seeds: per_seed.iter().map(|(s, _)| *s).collect(),
    })
}

const METRICS_HEADER: &str = "method,env,max_mean,max_stderr,auc_mean,auc_stderr,seeds";

/// Renders metrics rows as CSV. Floats use the shortest round-trip form, so
/// parsing the output recovers the exact values.
pub fn write_metrics_csv(rows: &[MetricsRow]) -> String {
    let mut out = String::new();
    out.push_str("# metrics v1\n");
    let _ = writeln!(out, "# auc unit: {AUC_UNIT}");
    out.push_str(METRICS_HEADER);
    out.push('\n');
    for r in rows {
        let seeds = r
            .seeds
            .iter()
            .map(|s| s.to_string())
            .collect::<Vec<_>>()
            .join(";");
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.method, r.env, r.max_mean, r.max_stderr, r.auc_mean, r.auc_stderr, seeds
        );
    }
    out
}

pub fn parse_metrics_csv(text: &str) -> Result<Vec<MetricsRow>> {
    let mut rows = Vec::new();
    let mut saw_header = false;
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if !saw_header {
            if line != METRICS_HEADER {
                return Err(Error::Parse {
                    line: i + 1,
                    msg: format!("expected metrics header `{METRICS_HEADER}`"),
                });
            }
            saw_header = true;
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 7 {
            return Err(Error::Parse { line: i + 1, msg: format!("expected 7 fields, got {}", f.len()) });
        }
        let num = |s: &str| -> Result<f64> {
            s.parse().map_err(|_| Error::Parse { line: i + 1, msg: format!("bad number `{s}`") })
        };
        let seeds = f[6]
            .split(';')
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse()
                    .map_err(|_| Error::Parse { line: i + 1, msg: format!("bad seed `{s}`") })
            })
            .collect::<Result<Vec<u64>>>()?;
        rows.push(MetricsRow {
            method: f[0].to_string(),
            env: f[1].to_string(),
            max_mean: num(f[2])?,
            max_stderr: num(f[3])?,
            auc_mean: num(f[4])?,
            auc_stderr: num(f[5])?,
            seeds,
        });
    }
    if !saw_header {
        return Err(Error::Parse { line: 0, msg: "metrics CSV has no header row".into() });
    }
    Ok(rows)
}

/// Renders learning curves as CSV, one row per evaluation point per seed.
/// Progress fractions get one `goal<i>` column each; methods without a chain
/// leave them blank.
pub fn write_curves_csv(method: &str, curves: &[(u64, LearningCurve)]) -> String {
    let k = curves
        .iter()
        .flat_map(|(_, c)| c.points.iter())
        .map(|p| p.mean_progress.len())
        .max()
        .unwrap_or(0);
    let mut out = String::new();
    out.push_str("# curves v1\n");
    let _ = writeln!(out, "# auc unit: {AUC_UNIT}");
    out.push_str("episode,mean_true_reward,stderr,seed,method");
    for i in 0..k {
        let _ = write!(out, ",goal{i}");
    }
    out.push('\n');
    for (seed, curve) in curves {
        for p in &curve.points {
            let _ = write!(out, "{},{},{},{},{}", p.episode, p.mean_true_reward, p.stderr, seed, method);
            for i in 0..k {
                match p.mean_progress.get(i) {
                    Some(v) => {
                        let _ = write!(out, ",{v}");
                    }
                    None => out.push(','),
                }
            }
            out.push('\n');
        }
    }
    out
}

/// Curves parsed back from [`write_curves_csv`] output, grouped per
/// `(method, seed)` in file order.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveRecord {
    pub method: String,
    pub seed: u64,
    pub curve: LearningCurve,
}

pub fn parse_curves_csv(text: &str) -> Result<Vec<CurveRecord>> {
    let mut records: Vec<CurveRecord> = Vec::new();
    let mut saw_header = false;
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if !saw_header {
            if !line.starts_with("episode,mean_true_reward,stderr,seed,method") {
                return Err(Error::Parse { line: i + 1, msg: "unrecognized curve CSV header".into() });
            }
            saw_header = true;
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() < 5 {
            return Err(Error::Parse { line: i + 1, msg: format!("expected >= 5 fields, got {}", f.len()) });
        }
        let num = |s: &str| -> Result<f64> {
            s.parse().map_err(|_| Error::Parse { line: i + 1, msg: format!("bad number `{s}`") })
        };
        let episode: usize = f[0]
            .parse()
            .map_err(|_| Error::Parse { line: i + 1, msg: format!("bad episode `{}`", f[0]) })?;
        let seed: u64 = f[3]
            .parse()
            .map_err(|_| Error::Parse { line: i + 1, msg: format!("bad seed `{}`", f[3]) })?;
        let method = f[4].to_string();
        let mut mean_progress = Vec::new();
        for g in &f[5..] {
            if !g.is_empty() {
                mean_progress.push(num(g)?);
            }
        }
        let point = EvalPoint {
            episode,
            mean_true_reward: num(f[1])?,
            stderr: num(f[2])?,
            mean_progress,
        };
        match records.iter_mut().find(|r| r.seed == seed && r.method == method) {
            Some(r) => r.curve.points.push(point),
            None => records.push(CurveRecord {
                method,
                seed,
                curve: LearningCurve { points: vec![point] },
            }),
        }
    }
    if !saw_header {
        return Err(Error::Parse { line: 0, msg: "curve CSV has no header row".into() });
    }
    Ok(records)
}

/// Side-by-side table of metrics rows from one environment. The best Max and
/// best AUC are starred; ties star every holder.
pub fn render_comparison(rows: &[MetricsRow]) -> Result<String> {
    if rows.len() < 2 {
        return Err(Error::Config("comparison needs at least two rows".into()));
    }
    let env = &rows[0].env;
    if let Some(other) = rows.iter().find(|r| &r.env != env) {
        return Err(Error::Config(format!(
            "comparison mixes environments `{env}` and `{}`",
            other.env
        )));
    }
    let best_max = rows.iter().map(|r| r.max_mean).fold(f64::NEG_INFINITY, f64::max);
    let best_auc = rows.iter().map(|r| r.auc_mean).fold(f64::NEG_INFINITY, f64::max);
    let mut cells: Vec<[String; 4]> = vec![[
        "method".into(),
        "max".into(),
        "auc".into(),
        "seeds".into(),
    ]];
    for r in rows {
        let star_max = if r.max_mean == best_max { "*" } else { "" };
        let star_auc = if r.auc_mean == best_auc { "*" } else { "" };
        cells.push([
            r.method.clone(),
            format!("{:.4} ± {:.4}{}", r.max_mean, r.max_stderr, star_max),
            format!("{:.4} ± {:.4}{}", r.auc_mean, r.auc_stderr, star_auc),
            r.seeds.len().to_string(),
        ]);
    }
    let mut widths = [0usize; 4];
    for row in &cells {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let mut out = String::new();
    let _ = writeln!(out, "environment: {env}  (auc unit: {AUC_UNIT})");
    for row in &cells {
        let line = row
            .iter()
            .zip(widths)
            .map(|(cell, w)| format!("{cell:<w$}"))
            .collect::<Vec<_>>()
            .join("  ");
        let _ = writeln!(out, "{}", line.trim_end());
    }
    Ok(out)
}

/// Collapses per-seed curves into one mean series with across-seed standard
/// errors, keyed by episode.
pub fn aggregate_curve(curves: &[(u64, LearningCurve)]) -> Vec<(f64, f64, f64)> {
    let mut by_episode: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for (_, curve) in curves {
        for p in &curve.points {
            by_episode.entry(p.episode).or_default().push(p.mean_true_reward);
        }
    }
    by_episode
        .into_iter()
        .map(|(ep, xs)| {
            let (m, se) = mean_stderr(&xs);
            (ep as f64, m, se)
        })
        .collect()
}
