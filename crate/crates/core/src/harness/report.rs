use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learner::{RunOutput, RunRecord};

/// One line of `metrics.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub epoch: usize,
    pub method: String,
    pub seed: u64,
    pub policy_value: f64,
    pub pct_change: f64,
    #[serde(rename = "move")]
    pub move_: f64,
    pub behavior_loss: Option<f64>,
}

impl From<&RunRecord> for MetricRow {
    fn from(r: &RunRecord) -> Self {
        Self {
            epoch: r.epoch,
            method: r.method.name().to_string(),
            seed: r.seed,
            policy_value: r.policy_value,
            pct_change: r.pct_change,
            move_: r.move_,
            behavior_loss: r.behavior_loss,
        }
    }
}

/// One line of `summary.csv`: per-method statistics over seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: String,
    pub seeds: usize,
    pub best_mean: f64,
    pub best_se: f64,
    pub final_mean: f64,
    pub final_se: f64,
    pub pct_change_mean: f64,
    pub pct_change_se: f64,
    pub move_mean: f64,
    pub move_se: f64,
}

/// One line of `histograms.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramRow {
    pub method: String,
    pub seed: u64,
    /// `initial` or `final`.
    pub stage: String,
    pub level: usize,
    pub count: usize,
}

impl HistogramRow {
    pub fn from_output(o: &RunOutput) -> Vec<Self> {
        let rows = |stage: &str, counts: &[usize]| -> Vec<Self> {
            counts
                .iter()
                .enumerate()
                .map(|(level, &count)| Self {
                    method: o.method.name().to_string(),
                    seed: o.seed,
                    stage: stage.to_string(),
                    level,
                    count,
                })
                .collect()
        };
        let mut out = rows("initial", &o.initial_histogram);
        out.extend(rows("final", &o.final_histogram));
        out
    }
}

/// Mean and standard error (sample standard deviation over `sqrt(n)`).
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// Groups rows by method (in order of first appearance), then by seed.
fn by_method_seed(rows: &[MetricRow]) -> Vec<(String, BTreeMap<u64, Vec<&MetricRow>>)> {
    let mut out: Vec<(String, BTreeMap<u64, Vec<&MetricRow>>)> = Vec::new();
    for r in rows {
        let slot = match out.iter().position(|(m, _)| *m == r.method) {
            Some(k) => k,
            None => {
                out.push((r.method.clone(), BTreeMap::new()));
                out.len() - 1
            }
        };
        out[slot].1.entry(r.seed).or_default().push(r);
    }
    out
}

/// Best and final policy value per seed, plus final-epoch %CHANGE and MOVE.
pub fn summarize(rows: &[MetricRow]) -> Vec<SummaryRow> {
    by_method_seed(rows)
        .into_iter()
        .map(|(method, seeds)| {
            let (mut best, mut fin, mut chg, mut mv) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
            for runs in seeds.values() {
                best.push(runs.iter().map(|r| r.policy_value).fold(f64::NEG_INFINITY, f64::max));
                let last = runs.iter().max_by_key(|r| r.epoch).expect("non-empty group");
                fin.push(last.policy_value);
                chg.push(last.pct_change);
                mv.push(last.move_);
            }
            let (best_mean, best_se) = mean_se(&best);
            let (final_mean, final_se) = mean_se(&fin);
            let (pct_change_mean, pct_change_se) = mean_se(&chg);
            let (move_mean, move_se) = mean_se(&mv);
            SummaryRow {
                method,
                seeds: seeds.len(),
                best_mean,
                best_se,
                final_mean,
                final_se,
                pct_change_mean,
                pct_change_se,
                move_mean,
                move_se,
            }
        })
        .collect()
}

/// Mean and standard error of the policy value at each epoch, per method.
pub fn curves(rows: &[MetricRow]) -> Vec<(String, Vec<(usize, f64, f64)>)> {
    by_method_seed(rows)
        .into_iter()
        .map(|(method, seeds)| {
            let mut at: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
            for runs in seeds.values() {
                for r in runs {
                    at.entry(r.epoch).or_default().push(r.policy_value);
                }
            }
            let points = at
                .into_iter()
                .map(|(epoch, xs)| {
                    let (m, se) = mean_se(&xs);
                    (epoch, m, se)
                })
                .collect();
            (method, points)
        })
        .collect()
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

pub fn write_metrics(path: &Path, rows: &[MetricRow]) -> Result<()> {
    write_rows(path, rows)
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricRow>> {
    read_rows(path)
}

pub fn write_summary(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    write_rows(path, rows)
}

pub fn read_summary(path: &Path) -> Result<Vec<SummaryRow>> {
    read_rows(path)
}

pub fn write_histograms(path: &Path, rows: &[HistogramRow]) -> Result<()> {
    write_rows(path, rows)
}

pub fn read_histograms(path: &Path) -> Result<Vec<HistogramRow>> {
    read_rows(path)
}

/// Aggregates run directories into `summary.csv`, `value.svg` and, when
/// histograms are present, `histogram.svg` under `out`.
pub fn report(run_dirs: &[PathBuf], out: &Path) -> Result<Vec<SummaryRow>> {
    let missing: Vec<PathBuf> = run_dirs.iter().filter(|d| !d.join("metrics.csv").is_file()).cloned().collect();
    if !missing.is_empty() || run_dirs.is_empty() {
        return Err(Error::MissingMetrics(missing));
    }
    let mut metrics = Vec::new();
    let mut hist = Vec::new();
    for dir in run_dirs {
        metrics.extend(read_metrics(&dir.join("metrics.csv"))?);
        let h = dir.join("histograms.csv");
        if h.is_file() {
            hist.extend(read_histograms(&h)?);
        }
    }
    fs::create_dir_all(out)?;
    let summary = summarize(&metrics);
    write_summary(&out.join("summary.csv"), &summary)?;
    fs::write(out.join("value.svg"), value_plot(&curves(&metrics)))?;
    if !hist.is_empty() {
        fs::write(out.join("histogram.svg"), histogram_plot(&mean_histograms(&hist)))?;
    }
    Ok(summary)
}

/// Mean count per level over seeds, for each method and stage.
pub fn mean_histograms(rows: &[HistogramRow]) -> Vec<(String, String, Vec<f64>)> {
    let mut groups: Vec<(String, String, BTreeMap<u64, Vec<usize>>)> = Vec::new();
    for r in rows {
        let slot = match groups.iter().position(|(m, s, _)| *m == r.method && *s == r.stage) {
            Some(k) => k,
            None => {
                groups.push((r.method.clone(), r.stage.clone(), BTreeMap::new()));
                groups.len() - 1
            }
        };
        let counts = groups[slot].2.entry(r.seed).or_default();
        if counts.len() <= r.level {
            counts.resize(r.level + 1, 0);
        }
        counts[r.level] += r.count;
    }
    groups
        .into_iter()
        .map(|(method, stage, seeds)| {
            let width = seeds.values().map(Vec::len).max().unwrap_or(0);
            let mut mean = vec![0.0; width];
            for counts in seeds.values() {
                for (m, &c) in mean.iter_mut().zip(counts) {
                    *m += c as f64;
                }
            }
            mean.iter_mut().for_each(|m| *m /= seeds.len() as f64);
            (method, stage, mean)
        })
        .collect()
}

const PALETTE: [&str; 6] = ["#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#a6761d"];
const W: f64 = 720.0;
const H: f64 = 420.0;
const PAD: f64 = 60.0;

fn svg_open(title: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{title}</text>"#, W / 2.0);
    s
}

fn axes(s: &mut String, x_label: &str, y_label: &str, y_lo: f64, y_hi: f64) {
    let (x0, y0, x1, y1) = (PAD, H - PAD, W - PAD, PAD);
    let _ = writeln!(s, r#"<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/>"#);
    let _ = writeln!(s, r#"<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{x_label}</text>"#, W / 2.0, H - 20.0);
    let _ = writeln!(
        s,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{y_label}</text>"#,
        H / 2.0,
        H / 2.0
    );
    for k in 0..=4 {
        let v = y_lo + (y_hi - y_lo) * k as f64 / 4.0;
        let y = y0 - (y0 - y1) * k as f64 / 4.0;
        let _ = writeln!(s, r#"<text x="{}" y="{:.1}" text-anchor="end">{}</text>"#, x0 - 6.0, y + 4.0, tick(v));
    }
}

fn tick(v: f64) -> String {
    if v.abs() >= 1e4 {
        format!("{v:.2e}")
    } else {
        format!("{v:.2}")
    }
}

fn legend(s: &mut String, names: &[String]) {
    for (k, name) in names.iter().enumerate() {
        let y = PAD + 16.0 * k as f64;
        let c = PALETTE[k % PALETTE.len()];
        let _ = writeln!(s, r#"<rect x="{}" y="{}" width="10" height="10" fill="{c}"/>"#, W - PAD - 110.0, y - 9.0);
        let _ = writeln!(s, r#"<text x="{}" y="{y}">{name}</text>"#, W - PAD - 95.0);
    }
}

/// Mean policy value per epoch with a one-standard-error band.
pub fn value_plot(curves: &[(String, Vec<(usize, f64, f64)>)]) -> String {
    let mut s = svg_open("Policy value");
    let pts = curves.iter().flat_map(|(_, p)| p.iter());
    let (mut lo, mut hi, mut max_epoch) = (f64::INFINITY, f64::NEG_INFINITY, 1usize);
    for &(e, m, se) in pts {
        lo = lo.min(m - se);
        hi = hi.max(m + se);
        max_epoch = max_epoch.max(e);
    }
    if !(lo.is_finite() && hi.is_finite()) {
        lo = 0.0;
        hi = 1.0;
    }
    if hi - lo < 1e-12 {
        hi = lo + 1.0;
    }
    let sx = |e: usize| PAD + (W - 2.0 * PAD) * e as f64 / max_epoch as f64;
    let sy = |v: f64| H - PAD - (H - 2.0 * PAD) * (v - lo) / (hi - lo);
    axes(&mut s, "epoch", "policy value", lo, hi);
    for (k, (_, points)) in curves.iter().enumerate() {
        let c = PALETTE[k % PALETTE.len()];
        let upper: Vec<String> = points.iter().map(|&(e, m, se)| format!("{:.2},{:.2}", sx(e), sy(m + se))).collect();
        let lower: Vec<String> = points.iter().rev().map(|&(e, m, se)| format!("{:.2},{:.2}", sx(e), sy(m - se))).collect();
        let _ = writeln!(
            s,
            r#"<polygon points="{} {}" fill="{c}" fill-opacity="0.2" stroke="none"/>"#,
            upper.join(" "),
            lower.join(" ")
        );
        let line: Vec<String> = points.iter().map(|&(e, m, _)| format!("{:.2},{:.2}", sx(e), sy(m))).collect();
        let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="{c}" stroke-width="2"/>"#, line.join(" "));
    }
    legend(&mut s, &curves.iter().map(|(m, _)| m.clone()).collect::<Vec<_>>());
    s.push_str("</svg>\n");
    s
}

/// Grouped bars of the level distribution: the original levels once, then
/// the final reported levels of every method.
pub fn histogram_plot(hist: &[(String, String, Vec<f64>)]) -> String {
    let mut s = svg_open("Level distribution");
    let mut series: Vec<(String, &[f64])> = Vec::new();
    if let Some((_, _, counts)) = hist.iter().find(|(_, stage, _)| stage == "initial") {
        series.push(("original".into(), counts));
    }
    for (method, stage, counts) in hist {
        if stage == "final" {
            series.push((method.clone(), counts));
        }
    }
    let levels = series.iter().map(|(_, c)| c.len()).max().unwrap_or(1).max(1);
    let top = series.iter().flat_map(|(_, c)| c.iter().copied()).fold(1.0, f64::max);
    axes(&mut s, "level", "agents", 0.0, top);
    let slot = (W - 2.0 * PAD) / levels as f64;
    let bar = slot * 0.8 / series.len().max(1) as f64;
    for (k, (_, counts)) in series.iter().enumerate() {
        let c = PALETTE[k % PALETTE.len()];
        for (level, &count) in counts.iter().enumerate() {
            let h = (H - 2.0 * PAD) * count / top;
            let x = PAD + slot * level as f64 + slot * 0.1 + bar * k as f64;
            let _ = writeln!(
                s,
                r#"<rect x="{x:.2}" y="{:.2}" width="{bar:.2}" height="{h:.2}" fill="{c}"/>"#,
                H - PAD - h
            );
        }
    }
    for level in 0..levels {
        let x = PAD + slot * (level as f64 + 0.5);
        let _ = writeln!(s, r#"<text x="{x:.2}" y="{}" text-anchor="middle">{level}</text>"#, H - PAD + 16.0);
    }
    legend(&mut s, &series.iter().map(|(m, _)| m.clone()).collect::<Vec<_>>());
    s.push_str("</svg>\n");
    s
}
