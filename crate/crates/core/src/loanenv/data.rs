use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Fixed features plus the two precomputed no-default scores.
#[derive(Debug, Clone, PartialEq)]
pub struct LoanDataset {
    /// Standardized fixed features, one applicant per row.
    pub v: Array2<f64>,
    pub amt: Vec<f64>,
    pub score_strong: Vec<f64>,
    pub score_ordinary: Vec<f64>,
}

impl LoanDataset {
    pub fn len(&self) -> usize {
        self.amt.len()
    }

    pub fn is_empty(&self) -> bool {
        self.amt.is_empty()
    }

    pub fn dim_v(&self) -> usize {
        self.v.ncols()
    }

    /// Writes the dataset in the ingestion schema. Values are printed in
    /// shortest round-trip form, so `ingest` reads back identical bits.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["amt".to_string(), "score_strong".into(), "score_ordinary".into()];
        header.extend((1..=self.dim_v()).map(|k| format!("v_{k}")));
        w.write_record(&header)?;
        let mut record = Vec::with_capacity(header.len());
        for i in 0..self.len() {
            record.clear();
            record.push(self.amt[i].to_string());
            record.push(self.score_strong[i].to_string());
            record.push(self.score_ordinary[i].to_string());
            record.extend(self.v.row(i).iter().map(|x| x.to_string()));
            w.write_record(&record)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IngestReport {
    pub accepted: usize,
    pub rejected: usize,
    /// `<stem>.rejected.csv` next to the input, written only when rows were rejected.
    pub report_path: Option<PathBuf>,
}

const REQUIRED: [&str; 3] = ["amt", "score_strong", "score_ordinary"];

/// Reads a loan CSV, rejecting rows with out-of-range scores or amounts and
/// standardizing every feature column that is not already standardized.
pub fn ingest(path: &Path) -> Result<(LoanDataset, IngestReport)> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let headers = reader.headers()?.clone();
    let find = |name: &str| headers.iter().position(|h| h == name);
    let mut fixed = [0usize; 3];
    for (slot, name) in fixed.iter_mut().zip(REQUIRED) {
        *slot = find(name).ok_or_else(|| Error::Schema(name.to_string()))?;
    }
    let dim_v = headers
        .iter()
        .filter_map(|h| h.strip_prefix("v_")?.parse::<usize>().ok())
        .max()
        .unwrap_or(0);
    if dim_v == 0 {
        return Err(Error::Schema("v_1".into()));
    }
    let v_cols: Vec<usize> = (1..=dim_v)
        .map(|k| find(&format!("v_{k}")).ok_or_else(|| Error::Schema(format!("v_{k}"))))
        .collect::<Result<_>>()?;

    let mut amt = Vec::new();
    let mut strong = Vec::new();
    let mut ordinary = Vec::new();
    let mut flat = Vec::new();
    let mut rejects: Vec<(u64, String)> = Vec::new();
    let mut row = Vec::with_capacity(dim_v);
    for (k, record) in reader.records().enumerate() {
        let record = record?;
        let line = record.position().map_or(k as u64 + 2, |p| p.line());
        let parse = |col: usize| -> std::result::Result<f64, String> {
            let raw = record.get(col).unwrap_or("");
            match raw.parse::<f64>() {
                Ok(x) if x.is_finite() => Ok(x),
                _ => Err(format!("`{}` is not a finite number: {raw:?}", &headers[col])),
            }
        };
        let checked = (|| {
            let a = parse(fixed[0])?;
            let s = parse(fixed[1])?;
            let o = parse(fixed[2])?;
            if a <= 0.0 {
                return Err(format!("amt must be positive, got {a}"));
            }
            for (name, x) in [("score_strong", s), ("score_ordinary", o)] {
                if !(0.0..=1.0).contains(&x) {
                    return Err(format!("{name} outside [0, 1]: {x}"));
                }
            }
            row.clear();
            for &c in &v_cols {
                row.push(parse(c)?);
            }
            Ok((a, s, o))
        })();
        match checked {
            Ok((a, s, o)) => {
                amt.push(a);
                strong.push(s);
                ordinary.push(o);
                flat.extend_from_slice(&row);
            }
            Err(reason) => rejects.push((line, reason)),
        }
    }
    if amt.is_empty() {
        return Err(Error::Config(format!("{}: no valid rows", path.display())));
    }

    let report_path = if rejects.is_empty() {
        None
    } else {
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("loans");
        let report = path.with_file_name(format!("{stem}.rejected.csv"));
        let mut f = File::create(&report)?;
        writeln!(f, "line,reason")?;
        for (line, reason) in &rejects {
            writeln!(f, "{line},\"{}\"", reason.replace('"', "'"))?;
        }
        log::warn!("{}: rejected {} rows, see {}", path.display(), rejects.len(), report.display());
        Some(report)
    };

    let mut v = Array2::from_shape_vec((amt.len(), dim_v), flat).expect("row lengths checked");
    standardize_columns(&mut v);
    let report = IngestReport {
        accepted: amt.len(),
        rejected: rejects.len(),
        report_path,
    };
    Ok((
        LoanDataset {
            v,
            amt,
            score_strong: strong,
            score_ordinary: ordinary,
        },
        report,
    ))
}

const STANDARDIZED_TOL: f64 = 1e-9;

/// Centers and scales each column to unit variance. Columns already within
/// `1e-9` of that are left untouched; constant columns are only centered.
pub fn standardize_columns(v: &mut Array2<f64>) {
    let n = v.nrows() as f64;
    for mut col in v.columns_mut() {
        let mean = col.sum() / n;
        let var = col.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        let sd = var.sqrt();
        if mean.abs() <= STANDARDIZED_TOL && (sd - 1.0).abs() <= STANDARDIZED_TOL {
            continue;
        }
        let scale = if sd > 0.0 { sd } else { 1.0 };
        col.mapv_inplace(|x| (x - mean) / scale);
    }
}

/// Constants of the surrogate score construction.
const SURROGATE_DIRECTIONS_SEED: u64 = 0x5eed_10a5;
const LOG_AMT_MEAN: f64 = 13.2;
const LOG_AMT_SD: f64 = 0.5;
const STRONG_INTERCEPT: f64 = 1.5;
const STRONG_SLOPE: f64 = 1.0;
const ORDINARY_INTERCEPT: f64 = 1.5;
const ORDINARY_SLOPE: f64 = 1.0;
const SCORE_INDEX_CORR: f64 = 0.8;

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn unit(mut x: Vec<f64>) -> Vec<f64> {
    let norm = x.iter().map(|a| a * a).sum::<f64>().sqrt();
    x.iter_mut().for_each(|a| *a /= norm);
    x
}

/// Synthetic stand-in for the loan data.
///
/// The first feature is the standardized log amount. Both scores are
/// logistic functions of single indices of the remaining features; the two
/// indices have correlation 0.8. The index directions are fixed, so every
/// call describes the same population and `rng` only draws applicants.
pub fn generate_surrogate<R: Rng + ?Sized>(n: usize, dim_v: usize, rng: &mut R) -> Result<LoanDataset> {
    if n == 0 {
        return Err(Error::Config("surrogate needs at least one row".into()));
    }
    if dim_v < 2 {
        return Err(Error::Config("surrogate needs dim_v >= 2".into()));
    }
    let mut dir_rng = ChaCha8Rng::seed_from_u64(SURROGATE_DIRECTIONS_SEED);
    let rest = dim_v - 1;
    let w1 = unit((0..rest).map(|_| dir_rng.sample(StandardNormal)).collect());
    let mut w3: Vec<f64> = (0..rest).map(|_| dir_rng.sample(StandardNormal)).collect();
    let overlap: f64 = w3.iter().zip(&w1).map(|(a, b)| a * b).sum();
    w3.iter_mut().zip(&w1).for_each(|(a, b)| *a -= overlap * b);
    let w3 = unit(w3);
    let resid = (1.0 - SCORE_INDEX_CORR * SCORE_INDEX_CORR).sqrt();

    let mut v: Array2<f64> = Array2::from_shape_fn((n, dim_v), |_| rng.sample(StandardNormal));
    let mut amt = Vec::with_capacity(n);
    let mut strong = Vec::with_capacity(n);
    let mut ordinary = Vec::with_capacity(n);
    for row in v.rows() {
        amt.push((LOG_AMT_MEAN + LOG_AMT_SD * row[0]).exp());
        let tail = row.slice(ndarray::s![1..]);
        let z1: f64 = tail.iter().zip(&w1).map(|(a, b)| a * b).sum();
        let z3: f64 = tail.iter().zip(&w3).map(|(a, b)| a * b).sum();
        let z2 = SCORE_INDEX_CORR * z1 + resid * z3;
        strong.push(logistic(STRONG_INTERCEPT + STRONG_SLOPE * z1));
        ordinary.push(logistic(ORDINARY_INTERCEPT + ORDINARY_SLOPE * z2));
    }
    standardize_columns(&mut v);
    Ok(LoanDataset {
        v,
        amt,
        score_strong: strong,
        score_ordinary: ordinary,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    fn pearson(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
        let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        cov / (va * vb).sqrt()
    }

    #[test]
    fn three_valid_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("loans.csv");
        fs::write(&path, "amt,score_strong,score_ordinary,v_1,v_2\n100,0.5,0.4,1,2\n200,0.9,0.8,3,5\n50,0.1,0.2,5,8\n").unwrap();
        let (data, report) = ingest(&path).unwrap();
        assert_eq!(data.len(), 3);
        assert_eq!(report.rejected, 0);
        assert_eq!(data.dim_v(), 2);
        for col in data.v.columns() {
            assert!(col.sum().abs() < 1e-12);
            assert!((col.iter().map(|x| x * x).sum::<f64>() / 3.0 - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn missing_amt_names_the_column() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("loans.csv");
        fs::write(&path, "score_strong,score_ordinary,v_1\n0.5,0.4,1\n").unwrap();
        match ingest(&path) {
            Err(Error::Schema(col)) => assert_eq!(col, "amt"),
            other => panic!("expected schema error, got {other:?}"),
        }
    }

    #[test]
    fn out_of_range_rows_are_rejected_and_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("loans.csv");
        fs::write(
            &path,
            "amt,score_strong,score_ordinary,v_1\n100,0.5,0.4,1\n100,1.5,0.4,2\n-3,0.5,0.4,3\n100,0.5,nan,4\n100,0.2,0.3,5\n",
        )
        .unwrap();
        let (data, report) = ingest(&path).unwrap();
        assert_eq!((report.accepted, report.rejected), (2, 3));
        assert_eq!(data.len(), 2);
        let text = fs::read_to_string(report.report_path.unwrap()).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert!(text.contains("score_strong outside"));
    }

    #[test]
    fn surrogate_round_trips_bit_exactly() {
        let data = generate_surrogate(1000, 55, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("surrogate.csv");
        data.write_csv(&path).unwrap();
        let (back, report) = ingest(&path).unwrap();
        assert_eq!(report.accepted, 1000);
        assert_eq!(back, data);
    }

    #[test]
    fn surrogate_score_properties() {
        let data = generate_surrogate(10_000, 55, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let corr = pearson(&data.score_strong, &data.score_ordinary);
        assert!(corr > 0.5 && corr < 0.95, "corr = {corr}");
        let all = data.score_strong.iter().chain(&data.score_ordinary);
        let (lo, hi) = all.fold((1.0f64, 0.0f64), |(lo, hi), &s: &f64| (lo.min(s), hi.max(s)));
        assert!(lo < 0.2 && hi > 0.8, "range [{lo}, {hi}]");
        assert!(data.amt.iter().all(|&a| a > 0.0));
    }
}
