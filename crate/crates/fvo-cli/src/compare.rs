//! Mismatch comparison across runs or across units of one run.

use serde::Serialize;

#[derive(Debug, thiserror::Error)]
pub enum CompareError {
    #[error("time grids are not aligned: {0}")]
    Misaligned(String),
    #[error("empty comparison window [{0}, {1}]")]
    EmptyWindow(f64, f64),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Serialize)]
pub struct CompareEntry {
    pub label: String,
    pub rms_mw: f64,
    pub max_abs_mw: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CompareReport {
    pub window_s: (f64, f64),
    /// Sorted ascending by root-mean-square mismatch.
    pub entries: Vec<CompareEntry>,
    /// Labels in ascending-oscillation order.
    pub ranking: Vec<String>,
}

/// Compares labeled mismatch series over a common time grid and window.
pub fn compare_series(
    t_s: &[f64],
    series: &[(String, &[f64])],
    window_s: (f64, f64),
) -> Result<CompareReport, CompareError> {
    for (label, s) in series {
        if s.len() != t_s.len() {
            return Err(CompareError::Misaligned(format!(
                "'{label}' has {} points, grid has {}",
                s.len(),
                t_s.len()
            )));
        }
    }
    let idx: Vec<usize> = t_s
        .iter()
        .enumerate()
        .filter(|(_, t)| **t >= window_s.0 && **t <= window_s.1)
        .map(|(k, _)| k)
        .collect();
    if idx.is_empty() {
        return Err(CompareError::EmptyWindow(window_s.0, window_s.1));
    }
    let mut entries: Vec<CompareEntry> = series
        .iter()
        .map(|(label, s)| {
            let mut sq = 0.0;
            let mut max_abs: f64 = 0.0;
            for &k in &idx {
                sq += s[k] * s[k];
                max_abs = max_abs.max(s[k].abs());
            }
            CompareEntry {
                label: label.clone(),
                rms_mw: (sq / idx.len() as f64).sqrt(),
                max_abs_mw: max_abs,
            }
        })
        .collect();
    entries.sort_by(|a, b| a.rms_mw.total_cmp(&b.rms_mw));
    let ranking = entries.iter().map(|e| e.label.clone()).collect();
    Ok(CompareReport {
        window_s,
        entries,
        ranking,
    })
}

/// Reads one or more trace files and compares every mismatch column found.
/// Multiple files must share the time grid (same scenario and decimation).
pub fn compare_traces(
    paths: &[std::path::PathBuf],
    window_s: (Option<f64>, Option<f64>),
) -> Result<CompareReport, CompareError> {
    let mut t_ref: Option<Vec<f64>> = None;
    let mut all: Vec<(String, Vec<f64>)> = Vec::new();
    for path in paths {
        let data = crate::trace::read_trace(path)?;
        match &t_ref {
            None => t_ref = Some(data.t_s),
            Some(t) => {
                if *t != data.t_s {
                    return Err(CompareError::Misaligned(format!(
                        "{} uses a different grid",
                        path.display()
                    )));
                }
            }
        }
        let stem = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        for (label, series) in data.mismatch {
            let label = if paths.len() > 1 {
                format!("{stem}:{label}")
            } else {
                label
            };
            all.push((label, series));
        }
    }
    let t = t_ref.unwrap_or_default();
    let window = (
        window_s.0.unwrap_or(f64::NEG_INFINITY),
        window_s.1.unwrap_or(f64::INFINITY),
    );
    let series: Vec<(String, &[f64])> = all
        .iter()
        .map(|(label, s)| (label.clone(), s.as_slice()))
        .collect();
    compare_series(&t, &series, window)
}
