//! Trace files: one CSV row per recorded control interval, fixed column
//! order, floats at 17 significant digits so values round-trip bit-exactly.
//!
//! Layout: `t_s, dw0_hz, dw0_rate_hzps, dw0_acc_hzps2`, then per unit j
//! (1-based) `a{j}_required_mw, a{j}_lambda, a{j}_mismatch_mw, a{j}_cost,
//! a{j}_oracle_lambda, a{j}_oracle_cost`, then per asset i
//! `a{j}_x{i}, a{j}_r{i}, a{j}_u{i}, a{j}_sigma{i}, a{j}_e{i}, a{j}_xstar{i}`.
//! Oracle columns are empty on non-sampled intervals. A leading comment line
//! names each unit and its algorithm.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use fvo::grid::FrequencyMeasurement;

fn fmt(x: f64) -> String {
    format!("{x:.16e}")
}

/// Per-unit values of one recorded interval.
pub struct AruRow<'a> {
    pub required_mw: f64,
    pub lambda: f64,
    pub mismatch_mw: f64,
    pub cost: f64,
    /// (multiplier, cost) of the oracle at sampled intervals.
    pub oracle: Option<(f64, f64)>,
    pub x: &'a [f64],
    pub r: &'a [f64],
    pub u: &'a [f64],
    pub sigma: &'a [u8],
    pub e: &'a [f64],
    pub x_star: Option<&'a [f64]>,
}

pub struct TraceWriter {
    out: BufWriter<File>,
    asset_counts: Vec<usize>,
}

impl TraceWriter {
    pub fn create(path: &Path, units: &[(String, String, usize)]) -> io::Result<Self> {
        let file = File::create(path)?;
        let mut out = BufWriter::new(file);
        let labels: Vec<String> = units
            .iter()
            .enumerate()
            .map(|(j, (name, algo, _))| format!("a{}={}({})", j + 1, name, algo))
            .collect();
        writeln!(out, "# fvo trace v1: {}", labels.join(", "))?;
        let mut header: Vec<String> = vec![
            "t_s".into(),
            "dw0_hz".into(),
            "dw0_rate_hzps".into(),
            "dw0_acc_hzps2".into(),
        ];
        for (j, (_, _, n)) in units.iter().enumerate() {
            let p = format!("a{}", j + 1);
            for col in [
                "required_mw",
                "lambda",
                "mismatch_mw",
                "cost",
                "oracle_lambda",
                "oracle_cost",
            ] {
                header.push(format!("{p}_{col}"));
            }
            for i in 1..=*n {
                for col in ["x", "r", "u", "sigma", "e", "xstar"] {
                    header.push(format!("{p}_{col}{i}"));
                }
            }
        }
        writeln!(out, "{}", header.join(","))?;
        Ok(Self {
            out,
            asset_counts: units.iter().map(|(_, _, n)| *n).collect(),
        })
    }

    pub fn record(
        &mut self,
        t_s: f64,
        meas: &FrequencyMeasurement,
        rows: &[AruRow<'_>],
    ) -> io::Result<()> {
        debug_assert_eq!(rows.len(), self.asset_counts.len());
        let mut fields: Vec<String> = vec![
            fmt(t_s),
            fmt(meas.deviation_hz),
            fmt(meas.rate_hzps),
            fmt(meas.acc_hzps2),
        ];
        for (row, n) in rows.iter().zip(&self.asset_counts) {
            fields.push(fmt(row.required_mw));
            fields.push(fmt(row.lambda));
            fields.push(fmt(row.mismatch_mw));
            fields.push(fmt(row.cost));
            match row.oracle {
                Some((lambda, cost)) => {
                    fields.push(fmt(lambda));
                    fields.push(fmt(cost));
                }
                None => {
                    fields.push(String::new());
                    fields.push(String::new());
                }
            }
            for i in 0..*n {
                fields.push(fmt(row.x[i]));
                fields.push(fmt(row.r[i]));
                fields.push(fmt(row.u[i]));
                fields.push(format!("{}", row.sigma[i]));
                fields.push(fmt(row.e[i]));
                match row.x_star {
                    Some(xs) => fields.push(fmt(xs[i])),
                    None => fields.push(String::new()),
                }
            }
        }
        writeln!(self.out, "{}", fields.join(","))
    }

    pub fn finish(mut self) -> io::Result<()> {
        self.out.flush()
    }
}

/// Time grid and per-unit mismatch series read back from a trace file.
pub struct TraceData {
    pub t_s: Vec<f64>,
    /// (label, mismatch series) per unit.
    pub mismatch: Vec<(String, Vec<f64>)>,
}

pub fn read_trace(path: &Path) -> io::Result<TraceData> {
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines();
    let mut labels: Vec<String> = Vec::new();
    let header;
    loop {
        match lines.next() {
            Some(line) => {
                let line = line?;
                if let Some(meta) = line.strip_prefix("# fvo trace v1:") {
                    labels = meta.split(',').map(|s| s.trim().to_string()).collect();
                } else if !line.starts_with('#') {
                    header = line;
                    break;
                }
            }
            None => {
                return Err(io::Error::new(io::ErrorKind::InvalidData, "empty trace"));
            }
        }
    }
    let columns: Vec<&str> = header.split(',').collect();
    let t_col = columns
        .iter()
        .position(|c| *c == "t_s")
        .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidData, "no t_s column"))?;
    let mismatch_cols: Vec<(usize, String)> = columns
        .iter()
        .enumerate()
        .filter(|(_, c)| c.ends_with("_mismatch_mw"))
        .map(|(k, c)| {
            let prefix = c.trim_end_matches("_mismatch_mw");
            let label = labels
                .iter()
                .find_map(|l| l.strip_prefix(&format!("{prefix}=")).map(str::to_string))
                .unwrap_or_else(|| prefix.to_string());
            (k, label)
        })
        .collect();
    if mismatch_cols.is_empty() {
        return Err(io::Error::new(
            io::ErrorKind::InvalidData,
            "no mismatch columns found",
        ));
    }

    let mut t_s = Vec::new();
    let mut series: Vec<Vec<f64>> = vec![Vec::new(); mismatch_cols.len()];
    for line in lines {
        let line = line?;
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        let parse = |s: &str| -> io::Result<f64> {
            s.parse()
                .map_err(|_| io::Error::new(io::ErrorKind::InvalidData, format!("bad float {s}")))
        };
        t_s.push(parse(fields[t_col])?);
        for (slot, (col, _)) in series.iter_mut().zip(&mismatch_cols) {
            slot.push(parse(fields[*col])?);
        }
    }
    Ok(TraceData {
        t_s,
        mismatch: mismatch_cols
            .into_iter()
            .map(|(_, label)| label)
            .zip(series)
            .map(|(label, s)| (label, s))
            .collect(),
    })
}
