use std::io::{Read, Write};

use serde::Serialize;

use crate::error::{Error, Result};

/// Integer-valued per-step flag columns, in file order.
pub const FLAG_COLUMNS: [&str; 5] = ["clamp_count", "angle_violation", "newton_iters", "event", "certified"];

/// Real-valued summary columns, in file order, after the per-bus columns.
pub const SUMMARY_COLUMNS: [&str; 5] = ["max_angle_deg", "sharing_p", "sharing_q", "xdot_i", "xdot_l"];

/// Sharing tolerances used for the settling time.
pub const SETTLE_P: f64 = 1e-3;
pub const SETTLE_Q: f64 = 1e-2;

/// Recorded simulation series on a uniform grid.
///
/// Columns: `t`; `theta_<id>` and `E_<id>` for every bus; `P_<id>`, `Q_<id>`,
/// `f_<id>` for every inverter of the original case (`f` is NaN once the
/// inverter is lost); then [`SUMMARY_COLUMNS`] and [`FLAG_COLUMNS`].
/// `xdot_i`/`xdot_l` are finite-difference norms of the inverter and load
/// states over the step ending at the row.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Trace {
    pub fn header(bus_ids: &[u32], inverter_ids: &[u32]) -> Vec<String> {
        let mut c = vec!["t".to_string()];
        c.extend(bus_ids.iter().map(|i| format!("theta_{i}")));
        c.extend(bus_ids.iter().map(|i| format!("E_{i}")));
        c.extend(inverter_ids.iter().map(|i| format!("P_{i}")));
        c.extend(inverter_ids.iter().map(|i| format!("Q_{i}")));
        c.extend(inverter_ids.iter().map(|i| format!("f_{i}")));
        c.extend(SUMMARY_COLUMNS.iter().map(|s| s.to_string()));
        c.extend(FLAG_COLUMNS.iter().map(|s| s.to_string()));
        c
    }

    pub fn index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let k = self.index(name)?;
        Some(self.rows.iter().map(|r| r[k]).collect())
    }

    /// Ids appearing in columns with the given prefix, such as `"E_"`.
    pub fn ids(&self, prefix: &str) -> Vec<u32> {
        self.columns
            .iter()
            .filter_map(|c| c.strip_prefix(prefix)?.parse().ok())
            .collect()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(&self.columns)?;
        let is_flag: Vec<bool> = self.columns.iter().map(|c| FLAG_COLUMNS.contains(&c.as_str())).collect();
        for row in &self.rows {
            let rec: Vec<String> = row
                .iter()
                .zip(&is_flag)
                .map(|(v, &flag)| if flag { format!("{}", *v as i64) } else { format!("{v:.16e}") })
                .collect();
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory cannot fail");
        String::from_utf8(buf).expect("csv output is utf-8")
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let columns: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
        if columns.first().map(String::as_str) != Some("t") {
            return Err(Error::Validation("trace must start with a t column".into()));
        }
        let mut rows = Vec::new();
        for (k, rec) in r.records().enumerate() {
            let rec = rec?;
            let row = rec
                .iter()
                .map(|s| {
                    s.trim()
                        .parse::<f64>()
                        .map_err(|_| Error::Validation(format!("row {}: bad number {s:?}", k + 1)))
                })
                .collect::<Result<Vec<f64>>>()?;
            rows.push(row);
        }
        if rows.is_empty() {
            return Err(Error::Validation("trace has no rows".into()));
        }
        Ok(Trace { columns, rows })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BusRange {
    pub id: u32,
    pub e_min: f64,
    pub e_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Metrics {
    pub final_sharing_p: f64,
    pub final_sharing_q: f64,
    /// Largest `|f − f0|` over every recorded step and online inverter, Hz.
    pub max_freq_dev: f64,
    pub final_freq_dev: f64,
    pub min_freq: f64,
    pub max_freq: f64,
    pub e_ranges: Vec<BusRange>,
    /// Largest `|E − 1|` over every bus and step.
    pub max_voltage_dev: f64,
    pub max_angle_deg: f64,
    pub angle_violation_steps: usize,
    pub clamp_steps: usize,
    /// Time after which both sharing errors stay within [`SETTLE_P`], [`SETTLE_Q`].
    pub settle_time: Option<f64>,
    pub uncertified: bool,
}

/// Summary of a trace against nominal frequency `f0`.
pub fn metrics(trace: &Trace, f0: f64) -> Result<Metrics> {
    let last = trace.rows.last().ok_or_else(|| Error::Validation("trace has no rows".into()))?;
    let col = |name: &str| {
        trace
            .index(name)
            .ok_or_else(|| Error::Validation(format!("trace lacks column {name}")))
    };
    let t = col("t")?;
    let (sp, sq) = (col("sharing_p")?, col("sharing_q")?);
    let f_cols: Vec<usize> = trace
        .columns
        .iter()
        .enumerate()
        .filter(|(_, c)| c.starts_with("f_"))
        .map(|(k, _)| k)
        .collect();
    let (mut max_dev, mut fmin, mut fmax) = (0.0f64, f64::INFINITY, f64::NEG_INFINITY);
    for row in &trace.rows {
        for &k in &f_cols {
            let f = row[k];
            if f.is_nan() {
                continue;
            }
            max_dev = max_dev.max((f - f0).abs());
            fmin = fmin.min(f);
            fmax = fmax.max(f);
        }
    }
    let final_dev = f_cols
        .iter()
        .map(|&k| last[k])
        .filter(|f| !f.is_nan())
        .map(|f| (f - f0).abs())
        .fold(0.0, f64::max);

    let mut e_ranges = Vec::new();
    let mut max_vdev = 0.0f64;
    for id in trace.ids("E_") {
        let k = col(&format!("E_{id}"))?;
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for row in &trace.rows {
            lo = lo.min(row[k]);
            hi = hi.max(row[k]);
            max_vdev = max_vdev.max((row[k] - 1.0).abs());
        }
        e_ranges.push(BusRange { id, e_min: lo, e_max: hi });
    }

    let angle = col("max_angle_deg")?;
    let viol = col("angle_violation")?;
    let clamp = col("clamp_count")?;
    let cert = col("certified")?;
    let mut settle = None;
    for row in trace.rows.iter().rev() {
        if row[sp] < SETTLE_P && row[sq] < SETTLE_Q {
            settle = Some(row[t]);
        } else {
            break;
        }
    }
    Ok(Metrics {
        final_sharing_p: last[sp],
        final_sharing_q: last[sq],
        max_freq_dev: max_dev,
        final_freq_dev: final_dev,
        min_freq: fmin,
        max_freq: fmax,
        e_ranges,
        max_voltage_dev: max_vdev,
        max_angle_deg: trace.rows.iter().map(|r| r[angle]).fold(0.0, f64::max),
        angle_violation_steps: trace.rows.iter().filter(|r| r[viol] != 0.0).count(),
        clamp_steps: trace.rows.iter().filter(|r| r[clamp] != 0.0).count(),
        settle_time: settle,
        uncertified: trace.rows.iter().any(|r| r[cert] == 0.0),
    })
}
