//! Effective duty cycle tables indexed by excess voltage and observed rate.
//!
//! Each row of a table belongs to one excess-voltage set-point. The row is
//! simulated on a grid of input rates, re-indexed by the observed rate the
//! detector reports, and resampled onto a shared observed-rate axis. Only
//! the branch below the observed-rate maximum is kept: past the peak the
//! observed rate no longer identifies the input rate, so those cells stay
//! empty and lookups there fail.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detector::{simulate_at_rate, RunLength};
use crate::error::{Error, Result};
use crate::events::derive_seed;
use crate::recovery::DetectorParams;

pub const FORMAT_VERSION: &str = "1";

/// Default rows for the reference device. Dense just above the 10 V
/// discriminator crossing, where eta bends sharply with excess voltage.
pub const DEFAULT_V_E_AXIS: [f64; 12] = [11.0, 11.5, 12.0, 12.5, 13.0, 14.0, 15.0, 17.0, 19.0, 21.0, 23.0, 25.0];

pub const DEFAULT_RUN_LENGTH: RunLength = RunLength::Events(100_000);

/// 24 input rates, log-spaced over 1e3 to 1e7 Hz.
pub fn default_input_rates() -> Vec<f64> {
    (0..24).map(|i| 10f64.powf(3.0 + 4.0 * i as f64 / 23.0)).collect()
}

/// How the table was produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Provenance {
    /// Base parameters; `v_e_set` is replaced per row.
    pub params: DetectorParams<f64>,
    pub run_length: RunLength,
    pub seed: u64,
    pub seed_policy: String,
    /// Input rates that were simulated for every row, Hz.
    pub input_rates: Vec<f64>,
    #[serde(default)]
    pub build_timestamp: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DutyCycleTable {
    pub format_version: String,
    pub provenance: Provenance,
    /// Excess-voltage set-points, ascending, volts.
    pub v_e_axis: Vec<f64>,
    /// Observed-rate nodes, ascending, Hz.
    pub observed_rate_axis: Vec<f64>,
    /// Duty cycle in the limit of vanishing rate, one per row. Used to
    /// interpolate below the first observed-rate node.
    pub zero_rate_eta: Vec<f64>,
    /// Row-major grid; `None` marks nodes past the row's observed-rate peak.
    pub eta_grid: Vec<Vec<Option<f64>>>,
}

/// One simulated cell before re-indexing.
#[derive(Debug, Clone, Copy)]
struct Sample {
    observed: f64,
    eta: f64,
    /// Input-rate column the sample came from; `None` for the zero-rate anchor.
    column: Option<usize>,
}

impl DutyCycleTable {
    /// Simulates every (v_e, input rate) cell and assembles the table.
    /// Produces one observed-rate node per input rate up to the point where
    /// every row has passed its peak.
    pub fn build(
        base: &DetectorParams<f64>,
        v_e_values: &[f64],
        input_rates: &[f64],
        run: RunLength,
        seed: u64,
    ) -> Result<Self> {
        check_axis("v_e", v_e_values)?;
        check_axis("input rate", input_rates)?;
        let rows: Vec<DetectorParams<f64>> = v_e_values
            .iter()
            .map(|&v| base.with_v_e_set(v))
            .collect::<Result<_>>()?;
        let n = input_rates.len();
        let cells: Vec<Sample> = (0..rows.len() * n)
            .into_par_iter()
            .map(|k| {
                let (i, j) = (k / n, k % n);
                let est = simulate_at_rate(&rows[i], input_rates[j], run, derive_seed(seed, k as u64))?;
                Ok(Sample {
                    observed: est.observed_rate,
                    eta: est.eta_fractional,
                    column: Some(j),
                })
            })
            .collect::<Result<_>>()?;

        let mut branches = Vec::with_capacity(rows.len());
        let mut zero_rate_eta = Vec::with_capacity(rows.len());
        for (i, p) in rows.iter().enumerate() {
            let eta0 = p.recharged_detection_probability();
            let branch = pre_peak_branch(&cells[i * n..(i + 1) * n], eta0).ok_or_else(|| {
                Error::Build(format!(
                    "row v_e = {} V: observed rate falls from the first input rate on; \
                     no pre-peak samples",
                    v_e_values[i]
                ))
            })?;
            branches.push(branch);
            zero_rate_eta.push(eta0);
        }

        // node j: smallest observed rate among rows still rising at input
        // rate j; strictly ascending because each such row rose since j - 1
        let mut observed_rate_axis = Vec::with_capacity(n);
        for j in 0..n {
            let node = branches
                .iter()
                .filter_map(|b| b.iter().find(|s| s.column == Some(j)).map(|s| s.observed))
                .fold(f64::INFINITY, f64::min);
            if !node.is_finite() || observed_rate_axis.last().is_some_and(|&last| node <= last) {
                break;
            }
            observed_rate_axis.push(node);
        }
        let eta_grid = branches
            .iter()
            .map(|b| observed_rate_axis.iter().map(|&r| interpolate_branch(b, r)).collect())
            .collect();

        Ok(Self {
            format_version: FORMAT_VERSION.to_string(),
            provenance: Provenance {
                params: *base,
                run_length: run,
                seed,
                seed_policy: "cell k = row * n_rates + col uses splitmix64(seed, k)".to_string(),
                input_rates: input_rates.to_vec(),
                build_timestamp: None,
            },
            v_e_axis: v_e_values.to_vec(),
            observed_rate_axis,
            zero_rate_eta,
            eta_grid,
        })
    }

    pub fn with_timestamp(mut self, stamp: impl Into<String>) -> Self {
        self.provenance.build_timestamp = Some(stamp.into());
        self
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.v_e_axis.len(), self.observed_rate_axis.len())
    }

    /// Largest observed-rate node that is still on the pre-peak branch.
    pub fn row_limit(&self, row: usize) -> f64 {
        self.eta_grid[row]
            .iter()
            .zip(&self.observed_rate_axis)
            .filter(|(e, _)| e.is_some())
            .map(|(_, r)| *r)
            .fold(0.0, f64::max)
    }

    /// Bilinear interpolation in (v_e, observed rate). Exact on nodes.
    pub fn lookup_eta(&self, v_e: f64, observed_rate: f64) -> Result<f64> {
        let (v_lo, v_hi) = (self.v_e_axis[0], *self.v_e_axis.last().unwrap());
        if !(v_e >= v_lo && v_e <= v_hi) {
            return Err(Error::OutOfRange {
                axis: "v_e",
                value: v_e,
                min: v_lo,
                max: v_hi,
            });
        }
        if !(observed_rate >= 0.0 && observed_rate.is_finite()) {
            return Err(Error::arg(format!("observed rate must be >= 0, got {observed_rate}")));
        }
        let (i0, i1, fv) = bracket(&self.v_e_axis, v_e);
        let rows: Vec<(usize, f64)> = [(i0, 1.0 - fv), (i1, fv)]
            .into_iter()
            .filter(|&(_, w)| w != 0.0)
            .collect();

        let axis = &self.observed_rate_axis;
        let last = *axis.last().unwrap();
        if observed_rate > last {
            let limit = rows
                .iter()
                .map(|&(i, _)| self.row_limit(i))
                .fold(f64::INFINITY, f64::min);
            if limit < last {
                return Err(Error::SaturationAmbiguity {
                    v_e,
                    rate: observed_rate,
                    limit,
                });
            }
            return Err(Error::OutOfRange {
                axis: "observed rate",
                value: observed_rate,
                min: 0.0,
                max: last,
            });
        }
        // column -1 is the zero-rate limit
        let cols: Vec<(Option<usize>, f64)> = if observed_rate < axis[0] {
            let f = observed_rate / axis[0];
            vec![(None, 1.0 - f), (Some(0), f)]
        } else {
            let (j0, j1, f) = bracket(axis, observed_rate);
            vec![(Some(j0), 1.0 - f), (Some(j1), f)]
        };

        let mut eta = 0.0;
        for &(i, wv) in &rows {
            for &(j, wr) in cols.iter().filter(|(_, w)| *w != 0.0) {
                let node = match j {
                    None => self.zero_rate_eta[i],
                    Some(j) => self.eta_grid[i][j].ok_or(Error::SaturationAmbiguity {
                        v_e,
                        rate: observed_rate,
                        limit: self.row_limit(i),
                    })?,
                };
                eta += wv * wr * node;
            }
        }
        Ok(eta)
    }

    /// Checks shapes, ordering, ranges and row monotonicity.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Error::Build(m);
        check_axis("v_e", &self.v_e_axis)?;
        check_axis("observed rate", &self.observed_rate_axis)?;
        let (m, n) = self.shape();
        if self.eta_grid.len() != m || self.zero_rate_eta.len() != m {
            return Err(bad(format!("grid has {} rows, v_e axis has {m}", self.eta_grid.len())));
        }
        for (i, row) in self.eta_grid.iter().enumerate() {
            if row.len() != n {
                return Err(bad(format!("row {i} has {} columns, expected {n}", row.len())));
            }
            let mut prev = self.zero_rate_eta[i];
            let mut ended = false;
            for (j, cell) in row.iter().enumerate() {
                match (cell, ended) {
                    (None, _) => ended = true,
                    (Some(_), true) => return Err(bad(format!("row {i}: value after truncation at column {j}"))),
                    (Some(e), false) => {
                        if !(0.0..=1.0).contains(e) {
                            return Err(bad(format!("row {i} column {j}: eta {e} outside [0, 1]")));
                        }
                        if *e > prev {
                            return Err(bad(format!("row {i} column {j}: eta increases with rate")));
                        }
                        prev = *e;
                    }
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("table serialises")
    }

    pub fn from_json(text: &str, path: &Path) -> Result<Self> {
        let perr = |e: serde_json::Error| Error::Parse {
            path: path.to_path_buf(),
            location: Some((e.line(), e.column())),
            message: e.to_string(),
        };
        let value: serde_json::Value = serde_json::from_str(text).map_err(perr)?;
        match value.get("format_version").and_then(|v| v.as_str()) {
            Some(FORMAT_VERSION) => {}
            found => {
                return Err(Error::Version {
                    found: found.unwrap_or("<missing>").to_string(),
                    expected: FORMAT_VERSION.to_string(),
                })
            }
        }
        let table: Self = serde_json::from_str(text).map_err(perr)?;
        table.validate().map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            location: None,
            message: e.to_string(),
        })?;
        Ok(table)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_atomic(path, |w| w.write_all(self.to_json().as_bytes()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text, path)
    }

    /// Flat `v_e,observed_rate,eta` rows for plotting; empty cells skipped.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "v_e,observed_rate,eta")?;
        for (v, row) in self.v_e_axis.iter().zip(&self.eta_grid) {
            for (r, e) in self.observed_rate_axis.iter().zip(row) {
                if let Some(e) = e {
                    writeln!(w, "{v:.16e},{r:.16e},{e:.16e}")?;
                }
            }
        }
        Ok(())
    }
}

fn check_axis(name: &str, axis: &[f64]) -> Result<()> {
    if axis.is_empty() {
        return Err(Error::arg(format!("{name} axis is empty")));
    }
    if axis.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
        return Err(Error::arg(format!("{name} axis must be positive")));
    }
    if axis.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::arg(format!("{name} axis must be strictly ascending")));
    }
    Ok(())
}

/// Lower index, upper index and fractional position of `x` in `axis`.
/// `x` must lie inside the axis hull.
fn bracket(axis: &[f64], x: f64) -> (usize, usize, f64) {
    if axis.len() == 1 {
        return (0, 0, 0.0);
    }
    let hi = axis.partition_point(|&a| a < x).clamp(1, axis.len() - 1);
    let lo = hi - 1;
    if x == axis[lo] {
        return (lo, hi, 0.0);
    }
    (lo, hi, (x - axis[lo]) / (axis[hi] - axis[lo]))
}

/// Samples on the rising part of the observed-rate curve, anchored at the
/// zero-rate limit and made nonincreasing in eta. `None` if the curve never
/// rises.
fn pre_peak_branch(samples: &[Sample], eta0: f64) -> Option<Vec<Sample>> {
    let peak = samples
        .iter()
        .enumerate()
        .fold(None::<(usize, f64)>, |best, (i, s)| match best {
            Some((_, o)) if o >= s.observed => best,
            _ => Some((i, s.observed)),
        })?
        .0;
    if peak == 0 && samples.len() > 1 || samples[peak].observed <= 0.0 {
        return None;
    }
    let mut branch = vec![Sample {
        observed: 0.0,
        eta: eta0,
        column: None,
    }];
    for s in &samples[..=peak] {
        if s.observed > branch.last().unwrap().observed {
            branch.push(*s);
        }
    }
    let etas = isotonic_nonincreasing(&branch.iter().map(|s| s.eta).collect::<Vec<_>>());
    for (s, e) in branch.iter_mut().zip(etas) {
        s.eta = e;
    }
    Some(branch)
}

/// Pool-adjacent-violators fit of a nonincreasing sequence. The first value
/// is an exact anchor and is never moved.
fn isotonic_nonincreasing(values: &[f64]) -> Vec<f64> {
    // blocks of (sum, weight, count)
    let mut blocks: Vec<(f64, f64, usize)> = Vec::with_capacity(values.len());
    for (i, &v) in values.iter().enumerate() {
        let w = if i == 0 { 1e12 } else { 1.0 };
        blocks.push((v * w, w, 1));
        while blocks.len() > 1 {
            let (s1, w1, _) = blocks[blocks.len() - 1];
            let (s0, w0, _) = blocks[blocks.len() - 2];
            if s1 / w1 > s0 / w0 {
                let (s, w, c) = blocks.pop().unwrap();
                let last = blocks.last_mut().unwrap();
                last.0 += s;
                last.1 += w;
                last.2 += c;
            } else {
                break;
            }
        }
    }
    let mut out = Vec::with_capacity(values.len());
    for (k, &(s, w, c)) in blocks.iter().enumerate() {
        let mean = if k == 0 { values[0].min(s / w) } else { s / w };
        out.extend(std::iter::repeat_n(mean, c));
    }
    out[0] = values[0];
    out
}

fn interpolate_branch(branch: &[Sample], rate: f64) -> Option<f64> {
    let last = branch.last()?;
    if rate > last.observed {
        return None;
    }
    let hi = branch.partition_point(|s| s.observed < rate).max(1);
    let (a, b) = (branch[hi - 1], branch[hi]);
    let f = (rate - a.observed) / (b.observed - a.observed);
    Some(a.eta + f * (b.eta - a.eta))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_table() -> DutyCycleTable {
        DutyCycleTable {
            format_version: FORMAT_VERSION.into(),
            provenance: Provenance {
                params: DetectorParams::reference(),
                run_length: RunLength::Events(10),
                seed: 0,
                seed_policy: "fixture".into(),
                input_rates: vec![1e4, 1e5, 1e6],
                build_timestamp: None,
            },
            v_e_axis: vec![12.0, 15.0],
            observed_rate_axis: vec![1e4, 1e5, 1e6],
            zero_rate_eta: vec![0.92, 0.95],
            eta_grid: vec![
                vec![Some(0.9), Some(0.8), None],
                vec![Some(0.94), Some(0.85), Some(0.5)],
            ],
        }
    }

    #[test]
    fn nodes_are_exact() {
        let t = tiny_table();
        assert_eq!(t.lookup_eta(12.0, 1e4).unwrap(), 0.9);
        assert_eq!(t.lookup_eta(15.0, 1e5).unwrap(), 0.85);
        assert_eq!(t.lookup_eta(15.0, 1e6).unwrap(), 0.5);
        assert_eq!(t.lookup_eta(15.0, 0.0).unwrap(), 0.95);
    }

    #[test]
    fn midpoint_is_mean_of_corners() {
        let t = tiny_table();
        let got = t.lookup_eta(13.5, 5.5e4).unwrap();
        assert!((got - (0.9 + 0.8 + 0.94 + 0.85) / 4.0).abs() < 1e-15);
    }

    #[test]
    fn beyond_branch_is_ambiguous() {
        let t = tiny_table();
        assert!(matches!(
            t.lookup_eta(13.0, 5e5),
            Err(Error::SaturationAmbiguity { .. })
        ));
        assert!(t.lookup_eta(15.0, 5e5).is_ok());
        assert!(matches!(t.lookup_eta(11.0, 1e4), Err(Error::OutOfRange { .. })));
        assert!(matches!(t.lookup_eta(15.0, 2e6), Err(Error::OutOfRange { .. })));
        assert!(matches!(
            t.lookup_eta(13.0, 2e6),
            Err(Error::SaturationAmbiguity { .. })
        ));
    }

    #[test]
    fn isotonic_fit() {
        let v = isotonic_nonincreasing(&[0.95, 0.951, 0.949, 0.95, 0.9]);
        assert_eq!(v[0], 0.95);
        assert!(v.windows(2).all(|w| w[1] <= w[0]), "{v:?}");
        assert_eq!(isotonic_nonincreasing(&[1.0, 0.5, 0.7]), vec![1.0, 0.6, 0.6]);
    }

    #[test]
    fn degenerate_row_is_rejected() {
        let s = |observed, eta, j| Sample {
            observed,
            eta,
            column: Some(j),
        };
        let falling = [s(5.0, 0.5, 0), s(4.0, 0.4, 1)];
        assert!(pre_peak_branch(&falling, 1.0).is_none());
        let single = [s(5.0, 0.5, 0)];
        assert!(pre_peak_branch(&single, 1.0).is_some());
    }

    #[test]
    fn json_round_trip_and_errors() {
        let t = tiny_table();
        let text = t.to_json();
        assert_eq!(DutyCycleTable::from_json(&text, Path::new("t.json")).unwrap(), t);
        let cut = &text[..text.len() / 2];
        let err = DutyCycleTable::from_json(cut, Path::new("t.json")).unwrap_err();
        assert!(matches!(err, Error::Parse { location: Some(_), .. }), "{err}");
        let v2 = text.replace("\"format_version\": \"1\"", "\"format_version\": \"2\"");
        assert!(matches!(
            DutyCycleTable::from_json(&v2, Path::new("t.json")),
            Err(Error::Version { .. })
        ));
    }

    #[test]
    fn single_cell_build_at_low_rate() {
        let p = DetectorParams::reference();
        let t = DutyCycleTable::build(&p, &[15.0], &[100.0], RunLength::Events(100_000), 4).unwrap();
        assert_eq!(t.shape(), (1, 1));
        let eta = t.eta_grid[0][0].unwrap();
        let limit = p.recharged_detection_probability();
        let sd = (limit * (1.0 - limit) / 1e5).sqrt();
        assert!((eta - limit).abs() < 3.0 * sd, "{eta} vs {limit}");
    }

    #[test]
    fn build_rejects_bad_axes() {
        let p = DetectorParams::reference();
        let run = RunLength::Events(100);
        assert!(DutyCycleTable::build(&p, &[], &[1e3], run, 0).is_err());
        assert!(DutyCycleTable::build(&p, &[15.0, 12.0], &[1e3], run, 0).is_err());
        assert!(DutyCycleTable::build(&p, &[15.0], &[1e3, 0.0], run, 0).is_err());
        // below the discriminator crossing voltage
        assert!(DutyCycleTable::build(&p, &[9.0], &[1e3], run, 0).is_err());
    }
}
