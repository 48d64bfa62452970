//! Polarization-correlation fringes: fitting and background subtraction.
//!
//! Fringes are modelled as `offset * (1 + V cos 2(theta - phase))`. Writing
//! the cosine in quadratures turns this into a linear least-squares problem
//! in `(offset, offset V cos 2phase, offset V sin 2phase)`, solved directly.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::coincidence::{accidentals_naive, CoincidenceMeasurement};
use crate::error::{Error, Result};
use crate::lut::DutyCycleTable;
use crate::scalar::Scalar;

/// One rate sample. `sigma`, when given for every sample, is used as an
/// absolute standard deviation for weighting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateSample<T> {
    pub angle_deg: T,
    pub rate: T,
    pub sigma: Option<T>,
}

impl<T> RateSample<T> {
    pub fn new(angle_deg: T, rate: T) -> Self {
        Self {
            angle_deg,
            rate,
            sigma: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitUncertainties<T> {
    pub visibility: T,
    pub amplitude: T,
    pub offset: T,
    pub phase_deg: T,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VisibilityFit<T> {
    pub visibility: T,
    /// `offset * visibility`, same units as the rates.
    pub amplitude: T,
    pub offset: T,
    /// Fringe maximum, degrees in (-90, 90].
    pub phase_deg: T,
    pub residual_rms: T,
    pub uncertainties: FitUncertainties<T>,
    /// Visibility above 1; reported as fitted, not clamped.
    pub unphysical: bool,
}

pub fn fit_visibility<T: Scalar>(samples: &[RateSample<T>]) -> Result<VisibilityFit<T>> {
    let n = samples.len();
    if n < 4 {
        return Err(Error::Fit(format!("need at least 4 points, got {n}")));
    }
    let (lo, hi) = samples.iter().fold((T::infinity(), T::neg_infinity()), |(lo, hi), s| {
        (lo.min(s.angle_deg), hi.max(s.angle_deg))
    });
    if hi - lo < T::lit(90.0) {
        return Err(Error::Fit(format!(
            "analyzer angles span {} deg; at least 90 deg required",
            hi - lo
        )));
    }
    let weighted = samples.iter().all(|s| s.sigma.is_some());
    let deg = T::PI() / T::lit(180.0);

    let mut m = [[T::zero(); 3]; 3];
    let mut rhs = [T::zero(); 3];
    let mut rows = Vec::with_capacity(n);
    for s in samples {
        let x2 = T::lit(2.0) * s.angle_deg * deg;
        let row = [T::one(), x2.cos(), x2.sin()];
        let w = match (weighted, s.sigma) {
            (true, Some(sig)) if sig > T::zero() => T::one() / (sig * sig),
            (true, _) => return Err(Error::Fit("sigma must be > 0 for every point".into())),
            _ => T::one(),
        };
        for a in 0..3 {
            rhs[a] = rhs[a] + w * row[a] * s.rate;
            for b in 0..3 {
                m[a][b] = m[a][b] + w * row[a] * row[b];
            }
        }
        rows.push(row);
    }
    let inv = invert3(m).ok_or_else(|| Error::Fit("normal equations are singular".into()))?;
    let beta: [T; 3] = std::array::from_fn(|a| (0..3).fold(T::zero(), |acc, b| acc + inv[a][b] * rhs[b]));

    let rss = rows
        .iter()
        .zip(samples)
        .map(|(r, s)| {
            let d = s.rate - (beta[0] * r[0] + beta[1] * r[1] + beta[2] * r[2]);
            d * d
        })
        .fold(T::zero(), |a, b| a + b);
    let residual_rms = (rss / T::lit(n as f64)).sqrt();
    let scale = if weighted {
        T::one()
    } else {
        rss / T::lit((n - 3) as f64)
    };
    let cov = |a: usize, b: usize| inv[a][b] * scale;

    let [offset, c, s] = beta;
    if !(offset > T::zero()) {
        return Err(Error::Fit(format!(
            "fitted offset {offset} is not positive (residual rms {residual_rms})"
        )));
    }
    let amplitude = (c * c + s * s).sqrt();
    let visibility = amplitude / offset;
    let mut phase_deg = T::lit(0.5) * s.atan2(c) / deg;
    if phase_deg <= T::lit(-90.0) {
        phase_deg = phase_deg + T::lit(180.0);
    }

    let quad = |g: [T; 3]| {
        let mut v = T::zero();
        for a in 0..3 {
            for b in 0..3 {
                v = v + g[a] * cov(a, b) * g[b];
            }
        }
        v.max(T::zero()).sqrt()
    };
    let (sig_amp, sig_vis, sig_phase) = if amplitude > T::zero() {
        let ga = [T::zero(), c / amplitude, s / amplitude];
        let gv = [
            -amplitude / (offset * offset),
            c / (amplitude * offset),
            s / (amplitude * offset),
        ];
        let a2 = amplitude * amplitude;
        let gp = [T::zero(), -s / a2, c / a2].map(|g| g * T::lit(0.5) / deg);
        (quad(ga), quad(gv), quad(gp))
    } else {
        let sa = cov(1, 1).max(cov(2, 2)).max(T::zero()).sqrt();
        (sa, sa / offset, T::lit(90.0))
    };

    Ok(VisibilityFit {
        visibility,
        amplitude,
        offset,
        phase_deg,
        residual_rms,
        uncertainties: FitUncertainties {
            visibility: sig_vis,
            amplitude: sig_amp,
            offset: cov(0, 0).max(T::zero()).sqrt(),
            phase_deg: sig_phase,
        },
        unphysical: visibility > T::one(),
    })
}

/// Gauss-Jordan inverse with partial pivoting.
fn invert3<T: Scalar>(mut m: [[T; 3]; 3]) -> Option<[[T; 3]; 3]> {
    let mut inv = [[T::zero(); 3]; 3];
    for (i, row) in inv.iter_mut().enumerate() {
        row[i] = T::one();
    }
    let norm = m.iter().flat_map(|r| r.iter()).fold(T::zero(), |a, &b| a.max(b.abs()));
    for col in 0..3 {
        let piv = (col..3).max_by(|&a, &b| m[a][col].abs().partial_cmp(&m[b][col].abs()).unwrap())?;
        if m[piv][col].abs() <= norm * T::epsilon() * T::lit(16.0) {
            return None;
        }
        m.swap(col, piv);
        inv.swap(col, piv);
        let d = m[col][col];
        for k in 0..3 {
            m[col][k] = m[col][k] / d;
            inv[col][k] = inv[col][k] / d;
        }
        for r in 0..3 {
            if r != col {
                let f = m[r][col];
                for k in 0..3 {
                    m[r][k] = m[r][k] - f * m[col][k];
                    inv[r][k] = inv[r][k] - f * inv[col][k];
                }
            }
        }
    }
    Some(inv)
}

/// One analyzer setting of a coincidence experiment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FringePoint {
    pub angle_deg: f64,
    pub c_raw: u64,
    pub s1: u64,
    pub s2: u64,
    /// Integration time, seconds.
    pub integration: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FringeDataset {
    pub points: Vec<FringePoint>,
    pub tau1: f64,
    pub tau2: f64,
    pub v_e1: f64,
    pub v_e2: f64,
}

const CSV_COLUMNS: &str = "angle_deg,c_raw_counts,s1_counts,s2_counts,integration_s";

impl FringeDataset {
    pub fn validate(&self) -> Result<()> {
        if self.points.is_empty() {
            return Err(Error::arg("fringe dataset has no points"));
        }
        if let Some(p) = self.points.iter().find(|p| !(p.integration > 0.0)) {
            return Err(Error::arg(format!(
                "integration time must be > 0 (angle {} deg)",
                p.angle_deg
            )));
        }
        if !(self.tau1 >= 0.0 && self.tau2 >= 0.0) {
            return Err(Error::arg("pulse widths must be >= 0"));
        }
        Ok(())
    }

    /// `# tau1=... tau2=... v_e1=... v_e2=...` followed by one row per point.
    /// Lines starting with `##` are ignored on reading.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(
            w,
            "# tau1={:.16e} tau2={:.16e} v_e1={:.16e} v_e2={:.16e}",
            self.tau1, self.tau2, self.v_e1, self.v_e2
        )?;
        writeln!(w, "{CSV_COLUMNS}")?;
        for p in &self.points {
            writeln!(
                w,
                "{:.16e},{},{},{},{:.16e}",
                p.angle_deg, p.c_raw, p.s1, p.s2, p.integration
            )?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R, path: &Path) -> Result<Self> {
        let perr = |line: usize, message: String| Error::Parse {
            path: path.to_path_buf(),
            location: Some((line, 1)),
            message,
        };
        let (mut tau1, mut tau2, mut v_e1, mut v_e2) = (None, None, None, None);
        let mut seen_columns = false;
        let mut points = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let ln = i + 1;
            let line = line.map_err(|e| perr(ln, e.to_string()))?;
            let line = line.trim();
            // `##` lines are free-form notes
            if line.is_empty() || line.starts_with("##") {
                continue;
            }
            if let Some(meta) = line.strip_prefix('#') {
                for kv in meta.split_whitespace() {
                    let (k, v) = kv
                        .split_once('=')
                        .ok_or_else(|| perr(ln, format!("malformed field '{kv}'")))?;
                    let v: f64 = v.parse().map_err(|e| perr(ln, format!("{k}: {e}")))?;
                    match k {
                        "tau1" => tau1 = Some(v),
                        "tau2" => tau2 = Some(v),
                        "v_e1" => v_e1 = Some(v),
                        "v_e2" => v_e2 = Some(v),
                        _ => return Err(perr(ln, format!("unknown field '{k}'"))),
                    }
                }
                continue;
            }
            if !seen_columns {
                if line != CSV_COLUMNS {
                    return Err(perr(ln, format!("expected header '{CSV_COLUMNS}'")));
                }
                seen_columns = true;
                continue;
            }
            let cols: Vec<&str> = line.split(',').map(str::trim).collect();
            if cols.len() != 5 {
                return Err(perr(ln, format!("expected 5 columns, found {}", cols.len())));
            }
            let f = |k: usize| {
                cols[k]
                    .parse::<f64>()
                    .map_err(|e| perr(ln, format!("column {}: {e}", k + 1)))
            };
            let u = |k: usize| {
                cols[k]
                    .parse::<u64>()
                    .map_err(|e| perr(ln, format!("column {}: {e}", k + 1)))
            };
            points.push(FringePoint {
                angle_deg: f(0)?,
                c_raw: u(1)?,
                s1: u(2)?,
                s2: u(3)?,
                integration: f(4)?,
            });
        }
        let missing = || perr(1, "header comment must define tau1, tau2, v_e1 and v_e2".into());
        let ds = FringeDataset {
            points,
            tau1: tau1.ok_or_else(missing)?,
            tau2: tau2.ok_or_else(missing)?,
            v_e1: v_e1.ok_or_else(missing)?,
            v_e2: v_e2.ok_or_else(missing)?,
        };
        ds.validate()?;
        Ok(ds)
    }
}

/// Rates at one analyzer angle after each subtraction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubtractedPoint {
    pub angle_deg: f64,
    pub raw: f64,
    pub naive: f64,
    pub corrected: f64,
    pub sigma: f64,
    pub eta1: f64,
    pub eta2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FringeAnalysis {
    pub fit_raw: VisibilityFit<f64>,
    pub fit_naive: VisibilityFit<f64>,
    pub fit_corrected: VisibilityFit<f64>,
    pub points: Vec<SubtractedPoint>,
}

/// Subtracted rates for every point, with duty cycles from the two tables.
pub fn subtract_accidentals(
    dataset: &FringeDataset,
    table1: &DutyCycleTable,
    table2: &DutyCycleTable,
) -> Result<Vec<SubtractedPoint>> {
    dataset.validate()?;
    dataset
        .points
        .iter()
        .enumerate()
        .map(|(k, p)| {
            let t = p.integration;
            let m = CoincidenceMeasurement {
                s1: p.s1 as f64 / t,
                s2: p.s2 as f64 / t,
                tau1: dataset.tau1,
                tau2: dataset.tau2,
                c_raw: p.c_raw as f64 / t,
                v_e1: Some(dataset.v_e1),
                v_e2: Some(dataset.v_e2),
            };
            let r = m
                .correct_pair(table1, table2)
                .map_err(|e| e.for_arm(format!("point {k} (angle {} deg)", p.angle_deg)))?;
            Ok(SubtractedPoint {
                angle_deg: p.angle_deg,
                raw: m.c_raw,
                naive: m.c_raw - accidentals_naive(m.s1, m.s2, m.tau1, m.tau2)?,
                corrected: r.c_corrected,
                sigma: (p.c_raw.max(1) as f64).sqrt() / t,
                eta1: r.eta1,
                eta2: r.eta2,
            })
        })
        .collect()
}

/// Fits raw, naively subtracted and duty-cycle corrected fringes.
pub fn analyze(dataset: &FringeDataset, table1: &DutyCycleTable, table2: &DutyCycleTable) -> Result<FringeAnalysis> {
    let points = subtract_accidentals(dataset, table1, table2)?;
    let fit = |pick: fn(&SubtractedPoint) -> f64| {
        let samples: Vec<RateSample<f64>> = points
            .iter()
            .map(|p| RateSample {
                angle_deg: p.angle_deg,
                rate: pick(p),
                sigma: Some(p.sigma),
            })
            .collect();
        fit_visibility(&samples)
    };
    Ok(FringeAnalysis {
        fit_raw: fit(|p| p.raw)?,
        fit_naive: fit(|p| p.naive)?,
        fit_corrected: fit(|p| p.corrected)?,
        points,
    })
}
