//! Two-detector coincidence experiments simulated end to end: independent or
//! correlated arrivals, full detector chains and an AND gate.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detector::{simulate, DetectorTrace};
use crate::error::{Error, Result};
use crate::events::{derive_seed, generate, merge, EventSequence, SourceModel};
use crate::fringe::{FringeDataset, FringePoint};
use crate::recovery::DetectorParams;

/// Number of (sensed, sensed) pairs whose digital pulses `[t1, t1 + tau1]`
/// and `[t2, t2 + tau2]` intersect. A pulse overlapping several pulses on
/// the other arm contributes once per pair.
pub fn count_overlaps(trace1: &DetectorTrace, trace2: &DetectorTrace, tau1: f64, tau2: f64) -> Result<u64> {
    if trace1.duration != trace2.duration {
        return Err(Error::arg(format!(
            "traces cover different durations ({} s and {} s)",
            trace1.duration, trace2.duration
        )));
    }
    count_overlapping_pulses(&trace1.sensed_times(), &trace2.sensed_times(), tau1, tau2)
}

/// Overlap count on two sorted lists of pulse start times.
pub fn count_overlapping_pulses(a: &[f64], b: &[f64], tau1: f64, tau2: f64) -> Result<u64> {
    if !(tau1 >= 0.0 && tau2 >= 0.0) {
        return Err(Error::arg(format!("pulse widths must be >= 0, got {tau1} and {tau2}")));
    }
    let mut start = 0;
    let mut count = 0u64;
    for &t in a {
        while start < b.len() && b[start] < t - tau2 {
            start += 1;
        }
        count += b[start..].iter().take_while(|&&u| u <= t + tau1).count() as u64;
    }
    Ok(count)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccidentalMeasurement {
    /// AND-gate coincidence rate, Hz.
    pub measured_rate: f64,
    /// Observed singles rates, Hz.
    pub s1: f64,
    pub s2: f64,
    pub coincidences: u64,
    pub duration: f64,
}

impl AccidentalMeasurement {
    /// Poisson standard error of `measured_rate`.
    pub fn stderr(&self) -> f64 {
        (self.coincidences as f64).sqrt() / self.duration
    }
}

fn poisson_or_empty(rate: f64, duration: f64, seed: u64) -> Result<EventSequence> {
    if rate == 0.0 {
        EventSequence::empty(duration)
    } else {
        generate(&SourceModel::poisson(rate), duration, seed)
    }
}

/// Counts coincidences between two detectors fed by independent Poisson
/// streams. Every coincidence is accidental.
#[allow(clippy::too_many_arguments)]
pub fn measure_accidentals(
    p1: &DetectorParams<f64>,
    p2: &DetectorParams<f64>,
    rate1: f64,
    rate2: f64,
    tau1: f64,
    tau2: f64,
    duration: f64,
    seed: u64,
) -> Result<AccidentalMeasurement> {
    for (name, r) in [("rate1", rate1), ("rate2", rate2)] {
        if !(r.is_finite() && r >= 0.0) {
            return Err(Error::arg(format!("{name} must be >= 0, got {r}")));
        }
    }
    let arm = |p: &DetectorParams<f64>, rate: f64, k: u64| -> Result<DetectorTrace> {
        let seq = poisson_or_empty(rate, duration, derive_seed(seed, 2 * k))?;
        simulate(&seq, p, derive_seed(seed, 2 * k + 1))
    };
    let t1 = arm(p1, rate1, 0).map_err(|e| e.for_arm("detector 1"))?;
    let t2 = arm(p2, rate2, 1).map_err(|e| e.for_arm("detector 2"))?;
    let coincidences = count_overlaps(&t1, &t2, tau1, tau2)?;
    Ok(AccidentalMeasurement {
        measured_rate: coincidences as f64 / duration,
        s1: t1.sensed_count() as f64 / duration,
        s2: t2.sensed_count() as f64 / duration,
        coincidences,
        duration,
    })
}

/// Photon-pair source behind two polarization analyzers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairSourceModel {
    /// Pair emission rate before the analyzers, Hz.
    pub pair_rate: f64,
    /// Uncorrelated extra arrivals per arm, Hz.
    pub singles_background_1: f64,
    pub singles_background_2: f64,
    pub true_visibility: f64,
    pub phase_deg: f64,
}

impl PairSourceModel {
    pub fn validate(&self) -> Result<()> {
        for (name, r) in [
            ("pair_rate", self.pair_rate),
            ("singles_background_1", self.singles_background_1),
            ("singles_background_2", self.singles_background_2),
        ] {
            if !(r.is_finite() && r >= 0.0) {
                return Err(Error::arg(format!("{name} must be >= 0, got {r}")));
            }
        }
        if !(0.0..=1.0).contains(&self.true_visibility) {
            return Err(Error::arg(format!(
                "true_visibility must lie in [0, 1], got {}",
                self.true_visibility
            )));
        }
        if !self.phase_deg.is_finite() {
            return Err(Error::arg("phase_deg must be finite"));
        }
        Ok(())
    }

    /// Fraction of pairs passing both analyzers at `angle_deg`.
    pub fn retention(&self, angle_deg: f64) -> f64 {
        let x = 2.0 * (angle_deg - self.phase_deg).to_radians();
        0.5 * (1.0 + self.true_visibility * x.cos())
    }
}

/// Simulates one integration per analyzer angle. Retained pairs arrive at
/// the same instant on both arms; background arrivals are independent.
#[allow(clippy::too_many_arguments)]
pub fn generate_fringe_dataset(
    src: &PairSourceModel,
    p1: &DetectorParams<f64>,
    p2: &DetectorParams<f64>,
    angles: &[f64],
    tau1: f64,
    tau2: f64,
    duration_per_angle: f64,
    seed: u64,
) -> Result<FringeDataset> {
    src.validate()?;
    if angles.is_empty() {
        return Err(Error::arg("at least one analyzer angle is required"));
    }
    if !(duration_per_angle.is_finite() && duration_per_angle > 0.0) {
        return Err(Error::arg(format!(
            "duration per angle must be > 0, got {duration_per_angle}"
        )));
    }
    let points = angles
        .par_iter()
        .enumerate()
        .map(|(i, &angle)| {
            let s = derive_seed(seed, i as u64);
            let d = duration_per_angle;
            let pairs = poisson_or_empty(src.pair_rate * src.retention(angle), d, derive_seed(s, 0))?;
            let arm = |p: &DetectorParams<f64>, bg: f64, k: u64| -> Result<DetectorTrace> {
                let background = poisson_or_empty(bg, d, derive_seed(s, 2 * k + 1))?;
                simulate(&merge(&pairs, &background)?, p, derive_seed(s, 2 * k + 2))
            };
            let t1 = arm(p1, src.singles_background_1, 0).map_err(|e| e.for_arm("detector 1"))?;
            let t2 = arm(p2, src.singles_background_2, 1).map_err(|e| e.for_arm("detector 2"))?;
            Ok(FringePoint {
                angle_deg: angle,
                c_raw: count_overlaps(&t1, &t2, tau1, tau2)?,
                s1: t1.sensed_count() as u64,
                s2: t2.sensed_count() as u64,
                integration: d,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FringeDataset {
        points,
        tau1,
        tau2,
        v_e1: p1.v_e_set,
        v_e2: p2.v_e_set,
    })
}
