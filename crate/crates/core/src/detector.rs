//! Monte-Carlo simulation of a single detector and its effective duty cycle.
//!
//! Each input event sees the excess voltage left by the most recent
//! avalanche. It avalanches with the instantaneous avalanche probability; an
//! avalanche always discharges the junction, but only produces a digital
//! pulse if its height clears the discriminator. The duty cycle is estimated
//! two ways: the fraction of input events that were sensed, and the time
//! average of the detection probability along the realised trace.

use std::io::Write;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::events::{derive_seed, generate, seeded_rng, EventSequence, SourceModel};
use crate::recovery::{DetectorParams, RecoveryKind};

const SIM_STREAM: u64 = 7;

/// Fate of one input event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Disposition {
    NoAvalanche,
    AvalancheUnsensed,
    AvalancheSensed,
}

impl Disposition {
    pub fn as_str(self) -> &'static str {
        match self {
            Disposition::NoAvalanche => "no_avalanche",
            Disposition::AvalancheUnsensed => "avalanche_unsensed",
            Disposition::AvalancheSensed => "avalanche_sensed",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectorTrace {
    pub event_times: Vec<f64>,
    pub dispositions: Vec<Disposition>,
    pub avalanche_times: Vec<f64>,
    pub pulse_heights: Vec<f64>,
    pub duration: f64,
    pub params: DetectorParams<f64>,
    pub seed: u64,
}

impl DetectorTrace {
    pub fn input_count(&self) -> usize {
        self.dispositions.len()
    }

    pub fn avalanche_count(&self) -> usize {
        self.avalanche_times.len()
    }

    pub fn sensed_count(&self) -> usize {
        self.dispositions
            .iter()
            .filter(|d| **d == Disposition::AvalancheSensed)
            .count()
    }

    /// Times of the digital output pulses.
    pub fn sensed_times(&self) -> Vec<f64> {
        self.event_times
            .iter()
            .zip(&self.dispositions)
            .filter(|(_, d)| **d == Disposition::AvalancheSensed)
            .map(|(t, _)| *t)
            .collect()
    }

    /// One row per input event: `time,disposition,pulse_height`. Pulse height
    /// is empty for events that did not avalanche.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "time,disposition,pulse_height")?;
        let mut heights = self.pulse_heights.iter();
        for (t, d) in self.event_times.iter().zip(&self.dispositions) {
            match d {
                Disposition::NoAvalanche => writeln!(w, "{t:.16e},{},", d.as_str())?,
                _ => {
                    let h = heights.next().expect("one pulse height per avalanche");
                    writeln!(w, "{t:.16e},{},{h:.16e}", d.as_str())?
                }
            }
        }
        Ok(())
    }
}

/// Both duty-cycle estimators for one trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DutyCycleEstimate {
    pub eta_fractional: f64,
    pub eta_area: f64,
    /// Empirical input rate, `input_count / duration`.
    pub input_rate: f64,
    /// Empirical sensed rate, `sensed_count / duration`.
    pub observed_rate: f64,
    pub input_count: usize,
    pub sensed_count: usize,
    /// Binomial standard error of `eta_fractional`.
    pub stderr_fractional: f64,
    /// Estimated discretisation error of `eta_area` (step-halving).
    pub quadrature_error: f64,
}

/// Runs the detector over `seq`. The detector starts fully recharged.
pub fn simulate(seq: &EventSequence, p: &DetectorParams<f64>, seed: u64) -> Result<DetectorTrace> {
    p.validate()?;
    let mut rng = seeded_rng(seed, SIM_STREAM);
    let n = seq.len();
    let mut dispositions = Vec::with_capacity(n);
    let mut avalanche_times = Vec::new();
    let mut pulse_heights = Vec::new();
    let mut last_avalanche: Option<f64> = None;

    for &t in seq.times() {
        let elapsed = last_avalanche.map(|tl| t - tl);
        let u: f64 = rng.gen();
        let disposition = match p.recovery_kind {
            RecoveryKind::ExponentialRecharge => {
                let v = match elapsed {
                    Some(dt) => p.excess_voltage_unchecked(dt),
                    None => p.v_e_set,
                };
                if u < p.avalanche_probability_unchecked(v) {
                    let mean = p.pulse_height_mean_unchecked(v);
                    let z: f64 = rng.sample(StandardNormal);
                    let height = (mean + p.sigma_rel * mean * z).max(0.0);
                    avalanche_times.push(t);
                    pulse_heights.push(height);
                    last_avalanche = Some(t);
                    if height >= p.v_cld {
                        Disposition::AvalancheSensed
                    } else {
                        Disposition::AvalancheUnsensed
                    }
                } else {
                    Disposition::NoAvalanche
                }
            }
            RecoveryKind::StepwiseDeadTime { dead_time } => {
                let live = elapsed.is_none_or(|dt| dt >= dead_time);
                if live && u < 1.0 {
                    avalanche_times.push(t);
                    pulse_heights.push(p.pulse_height_mean_unchecked(p.v_e_set));
                    last_avalanche = Some(t);
                    Disposition::AvalancheSensed
                } else {
                    Disposition::NoAvalanche
                }
            }
        };
        dispositions.push(disposition);
    }

    Ok(DetectorTrace {
        event_times: seq.times().to_vec(),
        dispositions,
        avalanche_times,
        pulse_heights,
        duration: seq.duration,
        params: *p,
        seed,
    })
}

/// Sensed fraction of input events and its binomial standard error.
pub fn eta_fractional(trace: &DetectorTrace) -> Result<(f64, f64)> {
    let n = trace.input_count();
    if n == 0 {
        return Err(Error::EmptyTrace);
    }
    let eta = trace.sensed_count() as f64 / n as f64;
    let stderr = (eta * (1.0 - eta) / n as f64).sqrt();
    Ok((eta, stderr))
}

/// Time average of the detection probability along the trace.
pub fn eta_area(trace: &DetectorTrace, p: &DetectorParams<f64>) -> Result<f64> {
    eta_area_with_error(trace, p).map(|(eta, _)| eta)
}

/// Area estimator plus a step-halving estimate of its quadrature error.
pub fn eta_area_with_error(trace: &DetectorTrace, p: &DetectorParams<f64>) -> Result<(f64, f64)> {
    p.validate()?;
    if !(trace.duration > 0.0) {
        return Err(Error::arg("trace duration must be > 0"));
    }
    let fine = DetectionIntegral::new(p, 1.0);
    let coarse = DetectionIntegral::new(p, 2.0);
    let a = trace_area(trace, &fine) / trace.duration;
    let b = trace_area(trace, &coarse) / trace.duration;
    // trapezoid error scales as h^2
    Ok((a, (a - b).abs() / 3.0))
}

fn trace_area(trace: &DetectorTrace, integral: &DetectionIntegral) -> f64 {
    let first = trace.avalanche_times.first().copied().unwrap_or(trace.duration);
    // fully recharged before the first avalanche
    let mut area = first * integral.asymptote;
    let mut starts = trace.avalanche_times.iter().peekable();
    while let Some(&start) = starts.next() {
        let end = starts.peek().map_or(trace.duration, |&&next| next);
        area += integral.integrate(end - start);
    }
    area
}

/// `int_0^L P_d(t) dt` from a precomputed cumulative trapezoid table.
struct DetectionIntegral {
    params: DetectorParams<f64>,
    step: f64,
    cumulative: Vec<f64>,
    tail_start: f64,
    asymptote: f64,
}

/// Beyond this many time constants `P_d` equals its asymptote to ~e^-50.
const TAIL_RC: f64 = 50.0;

impl DetectionIntegral {
    fn new(p: &DetectorParams<f64>, coarsen: f64) -> Self {
        let sigma_t = p.sense_time_width();
        let asymptote = p.recharged_detection_probability();
        if let RecoveryKind::StepwiseDeadTime { .. } = p.recovery_kind {
            return Self {
                params: *p,
                step: 0.0,
                cumulative: Vec::new(),
                tail_start: 0.0,
                asymptote,
            };
        }
        let mut step = p.rc_time / 400.0;
        if sigma_t > 0.0 {
            step = step.min(sigma_t / 32.0);
        }
        step *= coarsen;
        let tail_start = TAIL_RC * p.rc_time;
        let n = (tail_start / step).ceil() as usize;
        let step = tail_start / n as f64;
        let mut cumulative = Vec::with_capacity(n + 1);
        cumulative.push(0.0);
        let mut prev = p.detection_probability_unchecked(0.0);
        let mut acc = 0.0;
        for k in 1..=n {
            let cur = p.detection_probability_unchecked(k as f64 * step);
            acc += 0.5 * step * (prev + cur);
            cumulative.push(acc);
            prev = cur;
        }
        Self {
            params: *p,
            step,
            cumulative,
            tail_start,
            asymptote,
        }
    }

    fn integrate(&self, len: f64) -> f64 {
        if let RecoveryKind::StepwiseDeadTime { dead_time } = self.params.recovery_kind {
            return (len - dead_time).max(0.0);
        }
        if len >= self.tail_start {
            return self.cumulative[self.cumulative.len() - 1] + (len - self.tail_start) * self.asymptote;
        }
        let k = ((len / self.step) as usize).min(self.cumulative.len() - 1);
        let tk = k as f64 * self.step;
        let pk = self.params.detection_probability_unchecked(tk);
        let pl = self.params.detection_probability_unchecked(len);
        self.cumulative[k] + 0.5 * (len - tk) * (pk + pl)
    }
}

/// Both estimators and rates for one trace.
pub fn estimate(trace: &DetectorTrace) -> Result<DutyCycleEstimate> {
    let (eta_f, stderr) = eta_fractional(trace)?;
    let (eta_a, quad) = eta_area_with_error(trace, &trace.params)?;
    let input_rate = trace.input_count() as f64 / trace.duration;
    Ok(DutyCycleEstimate {
        eta_fractional: eta_f,
        eta_area: eta_a,
        input_rate,
        observed_rate: trace.sensed_count() as f64 / trace.duration,
        input_count: trace.input_count(),
        sensed_count: trace.sensed_count(),
        stderr_fractional: stderr,
        quadrature_error: quad,
    })
}

/// How long each simulation cell runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunLength {
    /// Fixed duration in seconds.
    Duration(f64),
    /// Duration chosen so the expected number of input events is this many.
    Events(u64),
}

impl RunLength {
    pub fn duration_at(&self, rate: f64) -> f64 {
        match *self {
            RunLength::Duration(d) => d,
            RunLength::Events(n) => n as f64 / rate,
        }
    }
}

/// Generates a Poisson stream at `rate` and simulates one detector over it.
pub fn simulate_at_rate(p: &DetectorParams<f64>, rate: f64, run: RunLength, seed: u64) -> Result<DutyCycleEstimate> {
    let duration = run.duration_at(rate);
    let seq = generate(&SourceModel::poisson(rate), duration, seed)?;
    let trace = simulate(&seq, p, seed)?;
    estimate(&trace)
}

/// One estimate per input rate. Cells run in parallel with seeds derived
/// from `seed` and the cell index, so results do not depend on scheduling.
pub fn rate_sweep(p: &DetectorParams<f64>, rates: &[f64], run: RunLength, seed: u64) -> Result<Vec<DutyCycleEstimate>> {
    if let Some(r) = rates.iter().find(|r| !(r.is_finite() && **r > 0.0)) {
        return Err(Error::arg(format!("sweep rates must be > 0, got {r}")));
    }
    rates
        .par_iter()
        .enumerate()
        .map(|(i, &rate)| simulate_at_rate(p, rate, run, derive_seed(seed, i as u64)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reference() -> DetectorParams<f64> {
        DetectorParams::reference()
    }

    #[test]
    fn empty_sequence_gives_empty_trace() {
        let seq = EventSequence::empty(1.0).unwrap();
        let trace = simulate(&seq, &reference(), 1).unwrap();
        assert_eq!(trace.input_count(), 0);
        assert_eq!(trace.avalanche_count(), 0);
        assert!(matches!(eta_fractional(&trace), Err(Error::EmptyTrace)));
        // the idle detector is receptive for the whole window
        let area = eta_area(&trace, &reference()).unwrap();
        assert!((area - reference().recharged_detection_probability()).abs() < 1e-15);
    }

    #[test]
    fn isolated_event_matches_avalanche_probability() {
        let mut p = reference();
        p.v_cld = 1e-6;
        let n = 100_000;
        let sensed = (0..n)
            .filter(|&i| {
                let seq = EventSequence::from_times(vec![0.5], 1.0, 1.0, i).unwrap();
                simulate(&seq, &p, i).unwrap().sensed_count() == 1
            })
            .count();
        let q = 1.0 - (-3.0f64).exp();
        let sd = (q * (1.0 - q) / n as f64).sqrt();
        let frac = sensed as f64 / n as f64;
        assert!((frac - q).abs() < 5.0 * sd, "{frac} vs {q}");
    }

    #[test]
    fn closely_spaced_second_event_is_rarely_sensed() {
        let p = reference();
        let delta = 20e-9;
        let v = p.excess_voltage(delta).unwrap();
        let q = p.avalanche_probability(v).unwrap();
        let (mut first, mut second_av, mut second_sensed) = (0u32, 0u32, 0u32);
        for i in 0..50_000u64 {
            let seq = EventSequence::from_times(vec![0.1, 0.1 + delta], 1.0, 1.0, i).unwrap();
            let tr = simulate(&seq, &p, i).unwrap();
            if tr.dispositions[0] == Disposition::NoAvalanche {
                continue;
            }
            first += 1;
            match tr.dispositions[1] {
                Disposition::NoAvalanche => {}
                Disposition::AvalancheUnsensed => second_av += 1,
                Disposition::AvalancheSensed => {
                    second_av += 1;
                    second_sensed += 1
                }
            }
        }
        let frac = second_av as f64 / first as f64;
        let sd = (q * (1.0 - q) / first as f64).sqrt();
        assert!((frac - q).abs() < 5.0 * sd, "{frac} vs {q}");
        assert!(q > 0.05 && (q - v / p.v_characteristic).abs() < 0.1 * q);
        assert_eq!(second_sensed, 0);
    }

    #[test]
    fn dispositions_account_for_every_event() {
        let seq = generate(&SourceModel::poisson(1e6), 0.01, 9).unwrap();
        let tr = simulate(&seq, &reference(), 9).unwrap();
        let none = tr
            .dispositions
            .iter()
            .filter(|d| **d == Disposition::NoAvalanche)
            .count();
        assert_eq!(none + tr.avalanche_count(), tr.input_count());
        assert!(tr.sensed_count() <= tr.avalanche_count());
        assert!(tr.avalanche_times.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(tr.pulse_heights.len(), tr.avalanche_count());
        assert_eq!(simulate(&seq, &reference(), 9).unwrap(), tr);
    }

    #[test]
    fn fractional_extremes() {
        let p = reference()
            .with_recovery_kind(RecoveryKind::StepwiseDeadTime { dead_time: 0.0 })
            .unwrap();
        let seq = EventSequence::from_times(vec![0.1, 0.2, 0.3], 1.0, 3.0, 0).unwrap();
        let tr = simulate(&seq, &p, 0).unwrap();
        assert_eq!(eta_fractional(&tr).unwrap(), (1.0, 0.0));
        let mut none = tr.clone();
        none.dispositions = vec![Disposition::NoAvalanche; 3];
        assert_eq!(eta_fractional(&none).unwrap(), (0.0, 0.0));
    }

    #[test]
    fn stepwise_area_is_exact() {
        let dead = 0.01;
        let p = reference()
            .with_recovery_kind(RecoveryKind::StepwiseDeadTime { dead_time: dead })
            .unwrap();
        let seq = EventSequence::from_times(vec![0.1, 0.105, 0.3, 0.7], 1.0, 4.0, 0).unwrap();
        let tr = simulate(&seq, &p, 0).unwrap();
        assert_eq!(tr.avalanche_count(), 3);
        let eta = eta_area(&tr, &p).unwrap();
        assert!((eta - (1.0 - 3.0 * dead)).abs() < 1e-12, "{eta}");
    }

    #[test]
    fn quadrature_converges() {
        let p = reference();
        let base = DetectionIntegral::new(&p, 1.0);
        let half = DetectionIntegral::new(&p, 0.5);
        for &len in &[0.1e-6, 0.15e-6, 0.3e-6, 1e-6, 5e-6, 60e-6] {
            let a = base.integrate(len);
            let b = half.integrate(len);
            // relative to the receptive time of the segment
            assert!((a - b).abs() <= 1e-6 * len * base.asymptote, "len {len}: {a} vs {b}");
        }
    }

    #[test]
    fn estimators_agree_at_saturation_onset() {
        let est = simulate_at_rate(&reference(), 2e5, RunLength::Events(200_000), 5).unwrap();
        let tol = 3.0 * (est.stderr_fractional + est.quadrature_error);
        assert!(
            (est.eta_fractional - est.eta_area).abs() <= tol,
            "{} vs {} (tol {tol})",
            est.eta_fractional,
            est.eta_area
        );
        assert!((est.observed_rate - est.eta_fractional * est.input_rate).abs() <= 1e-12 * est.observed_rate);
    }

    #[test]
    fn sweep_is_deterministic_and_validated() {
        let rates = [1e4, 1e5];
        let a = rate_sweep(&reference(), &rates, RunLength::Duration(0.05), 3).unwrap();
        let b = rate_sweep(&reference(), &rates, RunLength::Duration(0.05), 3).unwrap();
        assert_eq!(a, b);
        assert!(rate_sweep(&reference(), &[1e4, -1.0], RunLength::Duration(0.05), 3).is_err());
    }

    #[test]
    fn low_rate_limit() {
        let p = reference();
        let est = simulate_at_rate(&p, 100.0, RunLength::Events(100_000), 1).unwrap();
        let limit = p.recharged_detection_probability();
        assert!(est.eta_fractional >= 0.99 * limit);
        assert!((est.eta_fractional - limit).abs() < 5.0 * est.stderr_fractional + 1e-4);
    }

    #[test]
    fn trace_csv_has_one_row_per_event() {
        let seq = generate(&SourceModel::poisson(1e5), 1e-3, 2).unwrap();
        let tr = simulate(&seq, &reference(), 2).unwrap();
        let mut buf = Vec::new();
        tr.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), tr.input_count() + 1);
    }
}
