//! Seeded arrival sequences of charge-carrier events.

use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Exp};

use crate::error::{Error, Result};

/// Random stream used for arrival generation.
const ARRIVAL_STREAM: u64 = 0;
/// Random stream used for dark counts of non-Poisson sources.
const DARK_STREAM: u64 = 1;

/// ChaCha20 generator on a fixed seed and stream. Portable and stable across
/// platforms and releases of `rand_chacha` 0.3.
pub fn seeded_rng(seed: u64, stream: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Derives an independent child seed (splitmix64 finaliser).
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Draws waiting times for a non-Poisson source.
pub trait WaitingTimeSampler: Send + Sync + fmt::Debug {
    /// Long-run event rate in Hz, recorded as sequence metadata.
    fn mean_rate(&self) -> f64;
    /// One waiting time in seconds; must be >= 0.
    fn sample(&self, rng: &mut dyn RngCore) -> f64;
}

#[derive(Debug, Clone)]
pub enum SourceKind {
    Poisson { rate: f64 },
    Custom(Arc<dyn WaitingTimeSampler>),
}

#[derive(Debug, Clone)]
pub struct SourceModel {
    pub kind: SourceKind,
    /// Poisson dark-count rate added on top of the source, Hz.
    pub dark_rate: f64,
}

impl SourceModel {
    pub fn poisson(rate: f64) -> Self {
        Self {
            kind: SourceKind::Poisson { rate },
            dark_rate: 0.0,
        }
    }

    pub fn with_dark_rate(mut self, dark_rate: f64) -> Self {
        self.dark_rate = dark_rate;
        self
    }

    pub fn total_rate(&self) -> f64 {
        let base = match &self.kind {
            SourceKind::Poisson { rate } => *rate,
            SourceKind::Custom(s) => s.mean_rate(),
        };
        base + self.dark_rate
    }

    fn validate(&self) -> Result<()> {
        if !(self.dark_rate.is_finite() && self.dark_rate >= 0.0) {
            return Err(Error::arg(format!("dark rate must be >= 0, got {}", self.dark_rate)));
        }
        match &self.kind {
            SourceKind::Poisson { rate } if !(rate.is_finite() && *rate > 0.0) => {
                Err(Error::arg(format!("source rate must be > 0, got {rate}")))
            }
            SourceKind::Custom(s) if !(s.mean_rate() > 0.0) => {
                Err(Error::arg("custom sampler must report a positive mean rate"))
            }
            _ => Ok(()),
        }
    }
}

/// Sorted arrival times on `[0, duration]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EventSequence {
    times: Vec<f64>,
    pub duration: f64,
    /// Total rate of the generator (source plus dark counts), Hz.
    pub source_rate: f64,
    pub seed: u64,
}

impl EventSequence {
    /// Wraps explicit timestamps. They must be sorted and inside `[0, duration]`.
    pub fn from_times(times: Vec<f64>, duration: f64, source_rate: f64, seed: u64) -> Result<Self> {
        if !(duration.is_finite() && duration > 0.0) {
            return Err(Error::arg(format!("duration must be > 0, got {duration}")));
        }
        if let Some(w) = times.windows(2).position(|w| !(w[0] <= w[1])) {
            return Err(Error::arg(format!("event times not sorted at index {}", w + 1)));
        }
        if let (Some(&first), Some(&last)) = (times.first(), times.last()) {
            if first < 0.0 || last > duration {
                return Err(Error::arg(format!(
                    "event times must lie in [0, {duration}], found [{first}, {last}]"
                )));
            }
        }
        Ok(Self {
            times,
            duration,
            source_rate,
            seed,
        })
    }

    pub fn empty(duration: f64) -> Result<Self> {
        Self::from_times(Vec::new(), duration, 0.0, 0)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn empirical_rate(&self) -> f64 {
        self.times.len() as f64 / self.duration
    }

    /// Inter-arrival times, starting from `t = 0`.
    pub fn waiting_times(&self) -> Vec<f64> {
        let mut prev = 0.0;
        self.times
            .iter()
            .map(|&t| {
                let w = t - prev;
                prev = t;
                w
            })
            .collect()
    }

    /// Writes `index,time_seconds` rows with 17 significant digits.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(
            w,
            "# seed={} source_rate={:.16e} duration={:.16e}",
            self.seed, self.source_rate, self.duration
        )?;
        writeln!(w, "index,time_seconds")?;
        for (i, t) in self.times.iter().enumerate() {
            writeln!(w, "{i},{t:.16e}")?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R, path: &Path) -> Result<Self> {
        let perr = |line: usize, message: String| Error::Parse {
            path: path.to_path_buf(),
            location: Some((line, 1)),
            message,
        };
        let mut lines = r.lines().enumerate();
        let mut next_line = |what: &str| -> Result<(usize, String)> {
            match lines.next() {
                Some((i, Ok(l))) => Ok((i + 1, l)),
                Some((i, Err(e))) => Err(perr(i + 1, e.to_string())),
                None => Err(perr(0, format!("missing {what}"))),
            }
        };
        let (ln, header) = next_line("provenance comment")?;
        let header = header
            .strip_prefix("# ")
            .ok_or_else(|| perr(ln, "expected '# seed=... source_rate=... duration=...'".into()))?;
        let (mut seed, mut rate, mut duration) = (None, None, None);
        for kv in header.split_whitespace() {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| perr(ln, format!("malformed field '{kv}'")))?;
            let bad = |e: &dyn fmt::Display| perr(ln, format!("field {k}: {e}"));
            match k {
                "seed" => seed = Some(v.parse::<u64>().map_err(|e| bad(&e))?),
                "source_rate" => rate = Some(v.parse::<f64>().map_err(|e| bad(&e))?),
                "duration" => duration = Some(v.parse::<f64>().map_err(|e| bad(&e))?),
                _ => return Err(perr(ln, format!("unknown field '{k}'"))),
            }
        }
        let (seed, rate, duration) = match (seed, rate, duration) {
            (Some(s), Some(r), Some(d)) => (s, r, d),
            _ => {
                return Err(perr(
                    ln,
                    "provenance comment lacks seed, source_rate or duration".into(),
                ))
            }
        };
        let (ln, cols) = next_line("column header")?;
        if cols.trim() != "index,time_seconds" {
            return Err(perr(ln, format!("unexpected column header '{cols}'")));
        }
        let mut times = Vec::new();
        for (i, line) in lines {
            let ln = i + 1;
            let line = line.map_err(|e| perr(ln, e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let (idx, t) = line
                .split_once(',')
                .ok_or_else(|| perr(ln, "expected two columns".into()))?;
            let idx: usize = idx.trim().parse().map_err(|e| perr(ln, format!("index: {e}")))?;
            if idx != times.len() {
                return Err(perr(ln, format!("index {idx} out of sequence")));
            }
            times.push(t.trim().parse::<f64>().map_err(|e| perr(ln, format!("time: {e}")))?);
        }
        Self::from_times(times, duration, rate, seed)
    }
}

/// Generates arrivals by accumulating waiting times until `duration` is passed.
pub fn generate(model: &SourceModel, duration: f64, seed: u64) -> Result<EventSequence> {
    if !(duration.is_finite() && duration > 0.0) {
        return Err(Error::arg(format!("duration must be > 0, got {duration}")));
    }
    model.validate()?;
    let mut rng = seeded_rng(seed, ARRIVAL_STREAM);
    let times = match &model.kind {
        // superposition of two Poisson processes is Poisson at the summed rate
        SourceKind::Poisson { rate } => poisson_times(&mut rng, rate + model.dark_rate, duration),
        SourceKind::Custom(sampler) => {
            let mut times = Vec::new();
            let mut t = 0.0;
            loop {
                let w = sampler.sample(&mut rng);
                if !(w >= 0.0) {
                    return Err(Error::arg(format!("waiting-time sampler returned {w}")));
                }
                t += w;
                if t > duration {
                    break;
                }
                times.push(t);
            }
            if model.dark_rate > 0.0 {
                let dark = poisson_times(&mut seeded_rng(seed, DARK_STREAM), model.dark_rate, duration);
                times = merge_sorted(&times, &dark);
            }
            times
        }
    };
    Ok(EventSequence {
        times,
        duration,
        source_rate: model.total_rate(),
        seed,
    })
}

fn poisson_times<R: Rng + ?Sized>(rng: &mut R, rate: f64, duration: f64) -> Vec<f64> {
    let exp = Exp::new(rate).expect("rate validated positive");
    let mut times = Vec::with_capacity((rate * duration * 1.05) as usize + 16);
    let mut t = 0.0;
    loop {
        t += exp.sample(rng);
        if t > duration {
            break;
        }
        times.push(t);
    }
    times
}

/// Stable merge; on equal times events from `a` come first.
fn merge_sorted(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        if b[j] < a[i] {
            out.push(b[j]);
            j += 1;
        } else {
            out.push(a[i]);
            i += 1;
        }
    }
    out.extend_from_slice(&a[i..]);
    out.extend_from_slice(&b[j..]);
    out
}

/// Sorted union of two sequences over the same window. Coincident timestamps
/// are kept as separate, adjacent events.
pub fn merge(a: &EventSequence, b: &EventSequence) -> Result<EventSequence> {
    if a.duration != b.duration {
        return Err(Error::arg(format!(
            "cannot merge sequences of different durations ({} s and {} s)",
            a.duration, b.duration
        )));
    }
    Ok(EventSequence {
        times: merge_sorted(&a.times, &b.times),
        duration: a.duration,
        source_rate: a.source_rate + b.source_rate,
        seed: a.seed,
    })
}

/// Kolmogorov-Smirnov distance between the samples and `Exp(rate)`.
pub fn ks_exponential(samples: &[f64], rate: f64) -> f64 {
    let mut xs = samples.to_vec();
    xs.sort_by(|a, b| a.total_cmp(b));
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let cdf = -(-rate * x).exp_m1();
            let lo = i as f64 / n;
            let hi = (i + 1) as f64 / n;
            (cdf - lo).abs().max((hi - cdf).abs())
        })
        .fold(0.0, f64::max)
}

/// Asymptotic KS critical value for sample size `n` at significance `alpha`.
pub fn ks_critical_value(n: usize, alpha: f64) -> f64 {
    (-0.5 * (alpha / 2.0).ln()).sqrt() / (n as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn poisson_count_within_five_sigma() {
        let seq = generate(&SourceModel::poisson(1e5), 1.0, 42).unwrap();
        assert!((seq.len() as f64 - 1e5).abs() < 5.0 * 1e5f64.sqrt());
        assert!(seq.times().windows(2).all(|w| w[0] < w[1]));
        assert!(seq.times().iter().all(|&t| (0.0..=1.0).contains(&t)));
    }

    #[test]
    fn dark_counts_add_to_rate() {
        let with_dark = generate(&SourceModel::poisson(1e5).with_dark_rate(1e3), 1.0, 3).unwrap();
        let merged_rate = generate(&SourceModel::poisson(1.01e5), 1.0, 3).unwrap();
        // same exponential rate, same random stream
        assert_eq!(with_dark.times(), merged_rate.times());
        assert_eq!(with_dark.source_rate, 1.01e5);
    }

    #[test]
    fn vanishing_rate_gives_empty_sequence() {
        let seq = generate(&SourceModel::poisson(1e-7), 1.0, 1).unwrap();
        assert!(seq.is_empty());
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(generate(&SourceModel::poisson(0.0), 1.0, 1).is_err());
        assert!(generate(&SourceModel::poisson(1.0), 0.0, 1).is_err());
        assert!(generate(&SourceModel::poisson(1.0).with_dark_rate(-1.0), 1.0, 1).is_err());
    }

    #[test]
    fn merge_identity_and_count() {
        let a = generate(&SourceModel::poisson(1e3), 1.0, 1).unwrap();
        let b = generate(&SourceModel::poisson(2e3), 1.0, 2).unwrap();
        let e = EventSequence::empty(1.0).unwrap();
        assert_eq!(merge(&a, &e).unwrap().times(), a.times());
        let m = merge(&a, &b).unwrap();
        assert_eq!(m.len(), a.len() + b.len());
        assert!(m.times().windows(2).all(|w| w[0] <= w[1]));
        let short = EventSequence::empty(0.5).unwrap();
        assert!(merge(&a, &short).is_err());
    }

    #[test]
    fn merge_keeps_ties() {
        let a = EventSequence::from_times(vec![0.1, 0.2], 1.0, 1.0, 0).unwrap();
        let b = EventSequence::from_times(vec![0.2, 0.3], 1.0, 1.0, 0).unwrap();
        assert_eq!(merge(&a, &b).unwrap().times(), &[0.1, 0.2, 0.2, 0.3]);
    }

    #[test]
    fn merged_streams_are_exponential_at_summed_rate() {
        let a = generate(&SourceModel::poisson(6e4), 1.0, 10).unwrap();
        let b = generate(&SourceModel::poisson(4e4), 1.0, 11).unwrap();
        let m = merge(&a, &b).unwrap();
        let d = ks_exponential(&m.waiting_times(), 1e5);
        assert!(d < ks_critical_value(m.len(), 1e-3), "KS distance {d}");
    }

    #[derive(Debug)]
    struct Periodic(f64);

    impl WaitingTimeSampler for Periodic {
        fn mean_rate(&self) -> f64 {
            1.0 / self.0
        }
        fn sample(&self, _rng: &mut dyn RngCore) -> f64 {
            self.0
        }
    }

    #[test]
    fn custom_sampler_with_dark_counts() {
        let model = SourceModel {
            kind: SourceKind::Custom(Arc::new(Periodic(0.01))),
            dark_rate: 50.0,
        };
        let seq = generate(&model, 1.0, 5).unwrap();
        assert!(seq.len() >= 99 + 20);
        assert!(seq.times().windows(2).all(|w| w[0] <= w[1]));
        assert_eq!(seq.source_rate, 150.0);
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let seq = generate(&SourceModel::poisson(1e3), 0.5, 77).unwrap();
        let mut buf = Vec::new();
        seq.write_csv(&mut buf).unwrap();
        let back = EventSequence::read_csv(buf.as_slice(), Path::new("mem")).unwrap();
        assert_eq!(back, seq);
    }

    #[test]
    fn csv_rejects_garbage() {
        let text = "# seed=1 source_rate=1 duration=1\nindex,time_seconds\n0,0.5\n2,0.6\n";
        let err = EventSequence::read_csv(text.as_bytes(), Path::new("x.csv")).unwrap_err();
        assert!(err.to_string().contains("line 4"), "{err}");
    }
}
