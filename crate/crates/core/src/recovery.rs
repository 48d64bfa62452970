//! Recovery physics of a passively quenched Geiger-mode APD.
//!
//! After an avalanche the junction is discharged instantly and recharges
//! through the quench resistor:
//!
//! ```text
//! V_e(t) = V_set * (1 - exp(-t / RC))          excess voltage
//! P_a    = 1 - exp(-V_e / V_c)                 avalanche probability
//! V_s    = A * V_e^2                           mean pulse height
//! P_s(t) = Phi((V_s(t) - V_cld) / (sigma_rel * V_s(t)))   sensing
//! P_d(t) = P_s(t) * P_a(V_e(t))                detection probability
//! ```
//!
//! Pulse heights are Gaussian around `V_s` with relative spread `sigma_rel`,
//! so `P_s` is the chance that a pulse clears the discriminator. It is a
//! smoothed step through 1/2 at `t0`, the instant at which the mean pulse
//! height reaches `V_cld`, of width about `sigma_t` (the pulse spread at
//! threshold divided by the slope of `V_s` there).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{normal_cdf, Scalar};

/// Shape of the recovery curve.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum RecoveryKind<T> {
    /// RC recharge of the excess voltage with avalanche and sensing probabilities.
    #[default]
    ExponentialRecharge,
    /// Idealised detector: blind for `dead_time` after a detection, unit
    /// efficiency otherwise.
    StepwiseDeadTime { dead_time: T },
}

/// Per-device constants of a passively quenched detector. SI units throughout.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorParams<T> {
    /// Excess-voltage set-point, volts.
    pub v_e_set: T,
    /// Recharge time constant, seconds.
    pub rc_time: T,
    /// Characteristic voltage of the avalanche probability, volts.
    pub v_characteristic: T,
    /// Pulse height gain `A` in `V_s = A V_e^2`, 1/V.
    pub pulse_gain: T,
    /// Discriminator reference, volts.
    pub v_cld: T,
    /// Standard deviation of the pulse height as a fraction of its mean.
    pub sigma_rel: T,
    #[serde(default)]
    pub recovery_kind: RecoveryKind<T>,
}

impl<T: Scalar> DetectorParams<T> {
    /// Builds and validates an exponential-recharge parameter set.
    pub fn new(v_e_set: T, rc_time: T, v_characteristic: T, pulse_gain: T, v_cld: T, sigma_rel: T) -> Result<Self> {
        let p = Self {
            v_e_set,
            rc_time,
            v_characteristic,
            pulse_gain,
            v_cld,
            sigma_rel,
            recovery_kind: RecoveryKind::ExponentialRecharge,
        };
        p.validate()?;
        Ok(p)
    }

    /// Reference device: 15 V set-point, 5 V characteristic voltage, 1 us
    /// recharge, 15 % pulse spread, 2.25 V full-height pulses and a 1 V
    /// discriminator, crossed at 10 V excess (about 1.1 us after an avalanche).
    pub fn reference() -> Self {
        Self {
            v_e_set: T::lit(15.0),
            rc_time: T::lit(1e-6),
            v_characteristic: T::lit(5.0),
            pulse_gain: T::lit(0.01),
            v_cld: T::lit(1.0),
            sigma_rel: T::lit(0.15),
            recovery_kind: RecoveryKind::ExponentialRecharge,
        }
    }

    pub fn with_v_e_set(mut self, v_e_set: T) -> Result<Self> {
        self.v_e_set = v_e_set;
        self.validate()?;
        Ok(self)
    }

    pub fn with_recovery_kind(mut self, kind: RecoveryKind<T>) -> Result<Self> {
        self.recovery_kind = kind;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let pos = |name: &str, v: T| {
            if v.is_finite() && v > T::zero() {
                Ok(())
            } else {
                Err(Error::InvalidParams(format!("{name} must be > 0, got {v}")))
            }
        };
        pos("v_e_set", self.v_e_set)?;
        pos("rc_time", self.rc_time)?;
        pos("v_characteristic", self.v_characteristic)?;
        pos("pulse_gain", self.pulse_gain)?;
        if !(self.v_cld.is_finite() && self.v_cld >= T::zero()) {
            return Err(Error::InvalidParams(format!("v_cld must be >= 0, got {}", self.v_cld)));
        }
        if !(self.sigma_rel > T::zero() && self.sigma_rel < T::one()) {
            return Err(Error::InvalidParams(format!(
                "sigma_rel must lie in (0, 1), got {}",
                self.sigma_rel
            )));
        }
        if self.threshold_excess_voltage() >= self.v_e_set {
            return Err(Error::InvalidParams(format!(
                "a recharged detector never reaches the discriminator: \
                 sqrt(v_cld / pulse_gain) = {} V >= v_e_set = {} V",
                self.threshold_excess_voltage(),
                self.v_e_set
            )));
        }
        if let RecoveryKind::StepwiseDeadTime { dead_time } = self.recovery_kind {
            if !(dead_time.is_finite() && dead_time >= T::zero()) {
                return Err(Error::InvalidParams(format!("dead_time must be >= 0, got {dead_time}")));
            }
        }
        Ok(())
    }

    /// Excess voltage at which the mean pulse height equals `v_cld`.
    pub fn threshold_excess_voltage(&self) -> T {
        (self.v_cld / self.pulse_gain).sqrt()
    }

    pub fn excess_voltage(&self, t: T) -> Result<T> {
        non_negative("elapsed time", t)?;
        Ok(self.excess_voltage_unchecked(t))
    }

    pub(crate) fn excess_voltage_unchecked(&self, t: T) -> T {
        -self.v_e_set * (-t / self.rc_time).exp_m1()
    }

    pub fn avalanche_probability(&self, v_e: T) -> Result<T> {
        non_negative("excess voltage", v_e)?;
        Ok(self.avalanche_probability_unchecked(v_e))
    }

    pub(crate) fn avalanche_probability_unchecked(&self, v_e: T) -> T {
        -(-v_e / self.v_characteristic).exp_m1()
    }

    pub fn pulse_height_mean(&self, v_e: T) -> Result<T> {
        non_negative("excess voltage", v_e)?;
        Ok(self.pulse_height_mean_unchecked(v_e))
    }

    pub(crate) fn pulse_height_mean_unchecked(&self, v_e: T) -> T {
        self.pulse_gain * v_e * v_e
    }

    /// Time after an avalanche at which the mean pulse height reaches `v_cld`.
    pub fn threshold_crossing_time(&self) -> T {
        let frac = self.threshold_excess_voltage() / self.v_e_set;
        -self.rc_time * (-frac).ln_1p()
    }

    /// Width of the sensing transition in time: the pulse height spread at
    /// threshold divided by the slope of the mean pulse height there.
    /// Zero when `v_cld == 0`.
    pub fn sense_time_width(&self) -> T {
        let v_th = self.threshold_excess_voltage();
        if v_th <= T::zero() {
            return T::zero();
        }
        // d/dt (A V_e^2) = 2 A V_e (V_set - V_e) / RC
        let slope = T::lit(2.0) * self.pulse_gain * v_th * (self.v_e_set - v_th) / self.rc_time;
        self.sigma_rel * self.v_cld / slope
    }

    pub fn sense_probability(&self, t: T) -> Result<T> {
        non_negative("elapsed time", t)?;
        Ok(self.sense_probability_unchecked(t))
    }

    pub(crate) fn sense_probability_unchecked(&self, t: T) -> T {
        self.pulse_sensed_probability(self.excess_voltage_unchecked(t))
    }

    /// Probability that an avalanche at excess voltage `v_e` produces a pulse
    /// at or above the discriminator level.
    pub fn pulse_sensed_probability(&self, v_e: T) -> T {
        if self.v_cld <= T::zero() {
            return T::one();
        }
        let mean = self.pulse_height_mean_unchecked(v_e);
        if mean <= T::zero() {
            return T::zero();
        }
        normal_cdf((mean - self.v_cld) / (self.sigma_rel * mean))
    }

    pub fn detection_probability(&self, t: T) -> Result<T> {
        non_negative("elapsed time", t)?;
        Ok(self.detection_probability_unchecked(t))
    }

    pub(crate) fn detection_probability_unchecked(&self, t: T) -> T {
        match self.recovery_kind {
            RecoveryKind::StepwiseDeadTime { dead_time } => {
                if t < dead_time {
                    T::zero()
                } else {
                    T::one()
                }
            }
            RecoveryKind::ExponentialRecharge => {
                let v = self.excess_voltage_unchecked(t);
                self.pulse_sensed_probability(v) * self.avalanche_probability_unchecked(v)
            }
        }
    }

    /// Limit of the detection probability for a fully recharged detector.
    pub fn recharged_detection_probability(&self) -> T {
        match self.recovery_kind {
            RecoveryKind::StepwiseDeadTime { .. } => T::one(),
            RecoveryKind::ExponentialRecharge => {
                self.pulse_sensed_probability(self.v_e_set) * self.avalanche_probability_unchecked(self.v_e_set)
            }
        }
    }
}

fn non_negative<T: Scalar>(what: &str, v: T) -> Result<()> {
    if v >= T::zero() {
        Ok(())
    } else {
        Err(Error::arg(format!("{what} must be >= 0, got {v}")))
    }
}
