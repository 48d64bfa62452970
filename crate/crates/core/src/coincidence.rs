//! Accidental-coincidence rates between two asynchronous detectors.
//!
//! With singles rates `S1`, `S2` and digital pulse widths `tau1`, `tau2`, the
//! textbook estimate is `S1 S2 (tau1 + tau2)`. The duty-cycle corrected form
//! divides each width by the effective duty cycle of its detector:
//! `S1 S2 (tau1 / eta1 + tau2 / eta2)`. Regrouped as
//! `S2 (S1 tau1 / eta1) + S1 (S2 tau2 / eta2)`, `S_i / eta_i` reads as the rate
//! of incoming events on detector `i`; it is the same expression.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lut::DutyCycleTable;
use crate::scalar::Scalar;

fn check_non_negative<T: Scalar>(name: &str, v: T) -> Result<()> {
    if v >= T::zero() && v.is_finite() {
        Ok(())
    } else {
        Err(Error::arg(format!("{name} must be >= 0, got {v}")))
    }
}

fn check_eta<T: Scalar>(name: &str, eta: T) -> Result<()> {
    if eta > T::zero() && eta <= T::one() {
        Ok(())
    } else {
        Err(Error::arg(format!("{name} must lie in (0, 1], got {eta}")))
    }
}

/// `S1 S2 (tau1 + tau2)`.
pub fn accidentals_naive<T: Scalar>(s1: T, s2: T, tau1: T, tau2: T) -> Result<T> {
    check_non_negative("s1", s1)?;
    check_non_negative("s2", s2)?;
    check_non_negative("tau1", tau1)?;
    check_non_negative("tau2", tau2)?;
    Ok(s1 * s2 * (tau1 + tau2))
}

/// `S1 S2 (tau1 / eta1 + tau2 / eta2)`. Reduces bit-for-bit to
/// [`accidentals_naive`] when both duty cycles are 1.
pub fn accidentals_corrected<T: Scalar>(s1: T, s2: T, tau1: T, tau2: T, eta1: T, eta2: T) -> Result<T> {
    check_non_negative("s1", s1)?;
    check_non_negative("s2", s2)?;
    check_non_negative("tau1", tau1)?;
    check_non_negative("tau2", tau2)?;
    check_eta("eta1", eta1)?;
    check_eta("eta2", eta2)?;
    Ok(s1 * s2 * (tau1 / eta1 + tau2 / eta2))
}

/// Observed rates of one coincidence measurement, SI units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoincidenceMeasurement {
    pub s1: f64,
    pub s2: f64,
    pub tau1: f64,
    pub tau2: f64,
    pub c_raw: f64,
    /// Operating points for table lookups.
    pub v_e1: Option<f64>,
    pub v_e2: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrectionResult {
    pub c_acc_naive: f64,
    pub c_acc_corrected: f64,
    /// `c_raw - c_acc_corrected`; not clamped.
    pub c_corrected: f64,
    pub eta1: f64,
    pub eta2: f64,
    /// Set when the corrected rate came out negative.
    pub negative: bool,
}

impl CoincidenceMeasurement {
    /// Applies both formulas with known duty cycles.
    pub fn correct_with_eta(&self, eta1: f64, eta2: f64) -> Result<CorrectionResult> {
        check_non_negative("c_raw", self.c_raw)?;
        let naive = accidentals_naive(self.s1, self.s2, self.tau1, self.tau2)?;
        let corrected = accidentals_corrected(self.s1, self.s2, self.tau1, self.tau2, eta1, eta2)?;
        let c_corrected = self.c_raw - corrected;
        Ok(CorrectionResult {
            c_acc_naive: naive,
            c_acc_corrected: corrected,
            c_corrected,
            eta1,
            eta2,
            negative: c_corrected < 0.0,
        })
    }

    /// Looks up each detector's duty cycle at its observed singles rate.
    pub fn correct_pair(&self, table1: &DutyCycleTable, table2: &DutyCycleTable) -> Result<CorrectionResult> {
        let eta1 = lookup_arm(table1, self.v_e1, self.s1).map_err(|e| e.for_arm("detector 1"))?;
        let eta2 = lookup_arm(table2, self.v_e2, self.s2).map_err(|e| e.for_arm("detector 2"))?;
        self.correct_with_eta(eta1, eta2)
    }
}

fn lookup_arm(table: &DutyCycleTable, v_e: Option<f64>, rate: f64) -> Result<f64> {
    let v_e = v_e.ok_or_else(|| Error::arg("operating excess voltage required for table lookup"))?;
    table.lookup_eta(v_e, rate)
}

/// Corrects a measurement with one table shared by both detectors.
pub fn correct(measurement: &CoincidenceMeasurement, table: &DutyCycleTable) -> Result<CorrectionResult> {
    measurement.correct_pair(table, table)
}
