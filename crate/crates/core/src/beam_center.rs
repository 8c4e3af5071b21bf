//! Sub-element beam-center estimation along a photodetector array.
//!
//! The spot profile across the array is Gaussian, so `ln(y)` is a quadratic
//! `a2 x^2 + a1 x + a0` in the element position. The fit solves the weighted
//! normal equations of that quadratic repeatedly, reweighting each sample by
//! the squared model prediction of the previous pass, which makes the
//! log-domain fit approach the ordinary least-squares Gaussian fit.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::afe::PdSignalRecord;
use crate::error::{Error, Result};

/// Default number of reweighting passes.
pub const DEFAULT_ITERATIONS: usize = 10;
/// Pseudo-samples appended on both sides of a 16 mm array, meters.
pub const AUGMENT_POSITIONS: [f64; 2] = [-0.005, 0.020];
/// Voltage of the pseudo-samples (roughly the noise level).
pub const AUGMENT_VALUE: f64 = 0.1;
/// Pulses closer than this belong to the same beam event.
pub const EVENT_MERGE_WINDOW: f64 = 10e-6;
/// Convergence threshold on the change of `mu` between passes, meters.
const CONVERGENCE_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianFitResult {
    /// Beam center along the array, meters.
    pub mu: f64,
    /// Spot standard deviation, meters.
    pub sigma: f64,
    /// Peak of the fitted profile, volts.
    pub amplitude: f64,
    pub iterations_used: usize,
    pub converged: bool,
    /// `mu` after each pass.
    pub mu_trace: Vec<f64>,
}

/// Positions and voltages for one beam, with augmentation bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    /// `true` for pseudo-samples added by [`augment_samples`].
    pub synthetic: Vec<bool>,
}

impl SampleSet {
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        if x.len() != y.len() {
            return Err(Error::Input(format!(
                "{} positions but {} voltages",
                x.len(),
                y.len()
            )));
        }
        let synthetic = vec![false; x.len()];
        Ok(Self { x, y, synthetic })
    }

    /// Measured samples with every voltage raised to at least `floor`.
    pub fn clamped(x: Vec<f64>, y: Vec<f64>, floor: f64) -> Result<Self> {
        let y = y.into_iter().map(|v| v.max(floor)).collect();
        Self::new(x, y)
    }

    pub fn is_augmented(&self) -> bool {
        self.synthetic.iter().any(|&s| s)
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }
}

/// Append the two pseudo-samples at −5 mm and 20 mm. Fails if already applied.
pub fn augment_samples(mut s: SampleSet) -> Result<SampleSet> {
    if s.is_augmented() {
        return Err(Error::Input("samples are already augmented".into()));
    }
    for x in AUGMENT_POSITIONS {
        s.x.push(x);
        s.y.push(AUGMENT_VALUE);
        s.synthetic.push(true);
    }
    Ok(s)
}

/// Iterative log-quadratic Gaussian fit; every sample is reweighted by the
/// model prediction after the first pass.
pub fn fit_gaussian_iterative(x: &[f64], y: &[f64], k_max: usize) -> Result<GaussianFitResult> {
    let fixed = vec![false; x.len()];
    fit_core(x, y, &fixed, k_max, Synthetic::Fixed)
}

/// Same fit for an augmented sample set. Pseudo-samples anchor the first
/// pass with their own voltage as weight and are dropped afterwards, so a
/// clean Gaussian is recovered exactly. If the measured samples alone cannot
/// carry the refinement, the pseudo-samples keep that fixed weight on every
/// pass instead.
pub fn fit_gaussian_samples(s: &SampleSet, k_max: usize) -> Result<GaussianFitResult> {
    fit_core(&s.x, &s.y, &s.synthetic, k_max, Synthetic::SeedOnly).or_else(|_| fit_core(&s.x, &s.y, &s.synthetic, k_max, Synthetic::Fixed))
}

#[derive(Clone, Copy, PartialEq)]
enum Synthetic {
    Fixed,
    SeedOnly,
}

fn fit_core(x: &[f64], y: &[f64], fixed: &[bool], k_max: usize, synthetic: Synthetic) -> Result<GaussianFitResult> {
    if x.len() != y.len() {
        return Err(Error::Input("x and y differ in length".into()));
    }
    if k_max == 0 {
        return Err(Error::Input("need at least one iteration".into()));
    }
    if y.iter().filter(|&&v| v > 0.0).count() < 3 {
        return Err(Error::Fit("fewer than 3 positive samples".into()));
    }
    if y.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
        return Err(Error::Fit("non-positive voltage; clamp before fitting".into()));
    }
    let (x_min, x_max) = x
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let center = 0.5 * (x_min + x_max);
    let scale = 0.5 * (x_max - x_min);
    if !(scale > 0.0) {
        return Err(Error::Fit("sample positions are not distinct".into()));
    }
    // Work on conditioned coordinates u = (x - center) / scale.
    let u: Vec<f64> = x.iter().map(|&v| (v - center) / scale).collect();
    let ln_y: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let mut weights: Vec<f64> = y.to_vec();

    let mut trace = Vec::with_capacity(k_max);
    let mut coeffs = Vector3::zeros();
    for _ in 0..k_max {
        let mut m = Matrix3::zeros();
        let mut rhs = Vector3::zeros();
        for i in 0..u.len() {
            let w = weights[i] * weights[i];
            let (u1, u2) = (u[i], u[i] * u[i]);
            let basis = Vector3::new(u2, u1, 1.0);
            m += w * basis * basis.transpose();
            rhs += w * ln_y[i] * basis;
        }
        coeffs = m
            .lu()
            .solve(&rhs)
            .filter(|c| c.iter().all(|v| v.is_finite()))
            .ok_or_else(|| Error::Fit("singular normal matrix".into()))?;
        if coeffs[0] >= 0.0 {
            return Err(Error::Fit(format!("log profile is not concave (a2 = {})", coeffs[0])));
        }
        trace.push(center + scale * (-coeffs[1] / (2.0 * coeffs[0])));
        for i in 0..u.len() {
            if !fixed[i] {
                weights[i] = (coeffs[0] * u[i] * u[i] + coeffs[1] * u[i] + coeffs[2]).exp();
            } else if synthetic == Synthetic::SeedOnly {
                weights[i] = 0.0;
            }
        }
    }
    let (a2, a1, a0) = (coeffs[0], coeffs[1], coeffs[2]);
    let var_u = -1.0 / (2.0 * a2);
    let mu_u = a1 * var_u;
    let amplitude = (a0 - a1 * a1 / (4.0 * a2)).exp();
    let mu = center + scale * mu_u;
    let sigma = scale * var_u.sqrt();
    let converged = match trace.len() {
        n if n >= 2 => (trace[n - 1] - trace[n - 2]).abs() < CONVERGENCE_TOL,
        _ => true,
    };
    if mu < x_min - 0.005 || mu > x_max + 0.005 {
        return Err(Error::Fit(format!("center {mu} outside the fitted span")));
    }
    Ok(GaussianFitResult {
        mu,
        sigma,
        amplitude,
        iterations_used: trace.len(),
        converged,
        mu_trace: trace,
    })
}

/// Index of the fit whose center is closest to `target`; earlier beams win ties.
pub fn select_key_beam(fits: &[Option<GaussianFitResult>], target: f64) -> Result<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, fit) in fits.iter().enumerate() {
        if let Some(f) = fit {
            let d = (f.mu - target).abs();
            if best.map_or(true, |(_, bd)| d < bd) {
                best = Some((i, d));
            }
        }
    }
    best.map(|(i, _)| i)
        .ok_or_else(|| Error::Selection(format!("all {} fits failed", fits.len())))
}

/// One laser pulse (or a merged group of near-simultaneous pulses) on a PD.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamEvent {
    pub time: f64,
    pub voltages: Vec<f64>,
}

impl BeamEvent {
    pub fn total(&self) -> f64 {
        self.voltages.iter().sum()
    }

    pub fn peak(&self) -> f64 {
        self.voltages.iter().cloned().fold(0.0, f64::max)
    }
}

/// Split a record into beam events. Samples within `merge_window` of the
/// previous one join its event, keeping the element-wise maximum.
pub fn beams_on_pd(record: &PdSignalRecord, merge_window: f64) -> Vec<BeamEvent> {
    let mut samples: Vec<_> = record.samples.iter().collect();
    samples.sort_by(|a, b| a.time.total_cmp(&b.time));
    let mut events: Vec<BeamEvent> = Vec::new();
    let mut last_time = f64::NEG_INFINITY;
    for s in samples {
        match events.last_mut() {
            Some(ev) if s.time - last_time < merge_window => {
                for (v, &n) in ev.voltages.iter_mut().zip(&s.voltages) {
                    *v = v.max(n);
                }
            }
            _ => events.push(BeamEvent {
                time: s.time,
                voltages: s.voltages.clone(),
            }),
        }
        last_time = s.time;
    }
    events
}
