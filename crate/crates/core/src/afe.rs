//! Photodiode analog front end: transimpedance amplifier response and
//! loop-stability analysis.

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Output rail of the amplifier stage, volts.
pub const SUPPLY_RAIL_V: f64 = 10.0;

/// TIA and photodiode component values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TiaParams {
    /// Feedback resistance, ohms.
    pub r_f: f64,
    /// Feedback capacitance, farads.
    pub c_f: f64,
    /// Photodiode shunt resistance, ohms.
    pub r_sh: f64,
    /// Photodiode junction capacitance, farads.
    pub c_pd: f64,
    /// Op-amp input capacitance, farads.
    pub c_i_amp: f64,
    /// Gain-bandwidth product, hertz.
    pub gbwp: f64,
    /// DC open-loop gain, dB.
    pub a_ol_db: f64,
}

impl Default for TiaParams {
    fn default() -> Self {
        Self {
            r_f: 100e3,
            c_f: 68e-12,
            r_sh: 250e9,
            c_pd: 200e-12,
            c_i_amp: 1.4e-12,
            gbwp: 1e6,
            a_ol_db: 106.0,
        }
    }
}

impl TiaParams {
    pub fn c_in(&self) -> f64 {
        self.c_pd + self.c_i_amp
    }

    pub fn time_constant(&self) -> f64 {
        self.r_f * self.c_f
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.r_f, self.c_f, self.r_sh, self.c_pd, self.c_i_amp, self.gbwp, self.a_ol_db];
        if all.iter().all(|v| v.is_finite() && *v > 0.0) {
            Ok(())
        } else {
            Err(Error::Input(format!("TIA parameters must be positive: {self:?}")))
        }
    }

    fn a_ol(&self) -> f64 {
        10f64.powf(self.a_ol_db / 20.0)
    }

    /// Noise-gain zero frequency, hertz.
    pub fn zero_frequency(&self) -> f64 {
        let r_par = self.r_f * self.r_sh / (self.r_f + self.r_sh);
        1.0 / (2.0 * PI * r_par * (self.c_f + self.c_in()))
    }

    /// Noise-gain pole frequency, hertz.
    pub fn pole_frequency(&self) -> f64 {
        1.0 / (2.0 * PI * self.time_constant())
    }
}

/// First-order TIA output for a current step `i_d` held for `t` seconds.
pub fn tia_step_response(i_d: f64, t: f64, p: &TiaParams) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    i_d * p.r_f * (1.0 - (-t / p.time_constant()).exp())
}

/// Output for a rectangular current pulse of width `pulse_width`, sampled at `t`.
fn pulse_response(i_d: f64, pulse_width: f64, t: f64, p: &TiaParams) -> f64 {
    if t <= pulse_width {
        tia_step_response(i_d, t, p)
    } else {
        tia_step_response(i_d, pulse_width, p) * (-(t - pulse_width) / p.time_constant()).exp()
    }
}

/// Diagnostic waveform: the TIA output for one rectangular pulse sampled at
/// `sample_rate` for `duration` seconds.
pub fn tia_waveform(i_d: f64, pulse_width: f64, sample_rate: f64, duration: f64, p: &TiaParams) -> Vec<(f64, f64)> {
    let n = (duration * sample_rate).floor() as usize + 1;
    (0..n)
        .map(|k| {
            let t = k as f64 / sample_rate;
            (t, pulse_response(i_d, pulse_width, t, p))
        })
        .collect()
}

/// Complex noise gain `(re, im)` at frequency `f`.
fn noise_gain_complex(f: f64, p: &TiaParams) -> (f64, f64) {
    let w = 2.0 * PI * f;
    let dc = (p.r_f + p.r_sh) / p.r_sh;
    let r_par = p.r_f * p.r_sh / (p.r_f + p.r_sh);
    let tz = r_par * (p.c_f + p.c_in());
    let tp = p.time_constant();
    // dc * (1 + j w tz) / (1 + j w tp)
    let den = 1.0 + (w * tp).powi(2);
    let re = (1.0 + w * w * tz * tp) / den;
    let im = w * (tz - tp) / den;
    (dc * re, dc * im)
}

/// Magnitude of the noise gain at `f` hertz.
pub fn noise_gain(f: f64, p: &TiaParams) -> f64 {
    let (re, im) = noise_gain_complex(f, p);
    re.hypot(im)
}

/// Q from phase margin (radians).
pub fn q_from_phase_margin(phase_margin: f64) -> f64 {
    let inv_tan2 = 1.0 / phase_margin.tan().powi(2);
    ((inv_tan2 + 0.5).powi(2) - 0.25).powf(0.25)
}

/// Loop-gain crossover frequency.
///
/// The single-pole open-loop gain is intersected with the rising (zero-only)
/// asymptote of the noise gain, which gives the classic TIA intersection
/// `f_i ≈ sqrt(GBWP * f_z)`.
pub fn crossover_frequency(p: &TiaParams) -> Result<f64> {
    p.validate()?;
    let a0 = p.a_ol();
    let f_ol = p.gbwp / a0;
    let dc = (p.r_f + p.r_sh) / p.r_sh;
    let f_z = p.zero_frequency();
    let open_loop = |f: f64| a0 / (1.0 + (f / f_ol).powi(2)).sqrt();
    let rising = |f: f64| dc * (1.0 + (f / f_z).powi(2)).sqrt();
    let g = |f: f64| open_loop(f).ln() - rising(f).ln();

    let (mut lo, mut hi) = (1e-6_f64, p.gbwp * 1e3);
    if g(lo) <= 0.0 || g(hi) >= 0.0 {
        return Err(Error::Analysis("open-loop gain never crosses the noise gain".into()));
    }
    // g is monotone decreasing; bisect in log frequency.
    for _ in 0..200 {
        let mid = (lo * hi).sqrt();
        if g(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok((lo * hi).sqrt())
}

/// Phase margin in radians at the loop-gain crossover.
pub fn phase_margin(p: &TiaParams) -> Result<f64> {
    let fc = crossover_frequency(p)?;
    let f_ol = p.gbwp / p.a_ol();
    let open_loop_phase = -(fc / f_ol).atan();
    let (re, im) = noise_gain_complex(fc, p);
    let loop_phase = open_loop_phase - im.atan2(re);
    Ok(PI + loop_phase)
}

/// Damping quality factor of the TIA feedback loop.
pub fn q_factor(p: &TiaParams) -> Result<f64> {
    Ok(q_from_phase_margin(phase_margin(p)?))
}

/// Peak voltages captured for one laser pulse.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PdSample {
    /// Pulse time relative to the start of the scan, seconds.
    pub time: f64,
    /// One peak voltage per sampled element, volts.
    pub voltages: Vec<f64>,
}

/// Per-scan recording from one photodetector array.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PdSignalRecord {
    pub pd_id: usize,
    pub scan_id: u64,
    /// Element indices the DAQ sampled, in column order of [`PdSample::voltages`].
    pub sampled_elements: Vec<usize>,
    pub samples: Vec<PdSample>,
    pub noise_floor: f64,
}

/// Per-element photocurrents of one pulse.
#[derive(Debug, Clone, PartialEq)]
pub struct PulseCurrents {
    pub time: f64,
    /// Current for every element of the array, amperes.
    pub currents: Vec<f64>,
}

/// Front-end capture settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CaptureSettings {
    /// Effective optical pulse width seen by the TIA, seconds.
    pub pulse_width: f64,
    /// Additive voltage noise, volts (1 sigma).
    pub noise_sigma: f64,
    /// Samples whose largest voltage stays below this level are not recorded.
    pub trigger_level: f64,
    pub noise_floor: f64,
}

impl Default for CaptureSettings {
    fn default() -> Self {
        Self {
            pulse_width: 3e-6,
            noise_sigma: 0.1,
            trigger_level: 0.3,
            noise_floor: 0.1,
        }
    }
}

/// Convert pulse currents to captured peak voltages for the sampled elements.
///
/// Each voltage is the TIA response at the end of the pulse plus Gaussian
/// noise, clamped to `[0, SUPPLY_RAIL_V]`.
pub fn currents_to_record(
    pd_id: usize,
    scan_id: u64,
    pulses: &[PulseCurrents],
    sampled_elements: &[usize],
    p: &TiaParams,
    capture: &CaptureSettings,
    seed: u64,
) -> Result<PdSignalRecord> {
    if capture.pulse_width <= 0.0 {
        return Err(Error::Input("pulse width must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, capture.noise_sigma.max(0.0))
        .map_err(|e| Error::Input(format!("noise sigma: {e}")))?;
    let mut samples = Vec::with_capacity(pulses.len());
    for pulse in pulses {
        let mut voltages = Vec::with_capacity(sampled_elements.len());
        for &el in sampled_elements {
            let i = *pulse
                .currents
                .get(el)
                .ok_or_else(|| Error::Input(format!("element {el} not in current vector")))?;
            let mut v = tia_step_response(i, capture.pulse_width, p);
            if capture.noise_sigma > 0.0 {
                v += noise.sample(&mut rng);
            }
            voltages.push(v.clamp(0.0, SUPPLY_RAIL_V));
        }
        if voltages.iter().cloned().fold(0.0, f64::max) >= capture.trigger_level {
            samples.push(PdSample {
                time: pulse.time,
                voltages,
            });
        }
    }
    Ok(PdSignalRecord {
        pd_id,
        scan_id,
        sampled_elements: sampled_elements.to_vec(),
        samples,
        noise_floor: capture.noise_floor,
    })
}
