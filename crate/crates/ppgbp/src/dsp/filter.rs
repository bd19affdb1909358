//! Butterworth bandpass design (analog prototype + bilinear transform) and
//! zero-phase forward-backward application.
//!
//! The designer produces a cascade of second-order sections. Poles and zeros
//! are derived exactly as in the classic analog-prototype route: normalized
//! lowpass prototype, lowpass-to-bandpass transform at the pre-warped band
//! edges, then the bilinear transform back to the z-domain.

use num_complex::Complex64;
use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Bandpass design parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterSpec {
    /// Analog prototype order; the realized digital bandpass has order `2 * order`.
    pub order: usize,
    /// Lower band edge in Hz.
    pub f_low: f64,
    /// Upper band edge in Hz.
    pub f_high: f64,
    /// Sampling rate in Hz.
    pub fs: f64,
}

impl FilterSpec {
    pub fn new(order: usize, f_low: f64, f_high: f64, fs: f64) -> Result<Self> {
        let spec = FilterSpec {
            order,
            f_low,
            f_high,
            fs,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.order < 2 || self.order % 2 != 0 {
            return Err(Error::Config(format!(
                "filter order must be even and >= 2, got {}",
                self.order
            )));
        }
        if !(self.fs > 0.0) {
            return Err(Error::Config(format!("sampling rate must be > 0, got {}", self.fs)));
        }
        if !(self.f_low > 0.0) {
            return Err(Error::Config(format!(
                "lower band edge must be > 0 Hz, got {}",
                self.f_low
            )));
        }
        if !(self.f_low < self.f_high) {
            return Err(Error::Config(format!(
                "band edges must satisfy f_low < f_high, got {} >= {}",
                self.f_low, self.f_high
            )));
        }
        if !(self.f_high < self.fs / 2.0) {
            return Err(Error::Config(format!(
                "upper band edge must be below Nyquist ({} Hz), got {}",
                self.fs / 2.0,
                self.f_high
            )));
        }
        Ok(())
    }
}

impl Default for FilterSpec {
    /// 4th-order 0.5-8 Hz bandpass at 125 Hz.
    fn default() -> Self {
        FilterSpec {
            order: 4,
            f_low: 0.5,
            f_high: 8.0,
            fs: 125.0,
        }
    }
}

/// One normalized second-order section: `b` numerator, `a` denominator, `a[0] == 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 3],
}

impl Biquad {
    /// Schur-Cohn stability test for `z^2 + a1 z + a2`.
    pub fn is_stable(&self) -> bool {
        let a1 = self.a[1];
        let a2 = self.a[2];
        a2.abs() < 1.0 && a1.abs() < 1.0 + a2
    }
}

/// Cascade of second-order sections realizing the designed bandpass.
#[derive(Debug, Clone, PartialEq)]
pub struct IirCoefficients {
    pub sections: Vec<Biquad>,
}

impl IirCoefficients {
    /// Total order of the realized digital filter.
    pub fn total_order(&self) -> usize {
        2 * self.sections.len()
    }

    pub fn is_stable(&self) -> bool {
        self.sections.iter().all(Biquad::is_stable)
    }
}

/// Designs a Butterworth bandpass as a stable cascade of second-order sections.
///
/// Frequencies are pre-warped before the bilinear transform so the -3 dB
/// points land on `f_low` and `f_high`.
pub fn design_bandpass(spec: &FilterSpec) -> Result<IirCoefficients> {
    spec.validate()?;
    let n = spec.order;

    // Normalized band edges in (0, 1), then pre-warped analog frequencies.
    // The internal sampling rate is fixed at 2 as in the classic formulation.
    let wn = [2.0 * spec.f_low / spec.fs, 2.0 * spec.f_high / spec.fs];
    let fs2 = 2.0;
    let warped = [
        2.0 * fs2 * (PI * wn[0] / fs2).tan(),
        2.0 * fs2 * (PI * wn[1] / fs2).tan(),
    ];

    // Analog Butterworth prototype: n poles on the unit circle, no zeros, k = 1.
    let mut proto_poles = Vec::with_capacity(n);
    let mut m = -(n as i64) + 1;
    while m < n as i64 {
        let theta = PI * m as f64 / (2.0 * n as f64);
        proto_poles.push(-Complex64::new(0.0, theta).exp());
        m += 2;
    }

    // Lowpass-to-bandpass: each prototype pole splits into two.
    let bw = warped[1] - warped[0];
    let wo = (warped[0] * warped[1]).sqrt();
    let mut bp_poles = Vec::with_capacity(2 * n);
    for p in &proto_poles {
        let p_lp = p * (bw / 2.0);
        let root = (p_lp * p_lp - wo * wo).sqrt();
        bp_poles.push(p_lp + root);
        bp_poles.push(p_lp - root);
    }
    // n zeros at s = 0, gain bw^n.
    let k_bp = bw.powi(n as i32);

    // Bilinear transform at fs2: z = (4 + s) / (4 - s).
    let four = Complex64::new(2.0 * fs2, 0.0);
    let z_poles: Vec<Complex64> = bp_poles.iter().map(|p| (four + p) / (four - p)).collect();
    // The n zeros at s = 0 map to z = +1; the n zeros at infinity map to z = -1.
    // Gain compensation: k * prod(4 - s_zeros) / prod(4 - s_poles), zeros all at 0.
    let denom_prod = bp_poles
        .iter()
        .fold(Complex64::new(1.0, 0.0), |acc, p| acc * (four - p));
    let k_z = k_bp * ((2.0 * fs2).powi(n as i32) / denom_prod).re;

    let sections = pair_into_sections(&z_poles, k_z, n)?;
    let coeffs = IirCoefficients { sections };
    if !coeffs.is_stable() {
        return Err(Error::Config(format!(
            "designed filter is unstable for spec {:?}",
            spec
        )));
    }
    Ok(coeffs)
}

/// Groups the 2n bandpass poles into n conjugate-pair sections, each taking
/// one zero at z = +1 and one at z = -1 (numerator `[1, 0, -1]` before gain).
fn pair_into_sections(poles: &[Complex64], gain: f64, n_sections: usize) -> Result<Vec<Biquad>> {
    const IM_TOL: f64 = 1e-10;
    let mut upper: Vec<Complex64> = poles.iter().copied().filter(|p| p.im > IM_TOL).collect();
    let mut real: Vec<f64> = poles
        .iter()
        .filter(|p| p.im.abs() <= IM_TOL)
        .map(|p| p.re)
        .collect();

    upper.sort_by(|a, b| {
        a.norm()
            .partial_cmp(&b.norm())
            .unwrap()
            .then(a.re.partial_cmp(&b.re).unwrap())
    });
    real.sort_by(|a, b| a.partial_cmp(b).unwrap());

    let mut denominators: Vec<[f64; 3]> = Vec::with_capacity(n_sections);
    for p in &upper {
        denominators.push([1.0, -2.0 * p.re, p.norm_sqr()]);
    }
    for pair in real.chunks(2) {
        if pair.len() != 2 {
            return Err(Error::Config(
                "pole pairing failed: odd real pole count".into(),
            ));
        }
        denominators.push([1.0, -(pair[0] + pair[1]), pair[0] * pair[1]]);
    }
    if denominators.len() != n_sections {
        return Err(Error::Config(format!(
            "pole pairing failed: expected {} sections, got {}",
            n_sections,
            denominators.len()
        )));
    }

    // Distribute |gain| geometrically across sections; sign goes to the first.
    let per_section = gain.abs().powf(1.0 / n_sections as f64);
    let sections = denominators
        .into_iter()
        .enumerate()
        .map(|(i, a)| {
            let g = if i == 0 && gain < 0.0 {
                -per_section
            } else {
                per_section
            };
            Biquad {
                b: [g, 0.0, -g],
                a,
            }
        })
        .collect();
    Ok(sections)
}

/// Runs the cascade over `x` in direct form II transposed, one pass.
/// `zi` supplies per-section initial state `[z1, z2]`.
pub fn sosfilt(sections: &[Biquad], x: &[f64], zi: Option<&[[f64; 2]]>) -> Vec<f64> {
    let mut y = x.to_vec();
    for (si, s) in sections.iter().enumerate() {
        let [b0, b1, b2] = s.b;
        let [_, a1, a2] = s.a;
        let (mut z1, mut z2) = match zi {
            Some(states) => (states[si][0], states[si][1]),
            None => (0.0, 0.0),
        };
        for v in y.iter_mut() {
            let x_in = *v;
            let out = b0 * x_in + z1;
            z1 = b1 * x_in - a1 * out + z2;
            z2 = b2 * x_in - a2 * out;
            *v = out;
        }
    }
    y
}

/// Per-section steady-state response to a unit step, chained through the
/// cascade. Scaling these states by the first input sample removes the
/// startup transient for signals that begin at a settled level.
fn step_initial_state(sections: &[Biquad]) -> Vec<[f64; 2]> {
    let mut states = Vec::with_capacity(sections.len());
    let mut u = 1.0;
    for s in sections {
        let [b0, b1, b2] = s.b;
        let [_, a1, a2] = s.a;
        let denom = 1.0 + a1 + a2;
        let y_ss = if denom.abs() < 1e-300 {
            0.0
        } else {
            u * (b0 + b1 + b2) / denom
        };
        let z2 = b2 * u - a2 * y_ss;
        let z1 = b1 * u - a1 * y_ss + z2;
        states.push([z1, z2]);
        u = y_ss;
    }
    states
}

/// Zero-phase filtering: forward pass, reverse, second pass, reverse.
///
/// The input is extended on both sides with `3 * total_order` reflected
/// samples and each pass starts from step-matched initial conditions, so the
/// output has no startup transient and no group delay.
pub fn apply_filter(signal: &[f64], coeffs: &IirCoefficients) -> Result<Vec<f64>> {
    let pad = 3 * coeffs.total_order();
    if signal.len() <= pad {
        return Err(Error::Rejection(format!(
            "signal too short for zero-phase filtering: {} samples, need > {}",
            signal.len(),
            pad
        )));
    }
    let n = signal.len();
    let mut ext = Vec::with_capacity(n + 2 * pad);
    for i in 0..pad {
        ext.push(signal[pad - i]);
    }
    ext.extend_from_slice(signal);
    for i in 0..pad {
        ext.push(signal[n - 2 - i]);
    }

    let zi_unit = step_initial_state(&coeffs.sections);
    let scale_zi = |x0: f64| -> Vec<[f64; 2]> {
        zi_unit.iter().map(|z| [z[0] * x0, z[1] * x0]).collect()
    };

    let forward = sosfilt(&coeffs.sections, &ext, Some(&scale_zi(ext[0])));
    let mut rev: Vec<f64> = forward.into_iter().rev().collect();
    let backward = sosfilt(&coeffs.sections, &rev, Some(&scale_zi(rev[0])));
    rev = backward.into_iter().rev().collect();
    Ok(rev[pad..pad + n].to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn default_coeffs() -> IirCoefficients {
        design_bandpass(&FilterSpec::default()).unwrap()
    }

    #[test]
    fn rejects_band_edge_at_nyquist() {
        let err = FilterSpec::new(4, 0.5, 70.0, 125.0).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn rejects_nonpositive_low_edge() {
        assert!(FilterSpec::new(4, 0.0, 8.0, 125.0).is_err());
        assert!(FilterSpec::new(4, -1.0, 8.0, 125.0).is_err());
    }

    #[test]
    fn rejects_odd_or_tiny_order() {
        assert!(FilterSpec::new(3, 0.5, 8.0, 125.0).is_err());
        assert!(FilterSpec::new(0, 0.5, 8.0, 125.0).is_err());
    }

    #[test]
    fn default_design_is_stable_with_expected_sections() {
        let c = default_coeffs();
        assert_eq!(c.sections.len(), 4);
        assert_eq!(c.total_order(), 8);
        assert!(c.is_stable());
        for s in &c.sections {
            assert_eq!(s.a[0], 1.0);
        }
    }

    #[test]
    fn constant_signal_is_fully_rejected() {
        let c = default_coeffs();
        let x = vec![5.0; 1000];
        let y = apply_filter(&x, &c).unwrap();
        assert_eq!(y.len(), x.len());
        let max = y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(max < 1e-3, "DC leak {max}");
    }

    #[test]
    fn too_short_signal_is_rejected() {
        let c = default_coeffs();
        let x = vec![0.0; 24];
        assert!(matches!(apply_filter(&x, &c), Err(Error::Rejection(_))));
        // One past the pad length works.
        let x = vec![0.0; 25];
        assert!(apply_filter(&x, &c).is_ok());
    }

    fn sine(f: f64, fs: f64, n: usize) -> Vec<f64> {
        (0..n)
            .map(|i| (2.0 * PI * f * i as f64 / fs).sin())
            .collect()
    }

    /// RMS-based amplitude estimate over the central 80% of the signal.
    fn central_amplitude(y: &[f64]) -> f64 {
        let n = y.len();
        let lo = n / 10;
        let hi = n - n / 10;
        let seg = &y[lo..hi];
        let power = seg.iter().map(|v| v * v).sum::<f64>() / seg.len() as f64;
        (2.0 * power).sqrt()
    }

    #[test]
    fn passband_tone_keeps_unit_amplitude() {
        let c = default_coeffs();
        let x = sine(2.0, 125.0, 1250);
        let y = apply_filter(&x, &c).unwrap();
        let amp = central_amplitude(&y);
        assert!((amp - 1.0).abs() <= 0.02, "2 Hz amplitude {amp}");
    }

    #[test]
    fn stopband_tone_is_suppressed() {
        // 30 s so the low-edge pole's onset transient has left the central region.
        let c = default_coeffs();
        let x = sine(30.0, 125.0, 3750);
        let y = apply_filter(&x, &c).unwrap();
        let n = y.len();
        let max = y[n / 10..n - n / 10]
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(max < 0.01, "30 Hz residual {max}");
    }

    #[test]
    fn zero_phase_in_band() {
        // Cross-correlation between input and output peaks at lag 0.
        let c = default_coeffs();
        let x = sine(2.0, 125.0, 2000);
        let y = apply_filter(&x, &c).unwrap();
        let center = &x[200..1800];
        let mut best_lag = i64::MIN;
        let mut best = f64::MIN;
        for lag in -10i64..=10 {
            let mut acc = 0.0;
            for (i, xv) in center.iter().enumerate() {
                let j = i as i64 + 200 + lag;
                acc += xv * y[j as usize];
            }
            if acc > best {
                best = acc;
                best_lag = lag;
            }
        }
        assert_eq!(best_lag, 0);
    }

    proptest! {
        #[test]
        fn designed_filters_are_stable(
            half_order in 1usize..=4,
            low_frac in 0.002f64..0.3,
            width_frac in 0.05f64..0.6,
            fs in 30.0f64..1000.0,
        ) {
            let nyq = fs / 2.0;
            let f_low = low_frac * nyq;
            let f_high = (low_frac + width_frac).min(0.98) * nyq;
            prop_assume!(f_low < f_high);
            let spec = FilterSpec::new(2 * half_order, f_low, f_high, fs).unwrap();
            let coeffs = design_bandpass(&spec).unwrap();
            prop_assert!(coeffs.is_stable());
            prop_assert_eq!(coeffs.sections.len(), 2 * half_order);
        }
    }
}
