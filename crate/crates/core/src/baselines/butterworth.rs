//! Butterworth low-pass design and causal filtering.
//!
//! The analog prototype poles are warped and mapped through the bilinear
//! transform, paired into second-order sections with unity DC gain each.
//! Filtering is single-pass (causal) along time, as a streaming deployment
//! requires, with the filter state initialized to the steady-state response
//! of the first sample to suppress the edge transient.

use crate::data::PmuWindow;
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

#[derive(Debug, Clone, Copy, PartialEq)]
struct Complex {
    re: f64,
    im: f64,
}

impl Complex {
    fn new(re: f64, im: f64) -> Self {
        Complex { re, im }
    }

    fn add(self, o: Complex) -> Complex {
        Complex::new(self.re + o.re, self.im + o.im)
    }

    fn sub(self, o: Complex) -> Complex {
        Complex::new(self.re - o.re, self.im - o.im)
    }

    fn mul(self, o: Complex) -> Complex {
        Complex::new(
            self.re * o.re - self.im * o.im,
            self.re * o.im + self.im * o.re,
        )
    }

    fn div(self, o: Complex) -> Complex {
        let d = o.re * o.re + o.im * o.im;
        Complex::new(
            (self.re * o.re + self.im * o.im) / d,
            (self.im * o.re - self.re * o.im) / d,
        )
    }

    fn abs(self) -> f64 {
        self.re.hypot(self.im)
    }
}

/// One biquad: numerator (b0, b1, b2), denominator (1, a1, a2).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Biquad {
    pub b0: f64,
    pub b1: f64,
    pub b2: f64,
    pub a1: f64,
    pub a2: f64,
}

/// Cascade of second-order sections. All poles strictly inside the unit
/// circle (checked at design time).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SosFilter {
    pub sections: Vec<Biquad>,
    pub order: usize,
    pub cutoff_hz: f64,
    pub sample_rate_hz: f64,
}

/// Design an even-order Butterworth low-pass as a biquad cascade.
pub fn butter_design(order: usize, fc_hz: f64, fs_hz: f64) -> Result<SosFilter> {
    if order == 0 || order % 2 != 0 {
        return Err(Error::config(format!(
            "sos cascade needs an even order >= 2, got {order}"
        )));
    }
    if !(fc_hz > 0.0 && fc_hz < fs_hz / 2.0) {
        return Err(Error::config(format!(
            "cutoff {fc_hz} Hz must lie in (0, {}) for fs = {fs_hz}",
            fs_hz / 2.0
        )));
    }
    // Prewarp the cutoff so the bilinear transform lands it exactly.
    let warped = 2.0 * fs_hz * (PI * fc_hz / fs_hz).tan();
    let two_fs = Complex::new(2.0 * fs_hz, 0.0);
    let mut sections = Vec::with_capacity(order / 2);
    for k in 1..=order / 2 {
        // Analog prototype pole (upper half-plane of the conjugate pair).
        let theta = PI * (2 * k + order - 1) as f64 / (2 * order) as f64;
        let pole_s = Complex::new(warped * theta.cos(), warped * theta.sin());
        // Bilinear transform: z = (2 fs + s) / (2 fs - s).
        let pole_z = two_fs.add(pole_s).div(two_fs.sub(pole_s));
        let a1 = -2.0 * pole_z.re;
        let a2 = pole_z.mul(Complex::new(pole_z.re, -pole_z.im)).re; // |z|^2
        if pole_z.abs() >= 1.0 {
            return Err(Error::config(format!(
                "unstable section: pole magnitude {}",
                pole_z.abs()
            )));
        }
        // Zeros at z = -1: numerator (1 + z^-1)^2 scaled for unity DC gain.
        let g = (1.0 + a1 + a2) / 4.0;
        sections.push(Biquad {
            b0: g,
            b1: 2.0 * g,
            b2: g,
            a1,
            a2,
        });
    }
    Ok(SosFilter {
        sections,
        order,
        cutoff_hz: fc_hz,
        sample_rate_hz: fs_hz,
    })
}

/// |H(e^{j 2 pi f / fs})| by direct polynomial evaluation per section.
pub fn gain_at(filter: &SosFilter, f_hz: f64) -> f64 {
    let omega = 2.0 * PI * f_hz / filter.sample_rate_hz;
    let z1 = Complex::new(omega.cos(), -omega.sin()); // e^{-j w}
    let z2 = z1.mul(z1);
    let mut h = Complex::new(1.0, 0.0);
    for s in &filter.sections {
        let num = Complex::new(s.b0, 0.0)
            .add(z1.mul(Complex::new(s.b1, 0.0)))
            .add(z2.mul(Complex::new(s.b2, 0.0)));
        let den = Complex::new(1.0, 0.0)
            .add(z1.mul(Complex::new(s.a1, 0.0)))
            .add(z2.mul(Complex::new(s.a2, 0.0)));
        h = h.mul(num.div(den));
    }
    h.abs()
}

/// Largest pole magnitude across sections: sqrt(a2) for a conjugate pair.
pub fn max_pole_magnitude(filter: &SosFilter) -> f64 {
    filter
        .sections
        .iter()
        .map(|s| s.a2.max(0.0).sqrt())
        .fold(0.0, f64::max)
}

/// Run one series through the cascade (transposed direct form II), states
/// initialized to the steady-state response of the first sample.
fn filter_series(sections: &[Biquad], series: &mut [f64]) {
    if series.is_empty() {
        return;
    }
    // Per-section state registers, seeded so a constant input passes
    // through without any transient.
    let mut states: Vec<(f64, f64)> = Vec::with_capacity(sections.len());
    let mut level = series[0];
    for s in sections {
        let dc = (s.b0 + s.b1 + s.b2) / (1.0 + s.a1 + s.a2);
        let y = dc * level;
        let s1 = (dc - s.b0) * level;
        let s2 = s.b2 * level - s.a2 * y;
        states.push((s1, s2));
        level = y;
    }
    for v in series.iter_mut() {
        let mut x = *v;
        for (s, st) in sections.iter().zip(states.iter_mut()) {
            let y = s.b0 * x + st.0;
            st.0 = s.b1 * x - s.a1 * y + st.1;
            st.1 = s.b2 * x - s.a2 * y;
            x = y;
        }
        *v = x;
    }
}

/// Causal filtering along time, independently per (PMU, channel); reentrant
/// (all state is local).
pub fn lowpass_filter(window: &PmuWindow, filter: &SosFilter) -> PmuWindow {
    let (w, k) = window.dims();
    let channels = crate::data::NUM_CHANNELS;
    let mut out = window.clone();
    let mut series = vec![0.0; w];
    for pmu in 0..k {
        for c in 0..channels {
            for t in 0..w {
                series[t] = out.values().data()[out.values().idx3(t, pmu, c)];
            }
            filter_series(&filter.sections, &mut series);
            for t in 0..w {
                let idx = out.values().idx3(t, pmu, c);
                out.values_mut().data_mut()[idx] = series[t];
            }
        }
    }
    out
}
