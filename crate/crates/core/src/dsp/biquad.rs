//! Second-order sections and Butterworth band-pass cascades.

use std::f64::consts::PI;

/// Normalized biquad (`a0 = 1`) in transposed direct form II.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    b0: f64,
    b1: f64,
    b2: f64,
    a1: f64,
    a2: f64,
    z1: f64,
    z2: f64,
}

impl Biquad {
    fn normalized(b: [f64; 3], a: [f64; 3]) -> Self {
        Biquad { b0: b[0] / a[0], b1: b[1] / a[0], b2: b[2] / a[0], a1: a[1] / a[0], a2: a[2] / a[0], z1: 0.0, z2: 0.0 }
    }

    pub fn lowpass(cutoff_hz: f64, rate_hz: f64, q: f64) -> Self {
        let w0 = 2.0 * PI * cutoff_hz / rate_hz;
        let (sin, cos) = w0.sin_cos();
        let alpha = sin / (2.0 * q);
        Self::normalized([(1.0 - cos) / 2.0, 1.0 - cos, (1.0 - cos) / 2.0], [1.0 + alpha, -2.0 * cos, 1.0 - alpha])
    }

    pub fn highpass(cutoff_hz: f64, rate_hz: f64, q: f64) -> Self {
        let w0 = 2.0 * PI * cutoff_hz / rate_hz;
        let (sin, cos) = w0.sin_cos();
        let alpha = sin / (2.0 * q);
        Self::normalized([(1.0 + cos) / 2.0, -(1.0 + cos), (1.0 + cos) / 2.0], [1.0 + alpha, -2.0 * cos, 1.0 - alpha])
    }

    #[inline]
    pub fn process(&mut self, x: f64) -> f64 {
        let y = self.b0 * x + self.z1;
        self.z1 = self.b1 * x - self.a1 * y + self.z2;
        self.z2 = self.b2 * x - self.a2 * y;
        y
    }

    pub fn reset(&mut self) {
        self.z1 = 0.0;
        self.z2 = 0.0;
    }

    /// Complex gain magnitude at `f_hz`, evaluated from the coefficients.
    pub fn magnitude_at(&self, f_hz: f64, rate_hz: f64) -> f64 {
        let w = 2.0 * PI * f_hz / rate_hz;
        let (s1, c1) = w.sin_cos();
        let (s2, c2) = (2.0 * w).sin_cos();
        let num = ((self.b0 + self.b1 * c1 + self.b2 * c2).powi(2) + (self.b1 * s1 + self.b2 * s2).powi(2)).sqrt();
        let den = ((1.0 + self.a1 * c1 + self.a2 * c2).powi(2) + (self.a1 * s1 + self.a2 * s2).powi(2)).sqrt();
        num / den
    }
}

/// Q factors of the biquads realizing an even-order Butterworth section.
fn butterworth_qs(order: usize) -> Vec<f64> {
    (0..order / 2).map(|k| 1.0 / (2.0 * ((2 * k + 1) as f64 * PI / (2 * order) as f64).sin())).collect()
}

/// A chain of biquads with state carried across calls.
#[derive(Debug, Clone, PartialEq)]
pub struct Cascade {
    sections: Vec<Biquad>,
}

impl Cascade {
    /// Butterworth band-pass of total order `order` (a multiple of 4): a
    /// high-pass of order `order/2` at `lo_hz` followed by a low-pass of the
    /// same order at `hi_hz`.
    pub fn butterworth_bandpass(lo_hz: f64, hi_hz: f64, rate_hz: f64, order: usize) -> Self {
        debug_assert!(order >= 4 && order.is_multiple_of(4));
        let qs = butterworth_qs(order / 2);
        let mut sections: Vec<Biquad> = qs.iter().map(|&q| Biquad::highpass(lo_hz, rate_hz, q)).collect();
        sections.extend(qs.iter().map(|&q| Biquad::lowpass(hi_hz, rate_hz, q)));
        Cascade { sections }
    }

    #[inline]
    pub fn process(&mut self, x: f64) -> f64 {
        self.sections.iter_mut().fold(x, |acc, s| s.process(acc))
    }

    pub fn process_slice(&mut self, xs: &[f64]) -> Vec<f64> {
        xs.iter().map(|&x| self.process(x)).collect()
    }

    pub fn reset(&mut self) {
        self.sections.iter_mut().for_each(Biquad::reset);
    }

    pub fn magnitude_at(&self, f_hz: f64, rate_hz: f64) -> f64 {
        self.sections.iter().map(|s| s.magnitude_at(f_hz, rate_hz)).product()
    }

    pub fn sections(&self) -> &[Biquad] {
        &self.sections
    }
}
