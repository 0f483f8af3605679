use std::f64::consts::PI;

/// One RBJ peaking biquad.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeakingBand {
    pub center_hz: f64,
    pub gain_db: f64,
    pub q: f64,
}

impl PeakingBand {
    fn coefficients(&self, sample_rate: f64) -> ([f64; 3], [f64; 2]) {
        let a = 10f64.powf(self.gain_db / 40.0);
        let w0 = 2.0 * PI * self.center_hz / sample_rate;
        let alpha = w0.sin() / (2.0 * self.q);
        let cos = w0.cos();
        let a0 = 1.0 + alpha / a;
        let b = [
            (1.0 + alpha * a) / a0,
            -2.0 * cos / a0,
            (1.0 - alpha * a) / a0,
        ];
        let fb = [-2.0 * cos / a0, (1.0 - alpha / a) / a0];
        (b, fb)
    }

    /// Direct form I, in place.
    pub fn apply(&self, x: &mut [f64], sample_rate: f64) {
        if self.gain_db == 0.0 {
            return;
        }
        let (b, a) = self.coefficients(sample_rate);
        let (mut x1, mut x2, mut y1, mut y2) = (0.0, 0.0, 0.0, 0.0);
        for s in x.iter_mut() {
            let x0 = *s;
            let y0 = b[0] * x0 + b[1] * x1 + b[2] * x2 - a[0] * y1 - a[1] * y2;
            x2 = x1;
            x1 = x0;
            y2 = y1;
            y1 = y0;
            *s = y0;
        }
    }
}
