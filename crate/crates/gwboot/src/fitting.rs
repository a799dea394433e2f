//! Streaming least-squares fits.
//!
//! Scaling exponents are measured as slopes of log-log fits over many
//! points, so accumulation is online (Welford-style centered sums) and
//! never stores the point cloud.

/// Result of a simple linear regression `y ~ slope * x + intercept`.
#[derive(Clone, Copy, Debug)]
pub struct Fit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub n: u64,
}

/// Online accumulator for a straight-line fit.
#[derive(Clone, Debug, Default)]
pub struct LeastSquares {
    n: u64,
    mean_x: f64,
    mean_y: f64,
    m2x: f64,
    m2y: f64,
    cxy: f64,
}

impl LeastSquares {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, x: f64, y: f64) {
        self.n += 1;
        let n = self.n as f64;
        let dx = x - self.mean_x;
        self.mean_x += dx / n;
        let dy = y - self.mean_y;
        self.mean_y += dy / n;
        // dx is pre-update, the second factors post-update: their product
        // telescopes to the centered second moments.
        self.m2x += dx * (x - self.mean_x);
        self.cxy += dx * (y - self.mean_y);
        self.m2y += dy * (y - self.mean_y);
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    /// `None` with fewer than two points or zero x-variance.
    pub fn fit(&self) -> Option<Fit> {
        if self.n < 2 || self.m2x <= 0.0 {
            return None;
        }
        let slope = self.cxy / self.m2x;
        let intercept = self.mean_y - slope * self.mean_x;
        let r_squared = if self.m2y <= 0.0 {
            1.0
        } else {
            (self.cxy * self.cxy) / (self.m2x * self.m2y)
        };
        Some(Fit {
            slope,
            intercept,
            r_squared,
            n: self.n,
        })
    }
}

/// Fits `ln y ~ slope * ln x + b` over the points with positive coordinates.
pub fn fit_log_log(points: impl IntoIterator<Item = (f64, f64)>) -> Option<Fit> {
    let mut acc = LeastSquares::new();
    for (x, y) in points {
        if x > 0.0 && y > 0.0 {
            acc.push(x.ln(), y.ln());
        }
    }
    acc.fit()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovers_exact_line() {
        let mut acc = LeastSquares::new();
        for i in 0..50 {
            let x = i as f64 / 7.0;
            acc.push(x, 3.0 * x - 2.0);
        }
        let f = acc.fit().unwrap();
        assert!((f.slope - 3.0).abs() < 1e-12);
        assert!((f.intercept + 2.0).abs() < 1e-12);
        assert!((f.r_squared - 1.0).abs() < 1e-12);
    }

    #[test]
    fn matches_hand_computed_regression() {
        // Points (0,1), (1,3), (2,4): slope 3/2, intercept 7/6, r^2 = 27/28.
        let mut acc = LeastSquares::new();
        for (x, y) in [(0.0, 1.0), (1.0, 3.0), (2.0, 4.0)] {
            acc.push(x, y);
        }
        let f = acc.fit().unwrap();
        assert!((f.slope - 1.5).abs() < 1e-12);
        assert!((f.intercept - 7.0 / 6.0).abs() < 1e-12);
        assert!((f.r_squared - 27.0 / 28.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_inputs_give_none() {
        let mut acc = LeastSquares::new();
        acc.push(1.0, 1.0);
        assert!(acc.fit().is_none());
        acc.push(1.0, 2.0);
        assert!(acc.fit().is_none());
    }

    #[test]
    fn log_log_recovers_power_law() {
        let f = fit_log_log((1..100).map(|i| {
            let x = i as f64;
            (x, 5.0 * x.powf(-0.5))
        }))
        .unwrap();
        assert!((f.slope + 0.5).abs() < 1e-10);
        assert!((f.intercept - 5.0f64.ln()).abs() < 1e-10);
        assert!((f.r_squared - 1.0).abs() < 1e-12);
    }
}
