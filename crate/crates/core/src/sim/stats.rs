//! Small sample-statistics helpers.

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.959_963_984_540_054;
/// One-sided 95% normal quantile.
pub const Z95_ONE_SIDED: f64 = 1.644_853_626_951_472_2;

/// Running mean and variance (Welford).
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Welford {
    n: u64,
    mean: f64,
    m2: f64,
}

impl Welford {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let delta = x - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (x - self.mean);
    }

    /// Combines two accumulators (Chan et al. pairwise update).
    pub fn merge(&mut self, other: &Welford) {
        if other.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = *other;
            return;
        }
        let n = self.n + other.n;
        let delta = other.mean - self.mean;
        self.mean += delta * other.n as f64 / n as f64;
        self.m2 += other.m2 + delta * delta * (self.n as f64 * other.n as f64 / n as f64);
        self.n = n;
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Unbiased sample variance; zero below two samples.
    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            self.m2 / (self.n - 1) as f64
        }
    }

    pub fn std_err(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            (self.variance() / self.n as f64).sqrt()
        }
    }

    pub fn estimate(&self) -> MeanEstimate {
        MeanEstimate { mean: self.mean(), std_err: self.std_err(), n: self.n }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanEstimate {
    pub mean: f64,
    pub std_err: f64,
    pub n: u64,
}

impl MeanEstimate {
    pub fn from_samples(xs: &[f64]) -> Self {
        let mut w = Welford::default();
        xs.iter().for_each(|&x| w.push(x));
        w.estimate()
    }
}

/// Mean of `a[i] - b[i]` over paired samples.
pub fn paired_difference(a: &[f64], b: &[f64]) -> MeanEstimate {
    assert_eq!(a.len(), b.len(), "paired samples must have equal length");
    let mut w = Welford::default();
    a.iter().zip(b).for_each(|(x, y)| w.push(x - y));
    w.estimate()
}

/// Wilson score interval for `successes` out of `n` at normal quantile `z`.
pub fn wilson_interval(successes: u64, n: u64, z: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let n = n as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    let lower = if successes == 0 { 0.0 } else { (center - half).max(0.0) };
    let upper = if successes as f64 == n { 1.0 } else { (center + half).min(1.0) };
    (lower, upper)
}
