//! Seeded worker streams and small statistics helpers shared by the Monte
//! Carlo verification suites.
//!
//! Workers are logical RNG streams: sample generation is split into `workers`
//! deterministic substreams derived from the root seed and reduced in worker
//! order, so a fixed (seed, worker count) pair reproduces results bit for
//! bit. Execution is sequential because every stream shares the mutable
//! orbit caches; the stream split alone fixes the statistics.

use rand_chacha::ChaCha8Rng;

/// Derive a worker seed from the root seed (splitmix64 step).
pub fn worker_seed(root: u64, worker: u32) -> u64 {
    let mut z = root ^ (0x9e3779b97f4a7c15u64.wrapping_mul(worker as u64 + 1));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

pub fn worker_rng(root: u64, worker: u32) -> ChaCha8Rng {
    use rand::SeedableRng;
    ChaCha8Rng::seed_from_u64(worker_seed(root, worker))
}

/// Split n samples into `workers` contiguous chunks (first chunks get the
/// remainder).
pub fn worker_chunks(n: usize, workers: usize) -> Vec<usize> {
    let w = workers.max(1);
    let base = n / w;
    let extra = n % w;
    (0..w).map(|i| base + usize::from(i < extra)).collect()
}

/// Plain mean / standard-error accumulator, merged in worker order.
#[derive(Clone, Copy, Debug, Default)]
pub struct MeanAcc {
    pub n: u64,
    pub sum: f64,
    pub sum_sq: f64,
    pub max_abs: f64,
}

impl MeanAcc {
    pub fn push(&mut self, v: f64) {
        self.n += 1;
        self.sum += v;
        self.sum_sq += v * v;
        if v.abs() > self.max_abs {
            self.max_abs = v.abs();
        }
    }

    pub fn merge(&mut self, o: &MeanAcc) {
        self.n += o.n;
        self.sum += o.sum;
        self.sum_sq += o.sum_sq;
        self.max_abs = self.max_abs.max(o.max_abs);
    }

    pub fn mean(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            self.sum / self.n as f64
        }
    }

    /// Standard error of the mean.
    pub fn stderr(&self) -> f64 {
        if self.n < 2 {
            return f64::INFINITY;
        }
        let n = self.n as f64;
        let var = (self.sum_sq / n - (self.sum / n) * (self.sum / n)).max(0.0);
        (var / (n - 1.0)).sqrt()
    }
}

/// One-sample Kolmogorov-Smirnov statistic against Uniform(0, 1].
pub fn ks_statistic_uniform(samples: &mut [f64]) -> f64 {
    samples.sort_by(|a, b| a.total_cmp(b));
    let n = samples.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in samples.iter().enumerate() {
        let lo = i as f64 / n;
        let hi = (i + 1) as f64 / n;
        d = d.max((x - lo).abs()).max((hi - x).abs());
    }
    d
}

/// Two-sample Kolmogorov-Smirnov statistic. The CDF gap is recorded only at
/// distinct-value boundaries so tied blocks (integer-valued samples) do not
/// inflate the statistic.
pub fn ks_statistic_two_sample(a: &mut [f64], b: &mut [f64]) -> f64 {
    a.sort_by(|x, y| x.total_cmp(y));
    b.sort_by(|x, y| x.total_cmp(y));
    let (mut i, mut j) = (0usize, 0usize);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let v = a[i].min(b[j]);
        while i < a.len() && a[i] == v {
            i += 1;
        }
        while j < b.len() && b[j] == v {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// Chi-squared statistic for equiprobable bins over [0, hi).
pub fn chi2_uniform_bins(samples: &[f64], hi: f64, bins: usize) -> f64 {
    let mut counts = vec![0u64; bins];
    for &x in samples {
        let b = ((x / hi * bins as f64) as usize).min(bins - 1);
        counts[b] += 1;
    }
    let expect = samples.len() as f64 / bins as f64;
    counts.iter().map(|&c| (c as f64 - expect) * (c as f64 - expect) / expect).sum()
}

/// Least-squares slope and intercept of y over x.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (xi, yi) in x.iter().zip(y.iter()) {
        sxx += (xi - mx) * (xi - mx);
        sxy += (xi - mx) * (yi - my);
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let mut rss = 0.0;
    for (xi, yi) in x.iter().zip(y.iter()) {
        let e = yi - (intercept + slope * xi);
        rss += e * e;
    }
    (slope, intercept, (rss / n).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn worker_streams_are_stable_and_distinct() {
        assert_eq!(worker_seed(42, 0), worker_seed(42, 0));
        assert_ne!(worker_seed(42, 0), worker_seed(42, 1));
        assert_ne!(worker_seed(42, 0), worker_seed(43, 0));
        assert_eq!(worker_chunks(10, 3), vec![4, 3, 3]);
        assert_eq!(worker_chunks(2, 8).iter().sum::<usize>(), 2);
    }

    #[test]
    fn mean_acc_matches_direct_formulas() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        let mut acc = MeanAcc::default();
        for x in xs {
            acc.push(x);
        }
        assert!((acc.mean() - 2.5).abs() < 1e-15);
        // sample variance 5/3, se = sqrt(5/3/4)
        assert!((acc.stderr() - (5.0 / 3.0 / 4.0f64).sqrt()).abs() < 1e-12);
        let mut a = MeanAcc::default();
        let mut b = MeanAcc::default();
        for x in &xs[..2] {
            a.push(*x);
        }
        for x in &xs[2..] {
            b.push(*x);
        }
        a.merge(&b);
        assert_eq!(a.n, 4);
        assert!((a.mean() - 2.5).abs() < 1e-15);
    }

    #[test]
    fn ks_accepts_uniform_rejects_shifted() {
        let mut rng = worker_rng(7, 0);
        let mut u: Vec<f64> = (0..20_000).map(|_| rng.gen::<f64>()).collect();
        let d = ks_statistic_uniform(&mut u);
        // 1% critical value ~ 1.63 / sqrt(n)
        assert!(d * (20_000.0f64).sqrt() < 1.63, "d = {d}");
        let mut v: Vec<f64> = (0..20_000).map(|_| rng.gen::<f64>().powf(1.2)).collect();
        let d = ks_statistic_uniform(&mut v);
        assert!(d * (20_000.0f64).sqrt() > 1.63, "d = {d}");
    }

    #[test]
    fn fit_recovers_power_law() {
        let x: Vec<f64> = (1..20).map(|i| (i as f64).ln()).collect();
        let y: Vec<f64> = (1..20).map(|i| 2.5 * (i as f64).ln() + 1.0).collect();
        let (slope, intercept, resid) = linear_fit(&x, &y);
        assert!((slope - 2.5).abs() < 1e-12);
        assert!((intercept - 1.0).abs() < 1e-12);
        assert!(resid < 1e-12);
    }
}
