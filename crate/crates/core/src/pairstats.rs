//! Pair statistics over scaled discrete orbits: the admissible-determinant
//! table with its double-coset multiplicities phi_ab(c), the weighted tail
//! sum Phi_ab(t) with its plateau, partial sums, close-pair counts, bounded
//! determinant pairs, pair correlation, the length-density statistic, and
//! Monte Carlo correlation integrals.
//!
//! phi_ab(c) counts the vectors (a, c) of the auxiliary orbit
//! sigma_a^-1 Gamma sigma_b e1 with 0 < a <= c: each double coset leaves
//! exactly one representative in that box, so the table is a box count of an
//! exactly-enumerated orbit. Determinant keys are exact ring elements; floats
//! only decide the c <= C cut after a certified sign check.

use crate::error::{Error, Result};
use crate::fuchsian::{c_gamma, Lattice};
use crate::orbit::{stream_pair_box, HolonomySet};
use crate::ring::RingElement;
use rand::Rng;
use std::collections::BTreeMap;
use std::sync::Arc;

/// Admissible determinants 0 < c <= max_c with multiplicities phi_ab(c),
/// for one ordered cusp pair of a lattice containing -I.
pub struct PairTable {
    pub lattice: Arc<Lattice>,
    pub cusp_a: usize,
    pub cusp_b: usize,
    pub max_c: f64,
    /// Exact positive determinant -> multiplicity.
    pub entries: BTreeMap<RingElement, u64>,
    /// Whether the two orbits are homothetic (equivalent cusps); exactly then
    /// 0 is an admissible determinant.
    pub is_homothetic_pair: bool,
    /// Embedded determinants ascending, with multiplicities.
    sorted: Vec<(f64, u64)>,
    /// suffix_weight[i] = sum_{j >= i} phi_j / c_j^3.
    suffix_weight: Vec<f64>,
    /// prefix_count[i] = sum_{j < i} phi_j.
    prefix_count: Vec<u64>,
}

/// Enumeration bound knobs for table construction.
#[derive(Clone, Copy, Debug)]
pub struct PairTableConfig {
    /// Box prune inflation; subtract-and-swap descent is monotone in the
    /// sup-norm, so values slightly above 1 suffice (validated by oracles).
    pub prune_factor: f64,
    pub visited_cap: usize,
    /// Use the unipotent descent tree for the modular group (large tables at
    /// zero memory); the generic search remains available for
    /// cross-validation.
    pub prefer_tree: bool,
}

impl Default for PairTableConfig {
    fn default() -> Self {
        PairTableConfig { prune_factor: 8.0, visited_cap: 4_000_000_000, prefer_tree: true }
    }
}

/// Build the table of phi_ab(c) for 0 < c <= max_c by enumerating the
/// auxiliary orbit inside the box {0 < a <= c <= max_c}.
pub fn build_pair_table(
    lattice: &Arc<Lattice>,
    cusp_a: usize,
    cusp_b: usize,
    max_c: f64,
    config: PairTableConfig,
) -> Result<PairTable> {
    if !lattice.contains_minus_identity {
        return Err(Error::MinusIdentityRequired);
    }
    if !(max_c >= 1.0) {
        return Err(Error::InvalidParam("max_c must be >= 1".into()));
    }
    if cusp_a >= lattice.cusps.len() || cusp_b >= lattice.cusps.len() {
        return Err(Error::InvalidParam("cusp index out of range".into()));
    }
    let is_homothetic_pair = cusp_a == cusp_b;

    let mut entries: BTreeMap<RingElement, u64> = BTreeMap::new();
    let mut zero_seen = false;

    let use_tree = config.prefer_tree && lattice.kind == crate::fuchsian::LatticeKind::Sl2z;
    if use_tree {
        // Unipotent descent tree for the modular group: every coprime pair
        // (a, c) with 0 < a <= c has the unique parent (a, c - a) or
        // (c - a, a), so the two child moves (a, a+c), (c, a+c) from (1, 1)
        // enumerate the box without a dedup set. Cross-validated against the
        // generic search in the tests.
        let cap = max_c.floor() as i64;
        let mut phi = vec![0u64; (cap + 1) as usize];
        let mut stack: Vec<(i64, i64)> = vec![(1, 1)];
        while let Some((a, c)) = stack.pop() {
            phi[c as usize] += 1;
            let n = a + c;
            if n <= cap {
                stack.push((a, n));
                // the two child moves coincide at the root (1, 1)
                if a != c {
                    stack.push((c, n));
                }
            }
        }
        zero_seen = true; // (1, 0) is the base vector of the orbit
        let ring = &lattice.ring;
        for (c, m) in phi.iter().enumerate().skip(1) {
            if *m > 0 {
                entries.insert(ring.from_i64(c as i64), *m);
            }
        }
    } else {
        stream_pair_box(
            lattice,
            cusp_a,
            cusp_b,
            max_c,
            config.prune_factor,
            config.visited_cap,
            &mut |a, c, _| {
                // the stream folds signs; test the box on both representatives
                for sign in [1i8, -1] {
                    let (aa, cc) = if sign == 1 {
                        (a.clone(), c.clone())
                    } else {
                        (-a, -c)
                    };
                    let cs = cc.certified_sign();
                    if cs == 0 {
                        zero_seen = true;
                        break; // -0 = 0, don't double-report
                    }
                    if cs < 0 {
                        continue;
                    }
                    if aa.certified_sign() <= 0 {
                        continue;
                    }
                    if (&cc - &aa).certified_sign() < 0 {
                        continue;
                    }
                    if cc.certified_cmp_f64(max_c) == std::cmp::Ordering::Greater {
                        continue;
                    }
                    *entries.entry(cc).or_insert(0) += 1;
                }
            },
        )?;
    }

    debug_assert_eq!(
        zero_seen, is_homothetic_pair,
        "0 is admissible exactly for homothetic pairs"
    );

    let mut table = PairTable {
        lattice: lattice.clone(),
        cusp_a,
        cusp_b,
        max_c,
        entries,
        is_homothetic_pair,
        sorted: Vec::new(),
        suffix_weight: Vec::new(),
        prefix_count: Vec::new(),
    };
    table.rebuild_derived();
    Ok(table)
}

impl PairTable {
    fn rebuild_derived(&mut self) {
        let mut sorted: Vec<(f64, u64)> =
            self.entries.iter().map(|(c, m)| (c.embed(), *m)).collect();
        sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
        let n = sorted.len();
        let mut suffix = vec![0.0f64; n + 1];
        for i in (0..n).rev() {
            let (c, m) = sorted[i];
            suffix[i] = suffix[i + 1] + m as f64 / (c * c * c);
        }
        let mut prefix = vec![0u64; n + 1];
        for i in 0..n {
            prefix[i + 1] = prefix[i] + sorted[i].1;
        }
        self.sorted = sorted;
        self.suffix_weight = suffix;
        self.prefix_count = prefix;
    }

    pub fn c_gamma(&self) -> f64 {
        c_gamma(&self.lattice)
    }

    /// Multiplicity of an exact determinant value (0 for non-admissible).
    pub fn multiplicity(&self, c: &RingElement) -> u64 {
        self.entries.get(c).copied().unwrap_or(0)
    }

    /// Largest tabulated determinant (float embedding).
    pub fn last_entry(&self) -> Option<f64> {
        self.sorted.last().map(|&(c, _)| c)
    }

    /// Empirical constant for the partial-sum remainder
    /// |sum_{c<u} phi(c) - (c_Gamma/2) u^2| <= K u^{2-delta}, measured over
    /// checkpoints in the upper part of the table.
    fn remainder_constant(&self) -> f64 {
        let delta = self.lattice.delta;
        let cg = self.c_gamma();
        let mut k: f64 = 0.0;
        for step in 1..=8 {
            let u = self.max_c * (0.3 + 0.0875 * step as f64);
            if u < 2.0 {
                continue;
            }
            let idx = self.sorted.partition_point(|&(c, _)| c < u);
            let e = (self.prefix_count[idx] as f64 - 0.5 * cg * u * u).abs();
            k = k.max(e / u.powf(2.0 - delta));
        }
        k.max(1.0)
    }
}

/// Phi_ab(t) = t * [ sum_{t <= c <= c_trunc} phi(c)/c^3 + c_Gamma/c_trunc ],
/// the truncated scattering sum completed by its analytic main term, together
/// with a tail-uncertainty bound driven by the empirically measured
/// partial-sum remainder.
pub fn phi_function(table: &PairTable, t: f64, c_trunc: f64) -> Result<(f64, f64)> {
    if !(t > 0.0) {
        return Err(Error::InvalidParam("t must be positive".into()));
    }
    if c_trunc > table.max_c * (1.0 + 1e-12) {
        return Err(Error::TruncationExceedsTable { requested: c_trunc, available: table.max_c });
    }
    if c_trunc < t {
        return Err(Error::InvalidParam("c_trunc must be >= t".into()));
    }
    let i_t = table.sorted.partition_point(|&(c, _)| c < t);
    let i_c = table.sorted.partition_point(|&(c, _)| c <= c_trunc);
    let sum = table.suffix_weight[i_t] - table.suffix_weight[i_c];
    let cg = table.c_gamma();
    let value = t * (sum + cg / c_trunc);
    // tail model error via Abel summation with |E(u)| <= K u^{2-delta}
    let delta = table.lattice.delta;
    let k = table.remainder_constant();
    let tail_bound = t * k * (3.0 / (1.0 + delta) + 1.0) / c_trunc.powf(1.0 + delta);
    Ok((value, tail_bound))
}

/// Sum of phi_ab(c) over 0 < c < T (strict).
pub fn partial_sum(table: &PairTable, t_cap: f64) -> Result<u64> {
    if t_cap > table.max_c * (1.0 + 1e-12) {
        return Err(Error::TruncationExceedsTable { requested: t_cap, available: table.max_c });
    }
    let idx = table.sorted.partition_point(|&(c, _)| c < t_cap);
    Ok(table.prefix_count[idx])
}

// ---------------------------------------------------------------------------
// Close pairs, determinant pairs, pair correlation, length density
// ---------------------------------------------------------------------------

/// Ordered pairs (x, y), x in S intersect B_R, y in S, 0 < |y - x| < eta,
/// counted with a spatial grid of cell size eta.
pub fn friends(set: &mut HolonomySet, radius: f64, eta: f64) -> Result<u64> {
    if !(radius > 0.0 && eta > 0.0) {
        return Err(Error::InvalidParam("radius and eta must be positive".into()));
    }
    if set.is_empty() {
        return Ok(0);
    }
    let centers = set.points(radius)?;
    let partners = set.points(radius + eta)?;
    let grid = PointGrid::build(&partners, eta);
    let mut count = 0u64;
    for &(x, y, _) in &centers {
        count += grid.count_near(x, y, eta, |px, py| {
            let d2 = (px - x) * (px - x) + (py - y) * (py - y);
            d2 > 0.0 && d2 < eta * eta
        });
    }
    Ok(count)
}

/// Ordered pairs (x, y) with x in B_R and y in the determinant region
/// D_{D,s}(x) = { |y| <= s|x|, |x wedge y| <= D }.
pub fn det_pairs(set: &mut HolonomySet, radius: f64, d_max: f64, s: f64) -> Result<u64> {
    if !(radius > 0.0 && d_max > 0.0 && s > 0.0) {
        return Err(Error::InvalidParam("radius, D, s must be positive".into()));
    }
    if set.is_empty() {
        return Ok(0);
    }
    let centers = set.points(radius)?;
    let partners = set.points(s * radius)?;
    let cell = (s * radius / 64.0).max(1.0);
    let grid = PointGrid::build(&partners, cell);
    let mut count = 0u64;
    for &(x, y, _) in &centers {
        let norm = (x * x + y * y).sqrt();
        if norm == 0.0 {
            continue;
        }
        let len = s * norm;
        let halfwidth = (d_max / norm).min(len);
        count += grid.count_strip((x, y), len, halfwidth, |px, py| {
            px * px + py * py <= len * len + 1e-12
                && (x * py - y * px).abs() <= d_max * (1.0 + 1e-12)
        });
    }
    Ok(count)
}

/// Two-dimensional pair correlation R_2(B_s, S, R): the number of ordered
/// pairs at distance below s/sqrt(c_M), normalized by |S intersect B_R|.
pub fn pair_correlation(set: &mut HolonomySet, radius: f64, s: f64, c_m: f64) -> Result<f64> {
    if !(radius > 0.0 && s > 0.0 && c_m > 0.0) {
        return Err(Error::InvalidParam("radius, s, c_M must be positive".into()));
    }
    let total = set.count(radius)?;
    if total == 0 {
        return Err(Error::EmptyBall);
    }
    let eta = s / c_m.sqrt();
    let pairs = friends(set, radius, eta)?;
    Ok(pairs as f64 / total as f64)
}

/// Fraction of holonomy vectors in B_R whose length lies in the union of
/// half-open intervals [lo, hi) inside [0, R).
pub fn length_density(
    set: &mut HolonomySet,
    intervals: &[(f64, f64)],
    radius: f64,
) -> Result<f64> {
    for &(lo, hi) in intervals {
        if !(0.0 <= lo && lo < hi && hi <= radius) {
            return Err(Error::InvalidParam(format!(
                "interval [{lo}, {hi}) must sit inside [0, {radius})"
            )));
        }
    }
    let pts = set.points(radius)?;
    if pts.is_empty() {
        return Err(Error::EmptyBall);
    }
    let mut hit = 0u64;
    for &(x, y, _) in &pts {
        let n = (x * x + y * y).sqrt();
        if intervals.iter().any(|&(lo, hi)| n >= lo && n < hi) {
            hit += 1;
        }
    }
    Ok(hit as f64 / pts.len() as f64)
}

// ---------------------------------------------------------------------------
// Correlation integrals (Monte Carlo)
// ---------------------------------------------------------------------------

/// Product-of-indicator test functions for the correlation integral.
#[derive(Clone, Copy, Debug)]
pub enum CorrelationKernel {
    /// f(x, y) = 1_{B_R}(x) 1_{B_R}(y).
    BallBall { r: f64 },
    /// f(x, y) = 1_{B_R}(x) 1_{B*_eps(x)}(y).
    BallPunctured { r: f64, eps: f64 },
    /// f(x, y) = 1_{B_R}(x) 1_{D_{D,s}(x)}(y).
    BallDetRegion { r: f64, d: f64, s: f64 },
}

/// Monte Carlo estimate of the double integral of phi(|x wedge y|) f(x, y)
/// with the given univariate phi; returns (estimate, standard error).
pub fn correlation_integral_with(
    phi: &dyn Fn(f64) -> f64,
    kernel: CorrelationKernel,
    samples: usize,
    rng: &mut impl Rng,
) -> (f64, f64) {
    let mut sum = 0.0f64;
    let mut sum_sq = 0.0f64;
    for _ in 0..samples {
        let v = match kernel {
            CorrelationKernel::BallBall { r } => {
                let x = sample_disk(r, rng);
                let y = sample_disk(r, rng);
                let vol = (std::f64::consts::PI * r * r).powi(2);
                phi((x.0 * y.1 - x.1 * y.0).abs()) * vol
            }
            CorrelationKernel::BallPunctured { r, eps } => {
                let x = sample_disk(r, rng);
                let d = sample_disk(eps, rng);
                let y = (x.0 + d.0, x.1 + d.1);
                let vol = std::f64::consts::PI * r * r * std::f64::consts::PI * eps * eps;
                phi((x.0 * y.1 - x.1 * y.0).abs()) * vol
            }
            CorrelationKernel::BallDetRegion { r, d, s } => {
                let x = sample_disk(r, rng);
                let norm = (x.0 * x.0 + x.1 * x.1).sqrt();
                if norm == 0.0 {
                    0.0
                } else {
                    let len = s * norm;
                    let b0 = (d / norm).min(len);
                    // area of { |y| <= len } intersect { |beta| <= b0 }
                    let area = if b0 >= len {
                        std::f64::consts::PI * len * len
                    } else {
                        2.0 * (b0 * (len * len - b0 * b0).sqrt()
                            + len * len * (b0 / len).asin())
                    };
                    // uniform sample in the region by rejection in the slab
                    let (ux, uy) = (x.0 / norm, x.1 / norm);
                    let mut y = (0.0, 0.0);
                    for _ in 0..64 {
                        let alpha = rng.gen_range(-len..len);
                        let beta = rng.gen_range(-b0..b0);
                        if alpha * alpha + beta * beta <= len * len {
                            y = (alpha * ux - beta * uy, alpha * uy + beta * ux);
                            break;
                        }
                    }
                    let vol = std::f64::consts::PI * r * r * area;
                    phi((x.0 * y.1 - x.1 * y.0).abs()) * vol
                }
            }
        };
        sum += v;
        sum_sq += v * v;
    }
    let n = samples as f64;
    let mean = sum / n;
    let var = (sum_sq / n - mean * mean).max(0.0);
    (mean, (var / n).sqrt())
}

/// Monte Carlo estimate of the correlation integral
/// integral of Phi_ab(|x wedge y|) f(x, y) dx dy for a tabulated pair; the
/// additive tail bound of Phi enters the reported uncertainty.
pub fn correlation_integral(
    table: &PairTable,
    kernel: CorrelationKernel,
    samples: usize,
    rng: &mut impl Rng,
) -> Result<(f64, f64)> {
    let c_trunc = table.max_c;
    // validate once so the closure cannot fail
    phi_function(table, 1.0, c_trunc)?;
    let phi = |t: f64| -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        phi_function(table, t, c_trunc).map(|(v, _)| v).unwrap_or(0.0)
    };
    let (est, se) = correlation_integral_with(&phi, kernel, samples, rng);
    // the Phi tail bound is proportional to t <= support wedge bound; be
    // conservative and take it at the largest wedge value of the kernel
    let t_max = match kernel {
        CorrelationKernel::BallBall { r } => r * r,
        CorrelationKernel::BallPunctured { r, eps } => r * eps + eps * eps,
        CorrelationKernel::BallDetRegion { d, .. } => d,
    };
    let (_, tail) = phi_function(table, t_max.max(1e-9), c_trunc)?;
    let vol = match kernel {
        CorrelationKernel::BallBall { r } => (std::f64::consts::PI * r * r).powi(2),
        CorrelationKernel::BallPunctured { r, eps } => {
            std::f64::consts::PI.powi(2) * r * r * eps * eps
        }
        CorrelationKernel::BallDetRegion { r, d, s } => {
            std::f64::consts::PI * r * r * 2.0 * d * s * r
        }
    };
    // phi tail is monotone in t, so the integral's tail error is bounded by
    // tail(t_max) * vol(f)
    Ok((est, se + tail * vol))
}

fn sample_disk(r: f64, rng: &mut impl Rng) -> (f64, f64) {
    let rr = r * rng.gen::<f64>().sqrt();
    let th = rng.gen_range(0.0..2.0 * std::f64::consts::PI);
    (rr * th.cos(), rr * th.sin())
}

// ---------------------------------------------------------------------------
// Spatial grid over float points
// ---------------------------------------------------------------------------

struct PointGrid {
    cell: f64,
    ranges: std::collections::HashMap<(i32, i32), (u32, u32)>,
    points: Vec<(f64, f64)>,
}

impl PointGrid {
    fn build(points: &[(f64, f64, u32)], cell: f64) -> PointGrid {
        let mut keyed: Vec<((i32, i32), (f64, f64))> = points
            .iter()
            .map(|&(x, y, _)| (((x / cell).floor() as i32, (y / cell).floor() as i32), (x, y)))
            .collect();
        keyed.sort_unstable_by(|a, b| a.0.cmp(&b.0));
        let mut ranges = std::collections::HashMap::new();
        let mut pts = Vec::with_capacity(keyed.len());
        let mut start = 0usize;
        for i in 0..keyed.len() {
            pts.push(keyed[i].1);
            if i + 1 == keyed.len() || keyed[i + 1].0 != keyed[i].0 {
                ranges.insert(keyed[i].0, (start as u32, (i + 1) as u32));
                start = i + 1;
            }
        }
        PointGrid { cell, ranges, points: pts }
    }

    /// Count grid points in the 9-cell neighborhood of (x, y) passing `pred`.
    fn count_near(&self, x: f64, y: f64, _radius: f64, pred: impl Fn(f64, f64) -> bool) -> u64 {
        let cx = (x / self.cell).floor() as i32;
        let cy = (y / self.cell).floor() as i32;
        let mut n = 0;
        for ix in cx - 1..=cx + 1 {
            for iy in cy - 1..=cy + 1 {
                if let Some(&(s, e)) = self.ranges.get(&(ix, iy)) {
                    for k in s..e {
                        let (px, py) = self.points[k as usize];
                        if pred(px, py) {
                            n += 1;
                        }
                    }
                }
            }
        }
        n
    }

    /// Count points in the strip of halfwidth `w` around the line through the
    /// origin in direction `dir`, within length `len`, passing `pred`.
    /// Walks grid columns along the dominant axis.
    fn count_strip(
        &self,
        dir: (f64, f64),
        len: f64,
        w: f64,
        pred: impl Fn(f64, f64) -> bool,
    ) -> u64 {
        let norm = (dir.0 * dir.0 + dir.1 * dir.1).sqrt();
        let (ux, uy) = (dir.0 / norm, dir.1 / norm);
        let cell = self.cell;
        let mut n = 0;
        // walk along x when the strip is more horizontal, else along y
        if ux.abs() >= uy.abs() {
            let hx = len * ux.abs() + w * uy.abs();
            let ix_lo = ((-hx) / cell).floor() as i32 - 1;
            let ix_hi = (hx / cell).floor() as i32 + 1;
            for ix in ix_lo..=ix_hi {
                // strip: |(-uy) px + ux py| <= w  =>  py range for px column
                let x0 = ix as f64 * cell;
                let x1 = x0 + cell;
                let (mut ylo, mut yhi) = (f64::INFINITY, f64::NEG_INFINITY);
                for xx in [x0, x1] {
                    let mid = uy / ux * xx;
                    let half = (w / ux.abs()).min(1e18);
                    ylo = ylo.min(mid - half);
                    yhi = yhi.max(mid + half);
                }
                ylo = ylo.max(-len - cell);
                yhi = yhi.min(len + cell);
                let iy_lo = (ylo / cell).floor() as i32 - 1;
                let iy_hi = (yhi / cell).floor() as i32 + 1;
                for iy in iy_lo..=iy_hi {
                    if let Some(&(s, e)) = self.ranges.get(&(ix, iy)) {
                        for k in s..e {
                            let (px, py) = self.points[k as usize];
                            if pred(px, py) {
                                n += 1;
                            }
                        }
                    }
                }
            }
        } else {
            let hy = len * uy.abs() + w * ux.abs();
            let iy_lo = ((-hy) / cell).floor() as i32 - 1;
            let iy_hi = (hy / cell).floor() as i32 + 1;
            for iy in iy_lo..=iy_hi {
                let y0 = iy as f64 * cell;
                let y1 = y0 + cell;
                let (mut xlo, mut xhi) = (f64::INFINITY, f64::NEG_INFINITY);
                for yy in [y0, y1] {
                    let mid = ux / uy * yy;
                    let half = (w / uy.abs()).min(1e18);
                    xlo = xlo.min(mid - half);
                    xhi = xhi.max(mid + half);
                }
                xlo = xlo.max(-len - cell);
                xhi = xhi.min(len + cell);
                let ix_lo = (xlo / cell).floor() as i32 - 1;
                let ix_hi = (xhi / cell).floor() as i32 + 1;
                for ix in ix_lo..=ix_hi {
                    if let Some(&(s, e)) = self.ranges.get(&(ix, iy)) {
                        for k in s..e {
                            let (px, py) = self.points[k as usize];
                            if pred(px, py) {
                                n += 1;
                            }
                        }
                    }
                }
            }
        }
        n
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fuchsian::{build_congruence, build_sl2z};
    use crate::orbit::{assemble_holonomy, OrbitConfig};
    use rand::SeedableRng;

    fn sl2z_table(c: f64) -> PairTable {
        let l = Arc::new(build_sl2z());
        build_pair_table(&l, 0, 0, c, PairTableConfig::default()).unwrap()
    }

    fn sieve_totient(n: usize) -> Vec<u64> {
        let mut phi: Vec<u64> = (0..=n as u64).collect();
        for p in 2..=n {
            if phi[p] == p as u64 {
                for k in (p..=n).step_by(p) {
                    phi[k] -= phi[k] / p as u64;
                }
            }
        }
        phi
    }

    #[test]
    fn sl2z_table_is_the_totient() {
        let t = sl2z_table(10.0);
        let ring = &t.lattice.ring;
        let expect = [1u64, 1, 2, 2, 4, 2, 6, 4, 6, 4];
        for (i, e) in expect.iter().enumerate() {
            assert_eq!(t.multiplicity(&ring.from_i64(i as i64 + 1)), *e, "phi({})", i + 1);
        }
        assert!(t.is_homothetic_pair);
        assert_eq!(t.multiplicity(&ring.from_i64(1)), 1);
    }

    #[test]
    fn tree_matches_generic_search_and_sieve() {
        let l = Arc::new(build_sl2z());
        let c = 400.0;
        let tree = build_pair_table(&l, 0, 0, c, PairTableConfig::default()).unwrap();
        let generic = build_pair_table(
            &l,
            0,
            0,
            c,
            PairTableConfig { prefer_tree: false, prune_factor: 1.5, ..Default::default() },
        )
        .unwrap();
        assert_eq!(tree.entries, generic.entries);
        let phi = sieve_totient(400);
        for n in 1..=400i64 {
            assert_eq!(tree.multiplicity(&l.ring.from_i64(n)), phi[n as usize], "phi({n})");
        }
    }

    #[test]
    fn gamma2_cross_cusp_table_has_no_zero_and_matches_oracle_density() {
        // inequivalent cusps of Gamma(2): delta_ab = 0, and the partial sums
        // track (c_Gamma/2) T^2
        let l = Arc::new(build_congruence(2).unwrap());
        let t = build_pair_table(&l, 0, 1, 400.0, PairTableConfig::default()).unwrap();
        assert!(!t.is_homothetic_pair);
        let ps = partial_sum(&t, 400.0).unwrap();
        let main = 0.5 * c_gamma(&l) * 400.0 * 400.0;
        let rel = (ps as f64 - main).abs() / main;
        assert!(rel < 0.05, "partial sum {ps} vs main {main}");
    }

    #[test]
    fn phi_plateau_and_small_t() {
        let t = sl2z_table(20_000.0);
        let cg = t.c_gamma();
        for tt in [50.0, 100.0, 200.0] {
            let (v, _) = phi_function(&t, tt, 20_000.0).unwrap();
            assert!((v - cg).abs() < 0.01, "Phi({tt}) = {v} vs {cg}");
        }
        // O(t) behavior near zero: Phi(t)/t stays below the full weighted sum
        let (v, _) = phi_function(&t, 0.01, 20_000.0).unwrap();
        assert!(v < 0.01 * 2.0, "Phi(0.01) = {v}");
        assert!(v > 0.0);
    }

    #[test]
    fn phi_truncation_consistency() {
        let t = sl2z_table(4000.0);
        let (v1, bound1) = phi_function(&t, 30.0, 2000.0).unwrap();
        let (v2, _) = phi_function(&t, 30.0, 4000.0).unwrap();
        assert!(
            (v1 - v2).abs() <= bound1,
            "truncation gap {} exceeds reported bound {bound1}",
            (v1 - v2).abs()
        );
        assert!(matches!(
            phi_function(&t, 30.0, 8000.0),
            Err(Error::TruncationExceedsTable { .. })
        ));
        assert!(phi_function(&t, 0.0, 400.0).is_err());
    }

    #[test]
    fn phi_tail_dominated_case() {
        let t = sl2z_table(100.7);
        // t just above the largest entry, truncated there: only the analytic
        // tail remains and Phi collapses to c_Gamma exactly
        let (v, _) = phi_function(&t, 100.5, 100.5).unwrap();
        assert!((v - t.c_gamma()).abs() < 1e-14);
    }

    #[test]
    fn partial_sum_examples() {
        let t = sl2z_table(3000.0);
        assert_eq!(partial_sum(&t, 1.5).unwrap(), 1);
        assert_eq!(partial_sum(&t, 1.0).unwrap(), 0);
        assert_eq!(partial_sum(&t, 0.5).unwrap(), 0);
        // deviations from (c_Gamma/2) T^2 shrink as T grows
        let dev = |tt: f64| {
            let ps = partial_sum(&t, tt).unwrap() as f64;
            (ps / (tt * tt) - 0.5 * t.c_gamma()).abs()
        };
        assert!(dev(3000.0) < dev(300.0));
    }

    fn sl2z_set() -> HolonomySet {
        let l = Arc::new(build_sl2z());
        assemble_holonomy(&l, &[(1.0, 0)], OrbitConfig::default()).unwrap()
    }

    #[test]
    fn friends_uniform_discreteness_and_brute_force() {
        let mut s = sl2z_set();
        assert_eq!(friends(&mut s, 100.0, 0.99).unwrap(), 0);

        // eta = 1.01 at R = 2 counts the distance-1 pairs
        let got = friends(&mut s, 2.0, 1.01).unwrap();
        let pts = s.points(2.0).unwrap();
        let partners = s.points(3.01).unwrap();
        let mut brute = 0u64;
        for &(x, y, _) in &pts {
            for &(px, py, _) in &partners {
                let d2 = (px - x) * (px - x) + (py - y) * (py - y);
                if d2 > 0.0 && d2 < 1.01 * 1.01 {
                    brute += 1;
                }
            }
        }
        assert_eq!(got, brute);
        assert!(got > 0);

        // grid result equals the quadratic double loop at larger radii
        for eta in [0.3, 0.9, 1.2] {
            let got = friends(&mut s, 30.0, eta).unwrap();
            let centers = s.points(30.0).unwrap();
            let partners = s.points(30.0 + eta).unwrap();
            let mut brute = 0u64;
            for &(x, y, _) in &centers {
                for &(px, py, _) in &partners {
                    let d2 = (px - x) * (px - x) + (py - y) * (py - y);
                    if d2 > 0.0 && d2 < eta * eta {
                        brute += 1;
                    }
                }
            }
            assert_eq!(got, brute, "eta={eta}");
        }

        let mut empty = HolonomySet::new(Vec::new()).unwrap();
        assert_eq!(friends(&mut empty, 10.0, 0.5).unwrap(), 0);
    }

    #[test]
    fn friends_component_relabeling() {
        let l = Arc::new(build_sl2z());
        let mut a = assemble_holonomy(&l, &[(1.0, 0), (2.0, 0)], OrbitConfig::default()).unwrap();
        let mut b = assemble_holonomy(&l, &[(2.0, 0), (1.0, 0)], OrbitConfig::default()).unwrap();
        assert_eq!(friends(&mut a, 12.0, 0.7).unwrap(), friends(&mut b, 12.0, 0.7).unwrap());
    }

    #[test]
    fn det_pairs_brute_force_and_monotonicity() {
        let mut s = sl2z_set();
        let brute = |set: &mut HolonomySet, r: f64, d: f64, sc: f64| -> u64 {
            let centers = set.points(r).unwrap();
            let partners = set.points(sc * r).unwrap();
            let mut n = 0;
            for &(x, y, _) in &centers {
                let norm2 = x * x + y * y;
                for &(px, py, _) in &partners {
                    if px * px + py * py <= sc * sc * norm2 + 1e-12
                        && (x * py - y * px).abs() <= d * (1.0 + 1e-12)
                    {
                        n += 1;
                    }
                }
            }
            n
        };
        for (d, sc) in [(0.5, 1.0), (2.0, 1.0), (1.0, 0.7), (3.0, 1.3)] {
            assert_eq!(
                det_pairs(&mut s, 10.0, d, sc).unwrap(),
                brute(&mut s, 10.0, d, sc),
                "D={d} s={sc}"
            );
        }
        // monotone in D and in s
        let d1 = det_pairs(&mut s, 12.0, 1.0, 1.0).unwrap();
        let d2 = det_pairs(&mut s, 12.0, 2.0, 1.0).unwrap();
        let d3 = det_pairs(&mut s, 12.0, 2.0, 1.4).unwrap();
        assert!(d1 <= d2 && d2 <= d3);
        // vacuous determinant constraint: D >= R^2 counts all |y| <= |x| pairs
        let r = 6.0;
        let all = det_pairs(&mut s, r, r * r, 1.0).unwrap();
        assert_eq!(all, brute(&mut s, r, r * r + 1.0, 1.0));
        let mut empty = HolonomySet::new(Vec::new()).unwrap();
        assert_eq!(det_pairs(&mut empty, 5.0, 1.0, 1.0).unwrap(), 0);
    }

    #[test]
    fn pair_correlation_identities() {
        let mut s = sl2z_set();
        let c_m = s.density_constant();
        let r = 20.0;
        let s_param = 1.0;
        let direct = pair_correlation(&mut s, r, s_param, c_m).unwrap();
        let via_friends =
            friends(&mut s, r, s_param / c_m.sqrt()).unwrap() as f64 / s.count(r).unwrap() as f64;
        assert_eq!(direct, via_friends);
        // quadrupling c_M equals halving s (identical eta, exact equality)
        let a = pair_correlation(&mut s, r, s_param, 4.0 * c_m).unwrap();
        let b = pair_correlation(&mut s, r, s_param / 2.0, c_m).unwrap();
        assert_eq!(a, b);
        // below the uniform-discreteness gap the count vanishes
        assert_eq!(pair_correlation(&mut s, r, 0.5, 1.0).unwrap(), 0.0);
        // empty ball errors
        let mut tiny = sl2z_set();
        assert!(matches!(pair_correlation(&mut tiny, 0.5, 1.0, c_m), Err(Error::EmptyBall)));
    }

    #[test]
    fn length_density_examples() {
        let mut s = sl2z_set();
        assert_eq!(length_density(&mut s, &[(0.0, 30.0)], 30.0).unwrap(), 1.0);
        assert_eq!(length_density(&mut s, &[], 30.0).unwrap(), 0.0);
        assert!(length_density(&mut s, &[(5.0, 40.0)], 30.0).is_err());
        assert!(length_density(&mut s, &[(5.0, 5.0)], 30.0).is_err());
    }

    #[test]
    fn correlation_integral_constant_mode() {
        // with phi frozen at a constant the integral is c * (pi R^2)^2
        let c = 0.6079;
        let r = 5.0;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(77);
        let (est, se) = correlation_integral_with(
            &|_| c,
            CorrelationKernel::BallBall { r },
            200_000,
            &mut rng,
        );
        let expect = c * (std::f64::consts::PI * r * r).powi(2);
        assert!((est - expect).abs() < 1e-9 + 4.0 * se, "{est} vs {expect} (se {se})");
    }

    #[test]
    fn correlation_integral_table_smoke() {
        let t = sl2z_table(2000.0);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let (est, unc) = correlation_integral(
            &t,
            CorrelationKernel::BallBall { r: 5.0 },
            200_000,
            &mut rng,
        )
        .unwrap();
        // the integral is close to c_Gamma * (pi R^2)^2 since Phi ~ c_Gamma
        // away from small wedge values
        let rough = t.c_gamma() * (std::f64::consts::PI * 25.0).powi(2);
        assert!((est - rough).abs() < 0.12 * rough, "{est} vs {rough} +- {unc}");
    }
}
