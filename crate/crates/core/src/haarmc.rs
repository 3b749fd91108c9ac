//! Sampling of the Haar probability measure on G/Gamma and the matrix-cone
//! measure, Siegel-Veech theta transforms, and Monte Carlo verification of
//! the first-moment, pair, second-moment, and averaged pair-correlation
//! mean value formulas.
//!
//! The mu-sampler draws the base point z with density dx dy / y^2 on the
//! standard triangle fundamental domain by rejection (x uniform on the width,
//! y by inverse CDF of y^-2 above the domain floor), an independent uniform
//! rotation angle, and assembles g = n_x a_sqrt(y) k_theta. Congruence
//! subgroups are sampled through the finite cover of the modular surface:
//! an SL2(Z)-sample right-translated by a uniformly random coset
//! representative of Gamma(N).
//!
//! Theta evaluations at high-cusp samples extend the orbit caches on demand;
//! samples whose required cache radius or operator norm exceed the
//! configured caps are redrawn and counted, and every report carries the
//! resample rate together with the bias bound rate * max-observed-theta.

use crate::error::{Error, Result};
use crate::fuchsian::{c_gamma, GroupElement, Lattice, LatticeKind};
use crate::mc::{worker_chunks, worker_rng, MeanAcc};
use crate::orbit::{op_norm_inv, DiscreteOrbit, HolonomySet};
use crate::pairstats::{correlation_integral, CorrelationKernel, PairTable};
use rand::Rng;
use serde::Serialize;
use std::collections::HashMap;
use std::sync::Arc;

// ---------------------------------------------------------------------------
// Samples and test functions
// ---------------------------------------------------------------------------

/// One draw from the Haar probability measure on G/Gamma.
///
/// The stored g is the fundamental-domain element n_x a_sqrt(y) k_theta
/// (composed with a coset translate for congruence covers), so g * i = z.
/// The set { g : g.i in F } is a fundamental domain for the left action of
/// the lattice, hence its inverses represent the right cosets G/Gamma that
/// the Siegel-Veech transforms live on; evaluations act through
/// [`HaarSample::coset_matrix`].
#[derive(Clone, Copy, Debug)]
pub struct HaarSample {
    /// Fundamental-domain representative composed with a rotation.
    pub g: [[f64; 2]; 2],
    /// Base point g * i in the upper half plane.
    pub z: (f64, f64),
    pub theta: f64,
}

impl HaarSample {
    /// The matrix acting on orbit vectors in theta transforms: the inverse of
    /// the domain representative.
    pub fn coset_matrix(&self) -> [[f64; 2]; 2] {
        inv2(self.g)
    }
}

fn inv2(g: [[f64; 2]; 2]) -> [[f64; 2]; 2] {
    // det 1
    [[g[1][1], -g[0][1]], [-g[1][0], g[0][0]]]
}

/// One draw from the cone measure: A = nu^(1/2) g with nu uniform on (0, 1].
#[derive(Clone, Copy, Debug)]
pub struct ConeSample {
    pub nu: f64,
    pub a: [[f64; 2]; 2],
    pub haar: HaarSample,
}

/// Bounded, compactly supported test functions for the theta transforms.
#[derive(Clone, Copy, Debug)]
pub enum TestFunction {
    /// f(x) = 1_{B_r}(x).
    Ball { r: f64 },
    /// f(x, y) = 1_{B_r}(x) 1_{B_r2}(y).
    PairBall { r: f64, r2: f64 },
    /// f(x, y) = 1_{B_r}(x) 1_{0 < |y-x| < eta}.
    PairFriend { r: f64, eta: f64 },
    /// f(x, y) = 1_{B_r}(x) 1_{|y| <= s|x|, |x wedge y| <= d}.
    PairDet { r: f64, d: f64, s: f64 },
}

impl TestFunction {
    /// Radius of a ball containing the support of every argument.
    pub fn support_radius(&self) -> f64 {
        match *self {
            TestFunction::Ball { r } => r,
            TestFunction::PairBall { r, r2 } => r.max(r2),
            TestFunction::PairFriend { r, eta } => r + eta,
            TestFunction::PairDet { r, s, .. } => r * s.max(1.0),
        }
    }
}

// ---------------------------------------------------------------------------
// Samplers
// ---------------------------------------------------------------------------

/// Sampler state for the Haar probability measure of one lattice.
pub struct MuSampler {
    pub lattice: Arc<Lattice>,
    width: f64,
    y_floor: f64,
    /// Right coset translates for congruence covers (identity otherwise).
    coset_reps: Vec<[[f64; 2]; 2]>,
}

/// Envelope rejection cap; hitting it signals a broken domain predicate.
const REJECTION_CAP: usize = 1_000_000;

impl MuSampler {
    pub fn new(lattice: &Arc<Lattice>) -> Result<MuSampler> {
        let base_width = match lattice.kind {
            LatticeKind::Sl2z | LatticeKind::Hecke(_) => lattice.width_at_infinity.embed(),
            LatticeKind::Congruence(_) => 1.0,
            LatticeKind::Custom => {
                return Err(Error::UnsupportedLattice(
                    "Haar sampling needs a built-in fundamental domain".into(),
                ))
            }
        };
        let y_floor = (1.0 - base_width * base_width / 4.0).sqrt();
        let coset_reps = match lattice.kind {
            LatticeKind::Congruence(n) if n > 1 => coset_representatives(n)?
                .iter()
                .map(|g| g.embed())
                .collect(),
            _ => vec![[[1.0, 0.0], [0.0, 1.0]]],
        };
        Ok(MuSampler { lattice: lattice.clone(), width: base_width, y_floor, coset_reps })
    }

    /// Acceptance probability of the envelope step (hyperbolic area of the
    /// domain over the envelope area width / y_floor).
    pub fn expected_acceptance(&self) -> f64 {
        let base_area = 2.0 * (self.width / 2.0).asin();
        base_area / (self.width / self.y_floor)
    }

    pub fn envelope_area(&self) -> f64 {
        self.width / self.y_floor
    }

    /// Draw the base point z with density proportional to dx dy / y^2 on the
    /// triangle fundamental domain; returns the number of envelope tries.
    pub fn sample_z(&self, rng: &mut impl Rng) -> Result<((f64, f64), u64)> {
        for tries in 1..=REJECTION_CAP {
            let x = rng.gen_range(-self.width / 2.0..self.width / 2.0);
            let u: f64 = 1.0 - rng.gen::<f64>(); // (0, 1]
            let y = self.y_floor / u;
            if x * x + y * y >= 1.0 {
                return Ok(((x, y), tries as u64));
            }
        }
        Err(Error::SamplerCap)
    }

    pub fn sample(&self, rng: &mut impl Rng) -> Result<HaarSample> {
        let ((x, y), _) = self.sample_z(rng)?;
        let theta = rng.gen_range(0.0..2.0 * std::f64::consts::PI);
        let sy = y.sqrt();
        // domain element n_x a_sqrt(y) k_theta
        let (c, s) = (theta.cos(), theta.sin());
        let nxa = [[sy, x / sy], [0.0, 1.0 / sy]];
        let nak = [
            [nxa[0][0] * c - nxa[0][1] * s, nxa[0][0] * s + nxa[0][1] * c],
            [nxa[1][0] * c - nxa[1][1] * s, nxa[1][0] * s + nxa[1][1] * c],
        ];
        // right-coset representative, with the congruence fiber translate
        let mut eval = inv2(nak);
        if self.coset_reps.len() > 1 {
            let tau = self.coset_reps[rng.gen_range(0..self.coset_reps.len())];
            eval = mat_mul(eval, tau);
        }
        let g = inv2(eval);
        let z = moebius_i(g);
        Ok(HaarSample { g, z, theta })
    }

    /// Draw from the cone measure m: nu uniform on (0, 1], A = sqrt(nu) g
    /// with g the coset representative.
    pub fn sample_cone(&self, rng: &mut impl Rng) -> Result<ConeSample> {
        let haar = self.sample(rng)?;
        let g = haar.coset_matrix();
        let nu = 1.0 - rng.gen::<f64>();
        let s = nu.sqrt();
        let a = [[s * g[0][0], s * g[0][1]], [s * g[1][0], s * g[1][1]]];
        Ok(ConeSample { nu, a, haar })
    }
}

fn mat_mul(a: [[f64; 2]; 2], b: [[f64; 2]; 2]) -> [[f64; 2]; 2] {
    [
        [
            a[0][0] * b[0][0] + a[0][1] * b[1][0],
            a[0][0] * b[0][1] + a[0][1] * b[1][1],
        ],
        [
            a[1][0] * b[0][0] + a[1][1] * b[1][0],
            a[1][0] * b[0][1] + a[1][1] * b[1][1],
        ],
    ]
}

fn moebius_i(g: [[f64; 2]; 2]) -> (f64, f64) {
    // g * i for det-1 g
    let den = g[1][0] * g[1][0] + g[1][1] * g[1][1];
    ((g[0][0] * g[1][0] + g[0][1] * g[1][1]) / den, 1.0 / den)
}

/// Lift every element of SL2(Z/N) to an exact SL2(Z) coset representative of
/// Gamma(N).
fn coset_representatives(n: u32) -> Result<Vec<GroupElement>> {
    let lattice_ring = crate::ring::NumberRing::for_hecke(3)?;
    let ni = n as i64;
    let mut reps = Vec::new();
    for a in 0..ni {
        for b in 0..ni {
            for c in 0..ni {
                for d in 0..ni {
                    if (a * d - b * c).rem_euclid(ni) != 1 {
                        continue;
                    }
                    // lift bottom row to a coprime pair, complete, then fix
                    // the top row modulo N by unipotent shifts
                    let (c0, d0) = lift_row(c, d, ni)?;
                    let g0 = crate::fuchsian::complete_to_sl2z(&lattice_ring, d0, -c0)?;
                    // g0 = [[d0, r], [-c0, s]]; rearrange to bottom row (c0, d0)
                    let top = (
                        g0.d.coeffs[0].clone(),
                        (-&g0.b).coeffs[0].clone(),
                    );
                    use num_traits::ToPrimitive;
                    let (mut a0, mut b0) = (top.0.to_i64().unwrap(), top.1.to_i64().unwrap());
                    // a0*d0 - b0*c0 = det(g0) = 1
                    debug_assert_eq!(a0 * d0 - b0 * c0, 1);
                    let mut found = false;
                    for _ in 0..ni {
                        if (a0 - a).rem_euclid(ni) == 0 && (b0 - b).rem_euclid(ni) == 0 {
                            found = true;
                            break;
                        }
                        a0 += c0;
                        b0 += d0;
                    }
                    if !found {
                        return Err(Error::InvalidParam(format!(
                            "no coset lift for [[{a},{b}],[{c},{d}]] mod {n}"
                        )));
                    }
                    reps.push(GroupElement::new(
                        lattice_ring.from_i64(a0),
                        lattice_ring.from_i64(b0),
                        lattice_ring.from_i64(c0),
                        lattice_ring.from_i64(d0),
                    )?);
                }
            }
        }
    }
    Ok(reps)
}

fn lift_row(c: i64, d: i64, n: i64) -> Result<(i64, i64)> {
    for j in 0..=n {
        for k in 0..=n {
            let (cc, dd) = (c + j * n, d + k * n);
            if (cc != 0 || dd != 0) && num_integer::gcd(cc, dd) == 1 {
                return Ok((cc, dd));
            }
        }
    }
    Err(Error::InvalidParam(format!("no coprime lift of row ({c},{d}) mod {n}")))
}

// ---------------------------------------------------------------------------
// Theta transforms
// ---------------------------------------------------------------------------

/// Theta(g) = #{ x in Lambda : g x in B_r } (exact finite count; the orbit
/// cache is extended on demand to radius |g^-1|_op * r).
pub fn theta_ball(orbit: &mut DiscreteOrbit, r: f64, g: [[f64; 2]; 2]) -> Result<u64> {
    orbit.count_ellipse(g, r)
}

/// Pair theta transform over Lambda_a x Lambda_b (pass `None` for the second
/// orbit when both factors are the same orbit). Ordered pairs, including
/// coincident ones, exactly as in the square of the single transform.
pub fn theta_pair(
    orbit_a: &mut DiscreteOrbit,
    orbit_b: Option<&mut DiscreteOrbit>,
    f: TestFunction,
    a_mat: [[f64; 2]; 2],
) -> Result<u64> {
    match f {
        TestFunction::Ball { .. } => {
            Err(Error::InvalidParam("theta_pair needs a pair test function".into()))
        }
        TestFunction::PairBall { r, r2 } => {
            let na = orbit_a.count_ellipse(a_mat, r)?;
            let nb = match orbit_b {
                Some(ob) => ob.count_ellipse(a_mat, r2)?,
                None => orbit_a.count_ellipse(a_mat, r2)?,
            };
            Ok(na * nb)
        }
        TestFunction::PairFriend { r, eta } => {
            let mut xs = Vec::new();
            collect_transformed(orbit_a, a_mat, r, &mut xs)?;
            let mut ys = Vec::new();
            match orbit_b {
                Some(ob) => collect_transformed(ob, a_mat, r + eta, &mut ys)?,
                None => collect_transformed(orbit_a, a_mat, r + eta, &mut ys)?,
            }
            let (pairs, _) = count_close_pairs(&xs, &ys, r, eta);
            Ok(pairs)
        }
        TestFunction::PairDet { r, d, s } => {
            let mut xs = Vec::new();
            collect_transformed(orbit_a, a_mat, r, &mut xs)?;
            let mut ys = Vec::new();
            match orbit_b {
                Some(ob) => collect_transformed(ob, a_mat, s.max(1.0) * r, &mut ys)?,
                None => collect_transformed(orbit_a, a_mat, s.max(1.0) * r, &mut ys)?,
            }
            let mut count = 0u64;
            for &(x0, x1) in &xs {
                let n2 = x0 * x0 + x1 * x1;
                for &(y0, y1) in &ys {
                    if y0 * y0 + y1 * y1 <= s * s * n2 && (x0 * y1 - x1 * y0).abs() <= d {
                        count += 1;
                    }
                }
            }
            Ok(count)
        }
    }
}

/// Transformed orbit points A x with |A x| <= r.
fn collect_transformed(
    orbit: &mut DiscreteOrbit,
    a: [[f64; 2]; 2],
    r: f64,
    out: &mut Vec<(f64, f64)>,
) -> Result<()> {
    let start = out.len();
    orbit.points_in_ellipse(a, r, out)?;
    for p in out[start..].iter_mut() {
        *p = (a[0][0] * p.0 + a[0][1] * p.1, a[1][0] * p.0 + a[1][1] * p.1);
    }
    Ok(())
}

/// Ordered pairs (x, y) with x in B_r, 0 < |y - x| < eta, plus |{x in B_r}|.
fn count_close_pairs(xs: &[(f64, f64)], ys: &[(f64, f64)], r: f64, eta: f64) -> (u64, u64) {
    let mut grid: HashMap<(i32, i32), Vec<(f64, f64)>> = HashMap::new();
    for &(x, y) in ys {
        grid.entry(((x / eta).floor() as i32, (y / eta).floor() as i32)).or_default().push((x, y));
    }
    let mut pairs = 0u64;
    let mut inside = 0u64;
    for &(x, y) in xs {
        if x * x + y * y > r * r {
            continue;
        }
        inside += 1;
        let cx = (x / eta).floor() as i32;
        let cy = (y / eta).floor() as i32;
        for ix in cx - 1..=cx + 1 {
            for iy in cy - 1..=cy + 1 {
                if let Some(cell) = grid.get(&(ix, iy)) {
                    for &(px, py) in cell {
                        let d2 = (px - x) * (px - x) + (py - y) * (py - y);
                        if d2 > 0.0 && d2 < eta * eta {
                            pairs += 1;
                        }
                    }
                }
            }
        }
    }
    (pairs, inside)
}

// ---------------------------------------------------------------------------
// Check configuration and reports
// ---------------------------------------------------------------------------

/// Monte Carlo configuration: sample budget split, caps, and seeding.
#[derive(Clone, Copy, Debug)]
pub struct McConfig {
    pub seed: u64,
    pub workers: usize,
    /// Samples with |g^-1|_op (or |A^-1|_op) beyond this are redrawn.
    pub op_cap: f64,
    /// Samples needing orbit cache radius beyond this are redrawn.
    pub radius_cap: f64,
}

impl Default for McConfig {
    fn default() -> Self {
        McConfig { seed: 1, workers: 1, op_cap: 1e3, radius_cap: 2000.0 }
    }
}

/// Machine-readable verification report for one formula check.
#[derive(Clone, Debug, Serialize)]
pub struct CheckReport {
    pub schema_version: u32,
    pub formula: String,
    pub lattice: String,
    pub params: serde_json::Value,
    pub n: usize,
    pub seed: u64,
    pub workers: usize,
    pub estimate: f64,
    pub stderr: f64,
    pub reference: f64,
    pub reference_uncertainty: f64,
    pub z_score: f64,
    pub rel_gap: f64,
    pub resample_rate: f64,
    pub bias_bound: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub excluded_empty: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub breakdown: Option<serde_json::Value>,
}

impl CheckReport {
    fn finish(
        formula: &str,
        lattice: &Lattice,
        params: serde_json::Value,
        n: usize,
        cfg: &McConfig,
        acc: &MeanAcc,
        reference: f64,
        reference_uncertainty: f64,
        resamples: u64,
    ) -> CheckReport {
        let estimate = acc.mean();
        let stderr = acc.stderr();
        let combined = (stderr * stderr + reference_uncertainty * reference_uncertainty)
            .sqrt()
            .max(1e-300);
        let z_score = (estimate - reference) / combined;
        let rel_gap = if reference.abs() > 1e-300 {
            (estimate - reference).abs() / reference.abs()
        } else {
            (estimate - reference).abs()
        };
        let total_draws = acc.n + resamples;
        let resample_rate =
            if total_draws > 0 { resamples as f64 / total_draws as f64 } else { 0.0 };
        CheckReport {
            schema_version: 1,
            formula: formula.to_string(),
            lattice: lattice.config_string(),
            params,
            n,
            seed: cfg.seed,
            workers: cfg.workers,
            estimate,
            stderr,
            reference,
            reference_uncertainty,
            z_score,
            rel_gap,
            resample_rate,
            bias_bound: resample_rate * acc.max_abs,
            excluded_empty: None,
            breakdown: None,
        }
    }
}

/// Draw a Haar sample passing the operator-norm and cache-radius caps,
/// counting redraws.
fn draw_mu_capped(
    sampler: &MuSampler,
    rng: &mut impl Rng,
    support: f64,
    cfg: &McConfig,
    resamples: &mut u64,
) -> Result<HaarSample> {
    for _ in 0..REJECTION_CAP {
        let s = sampler.sample(rng)?;
        let op = op_norm_inv(s.coset_matrix());
        if op <= cfg.op_cap && op * support <= cfg.radius_cap {
            return Ok(s);
        }
        *resamples += 1;
    }
    Err(Error::SamplerCap)
}

pub(crate) fn draw_cone_capped(
    sampler: &MuSampler,
    rng: &mut impl Rng,
    support: f64,
    cfg: &McConfig,
    resamples: &mut u64,
) -> Result<ConeSample> {
    for _ in 0..REJECTION_CAP {
        let s = sampler.sample_cone(rng)?;
        let op = op_norm_inv(s.a);
        if op <= cfg.op_cap && op * support <= cfg.radius_cap {
            return Ok(s);
        }
        *resamples += 1;
    }
    Err(Error::SamplerCap)
}

// ---------------------------------------------------------------------------
// Formula checks
// ---------------------------------------------------------------------------

/// First moment (Siegel-Veech): the mu-average of Theta_{Lambda; 1_{B_r}}
/// equals c_Gamma * pi r^2.
pub fn first_moment_check(
    orbit: &mut DiscreteOrbit,
    r: f64,
    n: usize,
    cfg: &McConfig,
) -> Result<CheckReport> {
    let lattice = orbit.lattice.clone();
    let sampler = MuSampler::new(&lattice)?;
    let mut acc = MeanAcc::default();
    let mut resamples = 0u64;
    for (w, chunk) in worker_chunks(n, cfg.workers).into_iter().enumerate() {
        let mut rng = worker_rng(cfg.seed, w as u32);
        let mut local = MeanAcc::default();
        for _ in 0..chunk {
            let s = draw_mu_capped(&sampler, &mut rng, r, cfg, &mut resamples)?;
            let theta = theta_ball(orbit, r, s.coset_matrix())? as f64;
            local.push(theta);
        }
        acc.merge(&local);
    }
    let reference = c_gamma(&lattice) * std::f64::consts::PI * r * r;
    Ok(CheckReport::finish(
        "first-moment",
        &lattice,
        serde_json::json!({ "radius": r, "op_cap": cfg.op_cap, "radius_cap": cfg.radius_cap }),
        n,
        cfg,
        &acc,
        reference,
        0.0,
        resamples,
    ))
}

/// Integral of (f(x,x) + f(x,-x)) dx for the diagonal reference term.
fn diagonal_integral(f: TestFunction) -> f64 {
    let pi = std::f64::consts::PI;
    match f {
        TestFunction::Ball { .. } => 0.0,
        TestFunction::PairBall { r, r2 } => {
            let m = r.min(r2);
            2.0 * pi * m * m
        }
        TestFunction::PairFriend { r, eta } => {
            // f(x,x) = 0 (punctured); f(x,-x) = 1 iff 0 < 2|x| < eta
            let m = r.min(eta / 2.0);
            pi * m * m
        }
        TestFunction::PairDet { r, s, .. } => {
            if s >= 1.0 {
                2.0 * pi * r * r
            } else {
                0.0
            }
        }
    }
}

/// Pair moment (cone form): the cone average of
/// Theta_{Lambda_a, Lambda_b; f}(A) det(A)^2 equals
/// c_Gamma * integral of Phi_ab(|x wedge y|) f + the homothetic diagonal term
/// (c_Gamma / 2) * integral of (f(x,x) + f(x,-x)).
pub fn pair_moment_check(
    orbit_a: &mut DiscreteOrbit,
    mut orbit_b: Option<&mut DiscreteOrbit>,
    f: TestFunction,
    table: &PairTable,
    n: usize,
    ci_samples: usize,
    cfg: &McConfig,
) -> Result<CheckReport> {
    let lattice = orbit_a.lattice.clone();
    let sampler = MuSampler::new(&lattice)?;
    let support = f.support_radius();
    let homothetic = table.is_homothetic_pair;
    let mut acc = MeanAcc::default();
    let mut diag_acc = MeanAcc::default();
    let mut resamples = 0u64;
    for (w, chunk) in worker_chunks(n, cfg.workers).into_iter().enumerate() {
        let mut rng = worker_rng(cfg.seed, w as u32);
        let mut local = MeanAcc::default();
        let mut local_diag = MeanAcc::default();
        for _ in 0..chunk {
            let s = draw_cone_capped(&sampler, &mut rng, support, cfg, &mut resamples)?;
            let theta = theta_pair(orbit_a, orbit_b.as_deref_mut(), f, s.a)? as f64;
            let weight = s.nu * s.nu;
            local.push(theta * weight);
            // coincident and antipodal pairs, reported separately
            let diag = if homothetic {
                match f {
                    TestFunction::PairBall { r, r2 } => {
                        2.0 * orbit_a.count_ellipse(s.a, r.min(r2))? as f64
                    }
                    TestFunction::PairFriend { r, eta } => {
                        orbit_a.count_ellipse(s.a, r.min(eta / 2.0))? as f64
                    }
                    TestFunction::PairDet { r, s: sc, .. } => {
                        if sc >= 1.0 {
                            2.0 * orbit_a.count_ellipse(s.a, r)? as f64
                        } else {
                            0.0
                        }
                    }
                    TestFunction::Ball { .. } => 0.0,
                }
            } else {
                0.0
            };
            local_diag.push(diag * weight);
        }
        acc.merge(&local);
        diag_acc.merge(&local_diag);
    }

    // reference: c * correlation integral + delta * (c/2) * diagonal integral
    let kernel = match f {
        TestFunction::PairBall { r, r2 } => {
            if (r - r2).abs() > 1e-12 {
                return Err(Error::InvalidParam(
                    "correlation integral reference expects equal ball radii".into(),
                ));
            }
            CorrelationKernel::BallBall { r }
        }
        TestFunction::PairFriend { r, eta } => CorrelationKernel::BallPunctured { r, eps: eta },
        TestFunction::PairDet { r, d, s } => CorrelationKernel::BallDetRegion { r, d, s },
        TestFunction::Ball { .. } => {
            return Err(Error::InvalidParam("pair moment needs a pair test function".into()))
        }
    };
    let cg = c_gamma(&lattice);
    let mut ci_rng = worker_rng(cfg.seed ^ 0xC1C1_C1C1, 0);
    let (ci, ci_unc) = correlation_integral(table, kernel, ci_samples, &mut ci_rng)?;
    let diag_ref = if homothetic { (cg / 2.0) * diagonal_integral(f) } else { 0.0 };
    let reference = cg * ci + diag_ref;
    let reference_uncertainty = cg * ci_unc;

    let mut report = CheckReport::finish(
        "pair-moment",
        &lattice,
        serde_json::json!({
            "f": format!("{f:?}"),
            "cusp_a": table.cusp_a,
            "cusp_b": table.cusp_b,
            "homothetic": homothetic,
            "ci_samples": ci_samples,
            "op_cap": cfg.op_cap,
            "radius_cap": cfg.radius_cap,
        }),
        n,
        cfg,
        &acc,
        reference,
        reference_uncertainty,
        resamples,
    );
    report.breakdown = Some(serde_json::json!({
        "diagonal_estimate": diag_acc.mean(),
        "diagonal_stderr": diag_acc.stderr(),
        "diagonal_reference": diag_ref,
        "offdiagonal_estimate": acc.mean() - diag_acc.mean(),
        "offdiagonal_reference": cg * ci,
    }));
    Ok(report)
}

/// Second moment: the cone average of (det(A) Theta_{Lambda; 1_{B_r}}(A))^2
/// equals (c pi r^2)^2 + c pi r^2 + c * [CI - c (pi r^2)^2], where the square
/// of the sum is exactly the pair theta including coincident pairs.
pub fn second_moment_check(
    orbit: &mut DiscreteOrbit,
    r: f64,
    table: &PairTable,
    n: usize,
    ci_samples: usize,
    cfg: &McConfig,
) -> Result<CheckReport> {
    let lattice = orbit.lattice.clone();
    let sampler = MuSampler::new(&lattice)?;
    let mut acc = MeanAcc::default();
    let mut first_acc = MeanAcc::default();
    let mut resamples = 0u64;
    for (w, chunk) in worker_chunks(n, cfg.workers).into_iter().enumerate() {
        let mut rng = worker_rng(cfg.seed, w as u32);
        let mut local = MeanAcc::default();
        let mut local_first = MeanAcc::default();
        for _ in 0..chunk {
            let s = draw_cone_capped(&sampler, &mut rng, r, cfg, &mut resamples)?;
            let count = orbit.count_ellipse(s.a, r)? as f64;
            // (sum h(Ax))^2 = pair theta with coincident pairs included
            local.push(count * count * s.nu * s.nu);
            local_first.push(count * s.nu);
        }
        acc.merge(&local);
        first_acc.merge(&local_first);
    }
    let cg = c_gamma(&lattice);
    let area = std::f64::consts::PI * r * r;
    let mut ci_rng = worker_rng(cfg.seed ^ 0xC1C1_C1C1, 0);
    let (ci, ci_unc) =
        correlation_integral(table, CorrelationKernel::BallBall { r }, ci_samples, &mut ci_rng)?;
    // (c |B|)^2 + c |B| + c (CI - c |B|^2) = c CI + c |B|
    let reference = cg * ci + cg * area;
    let reference_uncertainty = cg * ci_unc;
    let mut report = CheckReport::finish(
        "second-moment",
        &lattice,
        serde_json::json!({
            "radius": r,
            "ci_samples": ci_samples,
            "op_cap": cfg.op_cap,
            "radius_cap": cfg.radius_cap,
        }),
        n,
        cfg,
        &acc,
        reference,
        reference_uncertainty,
        resamples,
    );
    let variance_of_count = acc.mean() - (cg * area) * (cg * area);
    report.breakdown = Some(serde_json::json!({
        "main_term": (cg * area) * (cg * area),
        "diagonal_term": cg * area,
        "correlation_term": cg * (ci - cg * area * area),
        "first_moment_estimate": first_acc.mean(),
        "variance_lhs_minus_main": variance_of_count,
    }));
    Ok(report)
}

/// Averaged pair correlation (Poissonian limit): the cone average of
/// R_2(B_s, A(S), R) det(A) converges to |B_s| = pi s^2.
pub fn avg_pair_correlation(
    set: &mut HolonomySet,
    s_param: f64,
    r: f64,
    n: usize,
    cfg: &McConfig,
) -> Result<CheckReport> {
    if set.is_empty() {
        return Err(Error::EmptyBall);
    }
    let lattice = set.components[0].1.lattice.clone();
    let sampler = MuSampler::new(&lattice)?;
    let c_m = set.density_constant();
    let eta = s_param / c_m.sqrt();
    let support = r + eta;
    let mut acc = MeanAcc::default();
    let mut resamples = 0u64;
    let mut excluded_empty = 0u64;
    for (w, chunk) in worker_chunks(n, cfg.workers).into_iter().enumerate() {
        let mut rng = worker_rng(cfg.seed, w as u32);
        let mut local = MeanAcc::default();
        for _ in 0..chunk {
            let smp = draw_cone_capped(&sampler, &mut rng, support, cfg, &mut resamples)?;
            let mut pts = Vec::new();
            set.transformed_points(smp.a, support, &mut pts)?;
            let (pairs, inside) = count_close_pairs(&pts, &pts, r, eta);
            if inside == 0 {
                excluded_empty += 1;
                continue;
            }
            let r2_value = pairs as f64 / inside as f64;
            local.push(r2_value * smp.nu);
        }
        acc.merge(&local);
    }
    let reference = std::f64::consts::PI * s_param * s_param;
    let mut report = CheckReport::finish(
        "avg-paircorr",
        &lattice,
        serde_json::json!({
            "s": s_param,
            "radius": r,
            "c_M": c_m,
            "eta": eta,
            "op_cap": cfg.op_cap,
            "radius_cap": cfg.radius_cap,
        }),
        n,
        cfg,
        &acc,
        reference,
        0.0,
        resamples,
    );
    report.excluded_empty = Some(excluded_empty);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fuchsian::{build_congruence, build_hecke, build_sl2z};
    use crate::mc::{chi2_uniform_bins, ks_statistic_two_sample, ks_statistic_uniform};
    use crate::orbit::OrbitConfig;

    fn sl2z_orbit() -> DiscreteOrbit {
        DiscreteOrbit::new(
            Arc::new(build_sl2z()),
            0,
            OrbitConfig { prune_factor: 1.5, ..OrbitConfig::default() },
        )
        .unwrap()
    }

    #[test]
    fn sampler_base_point_statistics() {
        // acceptance rate, domain-area consistency, and the quadrature
        // reference for E[1 / Im z]
        let l = Arc::new(build_sl2z());
        let sampler = MuSampler::new(&l).unwrap();
        let mut rng = worker_rng(11, 0);
        let n = 1_000_000usize;
        let mut tries = 0u64;
        let mut inv_y = MeanAcc::default();
        for _ in 0..n {
            let ((x, y), t) = sampler.sample_z(&mut rng).unwrap();
            tries += t;
            inv_y.push(1.0 / y);
            assert!(x.abs() <= 0.5 && x * x + y * y >= 1.0);
        }
        let rate = n as f64 / tries as f64;
        assert!(rate > 0.6 && rate < 1.0, "acceptance rate {rate}");
        let v_est = rate * sampler.envelope_area();
        let v = std::f64::consts::PI / 3.0;
        assert!((v_est - v).abs() / v < 0.01, "area estimate {v_est} vs {v}");

        // quadrature oracle for (1/V) int 1/y dmu: x-Simpson over the closed
        // inner integral int_{ymin}^inf y^-3 dy = 1 / (2 ymin^2)
        let m = 4000;
        let h = 1.0 / m as f64;
        let f = |x: f64| 1.0 / (2.0 * (1.0 - x * x));
        let mut integral = 0.0;
        for i in 0..m {
            let x0 = -0.5 + i as f64 * h;
            integral += h / 6.0 * (f(x0) + 4.0 * f(x0 + h / 2.0) + f(x0 + h));
        }
        let reference = integral / v;
        let z = (inv_y.mean() - reference) / inv_y.stderr();
        assert!(z.abs() < 3.0, "E[1/y] = {} vs {reference} (z = {z})", inv_y.mean());
    }

    #[test]
    fn hecke_sampler_acceptance_in_range() {
        let l = Arc::new(build_hecke(5).unwrap());
        let sampler = MuSampler::new(&l).unwrap();
        let mut rng = worker_rng(13, 0);
        let mut tries = 0u64;
        let n = 200_000;
        for _ in 0..n {
            let (_, t) = sampler.sample_z(&mut rng).unwrap();
            tries += t;
        }
        let rate = n as f64 / tries as f64;
        assert!(rate > 0.6 && rate < 1.0, "rate {rate}");
        let v_est = rate * sampler.envelope_area();
        let v = l.covolume;
        assert!((v_est - v).abs() / v < 0.01, "{v_est} vs {v}");
    }

    #[test]
    fn sampler_angle_uniform_and_base_point_consistent() {
        let l = Arc::new(build_sl2z());
        let sampler = MuSampler::new(&l).unwrap();
        let mut rng = worker_rng(17, 0);
        let mut angles = Vec::with_capacity(100_000);
        for _ in 0..100_000 {
            let s = sampler.sample(&mut rng).unwrap();
            angles.push(s.theta);
            // g * i = z within 1e-10
            let zi = moebius_i(s.g);
            assert!((zi.0 - s.z.0).abs() < 1e-10 && (zi.1 - s.z.1).abs() < 1e-10);
            let det = s.g[0][0] * s.g[1][1] - s.g[0][1] * s.g[1][0];
            assert!((det - 1.0).abs() < 1e-10);
        }
        // chi-squared, 20 bins, 1% critical value for 19 dof is 36.19
        let chi2 = chi2_uniform_bins(&angles, 2.0 * std::f64::consts::PI, 20);
        assert!(chi2 < 36.19, "chi2 = {chi2}");
    }

    #[test]
    fn cone_determinant_law() {
        let l = Arc::new(build_sl2z());
        let sampler = MuSampler::new(&l).unwrap();
        let mut rng = worker_rng(19, 0);
        let mut dets = Vec::with_capacity(50_000);
        let mut m1 = MeanAcc::default();
        let mut m2 = MeanAcc::default();
        for _ in 0..50_000 {
            let c = sampler.sample_cone(&mut rng).unwrap();
            let det = c.a[0][0] * c.a[1][1] - c.a[0][1] * c.a[1][0];
            assert!((det - c.nu).abs() < 1e-10);
            dets.push(det);
            m1.push(det);
            m2.push(det * det);
        }
        assert!((m1.mean() - 0.5).abs() < 3.0 * m1.stderr());
        assert!((m2.mean() - 1.0 / 3.0).abs() < 3.0 * m2.stderr());
        let d = ks_statistic_uniform(&mut dets);
        assert!(d * (50_000.0f64).sqrt() < 1.63, "KS = {d}");
    }

    #[test]
    fn theta_examples() {
        let mut orb = sl2z_orbit();
        let id = [[1.0, 0.0], [0.0, 1.0]];
        assert_eq!(theta_ball(&mut orb, 5.0, id).unwrap(), orb.count(5.0).unwrap());
        // rotation invariance of the ball
        let th = 1.1f64;
        let rot = [[th.cos(), th.sin()], [-th.sin(), th.cos()]];
        assert_eq!(theta_ball(&mut orb, 5.0, rot).unwrap(), theta_ball(&mut orb, 5.0, id).unwrap());
        // diag(2, 1/2) ball(2): primitive (m, n) with (2m)^2 + (n/2)^2 <= 4
        let a = [[2.0, 0.0], [0.0, 0.5]];
        let got = theta_ball(&mut orb, 2.0, a).unwrap();
        let mut expect = 0u64;
        for m in -1i64..=1 {
            for n in -4i64..=4 {
                if (m != 0 || n != 0)
                    && num_integer::gcd(m, n) == 1
                    && 16 * m * m + n * n <= 16
                {
                    expect += 1;
                }
            }
        }
        assert_eq!(got, expect);
        // pair theta for a ball pair is the product of counts
        let p = theta_pair(&mut orb, None, TestFunction::PairBall { r: 3.0, r2: 4.0 }, id).unwrap();
        let n3 = theta_ball(&mut orb, 3.0, id).unwrap();
        let n4 = theta_ball(&mut orb, 4.0, id).unwrap();
        assert_eq!(p, n3 * n4);
    }

    #[test]
    fn left_invariance_of_theta_distribution() {
        // distribution of theta(f, h g) matches theta(f, g): two-sample KS
        let l = Arc::new(build_sl2z());
        let sampler = MuSampler::new(&l).unwrap();
        let mut orb = sl2z_orbit();
        let h = [[1.0, 0.3], [0.0, 1.0]];
        let h = mat_mul(h, [[1.1, 0.0], [0.0, 1.0 / 1.1]]);
        let mut rng = worker_rng(23, 0);
        let n = 10_000;
        let mut plain = Vec::with_capacity(n);
        let mut shifted = Vec::with_capacity(n);
        for _ in 0..n {
            let s = sampler.sample(&mut rng).unwrap();
            let e = s.coset_matrix();
            if op_norm_inv(e) > 50.0 {
                continue;
            }
            plain.push(theta_ball(&mut orb, 3.0, e).unwrap() as f64);
            shifted.push(theta_ball(&mut orb, 3.0, mat_mul(h, e)).unwrap() as f64);
        }
        let d = ks_statistic_two_sample(&mut plain, &mut shifted);
        let na = plain.len() as f64;
        let crit = 1.628 * (2.0 / na).sqrt();
        assert!(d < crit, "KS two-sample d = {d}, crit = {crit}");
    }

    #[test]
    fn first_moment_reproducible_and_sane() {
        let mut orb = sl2z_orbit();
        let cfg = McConfig { seed: 7, workers: 3, ..Default::default() };
        let rep1 = first_moment_check(&mut orb, 4.0, 20_000, &cfg).unwrap();
        let rep2 = first_moment_check(&mut orb, 4.0, 20_000, &cfg).unwrap();
        assert_eq!(rep1.estimate.to_bits(), rep2.estimate.to_bits());
        assert_eq!(rep1.stderr.to_bits(), rep2.stderr.to_bits());
        assert!(rep1.z_score.abs() < 4.0, "z = {}", rep1.z_score);
        // tiny support: both sides near zero
        let rep = first_moment_check(&mut orb, 1e-3, 2_000, &cfg).unwrap();
        assert!(rep.estimate == 0.0);
        assert!(rep.reference < 1e-4);
    }

    #[test]
    fn stderr_scales_like_inverse_sqrt_n() {
        let mut orb = sl2z_orbit();
        let cfg = McConfig { seed: 5, workers: 1, ..Default::default() };
        let se3 = first_moment_check(&mut orb, 2.0, 1_000, &cfg).unwrap().stderr;
        let se4 = first_moment_check(&mut orb, 2.0, 10_000, &cfg).unwrap().stderr;
        let se5 = first_moment_check(&mut orb, 2.0, 100_000, &cfg).unwrap().stderr;
        let sqrt10 = 10.0f64.sqrt();
        for (a, b) in [(se3, se4), (se4, se5)] {
            let ratio = a / b;
            assert!(
                (ratio / sqrt10 - 1.0).abs() < 0.2,
                "SE ratio {ratio} vs sqrt(10) = {sqrt10}"
            );
        }
    }

    #[test]
    fn gamma2_sampler_covers_cosets() {
        let l = Arc::new(build_congruence(2).unwrap());
        let sampler = MuSampler::new(&l).unwrap();
        assert_eq!(sampler.coset_reps.len(), 6);
        let mut rng = worker_rng(29, 0);
        for _ in 0..100 {
            let s = sampler.sample(&mut rng).unwrap();
            let det = s.g[0][0] * s.g[1][1] - s.g[0][1] * s.g[1][0];
            assert!((det - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn second_moment_trivial_cases() {
        let mut orb = sl2z_orbit();
        let l = Arc::new(build_sl2z());
        let table = crate::pairstats::build_pair_table(
            &l,
            0,
            0,
            500.0,
            crate::pairstats::PairTableConfig::default(),
        )
        .unwrap();
        let cfg = McConfig { seed: 3, workers: 1, ..Default::default() };
        let rep = second_moment_check(&mut orb, 2.0, &table, 20_000, 50_000, &cfg).unwrap();
        // variance positivity: LHS - (c |B|)^2 >= -3 SE
        let main = (c_gamma(&l) * std::f64::consts::PI * 4.0).powi(2);
        assert!(rep.estimate - main > -3.0 * rep.stderr);
        assert!(rep.z_score.abs() < 4.0, "z = {}", rep.z_score);
    }
}
