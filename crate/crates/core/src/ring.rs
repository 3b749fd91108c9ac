//! Exact arithmetic in the trace field Z[lambda_q] of Hecke triangle groups,
//! lambda_q = 2cos(pi/q), with a certified floating-point embedding.
//!
//! Elements are integer coefficient vectors modulo the minimal polynomial of
//! lambda_q. The minimal polynomial is derived from the (2q)-th cyclotomic
//! polynomial via the substitution x = y + 1/y; a table for small q is checked
//! against the derivation in the tests. Zero testing is exact (all
//! coefficients zero); the float embedding carries a certified absolute error
//! bound and is advisory for ordering and pruning only.

use crate::error::{Error, Result};
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use std::fmt;
use std::sync::Arc;

/// Largest ring degree we construct; phi(2q)/2 <= 12 covers every q <= 24
/// (and a few beyond).
pub const MAX_DEGREE: usize = 12;

// ---------------------------------------------------------------------------
// integer polynomial helpers (dense, little-endian coefficient order)
// ---------------------------------------------------------------------------

fn poly_trim(p: &mut Vec<BigInt>) {
    while p.len() > 1 && p.last().map_or(false, |c| c.is_zero()) {
        p.pop();
    }
}

fn poly_mul(a: &[BigInt], b: &[BigInt]) -> Vec<BigInt> {
    let mut out = vec![BigInt::zero(); a.len() + b.len() - 1];
    for (i, ai) in a.iter().enumerate() {
        if ai.is_zero() {
            continue;
        }
        for (j, bj) in b.iter().enumerate() {
            out[i + j] += ai * bj;
        }
    }
    out
}

/// Exact division of integer polynomials; returns None if it does not divide.
fn poly_div_exact(num: &[BigInt], den: &[BigInt]) -> Option<Vec<BigInt>> {
    let mut rem: Vec<BigInt> = num.to_vec();
    poly_trim(&mut rem);
    let mut den = den.to_vec();
    poly_trim(&mut den);
    let dl = den.len();
    if dl > rem.len() {
        return None;
    }
    let lead = den.last().unwrap().clone();
    let mut quot = vec![BigInt::zero(); rem.len() - dl + 1];
    for k in (0..quot.len()).rev() {
        let c = rem[k + dl - 1].clone();
        if c.is_zero() {
            continue;
        }
        if (&c % &lead) != BigInt::zero() {
            return None;
        }
        let q = &c / &lead;
        for (i, d) in den.iter().enumerate() {
            rem[k + i] -= &q * d;
        }
        quot[k] = q;
    }
    if rem.iter().any(|c| !c.is_zero()) {
        return None;
    }
    Some(quot)
}

/// n-th cyclotomic polynomial by iterated exact division of x^n - 1.
fn cyclotomic(n: u32) -> Vec<BigInt> {
    let mut num = vec![BigInt::zero(); n as usize + 1];
    num[0] = BigInt::from(-1);
    num[n as usize] = BigInt::one();
    for d in 1..n {
        if n % d == 0 {
            let phi_d = cyclotomic(d);
            num = poly_div_exact(&num, &phi_d).expect("cyclotomic division is exact");
        }
    }
    num
}

/// Minimal polynomial of 2cos(pi/q): write Phi_{2q}(y) = y^m Psi(y + 1/y)
/// using the palindromic symmetry of cyclotomic polynomials, with
/// y^k + y^{-k} expanded through the recurrence V_k = z V_{k-1} - V_{k-2}.
fn min_poly_two_cos(q: u32) -> Vec<BigInt> {
    if q == 3 {
        // 2cos(pi/3) = 1: Phi_6(y) = y^2 - y + 1 collapses to z - 1.
        return vec![BigInt::from(-1), BigInt::one()];
    }
    let phi = cyclotomic(2 * q);
    let m = (phi.len() - 1) / 2;
    // V_k(z) with V_0 = 2, V_1 = z.
    let mut v_prev: Vec<BigInt> = vec![BigInt::from(2)];
    let mut v_cur: Vec<BigInt> = vec![BigInt::zero(), BigInt::one()];
    let mut out = vec![BigInt::zero(); m + 1];
    out[0] = phi[m].clone();
    for k in 1..=m {
        if k > 1 {
            // next = z*V_cur - V_prev
            let mut next = vec![BigInt::zero(); v_cur.len() + 1];
            next[1..].clone_from_slice(&v_cur);
            for (i, c) in v_prev.iter().enumerate() {
                next[i] -= c;
            }
            v_prev = std::mem::replace(&mut v_cur, next);
        }
        let a = &phi[m + k];
        if !a.is_zero() {
            for (i, c) in v_cur.iter().enumerate() {
                out[i] += a * c;
            }
        }
    }
    poly_trim(&mut out);
    out
}

fn eval_rat(poly: &[BigInt], x: &BigRational) -> BigRational {
    let mut acc = BigRational::zero();
    for c in poly.iter().rev() {
        acc = acc * x + BigRational::from_integer(c.clone());
    }
    acc
}

fn rat_from_f64(x: f64) -> BigRational {
    BigRational::from_float(x).expect("finite float")
}

/// Truncate a rational to denominator 10^45 to keep Newton iterates small.
fn rat_truncate(x: &BigRational) -> BigRational {
    let scale = BigInt::from(10u8).pow(45);
    let scaled = (x * BigRational::from_integer(scale.clone())).floor();
    BigRational::new(scaled.to_integer(), scale)
}

// ---------------------------------------------------------------------------
// NumberRing
// ---------------------------------------------------------------------------

/// The ring Z[2cos(pi/q)] with a certified real embedding of its generator.
pub struct NumberRing {
    pub q: u32,
    pub degree: usize,
    /// Monic integer minimal polynomial of lambda_q, little-endian,
    /// length degree+1.
    pub min_poly: Vec<BigInt>,
    /// Rational approximation of lambda_q with |min_poly(root)| < 1e-30.
    root_lo: BigRational,
    root_hi: BigRational,
    root_f64: f64,
    /// Certified bound on |root_f64 - lambda_q|.
    root_err: f64,
    /// Companion-matrix columns: lambda * lambda^j expressed in the power
    /// basis, as i64 (coefficients of the minimal polynomials here are tiny).
    mul_lambda: Vec<Vec<i64>>,
    /// Powers of the embedded root, [1, r, r^2, ...].
    root_pows: Vec<f64>,
}

impl fmt::Debug for NumberRing {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "NumberRing(q={}, degree={})", self.q, self.degree)
    }
}

impl PartialEq for NumberRing {
    fn eq(&self, other: &Self) -> bool {
        self.q == other.q
    }
}
impl Eq for NumberRing {}

impl NumberRing {
    /// The trace ring of the Hecke group H_q. For q=3 this is Z itself.
    pub fn for_hecke(q: u32) -> Result<Arc<NumberRing>> {
        if q < 3 {
            return Err(Error::InvalidParam(format!("q must be >= 3, got {q}")));
        }
        let min_poly = min_poly_two_cos(q);
        let degree = min_poly.len() - 1;
        if degree > MAX_DEGREE {
            return Err(Error::UnsupportedRing { q, degree, limit: MAX_DEGREE });
        }
        debug_assert!(min_poly.last().unwrap().is_one(), "minimal polynomial is monic");

        let seed = 2.0 * (std::f64::consts::PI / q as f64).cos();
        let (root_lo, root_hi) = certify_root(&min_poly, seed);
        let mid = (&root_lo + &root_hi) / BigRational::from_integer(BigInt::from(2));
        let root_f64 = mid.to_f64().expect("root fits f64");
        // interval width plus an ulp of slack for the conversion
        let width = (&root_hi - &root_lo).to_f64().unwrap_or(1e-25);
        let root_err = width + root_f64.abs() * 4.0 * f64::EPSILON;

        trial_factorization_check(&min_poly, q);

        let mut mul_lambda = Vec::with_capacity(degree);
        for j in 0..degree {
            // lambda * lambda^j
            let mut col = vec![0i64; degree];
            if j + 1 < degree {
                col[j + 1] = 1;
            } else {
                for i in 0..degree {
                    col[i] = -min_poly[i].to_i64().expect("small minimal polynomial");
                }
            }
            mul_lambda.push(col);
        }
        let mut root_pows = vec![1.0f64; degree.max(1)];
        for i in 1..degree {
            root_pows[i] = root_pows[i - 1] * root_f64;
        }

        Ok(Arc::new(NumberRing {
            q,
            degree,
            min_poly,
            root_lo,
            root_hi,
            root_f64,
            root_err,
            mul_lambda,
            root_pows,
        }))
    }

    pub fn lambda_f64(&self) -> f64 {
        self.root_f64
    }

    pub fn root_error(&self) -> f64 {
        self.root_err
    }

    /// |min_poly(mid)| as an exact rational, for the construction invariant.
    pub fn residual_at_root(&self) -> BigRational {
        let mid = (&self.root_lo + &self.root_hi) / BigRational::from_integer(BigInt::from(2));
        eval_rat(&self.min_poly, &mid).abs()
    }

    pub fn zero(self: &Arc<Self>) -> RingElement {
        RingElement { ring: self.clone(), coeffs: vec![BigInt::zero(); self.degree] }
    }

    pub fn one(self: &Arc<Self>) -> RingElement {
        self.from_i64(1)
    }

    pub fn from_i64(self: &Arc<Self>, n: i64) -> RingElement {
        let mut coeffs = vec![BigInt::zero(); self.degree];
        coeffs[0] = BigInt::from(n);
        RingElement { ring: self.clone(), coeffs }
    }

    /// The generator lambda_q (equals 1 when q = 3).
    pub fn lambda(self: &Arc<Self>) -> RingElement {
        if self.degree == 1 {
            return self.from_i64(1);
        }
        let mut coeffs = vec![BigInt::zero(); self.degree];
        coeffs[1] = BigInt::one();
        RingElement { ring: self.clone(), coeffs }
    }

    pub fn from_coeffs(self: &Arc<Self>, coeffs: Vec<BigInt>) -> RingElement {
        assert_eq!(coeffs.len(), self.degree, "coefficient vector length");
        RingElement { ring: self.clone(), coeffs }
    }

    /// Multiplication-by-lambda matrix columns (power basis), small integers.
    pub fn mul_lambda_columns(&self) -> &[Vec<i64>] {
        &self.mul_lambda
    }

    /// Embedding row: the float value of an element with coefficient vector c
    /// is sum_i c[i] * row[i].
    pub fn embedding_row(&self) -> &[f64] {
        &self.root_pows
    }

    /// Shrink the certified root enclosure by exact bisection until its width
    /// is below `target`, returning the new bracket.
    fn refined_bracket(&self, target: &BigRational) -> (BigRational, BigRational) {
        let mut lo = self.root_lo.clone();
        let mut hi = self.root_hi.clone();
        let neg_at_lo = eval_rat(&self.min_poly, &lo).is_negative();
        while &(&hi - &lo) > target {
            let mid = (&lo + &hi) / BigRational::from_integer(BigInt::from(2));
            let v = eval_rat(&self.min_poly, &mid);
            if v.is_zero() {
                lo = mid.clone();
                hi = mid;
                break;
            }
            if v.is_negative() == neg_at_lo {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        (lo, hi)
    }
}

/// Locate a certified root bracket [lo,hi] with exact sign change and
/// |min_poly(mid)| < 1e-30.
fn certify_root(min_poly: &[BigInt], seed: f64) -> (BigRational, BigRational) {
    let deriv: Vec<BigInt> = min_poly
        .iter()
        .enumerate()
        .skip(1)
        .map(|(i, c)| c * BigInt::from(i))
        .collect();
    let mut x = rat_from_f64(seed);
    for _ in 0..80 {
        let px = eval_rat(min_poly, &x);
        let dpx = eval_rat(&deriv, &x);
        if dpx.is_zero() {
            x = x + rat_from_f64(1e-12);
            continue;
        }
        let step = &px / &dpx;
        x = rat_truncate(&(&x - &step));
        if step.abs() < rat_from_f64(1e-38) && px.abs() < rat_from_f64(1e-31) {
            break;
        }
    }
    let thresh = rat_from_f64(1e-30);
    assert!(
        eval_rat(min_poly, &x).abs() < thresh,
        "Newton refinement failed to certify the embedding root"
    );
    let mut e = rat_from_f64(1e-31);
    for _ in 0..12 {
        let lo = &x - &e;
        let hi = &x + &e;
        let vlo = eval_rat(min_poly, &lo);
        let vhi = eval_rat(min_poly, &hi);
        if vlo.is_negative() != vhi.is_negative() && !vlo.is_zero() && !vhi.is_zero() {
            return (lo, hi);
        }
        e = e * BigRational::from_integer(BigInt::from(10));
    }
    panic!("could not certify a sign-change bracket around the embedding root");
}

/// Trial factorization up to the degree: any monic integer factor has roots
/// among the real conjugates 2cos(k pi/q), so test every proper subset and
/// confirm non-divisibility exactly.
fn trial_factorization_check(min_poly: &[BigInt], q: u32) {
    let degree = min_poly.len() - 1;
    if degree <= 1 || q > 24 {
        return;
    }
    let mut roots = Vec::new();
    for k in 1..(2 * q) {
        if num_integer::gcd(k, 2 * q) == 1 && k < q {
            roots.push(2.0 * ((k as f64) * std::f64::consts::PI / q as f64).cos());
        }
    }
    assert_eq!(roots.len(), degree, "conjugate count matches the degree");
    for mask in 1u32..((1u32 << degree) - 1) {
        let mut cand = vec![1.0f64];
        for (i, r) in roots.iter().enumerate() {
            if mask & (1 << i) != 0 {
                // multiply by (x - r)
                let mut next = vec![0.0; cand.len() + 1];
                for (j, c) in cand.iter().enumerate() {
                    next[j + 1] += c;
                    next[j] -= c * r;
                }
                cand = next;
            }
        }
        let rounded: Option<Vec<BigInt>> = cand
            .iter()
            .map(|c| {
                let r = c.round();
                if (c - r).abs() < 0.3 {
                    Some(BigInt::from(r as i64))
                } else {
                    None
                }
            })
            .collect();
        if let Some(int_cand) = rounded {
            if poly_div_exact(min_poly, &int_cand).is_some() {
                panic!("minimal polynomial for q={q} is reducible: this contradicts the derivation");
            }
        }
    }
}

// ---------------------------------------------------------------------------
// RingElement
// ---------------------------------------------------------------------------

/// An exact element of Z[lambda_q], stored as an integer coefficient vector
/// of length `ring.degree` in the power basis.
#[derive(Clone)]
pub struct RingElement {
    pub ring: Arc<NumberRing>,
    pub coeffs: Vec<BigInt>,
}

impl fmt::Debug for RingElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Ring[q={}]{:?}", self.ring.q, self.coeffs.iter().map(|c| c.to_string()).collect::<Vec<_>>())
    }
}

impl PartialEq for RingElement {
    fn eq(&self, other: &Self) -> bool {
        self.ring.q == other.ring.q && self.coeffs == other.coeffs
    }
}
impl Eq for RingElement {}

impl std::hash::Hash for RingElement {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        self.ring.q.hash(state);
        self.coeffs.hash(state);
    }
}

impl PartialOrd for RingElement {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

/// Lexicographic coefficient order; used only as a canonical map key.
impl Ord for RingElement {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.ring.q.cmp(&other.ring.q).then_with(|| self.coeffs.cmp(&other.coeffs))
    }
}

impl RingElement {
    pub fn is_zero(&self) -> bool {
        self.coeffs.iter().all(|c| c.is_zero())
    }

    pub fn checked_add(&self, other: &RingElement) -> Result<RingElement> {
        if self.ring.q != other.ring.q {
            return Err(Error::RingMismatch);
        }
        Ok(self + other)
    }

    pub fn checked_mul(&self, other: &RingElement) -> Result<RingElement> {
        if self.ring.q != other.ring.q {
            return Err(Error::RingMismatch);
        }
        Ok(self * other)
    }

    /// Float value of the element under the real embedding lambda -> root.
    pub fn embed(&self) -> f64 {
        self.embed_with_bound().0
    }

    /// Float value plus a certified absolute error bound.
    pub fn embed_with_bound(&self) -> (f64, f64) {
        let row = self.ring.embedding_row();
        let mut val = 0.0f64;
        let mut mag = 0.0f64;
        for (i, c) in self.coeffs.iter().enumerate() {
            let cf = bigint_to_f64(c);
            val += cf.0 * row[i];
            mag += (cf.0.abs() + cf.1) * row[i].abs();
        }
        // Error sources: (1) bigint->f64 conversions plus the Horner-style
        // accumulation, (2) uncertainty of the embedded root propagated
        // through d * |c_i| * i * r^{i-1}.
        let d = self.ring.degree as f64;
        let fl_err = mag * (2.0 * d + 2.0) * f64::EPSILON
            + self.coeffs.iter().map(|c| bigint_to_f64(c).1).sum::<f64>();
        let mut root_term = 0.0;
        for (i, c) in self.coeffs.iter().enumerate().skip(1) {
            let cf = bigint_to_f64(c).0.abs();
            root_term += cf * (i as f64) * self.ring.embedding_row()[i - 1].abs().max(1.0);
        }
        (val, fl_err + root_term * self.ring.root_error())
    }

    /// Sign of the element, certified: the float interval decides when it
    /// excludes zero; otherwise the exact coefficient test and, if needed,
    /// exact interval arithmetic over a refined rational root bracket decide.
    pub fn certified_sign(&self) -> i8 {
        let (v, b) = self.embed_with_bound();
        if v > b {
            return 1;
        }
        if v < -b {
            return -1;
        }
        if self.is_zero() {
            return 0;
        }
        // Exact fallback: evaluate over a rational enclosure of lambda,
        // shrinking the enclosure until the value interval excludes zero.
        let mut target = rat_from_f64(1e-35);
        for _ in 0..6 {
            let (lo, hi) = self.ring.refined_bracket(&target);
            let (vlo, vhi) = eval_interval(&self.coeffs, &lo, &hi);
            if vlo.is_positive() {
                return 1;
            }
            if vhi.is_negative() {
                return -1;
            }
            target = target / BigRational::from_integer(BigInt::from(1_000_000));
        }
        panic!("certified_sign failed to separate a nonzero element from zero");
    }

    /// Certified comparison against an exact rational threshold.
    pub fn certified_cmp_rational(&self, num: i64, den: i64) -> std::cmp::Ordering {
        assert!(den > 0);
        self.certified_cmp_big(&BigInt::from(num), &BigInt::from(den))
    }

    /// Certified comparison against a float threshold (every finite f64 is an
    /// exact rational).
    pub fn certified_cmp_f64(&self, x: f64) -> std::cmp::Ordering {
        let r = BigRational::from_float(x).expect("finite threshold");
        let (num, den) = (r.numer().clone(), r.denom().clone());
        self.certified_cmp_big(&num, &den)
    }

    fn certified_cmp_big(&self, num: &BigInt, den: &BigInt) -> std::cmp::Ordering {
        // self - num/den has the same sign as den*self - num (den > 0)
        debug_assert!(den > &BigInt::zero());
        let mut shifted = self.clone();
        for c in shifted.coeffs.iter_mut() {
            *c *= den;
        }
        shifted.coeffs[0] -= num;
        match shifted.certified_sign() {
            1 => std::cmp::Ordering::Greater,
            -1 => std::cmp::Ordering::Less,
            _ => std::cmp::Ordering::Equal,
        }
    }
}

/// Interval Horner evaluation of an integer-coefficient polynomial over
/// [lo, hi] (exact rational endpoints).
fn eval_interval(
    coeffs: &[BigInt],
    lo: &BigRational,
    hi: &BigRational,
) -> (BigRational, BigRational) {
    let mut alo = BigRational::zero();
    let mut ahi = BigRational::zero();
    for c in coeffs.iter().rev() {
        // [alo,ahi] * [lo,hi]
        let c1 = &alo * lo;
        let c2 = &alo * hi;
        let c3 = &ahi * lo;
        let c4 = &ahi * hi;
        let mut nlo = c1.clone();
        let mut nhi = c1;
        for c in [c2, c3, c4] {
            if c < nlo {
                nlo = c.clone();
            }
            if c > nhi {
                nhi = c;
            }
        }
        let cr = BigRational::from_integer(c.clone());
        alo = nlo + cr.clone();
        ahi = nhi + cr;
    }
    (alo, ahi)
}

/// Convert a BigInt to f64 with an absolute error estimate.
fn bigint_to_f64(x: &BigInt) -> (f64, f64) {
    let v = x.to_f64().unwrap_or(f64::MAX);
    (v, v.abs() * f64::EPSILON)
}

impl std::ops::Add for &RingElement {
    type Output = RingElement;
    fn add(self, rhs: &RingElement) -> RingElement {
        assert_eq!(self.ring.q, rhs.ring.q, "ring mismatch");
        let coeffs = self
            .coeffs
            .iter()
            .zip(rhs.coeffs.iter())
            .map(|(a, b)| a + b)
            .collect();
        RingElement { ring: self.ring.clone(), coeffs }
    }
}

impl std::ops::Sub for &RingElement {
    type Output = RingElement;
    fn sub(self, rhs: &RingElement) -> RingElement {
        assert_eq!(self.ring.q, rhs.ring.q, "ring mismatch");
        let coeffs = self
            .coeffs
            .iter()
            .zip(rhs.coeffs.iter())
            .map(|(a, b)| a - b)
            .collect();
        RingElement { ring: self.ring.clone(), coeffs }
    }
}

impl std::ops::Neg for &RingElement {
    type Output = RingElement;
    fn neg(self) -> RingElement {
        RingElement { ring: self.ring.clone(), coeffs: self.coeffs.iter().map(|c| -c).collect() }
    }
}

impl std::ops::Mul for &RingElement {
    type Output = RingElement;
    fn mul(self, rhs: &RingElement) -> RingElement {
        assert_eq!(self.ring.q, rhs.ring.q, "ring mismatch");
        let d = self.ring.degree;
        let mut prod = vec![BigInt::zero(); 2 * d - 1];
        for (i, a) in self.coeffs.iter().enumerate() {
            if a.is_zero() {
                continue;
            }
            for (j, b) in rhs.coeffs.iter().enumerate() {
                if !b.is_zero() {
                    prod[i + j] += a * b;
                }
            }
        }
        // reduce modulo the monic minimal polynomial
        for k in (d..prod.len()).rev() {
            if prod[k].is_zero() {
                continue;
            }
            let lead = std::mem::replace(&mut prod[k], BigInt::zero());
            for i in 0..d {
                let sub = &lead * &self.ring.min_poly[i];
                prod[k - d + i] -= sub;
            }
        }
        prod.truncate(d);
        RingElement { ring: self.ring.clone(), coeffs: prod }
    }
}

// ---------------------------------------------------------------------------
// FieldElement: the fraction field Q(lambda), used for scaling
// transformations and other cold-path exact linear algebra.
// ---------------------------------------------------------------------------

/// Element of Q(lambda_q) as a rational coefficient vector in the power basis.
#[derive(Clone, PartialEq)]
pub struct FieldElement {
    pub ring: Arc<NumberRing>,
    pub coeffs: Vec<BigRational>,
}

impl fmt::Debug for FieldElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "Field[q={}]{:?}",
            self.ring.q,
            self.coeffs.iter().map(|c| c.to_string()).collect::<Vec<_>>()
        )
    }
}

impl FieldElement {
    pub fn from_ring(x: &RingElement) -> FieldElement {
        FieldElement {
            ring: x.ring.clone(),
            coeffs: x.coeffs.iter().map(|c| BigRational::from_integer(c.clone())).collect(),
        }
    }

    pub fn zero(ring: &Arc<NumberRing>) -> FieldElement {
        FieldElement { ring: ring.clone(), coeffs: vec![BigRational::zero(); ring.degree] }
    }

    pub fn one(ring: &Arc<NumberRing>) -> FieldElement {
        let mut x = Self::zero(ring);
        x.coeffs[0] = BigRational::one();
        x
    }

    pub fn from_rational(ring: &Arc<NumberRing>, num: i64, den: i64) -> FieldElement {
        let mut x = Self::zero(ring);
        x.coeffs[0] = BigRational::new(BigInt::from(num), BigInt::from(den));
        x
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.iter().all(|c| c.is_zero())
    }

    pub fn add(&self, o: &FieldElement) -> FieldElement {
        FieldElement {
            ring: self.ring.clone(),
            coeffs: self.coeffs.iter().zip(&o.coeffs).map(|(a, b)| a + b).collect(),
        }
    }

    pub fn sub(&self, o: &FieldElement) -> FieldElement {
        FieldElement {
            ring: self.ring.clone(),
            coeffs: self.coeffs.iter().zip(&o.coeffs).map(|(a, b)| a - b).collect(),
        }
    }

    pub fn neg(&self) -> FieldElement {
        FieldElement { ring: self.ring.clone(), coeffs: self.coeffs.iter().map(|c| -c).collect() }
    }

    pub fn mul(&self, o: &FieldElement) -> FieldElement {
        let d = self.ring.degree;
        let mut prod = vec![BigRational::zero(); 2 * d - 1];
        for (i, a) in self.coeffs.iter().enumerate() {
            if a.is_zero() {
                continue;
            }
            for (j, b) in o.coeffs.iter().enumerate() {
                if !b.is_zero() {
                    prod[i + j] = &prod[i + j] + &(a * b);
                }
            }
        }
        for k in (d..prod.len()).rev() {
            if prod[k].is_zero() {
                continue;
            }
            let lead = std::mem::replace(&mut prod[k], BigRational::zero());
            for i in 0..d {
                let sub = &lead * &BigRational::from_integer(self.ring.min_poly[i].clone());
                prod[k - d + i] = &prod[k - d + i] - &sub;
            }
        }
        prod.truncate(d);
        FieldElement { ring: self.ring.clone(), coeffs: prod }
    }

    /// Multiplicative inverse via the extended Euclidean algorithm for
    /// self(x) and min_poly(x) over Q[x].
    pub fn inv(&self) -> FieldElement {
        assert!(!self.is_zero(), "inverse of zero");
        let d = self.ring.degree;
        let modulus: Vec<BigRational> = self
            .ring
            .min_poly
            .iter()
            .map(|c| BigRational::from_integer(c.clone()))
            .collect();
        // extended gcd of a = self, b = modulus
        let mut r0 = modulus;
        let mut r1 = self.coeffs.clone();
        trim_rat(&mut r1);
        let mut s0 = vec![BigRational::zero()];
        let mut s1 = vec![BigRational::one()];
        while !(r1.len() == 1 && r1[0].is_zero()) {
            let (q, r) = poly_divmod_rat(&r0, &r1);
            let s_next = poly_sub_rat(&s0, &poly_mul_rat(&q, &s1));
            r0 = std::mem::replace(&mut r1, r);
            s0 = std::mem::replace(&mut s1, s_next);
        }
        // r0 = gcd (a nonzero constant, since min_poly is irreducible)
        assert!(r0.len() == 1 && !r0[0].is_zero(), "gcd with the minimal polynomial is constant");
        let scale = r0[0].recip();
        let mut inv_coeffs: Vec<BigRational> = s0.iter().map(|c| c * &scale).collect();
        // reduce mod min_poly (degree < d already by construction, but be safe)
        inv_coeffs.resize(d.max(inv_coeffs.len()), BigRational::zero());
        while inv_coeffs.len() > d {
            let k = inv_coeffs.len() - 1;
            let lead = inv_coeffs.pop().unwrap();
            if !lead.is_zero() {
                for i in 0..d {
                    let sub = &lead * &BigRational::from_integer(self.ring.min_poly[i].clone());
                    inv_coeffs[k - d + i] = &inv_coeffs[k - d + i] - &sub;
                }
            }
        }
        inv_coeffs.resize(d, BigRational::zero());
        FieldElement { ring: self.ring.clone(), coeffs: inv_coeffs }
    }

    pub fn embed(&self) -> f64 {
        let row = self.ring.embedding_row();
        self.coeffs
            .iter()
            .enumerate()
            .map(|(i, c)| c.to_f64().unwrap_or(0.0) * row[i])
            .sum()
    }
}

fn trim_rat(p: &mut Vec<BigRational>) {
    while p.len() > 1 && p.last().map_or(false, |c| c.is_zero()) {
        p.pop();
    }
}

fn poly_mul_rat(a: &[BigRational], b: &[BigRational]) -> Vec<BigRational> {
    let mut out = vec![BigRational::zero(); a.len() + b.len() - 1];
    for (i, ai) in a.iter().enumerate() {
        for (j, bj) in b.iter().enumerate() {
            out[i + j] = &out[i + j] + &(ai * bj);
        }
    }
    trim_rat(&mut out);
    out
}

fn poly_sub_rat(a: &[BigRational], b: &[BigRational]) -> Vec<BigRational> {
    let n = a.len().max(b.len());
    let mut out = vec![BigRational::zero(); n];
    for (i, c) in a.iter().enumerate() {
        out[i] = out[i].clone() + c;
    }
    for (i, c) in b.iter().enumerate() {
        out[i] = out[i].clone() - c;
    }
    trim_rat(&mut out);
    out
}

fn poly_divmod_rat(a: &[BigRational], b: &[BigRational]) -> (Vec<BigRational>, Vec<BigRational>) {
    let mut rem = a.to_vec();
    trim_rat(&mut rem);
    let mut bb = b.to_vec();
    trim_rat(&mut bb);
    let db = bb.len();
    if db > rem.len() {
        return (vec![BigRational::zero()], rem);
    }
    let lead = bb.last().unwrap().clone();
    let mut q = vec![BigRational::zero(); rem.len() - db + 1];
    for k in (0..q.len()).rev() {
        let c = &rem[k + db - 1] / &lead;
        if c.is_zero() {
            continue;
        }
        for (i, d) in bb.iter().enumerate() {
            rem[k + i] = &rem[k + i] - &(&c * d);
        }
        q[k] = c;
    }
    trim_rat(&mut rem);
    trim_rat(&mut q);
    (q, rem)
}

// ---------------------------------------------------------------------------
// QuadExt: p + q*sqrt(omega) over Q(lambda), for scaling transformations
// ---------------------------------------------------------------------------

/// Exact element p + q*sqrt(omega) of the quadratic extension
/// Q(lambda)(sqrt(omega)).
#[derive(Clone, Debug, PartialEq)]
pub struct QuadExt {
    pub p: FieldElement,
    pub q: FieldElement,
    /// The radicand, a fixed positive ring element shared by all elements of
    /// one extension.
    pub omega: RingElement,
}

impl QuadExt {
    pub fn rational_part(p: FieldElement, omega: RingElement) -> QuadExt {
        let q = FieldElement::zero(&p.ring);
        QuadExt { p, q, omega }
    }

    pub fn radical_part(q: FieldElement, omega: RingElement) -> QuadExt {
        let p = FieldElement::zero(&q.ring);
        QuadExt { p, q, omega }
    }

    pub fn is_zero(&self) -> bool {
        self.p.is_zero() && self.q.is_zero()
    }

    pub fn add(&self, o: &QuadExt) -> QuadExt {
        QuadExt { p: self.p.add(&o.p), q: self.q.add(&o.q), omega: self.omega.clone() }
    }

    pub fn sub(&self, o: &QuadExt) -> QuadExt {
        QuadExt { p: self.p.sub(&o.p), q: self.q.sub(&o.q), omega: self.omega.clone() }
    }

    pub fn mul(&self, o: &QuadExt) -> QuadExt {
        let w = FieldElement::from_ring(&self.omega);
        let p = self.p.mul(&o.p).add(&self.q.mul(&o.q).mul(&w));
        let q = self.p.mul(&o.q).add(&self.q.mul(&o.p));
        QuadExt { p, q, omega: self.omega.clone() }
    }

    pub fn neg(&self) -> QuadExt {
        QuadExt { p: self.p.neg(), q: self.q.neg(), omega: self.omega.clone() }
    }

    pub fn inv(&self) -> QuadExt {
        let w = FieldElement::from_ring(&self.omega);
        let norm = self.p.mul(&self.p).sub(&self.q.mul(&self.q).mul(&w));
        let ninv = norm.inv();
        QuadExt { p: self.p.mul(&ninv), q: self.q.mul(&ninv).neg(), omega: self.omega.clone() }
    }

    pub fn embed(&self) -> f64 {
        self.p.embed() + self.q.embed() * self.omega.embed().sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn ring(q: u32) -> Arc<NumberRing> {
        NumberRing::for_hecke(q).unwrap()
    }

    #[test]
    fn q3_is_the_integers() {
        let r = ring(3);
        assert_eq!(r.degree, 1);
        assert_eq!(r.lambda().embed(), 1.0);
        assert_eq!(r.from_i64(7).embed(), 7.0);
    }

    #[test]
    fn q5_golden_ratio() {
        let r = ring(5);
        assert_eq!(r.degree, 2);
        // x^2 - x - 1
        assert_eq!(
            r.min_poly,
            vec![BigInt::from(-1), BigInt::from(-1), BigInt::from(1)]
        );
        let lam = r.lambda();
        assert!((lam.embed() - 1.6180339887498949).abs() < 1e-12);
        // lambda * lambda = lambda + 1
        let sq = &lam * &lam;
        let expect = &lam + &r.one();
        assert_eq!(sq, expect);
    }

    #[test]
    fn q4_sqrt2() {
        let r = ring(4);
        assert_eq!(r.min_poly, vec![BigInt::from(-2), BigInt::from(0), BigInt::from(1)]);
        assert!((r.lambda().embed() - std::f64::consts::SQRT_2).abs() < 1e-13);
    }

    #[test]
    fn table_matches_derivation_small_q() {
        // (q, min poly little-endian), classical values
        let table: &[(u32, &[i64])] = &[
            (3, &[-1, 1]),
            (4, &[-2, 0, 1]),
            (5, &[-1, -1, 1]),
            (6, &[-3, 0, 1]),
            (7, &[1, -2, -1, 1]),
            (8, &[2, 0, -4, 0, 1]),
            (9, &[-1, -3, 0, 1]),
            (10, &[5, 0, -5, 0, 1]),
            (12, &[1, 0, -4, 0, 1]),
        ];
        for (q, coeffs) in table {
            let r = ring(*q);
            let expect: Vec<BigInt> = coeffs.iter().map(|c| BigInt::from(*c)).collect();
            assert_eq!(r.min_poly, expect, "q={q}");
        }
    }

    #[test]
    fn residual_certified_below_1e30() {
        for q in [3u32, 5, 7, 12, 24] {
            let r = ring(q);
            let thresh = BigRational::new(BigInt::from(1), BigInt::from(10u8).pow(30));
            assert!(r.residual_at_root() < thresh, "q={q}");
        }
    }

    #[test]
    fn unsupported_degree_errors() {
        // q=29 gives degree phi(58)/2 = 14 > 12
        match NumberRing::for_hecke(29) {
            Err(Error::UnsupportedRing { degree: 14, .. }) => {}
            other => panic!("expected UnsupportedRing, got {other:?}"),
        }
    }

    #[test]
    fn identity_and_inverse_laws() {
        let r = ring(7);
        let a = r.from_coeffs(vec![BigInt::from(3), BigInt::from(-2), BigInt::from(5)]);
        assert_eq!(&a * &r.one(), a);
        assert!((&a + &(-&a)).is_zero());
    }

    #[test]
    fn checked_ops_reject_ring_mismatch() {
        let a = ring(5).one();
        let b = ring(7).one();
        assert!(matches!(a.checked_add(&b), Err(Error::RingMismatch)));
        assert!(matches!(a.checked_mul(&b), Err(Error::RingMismatch)));
    }

    #[test]
    fn embedding_multiplicativity_with_certified_bounds() {
        // 1000 random pairs per ring: |embed(ab) - embed(a)embed(b)| within
        // the combined certified bound.
        for q in [5u32, 7, 8] {
            let r = ring(q);
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42 + q as u64);
            for _ in 0..1000 {
                let a = r.from_coeffs(
                    (0..r.degree).map(|_| BigInt::from(rng.gen_range(-50i64..50))).collect(),
                );
                let b = r.from_coeffs(
                    (0..r.degree).map(|_| BigInt::from(rng.gen_range(-50i64..50))).collect(),
                );
                let (va, ba) = a.embed_with_bound();
                let (vb, bb) = b.embed_with_bound();
                let (vab, bab) = (&a * &b).embed_with_bound();
                let combined = bab
                    + ba * vb.abs()
                    + bb * va.abs()
                    + ba * bb
                    + (va * vb).abs() * 4.0 * f64::EPSILON;
                assert!(
                    (vab - va * vb).abs() <= combined.max(1e-9),
                    "q={q}: {} vs {}",
                    vab,
                    va * vb
                );
            }
        }
    }

    #[test]
    fn sign_consistency_with_exact_zero_test() {
        let r = ring(5);
        let lam = r.lambda();
        // lambda^2 - lambda - 1 = 0 exactly
        let z = &(&(&lam * &lam) - &lam) - &r.one();
        assert!(z.is_zero());
        assert_eq!(z.certified_sign(), 0);
        // lambda - 1 > 0, 1 - lambda < 0
        assert_eq!((&lam - &r.one()).certified_sign(), 1);
        assert_eq!((&r.one() - &lam).certified_sign(), -1);
        // a tight one: 2 - lambda ~ 0.38
        assert_eq!(r.from_i64(2).certified_cmp_rational(1618033988, 1000000000), std::cmp::Ordering::Greater);
        assert_eq!(lam.certified_cmp_rational(1618033989, 1000000000), std::cmp::Ordering::Less);
    }

    #[test]
    fn field_inverse_roundtrip() {
        let r = ring(7);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let x = FieldElement {
                ring: r.clone(),
                coeffs: (0..r.degree)
                    .map(|_| {
                        BigRational::new(
                            BigInt::from(rng.gen_range(-20i64..20)),
                            BigInt::from(rng.gen_range(1i64..9)),
                        )
                    })
                    .collect(),
            };
            if x.is_zero() {
                continue;
            }
            let prod = x.mul(&x.inv());
            assert_eq!(prod, FieldElement::one(&r));
        }
    }

    #[test]
    fn quad_ext_mul_and_inv() {
        let r = ring(5);
        let omega = r.lambda();
        let x = QuadExt {
            p: FieldElement::from_rational(&r, 3, 2),
            q: FieldElement::from_rational(&r, -1, 3),
            omega: omega.clone(),
        };
        let xi = x.inv();
        let one = x.mul(&xi);
        assert_eq!(one.p, FieldElement::one(&r));
        assert!(one.q.is_zero());
        // embedding consistency
        let w = omega.embed().sqrt();
        let expect = 1.5 - w / 3.0;
        assert!((x.embed() - expect).abs() < 1e-12);
    }
}
