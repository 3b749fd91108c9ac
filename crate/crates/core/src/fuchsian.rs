//! Nonuniform lattices in SL2(R): built-in families (SL2(Z), Hecke triangle
//! groups H_q, principal congruence subgroups Gamma(N)), their cusps and
//! scaling transformations, fundamental-domain reduction, and the scaling
//! factor of a discrete orbit.
//!
//! A scaling transformation sigma_a is stored in factored form g * a_sqrt(w)
//! with g an exact group element and w the cusp width, so that every orbit
//! computation stays in the coefficient ring; the assembled matrix over the
//! quadratic extension Q(lambda)(sqrt(w)) is available for checks.

use crate::error::{Error, Result};
use crate::ring::{FieldElement, NumberRing, QuadExt, RingElement};
use num_bigint::BigInt;
use num_integer::Integer;
use num_traits::{ToPrimitive, Zero};
use std::fmt;
use std::sync::Arc;

// ---------------------------------------------------------------------------
// GroupElement
// ---------------------------------------------------------------------------

/// A 2x2 determinant-1 matrix over the coefficient ring, row-major
/// [[a, b], [c, d]].
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct GroupElement {
    pub a: RingElement,
    pub b: RingElement,
    pub c: RingElement,
    pub d: RingElement,
}

impl fmt::Debug for GroupElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{:?} {:?}; {:?} {:?}]", self.a, self.b, self.c, self.d)
    }
}

impl GroupElement {
    /// Checked constructor: verifies det = 1 exactly.
    pub fn new(a: RingElement, b: RingElement, c: RingElement, d: RingElement) -> Result<Self> {
        let g = GroupElement { a, b, c, d };
        if !g.has_unit_det() {
            return Err(Error::InvalidParam("matrix determinant is not 1".into()));
        }
        Ok(g)
    }

    pub fn has_unit_det(&self) -> bool {
        let det = &(&self.a * &self.d) - &(&self.b * &self.c);
        det == self.a.ring.one()
    }

    pub fn identity(ring: &Arc<NumberRing>) -> Self {
        GroupElement { a: ring.one(), b: ring.zero(), c: ring.zero(), d: ring.one() }
    }

    /// S = [[0, -1], [1, 0]].
    pub fn s_rotation(ring: &Arc<NumberRing>) -> Self {
        GroupElement { a: ring.zero(), b: -&ring.one(), c: ring.one(), d: ring.zero() }
    }

    /// T_t = [[1, t], [0, 1]].
    pub fn translation(t: RingElement) -> Self {
        let ring = t.ring.clone();
        GroupElement { a: ring.one(), b: t, c: ring.zero(), d: ring.one() }
    }

    /// T_t^k for integer k.
    pub fn translation_pow(t: &RingElement, k: i64) -> Self {
        let ring = t.ring.clone();
        let mut kt = t.clone();
        for c in kt.coeffs.iter_mut() {
            *c *= BigInt::from(k);
        }
        GroupElement { a: ring.one(), b: kt, c: ring.zero(), d: ring.one() }
    }

    pub fn mul(&self, o: &GroupElement) -> GroupElement {
        GroupElement {
            a: &(&self.a * &o.a) + &(&self.b * &o.c),
            b: &(&self.a * &o.b) + &(&self.b * &o.d),
            c: &(&self.c * &o.a) + &(&self.d * &o.c),
            d: &(&self.c * &o.b) + &(&self.d * &o.d),
        }
    }

    /// Inverse by the adjugate; exact since det = 1.
    pub fn inverse(&self) -> GroupElement {
        GroupElement { a: self.d.clone(), b: -&self.b, c: -&self.c, d: self.a.clone() }
    }

    pub fn neg(&self) -> GroupElement {
        GroupElement { a: -&self.a, b: -&self.b, c: -&self.c, d: -&self.d }
    }

    pub fn is_identity(&self) -> bool {
        let ring = &self.a.ring;
        self.a == ring.one() && self.d == ring.one() && self.b.is_zero() && self.c.is_zero()
    }

    /// Apply to a column vector of exact ring elements.
    pub fn apply(&self, x: &(RingElement, RingElement)) -> (RingElement, RingElement) {
        (
            &(&self.a * &x.0) + &(&self.b * &x.1),
            &(&self.c * &x.0) + &(&self.d * &x.1),
        )
    }

    /// Float Moebius action on the upper half plane.
    pub fn moebius(&self, z: (f64, f64)) -> (f64, f64) {
        let (x, y) = z;
        let (a, b, c, d) = (self.a.embed(), self.b.embed(), self.c.embed(), self.d.embed());
        let den = (c * x + d) * (c * x + d) + c * c * y * y;
        (((a * x + b) * (c * x + d) + a * c * y * y) / den, y / den)
    }

    pub fn embed(&self) -> [[f64; 2]; 2] {
        [[self.a.embed(), self.b.embed()], [self.c.embed(), self.d.embed()]]
    }
}

/// True iff g fixes the cusp at infinity: the lower-left entry is exactly
/// zero. Callers guarantee g lies in the lattice.
pub fn cusp_membership_test(g: &GroupElement) -> bool {
    g.c.is_zero()
}

// ---------------------------------------------------------------------------
// Cusps
// ---------------------------------------------------------------------------

/// A point of Q union {infinity} on the boundary circle.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Cusp {
    Infinity,
    /// p/q in lowest terms with q > 0.
    Rational(i64, i64),
}

impl fmt::Display for Cusp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Cusp::Infinity => write!(f, "inf"),
            Cusp::Rational(p, q) => write!(f, "{p}/{q}"),
        }
    }
}

/// Data attached to one cusp class: the scaling transformation in factored
/// form sigma = g * a_sqrt(width), the stabilizer generator, and the width.
#[derive(Clone, Debug)]
pub struct CuspData {
    pub representative: Cusp,
    /// Exact g with sigma = g * a_sqrt(width); g maps infinity to the cusp.
    pub sigma_g: GroupElement,
    /// Cusp width omega before normalization (a positive ring element).
    pub cusp_width: RingElement,
    /// Cyclic generator gamma_a of the cusp stabilizer.
    pub stabilizer_generator: GroupElement,
    /// Residue (p mod N, q mod N) of the representative for congruence
    /// lattices; (0, 0) otherwise.
    pub residue: (u32, u32),
}

impl CuspData {
    /// The assembled scaling transformation sigma = g * a_sqrt(width) as a
    /// matrix over Q(lambda)(sqrt(width)). Every entry is a pure radical part
    /// q * sqrt(width) since 1/sqrt(w) = sqrt(w)/w.
    pub fn sigma_matrix(&self) -> [[QuadExt; 2]; 2] {
        let w = self.cusp_width.clone();
        let winv = FieldElement::from_ring(&w).inv();
        let rad = |fe: FieldElement| QuadExt::radical_part(fe, w.clone());
        [
            [
                rad(FieldElement::from_ring(&self.sigma_g.a)),
                rad(FieldElement::from_ring(&self.sigma_g.b).mul(&winv)),
            ],
            [
                rad(FieldElement::from_ring(&self.sigma_g.c)),
                rad(FieldElement::from_ring(&self.sigma_g.d).mul(&winv)),
            ],
        ]
    }

    /// Float base point sigma * e1 = sqrt(width) * (g11, g21).
    pub fn base_point_f64(&self) -> (f64, f64) {
        let s = self.cusp_width.embed().sqrt();
        (s * self.sigma_g.a.embed(), s * self.sigma_g.c.embed())
    }
}

// ---------------------------------------------------------------------------
// Lattice
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum LatticeKind {
    Sl2z,
    Hecke(u32),
    Congruence(u32),
    Custom,
}

/// A nonuniform lattice in SL2(R) together with precomputed cusp data.
#[derive(Clone)]
pub struct Lattice {
    pub kind: LatticeKind,
    pub ring: Arc<NumberRing>,
    pub generators: Vec<GroupElement>,
    pub contains_minus_identity: bool,
    /// Hyperbolic covolume V of the fundamental domain.
    pub covolume: f64,
    /// Spectral power saving delta in (0, 2/3]; a configuration input.
    pub delta: f64,
    pub cusps: Vec<CuspData>,
    /// Congruence level for Gamma(N); 1 otherwise.
    pub level: u32,
    /// Translation length of the stabilizer of infinity (1, lambda_q, or N).
    pub width_at_infinity: RingElement,
}

impl fmt::Debug for Lattice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Lattice({:?}, V={:.6}, cusps={})", self.kind, self.covolume, self.cusps.len())
    }
}

impl Lattice {
    /// Canonical config string; hashed for cache files and echoed in outputs.
    pub fn config_string(&self) -> String {
        match &self.kind {
            LatticeKind::Sl2z => format!("kind=sl2z delta={}", self.delta),
            LatticeKind::Hecke(q) => format!("kind=hecke q={} delta={}", q, self.delta),
            LatticeKind::Congruence(n) => format!("kind=congruence N={} delta={}", n, self.delta),
            LatticeKind::Custom => format!(
                "kind=custom gens={} V={} delta={}",
                self.generators.len(),
                self.covolume,
                self.delta
            ),
        }
    }

    pub fn cusp(&self, index: usize) -> &CuspData {
        &self.cusps[index]
    }

    /// Index of the cusp class of a boundary point; single-cusp lattices
    /// always answer 0.
    pub fn cusp_class_of(&self, c: Cusp) -> Option<usize> {
        if self.cusps.len() == 1 {
            return Some(0);
        }
        let n = self.level;
        let (p, q) = match c {
            Cusp::Infinity => (1i64, 0i64),
            Cusp::Rational(p, q) => (p, q),
        };
        let residue = residue_mod(p, q, n);
        self.cusps
            .iter()
            .position(|cd| cd.residue == residue || cd.residue == negate_residue(residue, n))
    }

    /// Exact membership test for built-in kinds. For Hecke groups this runs
    /// a translation-rotation reduction; it is complete for members and may
    /// reject pathological non-members only through the iteration cap.
    pub fn contains(&self, g: &GroupElement) -> Result<bool> {
        match self.kind {
            LatticeKind::Sl2z => Ok(g.a.ring.degree == 1),
            LatticeKind::Congruence(n) => {
                Ok(congruent_to_identity(g, n)
                    || (self.contains_minus_identity && congruent_to_identity(&g.neg(), n)))
            }
            LatticeKind::Hecke(_) => hecke_membership(self, g),
            LatticeKind::Custom => {
                Err(Error::UnsupportedLattice("membership test for custom lattices".into()))
            }
        }
    }
}

fn congruent_to_identity(g: &GroupElement, n: u32) -> bool {
    let nn = BigInt::from(n);
    let one = BigInt::from(1);
    let red = |x: &RingElement, target: &BigInt| ((&x.coeffs[0] - target) % &nn).is_zero();
    red(&g.a, &one) && red(&g.d, &one) && red(&g.b, &BigInt::zero()) && red(&g.c, &BigInt::zero())
}

fn residue_mod(p: i64, q: i64, n: u32) -> (u32, u32) {
    let n = n as i64;
    (((p % n + n) % n) as u32, ((q % n + n) % n) as u32)
}

fn negate_residue(r: (u32, u32), n: u32) -> (u32, u32) {
    ((n - r.0) % n, (n - r.1) % n)
}

// ---------------------------------------------------------------------------
// Builders
// ---------------------------------------------------------------------------

/// SL2(Z): generators S and T, covolume pi/3, one cusp at infinity of
/// width 1. Congruence-family lattices have no small residual eigenvalues,
/// so delta defaults to 2/3.
pub fn build_sl2z() -> Lattice {
    build_hecke(3).expect("H_3 = SL2(Z)")
}

/// The Hecke triangle group H_q = <S, T_lambda>, lambda = 2cos(pi/q);
/// covolume pi(1 - 2/q), one cusp at infinity of width lambda.
pub fn build_hecke(q: u32) -> Result<Lattice> {
    if q < 3 {
        return Err(Error::InvalidParam(format!("hecke index q must be >= 3, got {q}")));
    }
    let ring = NumberRing::for_hecke(q)?;
    let lambda = ring.lambda();
    let s = GroupElement::s_rotation(&ring);
    let t = GroupElement::translation(lambda.clone());
    let cusp = CuspData {
        representative: Cusp::Infinity,
        sigma_g: GroupElement::identity(&ring),
        cusp_width: lambda.clone(),
        stabilizer_generator: t.clone(),
        residue: (0, 0),
    };
    let kind = if q == 3 { LatticeKind::Sl2z } else { LatticeKind::Hecke(q) };
    Ok(Lattice {
        kind,
        ring,
        generators: vec![s, t],
        contains_minus_identity: true,
        covolume: std::f64::consts::PI * (1.0 - 2.0 / q as f64),
        delta: 2.0 / 3.0,
        cusps: vec![cusp],
        level: 1,
        width_at_infinity: lambda,
    })
}

/// The principal congruence subgroup Gamma(N), with cusp classes enumerated
/// as +-(p, q) mod N and every cusp of width N.
pub fn build_congruence(n: u32) -> Result<Lattice> {
    if n == 0 {
        return Err(Error::InvalidParam("congruence level must be >= 1".into()));
    }
    if n == 1 {
        return Ok(build_sl2z());
    }
    let ring = NumberRing::for_hecke(3)?;
    let s = GroupElement::s_rotation(&ring);
    let t = GroupElement::translation(ring.one());
    let contains_minus_identity = n <= 2;
    let index_sl = sl2_index(n);
    let index_psl = if contains_minus_identity { index_sl } else { index_sl / 2 };
    let covolume = (std::f64::consts::PI / 3.0) * index_psl as f64;

    // cusp classes: +-(p, q) in (Z/N)^2 with gcd(p, q, N) = 1
    let mut seen = std::collections::HashSet::new();
    let mut cusps = Vec::new();
    let width = ring.from_i64(n as i64);
    for p in 0..n {
        for q in 0..n {
            if num_integer::gcd(num_integer::gcd(p, q), n) != 1 {
                continue;
            }
            let neg = negate_residue((p, q), n);
            if seen.contains(&(p, q)) || seen.contains(&neg) {
                continue;
            }
            seen.insert((p, q));
            let (pl, ql) = lift_to_coprime(p as i64, q as i64, n as i64)?;
            let g = complete_to_sl2z(&ring, pl, ql)?;
            let tn = GroupElement::translation_pow(&ring.one(), n as i64);
            let stab = g.mul(&tn).mul(&g.inverse());
            debug_assert!(congruent_to_identity(&stab, n));
            let representative =
                if ql == 0 { Cusp::Infinity } else { Cusp::Rational(pl, ql) };
            cusps.push(CuspData {
                representative,
                sigma_g: g,
                cusp_width: width.clone(),
                stabilizer_generator: stab,
                residue: (p, q),
            });
        }
    }
    cusps.sort_by_key(|c| match c.representative {
        Cusp::Infinity => (0, 0, 0),
        Cusp::Rational(p, q) => (1, q, p),
    });

    Ok(Lattice {
        kind: LatticeKind::Congruence(n),
        ring,
        generators: vec![s, t],
        contains_minus_identity,
        covolume,
        delta: 2.0 / 3.0,
        cusps,
        level: n,
        width_at_infinity: width,
    })
}

/// |SL2(Z/N)| = N^3 prod_{p | N} (1 - 1/p^2), also the index
/// [Gamma(1) : Gamma(N)].
pub fn sl2_index(n: u32) -> u64 {
    let mut idx = (n as u64).pow(3);
    let mut m = n as u64;
    let mut p = 2u64;
    while p * p <= m {
        if m % p == 0 {
            idx = idx / (p * p) * (p * p - 1);
            while m % p == 0 {
                m /= p;
            }
        }
        p += 1;
    }
    if m > 1 {
        idx = idx / (m * m) * (m * m - 1);
    }
    idx
}

/// Lift (p, q) mod N to a coprime integer pair with the same residues.
fn lift_to_coprime(p: i64, q: i64, n: i64) -> Result<(i64, i64)> {
    for j in 0..=n {
        for k in 0..=n {
            let (pp, qq) = (p + j * n, q + k * n);
            if pp == 0 && qq == 0 {
                continue;
            }
            if num_integer::gcd(pp, qq) == 1 {
                return Ok((pp, qq));
            }
        }
    }
    Err(Error::InvalidParam(format!("no coprime lift of ({p},{q}) mod {n}")))
}

/// Complete a coprime column (p, q) to [[p, r], [q, s]] in SL2(Z).
pub fn complete_to_sl2z(ring: &Arc<NumberRing>, p: i64, q: i64) -> Result<GroupElement> {
    let egcd = p.extended_gcd(&q);
    if egcd.gcd != 1 {
        return Err(Error::InvalidParam(format!("({p},{q}) is not coprime")));
    }
    // p*x + q*y = 1; det [[p, -y], [q, x]] = p*x + q*y = 1
    GroupElement::new(ring.from_i64(p), ring.from_i64(-egcd.y), ring.from_i64(q), ring.from_i64(egcd.x))
}

/// Leading counting constant c_Gamma = 2/(pi V) when -I is in the lattice,
/// 1/(pi V) otherwise.
pub fn c_gamma(lattice: &Lattice) -> f64 {
    let num = if lattice.contains_minus_identity { 2.0 } else { 1.0 };
    num / (std::f64::consts::PI * lattice.covolume)
}

// ---------------------------------------------------------------------------
// Scaling factor of a discrete orbit: lambda = |x| / sqrt(tr(S gamma_a))
// ---------------------------------------------------------------------------

/// Scaling factor lambda with Gamma x = lambda Lambda_a, where a is the cusp
/// fixed by the direction of x. The direction must be parabolic; the given
/// cusp is cross-checked against the direction class for multi-cusp lattices.
pub fn scaling_factor(
    x: &(RingElement, RingElement),
    lattice: &Lattice,
    cusp: &CuspData,
) -> Result<f64> {
    if x.0.is_zero() && x.1.is_zero() {
        return Err(Error::NonParabolicDirection);
    }
    let gamma_dir = stabilizer_of_direction(x, lattice, cusp)?;
    let s = GroupElement::s_rotation(&lattice.ring);
    let tr_mat = s.mul(&gamma_dir);
    let trace = (&(&tr_mat.a + &tr_mat.d)).embed();
    let trace = if trace < 0.0 { -trace } else { trace };
    if trace <= 0.0 {
        return Err(Error::NonParabolicDirection);
    }
    let (x0, x1) = (x.0.embed(), x.1.embed());
    Ok((x0 * x0 + x1 * x1).sqrt() / trace.sqrt())
}

/// Generator of the stabilizer of the boundary point fixed by the direction
/// of x.
fn stabilizer_of_direction(
    x: &(RingElement, RingElement),
    lattice: &Lattice,
    cusp: &CuspData,
) -> Result<GroupElement> {
    let ring = &lattice.ring;
    match lattice.kind {
        LatticeKind::Sl2z | LatticeKind::Congruence(_) => {
            let p_big = &x.0.coeffs[0];
            let q_big = &x.1.coeffs[0];
            let g = num_integer::gcd(p_big.clone(), q_big.clone());
            let (p, q) = match ((p_big / &g).to_i64(), (q_big / &g).to_i64()) {
                (Some(p), Some(q)) => (p, q),
                _ => return Err(Error::InvalidParam("direction does not fit i64".into())),
            };
            let (p, q) = if q < 0 || (q == 0 && p < 0) { (-p, -q) } else { (p, q) };
            if let LatticeKind::Congruence(n) = lattice.kind {
                let res = residue_mod(p, q, n);
                if res != cusp.residue && res != negate_residue(cusp.residue, n) {
                    return Err(Error::InvalidParam(format!(
                        "direction {p}/{q} is not in the class of cusp {}",
                        cusp.representative
                    )));
                }
            }
            let g = complete_to_sl2z(ring, p, q)?;
            let w = match lattice.kind {
                LatticeKind::Congruence(n) => n as i64,
                _ => 1,
            };
            let tn = GroupElement::translation_pow(&ring.one(), w);
            Ok(g.mul(&tn).mul(&g.inverse()))
        }
        LatticeKind::Hecke(_) => {
            let (word, v) = reduce_direction_hecke(lattice, x)?;
            if !v.1.is_zero() {
                return Err(Error::NonParabolicDirection);
            }
            let t = GroupElement::translation(lattice.width_at_infinity.clone());
            Ok(word.inverse().mul(&t).mul(&word))
        }
        LatticeKind::Custom => Err(Error::UnsupportedLattice("scaling_factor for custom".into())),
    }
}

/// Greedy translation-rotation reduction of a planar direction for Hecke
/// groups: returns (word, word * x) with word in the group. The second
/// coordinate of word * x is exactly zero precisely for parabolic directions;
/// other directions exhaust the iteration cap.
fn reduce_direction_hecke(
    lattice: &Lattice,
    x: &(RingElement, RingElement),
) -> Result<(GroupElement, (RingElement, RingElement))> {
    let ring = &lattice.ring;
    let lam = lattice.width_at_infinity.clone();
    let lam_f = lam.embed();
    let s = GroupElement::s_rotation(ring);
    let mut word = GroupElement::identity(ring);
    let mut v = x.clone();
    for _ in 0..600 {
        if v.1.is_zero() {
            return Ok((word, v));
        }
        let (v0, v1) = (v.0.embed(), v.1.embed());
        let k = (v0 / (lam_f * v1)).round();
        if !k.is_finite() || k.abs() > 1e17 {
            return Err(Error::NonParabolicDirection);
        }
        if k != 0.0 {
            let t = GroupElement::translation_pow(&lam, -(k as i64));
            v = t.apply(&v);
            word = t.mul(&word);
        }
        v = s.apply(&v);
        word = s.mul(&word);
    }
    Err(Error::NonParabolicDirection)
}

// ---------------------------------------------------------------------------
// Fundamental-domain reduction in the upper half plane
// ---------------------------------------------------------------------------

/// Reduce z (Im z > 0) into the standard fundamental domain
/// |Re z| <= width/2, |z| >= 1 of SL2(Z) or a Hecke group, returning the
/// reduced point and the exact word applied. Boundary ties prefer Re z <= 0.
pub fn reduce_point(lattice: &Lattice, z: (f64, f64)) -> Result<((f64, f64), GroupElement)> {
    match lattice.kind {
        LatticeKind::Sl2z | LatticeKind::Hecke(_) => {}
        _ => {
            return Err(Error::UnsupportedLattice(
                "reduce_point needs the standard triangle fundamental domain".into(),
            ))
        }
    }
    if z.1 <= 0.0 {
        return Err(Error::InvalidParam("point is not in the upper half plane".into()));
    }
    let ring = &lattice.ring;
    let w = lattice.width_at_infinity.clone();
    let wf = w.embed();
    let s = GroupElement::s_rotation(ring);
    let mut word = GroupElement::identity(ring);
    let mut cur = z;
    let tol = 1e-13;
    let mut done = false;
    for _ in 0..10_000 {
        let k = (cur.0 / wf).round();
        if k != 0.0 {
            let t = GroupElement::translation_pow(&w, -(k as i64));
            cur = (cur.0 - k * wf, cur.1);
            word = t.mul(&word);
        }
        let norm2 = cur.0 * cur.0 + cur.1 * cur.1;
        if norm2 < 1.0 - tol {
            cur = (-cur.0 / norm2, cur.1 / norm2);
            word = s.mul(&word);
        } else {
            done = true;
            break;
        }
    }
    if !done {
        return Err(Error::IterationCap(10_000));
    }
    // boundary normalization: prefer the Re <= 0 representative
    if (cur.0 - wf / 2.0).abs() < tol {
        let t = GroupElement::translation_pow(&w, -1);
        cur = (cur.0 - wf, cur.1);
        word = t.mul(&word);
    }
    let norm2 = cur.0 * cur.0 + cur.1 * cur.1;
    if (norm2 - 1.0).abs() < tol && cur.0 > tol {
        cur = (-cur.0 / norm2, cur.1 / norm2);
        word = s.mul(&word);
    }
    Ok((cur, word))
}

/// Membership predicate for the standard fundamental domain, with slack for
/// float boundaries.
pub fn in_fundamental_domain(lattice: &Lattice, z: (f64, f64)) -> bool {
    let wf = lattice.width_at_infinity.embed();
    z.0.abs() <= wf / 2.0 + 1e-12 && z.0 * z.0 + z.1 * z.1 >= 1.0 - 1e-12
}

// ---------------------------------------------------------------------------
// Hecke membership by reduction
// ---------------------------------------------------------------------------

/// Reduce g by left multiplications with S and T-powers; members terminate at
/// +-T^k (each round contracts |c| by a factor lambda/2 < 1).
fn hecke_membership(lattice: &Lattice, g: &GroupElement) -> Result<bool> {
    let ring = &lattice.ring;
    let lam = lattice.width_at_infinity.clone();
    let lam_f = lam.embed();
    let s = GroupElement::s_rotation(ring);
    let mut m = g.clone();
    for _ in 0..1000 {
        if m.c.is_zero() {
            let mm = if m.a == ring.one() { m.clone() } else { m.neg() };
            if mm.a != ring.one() || mm.d != ring.one() {
                return Ok(false);
            }
            let k = (mm.b.embed() / lam_f).round();
            if !k.is_finite() || k.abs() > 1e17 {
                return Ok(false);
            }
            let cand = GroupElement::translation_pow(&lam, k as i64);
            return Ok(cand.b == mm.b);
        }
        let (af, cf) = (m.a.embed(), m.c.embed());
        let k = (af / (lam_f * cf)).round();
        if !k.is_finite() || k.abs() > 1e17 {
            return Ok(false);
        }
        if k != 0.0 {
            m = GroupElement::translation_pow(&lam, -(k as i64)).mul(&m);
        }
        m = s.mul(&m);
    }
    Err(Error::IterationCap(1000))
}

// ---------------------------------------------------------------------------
// Plain-text lattice config (key=value)
// ---------------------------------------------------------------------------

/// Parsed form of the plain-text lattice configuration.
///
/// Grammar (one `key=value` per line, `#` comments):
///   kind=sl2z | hecke | congruence | custom
///   q=<int>                 (hecke)
///   N=<int>                 (congruence)
///   delta=<float>           (optional, in (0, 2/3], default 2/3)
///   covolume=<float>        (custom, required)
///   minus_identity=<bool>   (custom, default true)
///   cusp_width=<int>        (custom, default 1)
///   generator=a,b,c,d       (custom, exact integer entries, repeatable)
#[derive(Clone, Debug, Default)]
pub struct LatticeSpecText {
    pub kind: String,
    pub q: Option<u32>,
    pub n: Option<u32>,
    pub delta: Option<f64>,
    pub covolume: Option<f64>,
    pub minus_identity: Option<bool>,
    pub cusp_width: Option<i64>,
    pub generators: Vec<[i64; 4]>,
}

pub fn parse_lattice_config(text: &str) -> Result<LatticeSpecText> {
    let mut spec = LatticeSpecText::default();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::InvalidParam(format!("line {}: expected key=value", lineno + 1))
        })?;
        let (key, value) = (key.trim(), value.trim());
        let bad =
            |what: &str| Error::InvalidParam(format!("line {}: bad {what}: {value}", lineno + 1));
        match key {
            "kind" => spec.kind = value.to_string(),
            "q" => spec.q = Some(value.parse().map_err(|_| bad("q"))?),
            "N" => spec.n = Some(value.parse().map_err(|_| bad("N"))?),
            "delta" => spec.delta = Some(value.parse().map_err(|_| bad("delta"))?),
            "covolume" => spec.covolume = Some(value.parse().map_err(|_| bad("covolume"))?),
            "minus_identity" => {
                spec.minus_identity = Some(value.parse().map_err(|_| bad("minus_identity"))?)
            }
            "cusp_width" => spec.cusp_width = Some(value.parse().map_err(|_| bad("cusp_width"))?),
            "generator" => {
                let parts: Vec<i64> = value
                    .split(',')
                    .map(|p| p.trim().parse().map_err(|_| bad("generator entry")))
                    .collect::<Result<_>>()?;
                if parts.len() != 4 {
                    return Err(bad("generator (need 4 entries)"));
                }
                spec.generators.push([parts[0], parts[1], parts[2], parts[3]]);
            }
            other => {
                return Err(Error::InvalidParam(format!(
                    "line {}: unknown key '{other}'",
                    lineno + 1
                )))
            }
        }
    }
    Ok(spec)
}

pub fn build_from_spec(spec: &LatticeSpecText) -> Result<Lattice> {
    let mut lattice = match spec.kind.as_str() {
        "sl2z" => build_sl2z(),
        "hecke" => {
            build_hecke(spec.q.ok_or_else(|| Error::InvalidParam("hecke needs q=<int>".into()))?)?
        }
        "congruence" => build_congruence(
            spec.n.ok_or_else(|| Error::InvalidParam("congruence needs N=<int>".into()))?,
        )?,
        "custom" => build_custom(spec)?,
        other => return Err(Error::InvalidParam(format!("unknown lattice kind '{other}'"))),
    };
    if let Some(d) = spec.delta {
        if !(d > 0.0 && d <= 2.0 / 3.0) {
            return Err(Error::InvalidParam(format!("delta must be in (0, 2/3], got {d}")));
        }
        lattice.delta = d;
    }
    Ok(lattice)
}

fn build_custom(spec: &LatticeSpecText) -> Result<Lattice> {
    let covolume = spec
        .covolume
        .ok_or_else(|| Error::InvalidParam("custom lattice needs covolume=<float>".into()))?;
    if covolume <= 0.0 {
        return Err(Error::InvalidParam("covolume must be positive".into()));
    }
    if spec.generators.is_empty() {
        return Err(Error::InvalidParam("custom lattice needs at least one generator".into()));
    }
    let ring = NumberRing::for_hecke(3)?;
    let mut generators = Vec::new();
    for g in &spec.generators {
        generators.push(GroupElement::new(
            ring.from_i64(g[0]),
            ring.from_i64(g[1]),
            ring.from_i64(g[2]),
            ring.from_i64(g[3]),
        )?);
    }
    let width = ring.from_i64(spec.cusp_width.unwrap_or(1));
    if width.certified_sign() <= 0 {
        return Err(Error::InvalidParam("cusp_width must be positive".into()));
    }
    let stab = GroupElement::translation(width.clone());
    let cusp = CuspData {
        representative: Cusp::Infinity,
        sigma_g: GroupElement::identity(&ring),
        cusp_width: width.clone(),
        stabilizer_generator: stab,
        residue: (0, 0),
    };
    Ok(Lattice {
        kind: LatticeKind::Custom,
        ring,
        generators,
        contains_minus_identity: spec.minus_identity.unwrap_or(true),
        covolume,
        delta: 2.0 / 3.0,
        cusps: vec![cusp],
        level: 1,
        width_at_infinity: width,
    })
}
