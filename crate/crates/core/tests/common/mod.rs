//! Shared test oracles: the independent pair-equivalence class counter used
//! to validate the double-coset tables, and small helpers.

use lattice_orbits::fuchsian::{GroupElement, Lattice};
use lattice_orbits::orbit::{DiscreteOrbit, OrbitConfig, OrbitVector};
use lattice_orbits::ring::{FieldElement, RingElement};
use num_traits::Signed;
use std::collections::BTreeMap;
use std::sync::Arc;

/// Exact division in the ring: n / d when the quotient has integer
/// coefficients.
pub fn ring_div(n: &RingElement, d: &RingElement) -> Option<RingElement> {
    if d.is_zero() {
        return None;
    }
    let q = FieldElement::from_ring(n).mul(&FieldElement::from_ring(d).inv());
    let mut coeffs = Vec::with_capacity(q.coeffs.len());
    for c in &q.coeffs {
        if !c.is_integer() {
            return None;
        }
        coeffs.push(c.to_integer());
    }
    Some(n.ring.from_coeffs(coeffs))
}

/// The unique candidate gamma with gamma * (x1|y1) = (x2|y2); equivalence
/// holds iff it is integral over the ring and a member of the lattice.
fn pairs_equivalent(
    lattice: &Lattice,
    p1: &((RingElement, RingElement), (RingElement, RingElement)),
    p2: &((RingElement, RingElement), (RingElement, RingElement)),
    det_raw: &RingElement,
) -> bool {
    // gamma = M2 * adj(M1) / det_raw
    let ((x1, y1), (x2, y2)) = (&p1, &p2);
    let n_a = &(&x2.0 * &y1.1) - &(&y2.0 * &x1.1);
    let n_b = &(&y2.0 * &x1.0) - &(&x2.0 * &y1.0);
    let n_c = &(&x2.1 * &y1.1) - &(&y2.1 * &x1.1);
    let n_d = &(&y2.1 * &x1.0) - &(&x2.1 * &y1.0);
    let (Some(a), Some(b), Some(c), Some(d)) = (
        ring_div(&n_a, det_raw),
        ring_div(&n_b, det_raw),
        ring_div(&n_c, det_raw),
        ring_div(&n_d, det_raw),
    ) else {
        return false;
    };
    let Ok(gamma) = GroupElement::new(a, b, c, d) else {
        return false;
    };
    lattice.contains(&gamma).unwrap_or(false)
}

/// Independent oracle for the double-coset pair table: enumerate orbit pairs
/// with determinant in (0, max_c], group by the exact determinant, and count
/// equivalence classes by the direct candidate-matrix test.
///
/// Every class with determinant <= max_c has its canonical representative
/// (x, y) = (sigma_a e1, sigma_a (a, c)) inside the enumeration radii used
/// here, so the class count per determinant is exact.
pub fn pair_class_oracle(
    lattice: &Arc<Lattice>,
    cusp_a: usize,
    cusp_b: usize,
    max_c: f64,
) -> BTreeMap<RingElement, u64> {
    let config = OrbitConfig { prune_factor: 4.0, ..OrbitConfig::default() };
    let mut orb_a = DiscreteOrbit::new(lattice.clone(), cusp_a, config).unwrap();
    let mut orb_b = DiscreteOrbit::new(lattice.clone(), cusp_b, config).unwrap();
    let ca = &lattice.cusps[cusp_a];
    let omega = ca.cusp_width.clone();
    let w_f = omega.embed();
    let ga_op = op_norm(ca.sigma_g.embed());
    // canonical representative bounds (see Lemma-style box reduction)
    let rx = 2.0 * (ca.base_point_f64().0.powi(2) + ca.base_point_f64().1.powi(2)).sqrt() + 1.0;
    let ry = max_c * (w_f + 1.0 / w_f).sqrt() * ga_op + 1.0;
    let xs = orb_a.enumerate_ball(rx).unwrap();
    let ys = orb_b.enumerate_ball(ry).unwrap();

    // group pairs by exact determinant omega * det_raw in (0, max_c]
    let mut groups: BTreeMap<
        RingElement,
        Vec<((RingElement, RingElement), (RingElement, RingElement), RingElement)>,
    > = BTreeMap::new();
    for x in &xs {
        for y in &ys {
            let det_raw = &(&x.coords.0 * &y.coords.1) - &(&x.coords.1 * &y.coords.0);
            if det_raw.is_zero() {
                continue;
            }
            let det_scaled = &omega * &det_raw;
            if det_scaled.certified_sign() <= 0 {
                continue;
            }
            if det_scaled.certified_cmp_f64(max_c) == std::cmp::Ordering::Greater {
                continue;
            }
            groups.entry(det_scaled).or_default().push((
                x.coords.clone(),
                y.coords.clone(),
                det_raw,
            ));
        }
    }

    let mut out = BTreeMap::new();
    for (detval, pairs) in groups {
        let mut reps: Vec<((RingElement, RingElement), (RingElement, RingElement))> = Vec::new();
        for (x, y, det_raw) in &pairs {
            let p = (x.clone(), y.clone());
            if !reps.iter().any(|r| pairs_equivalent(lattice, r, &p, det_raw)) {
                reps.push(p);
            }
        }
        out.insert(detval, reps.len() as u64);
    }
    out
}

pub fn op_norm(a: [[f64; 2]; 2]) -> f64 {
    lattice_orbits::orbit::op_norm(a)
}

#[allow(dead_code)]
pub fn as_int_pairs(vs: &[OrbitVector]) -> Vec<(i64, i64)> {
    use num_traits::ToPrimitive;
    let mut out: Vec<(i64, i64)> = vs
        .iter()
        .map(|v| {
            (v.coords.0.coeffs[0].to_i64().unwrap(), v.coords.1.coeffs[0].to_i64().unwrap())
        })
        .collect();
    out.sort_unstable();
    out
}
