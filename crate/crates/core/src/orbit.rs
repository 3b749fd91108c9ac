//! Enumeration of scaled discrete orbits Lambda_a = Gamma sigma_a e1 inside
//! balls, and finite unions of scaled orbits (holonomy sets).
//!
//! The enumeration is a breadth-first search over the Cayley graph of the
//! lattice acting on the base point, deduplicating states by exact
//! coordinates and pruning a branch once its embedded image leaves the
//! requested region inflated by the prune factor. Completeness is validated
//! against independent oracles (gcd scans for SL2(Z) and Gamma(N), inflated
//! self-runs for Hecke groups). For congruence subgroups the search runs on
//! the covering graph of SL2(Z) states (vector, coset mod N) and accepts a
//! vector once a reachable coset certifies Gamma(N)-reachability, so the
//! enumeration never relies on the congruence-scan characterization used by
//! the test oracles.
//!
//! Coordinates are exact: the fast backend packs ring coefficients into i64
//! words (with overflow checks) and the fallback works on full ring elements.
//! Floats enter only through pruning and the cached embeddings.

use crate::error::{Error, Result};
use crate::fuchsian::{GroupElement, Lattice, LatticeKind};
use crate::ring::RingElement;
use crate::shape::BorelShape;
use num_bigint::BigInt;
use num_traits::ToPrimitive;
use std::collections::{HashMap, HashSet, VecDeque};
use std::io::{BufRead, Write};
use std::sync::Arc;

// ---------------------------------------------------------------------------
// Engine move tables
// ---------------------------------------------------------------------------

/// One generator (or inverse) as an action on flattened coefficient vectors
/// [x_0..x_{d-1} | y_0..y_{d-1}], plus its left-multiplication action on
/// cosets mod N for congruence covers.
struct Move {
    am: Vec<i64>,
    bm: Vec<i64>,
    cm: Vec<i64>,
    dm: Vec<i64>,
    coset_map: Option<Vec<u16>>,
}

/// Multiplication-by-alpha matrix in the power basis, as i64.
fn mult_matrix(alpha: &RingElement) -> Result<Vec<i64>> {
    let ring = &alpha.ring;
    let d = ring.degree;
    let mut m = vec![0i64; d * d];
    let mut basis = ring.one();
    let lam = ring.lambda();
    for j in 0..d {
        let prod = alpha * &basis;
        for i in 0..d {
            m[i * d + j] = prod.coeffs[i].to_i64().ok_or(Error::SmallBackendOverflow)?;
        }
        basis = &basis * &lam;
    }
    Ok(m)
}

fn make_move(g: &GroupElement, coset_map: Option<Vec<u16>>) -> Result<Move> {
    Ok(Move {
        am: mult_matrix(&g.a)?,
        bm: mult_matrix(&g.b)?,
        cm: mult_matrix(&g.c)?,
        dm: mult_matrix(&g.d)?,
        coset_map,
    })
}

/// Region used for pruning, over the embedded plane image of raw coordinates.
#[derive(Clone, Copy, Debug)]
pub enum PruneRegion {
    /// Keep while |P v| <= radius.
    Ball { p: [[f64; 2]; 2], radius: f64 },
    /// Keep while |row0 . v| <= size and |row1 . v| <= size.
    Box { rows: [[f64; 2]; 2], size: f64 },
}

impl PruneRegion {
    #[inline]
    fn keeps(&self, x: f64, y: f64) -> bool {
        match *self {
            PruneRegion::Ball { p, radius } => {
                let u = p[0][0] * x + p[0][1] * y;
                let v = p[1][0] * x + p[1][1] * y;
                u * u + v * v <= radius * radius
            }
            PruneRegion::Box { rows, size } => {
                (rows[0][0] * x + rows[0][1] * y).abs() <= size
                    && (rows[1][0] * x + rows[1][1] * y).abs() <= size
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Congruence cover: cosets of Gamma(N) in SL2(Z) as elements of SL2(Z/N)
// ---------------------------------------------------------------------------

struct CosetTable {
    mats: Vec<[u8; 4]>,
    index: HashMap<[u8; 4], u16>,
    n: u32,
}

impl CosetTable {
    fn build(n: u32) -> CosetTable {
        let reduce = |v: i64| -> u8 { (((v % n as i64) + n as i64) % n as i64) as u8 };
        let mul = |a: &[u8; 4], b: &[u8; 4]| -> [u8; 4] {
            [
                reduce(a[0] as i64 * b[0] as i64 + a[1] as i64 * b[2] as i64),
                reduce(a[0] as i64 * b[1] as i64 + a[1] as i64 * b[3] as i64),
                reduce(a[2] as i64 * b[0] as i64 + a[3] as i64 * b[2] as i64),
                reduce(a[2] as i64 * b[1] as i64 + a[3] as i64 * b[3] as i64),
            ]
        };
        let id = [1u8, 0, 0, 1];
        let s = [0u8, reduce(-1), 1, 0];
        let t = [1u8, 1, 0, 1];
        let ti = [1u8, reduce(-1), 0, 1];
        let mut mats = vec![id];
        let mut index = HashMap::new();
        index.insert(id, 0u16);
        let mut queue = VecDeque::from([0usize]);
        while let Some(i) = queue.pop_front() {
            let cur = mats[i];
            for g in [s, t, ti] {
                let nx = mul(&g, &cur);
                if let std::collections::hash_map::Entry::Vacant(e) = index.entry(nx) {
                    let new_id = mats.len() as u16;
                    e.insert(new_id);
                    mats.push(nx);
                    queue.push_back(new_id as usize);
                }
            }
        }
        CosetTable { mats, index, n }
    }

    fn id_of(&self, m: &GroupElement) -> u16 {
        let n = self.n as i64;
        let red = |x: &RingElement| ((&x.coeffs[0] % n + n) % n).to_u8().unwrap();
        self.index[&[red(&m.a), red(&m.b), red(&m.c), red(&m.d)]]
    }

    /// Left-multiplication map id -> id(g * .) for a generator g.
    fn left_mul_map(&self, g: &GroupElement) -> Vec<u16> {
        let n = self.n as i64;
        let red = |v: i64| -> u8 { ((v % n + n) % n) as u8 };
        let ge = |x: &RingElement| ((&x.coeffs[0] % n + n) % n).to_i64().unwrap();
        let (ga, gb, gc, gd) = (ge(&g.a), ge(&g.b), ge(&g.c), ge(&g.d));
        self.mats
            .iter()
            .map(|m| {
                let prod = [
                    red(ga * m[0] as i64 + gb * m[2] as i64),
                    red(ga * m[1] as i64 + gb * m[3] as i64),
                    red(gc * m[0] as i64 + gd * m[2] as i64),
                    red(gc * m[1] as i64 + gd * m[3] as i64),
                ];
                self.index[&prod]
            })
            .collect()
    }
}

// ---------------------------------------------------------------------------
// Enumeration backbone
// ---------------------------------------------------------------------------

/// Static description of one orbit enumeration problem.
pub(crate) struct OrbitProblem {
    moves: Vec<Move>,
    degree: usize,
    emb: Vec<f64>,
    fold_sign: bool,
    /// Accepted cosets for vector output (None = accept everything).
    accept: Option<Vec<bool>>,
    init_coords: Vec<i64>,
    init_coset: u16,
}

impl OrbitProblem {
    /// Orbit of basepoint = g_b * e1 under the lattice, on the congruence
    /// cover when the lattice is Gamma(N).
    pub(crate) fn for_basepoint(lattice: &Arc<Lattice>, sigma_g: &GroupElement) -> Result<Self> {
        let ring = &lattice.ring;
        let d = ring.degree;
        let s = GroupElement::s_rotation(ring);
        // Congruence covers walk the ambient SL2(Z) Cayley graph (unit
        // translation) with coset bookkeeping; other kinds walk their own
        // generators.
        let step = match lattice.kind {
            LatticeKind::Congruence(_) => ring.one(),
            _ => lattice.width_at_infinity.clone(),
        };
        let t = GroupElement::translation(step);
        let ti = t.inverse();
        let mut gens: Vec<GroupElement> = vec![s, t, ti];
        if lattice.kind == LatticeKind::Custom {
            gens = Vec::new();
            for g in &lattice.generators {
                gens.push(g.clone());
                gens.push(g.inverse());
            }
        }

        let (moves, accept, init_coset) = match lattice.kind {
            LatticeKind::Congruence(n) if n > 1 => {
                let table = CosetTable::build(n);
                let moves = gens
                    .iter()
                    .map(|g| make_move(g, Some(table.left_mul_map(g))))
                    .collect::<Result<Vec<_>>>()?;
                // accept gamma-bar in { g_b T^k g_b^-1 mod N : k }
                let mut accept = vec![false; table.mats.len()];
                let mut u = GroupElement::identity(ring);
                let tstep = GroupElement::translation(ring.one());
                for _ in 0..n {
                    let rep = sigma_g.mul(&u).mul(&sigma_g.inverse());
                    accept[table.id_of(&rep) as usize] = true;
                    u = u.mul(&tstep);
                }
                (moves, Some(accept), table.id_of(&GroupElement::identity(ring)))
            }
            _ => {
                let moves =
                    gens.iter().map(|g| make_move(g, None)).collect::<Result<Vec<_>>>()?;
                (moves, None, 0u16)
            }
        };

        let base = sigma_g.apply(&(ring.from_i64(1), ring.from_i64(0)));
        let mut init_coords = Vec::with_capacity(2 * d);
        for part in [&base.0, &base.1] {
            for c in &part.coeffs {
                init_coords.push(c.to_i64().ok_or(Error::SmallBackendOverflow)?);
            }
        }

        Ok(OrbitProblem {
            moves,
            degree: d,
            emb: ring.embedding_row().to_vec(),
            fold_sign: lattice.contains_minus_identity,
            accept,
            init_coords,
            init_coset,
        })
    }

    #[inline]
    fn embed_pair(&self, coords: &[i64]) -> (f64, f64) {
        let d = self.degree;
        let mut x = 0.0;
        let mut y = 0.0;
        for i in 0..d {
            x += coords[i] as f64 * self.emb[i];
            y += coords[d + i] as f64 * self.emb[i];
        }
        (x, y)
    }
}

/// Resumable search state: dedup sets plus the parked boundary states that
/// fell outside the previous prune region.
pub(crate) struct SearchState {
    visited: DedupSet,
    emitted: Option<DedupSet>,
    frontier_d1: VecDeque<(i64, i64, u16, u32)>,
    parked_d1: Vec<(i64, i64, u16, u32)>,
    frontier: VecDeque<(Vec<i64>, u16, u32)>,
    parked: Vec<(Vec<i64>, u16, u32)>,
    started: bool,
    pub visited_count: usize,
}

enum DedupSet {
    /// Degree-1 coset-free states in a square bitmap, with a hash spill for
    /// coordinates beyond its bound.
    Bitmap { half: i64, side: i64, words: Vec<u64>, spill: HashSet<(i64, i64)> },
    Pairs(HashSet<(u128, u16)>),
    Wide(HashSet<(Box<[i64]>, u16)>),
}

impl DedupSet {
    fn new(degree: usize) -> DedupSet {
        if degree == 1 {
            DedupSet::Pairs(HashSet::new())
        } else {
            DedupSet::Wide(HashSet::new())
        }
    }

    /// Switch a fresh degree-1 set to bitmap mode sized for |x|,|y| <= half.
    fn upgrade_to_bitmap(&mut self, half: i64) {
        if let DedupSet::Pairs(set) = self {
            if set.is_empty() {
                let side = 2 * half + 1;
                let words = vec![0u64; ((side * side) as usize + 63) / 64];
                *self = DedupSet::Bitmap { half, side, words, spill: HashSet::new() };
            }
        }
    }

    #[inline]
    fn insert_d1(&mut self, x: i64, y: i64, coset: u16) -> bool {
        match self {
            DedupSet::Bitmap { half, side, words, spill } => {
                if x.abs() <= *half && y.abs() <= *half {
                    let idx = ((x + *half) + (y + *half) * *side) as usize;
                    let (w, b) = (idx / 64, idx % 64);
                    let mask = 1u64 << b;
                    if words[w] & mask != 0 {
                        false
                    } else {
                        words[w] |= mask;
                        true
                    }
                } else {
                    spill.insert((x, y))
                }
            }
            DedupSet::Pairs(set) => {
                let key = ((x as u64 as u128) << 64) | (y as u64 as u128);
                set.insert((key, coset))
            }
            DedupSet::Wide(set) => set.insert((vec![x, y].into_boxed_slice(), coset)),
        }
    }

    fn insert(&mut self, coords: &[i64], coset: u16) -> bool {
        if coords.len() == 2 {
            return self.insert_d1(coords[0], coords[1], coset);
        }
        match self {
            DedupSet::Wide(set) => set.insert((coords.to_vec().into_boxed_slice(), coset)),
            _ => unreachable!("wide dedup expected for degree > 1"),
        }
    }
}

impl SearchState {
    fn new(degree: usize, track_cosets: bool) -> SearchState {
        SearchState {
            visited: DedupSet::new(degree),
            emitted: if track_cosets { Some(DedupSet::new(degree)) } else { None },
            frontier_d1: VecDeque::new(),
            parked_d1: Vec::new(),
            frontier: VecDeque::new(),
            parked: Vec::new(),
            started: false,
            visited_count: 0,
        }
    }
}

/// Canonical sign representative: negate unless the first nonzero coefficient
/// is positive.
#[inline]
fn canonicalize_sign(coords: &mut [i64]) {
    for c in coords.iter() {
        if *c > 0 {
            return;
        }
        if *c < 0 {
            for c in coords.iter_mut() {
                *c = -*c;
            }
            return;
        }
    }
}

/// Run (or resume) the search so that every orbit vector whose embedded image
/// stays inside `region` has been emitted to `sink(coords, depth)` exactly
/// once. The sink sees the folded sign representative when -I is present.
pub(crate) fn run_search(
    problem: &OrbitProblem,
    state: &mut SearchState,
    region: PruneRegion,
    visited_cap: usize,
    sink: &mut dyn FnMut(&[i64], u32),
) -> Result<()> {
    if problem.degree == 1 {
        run_search_d1(problem, state, region, visited_cap, sink)
    } else {
        run_search_wide(problem, state, region, visited_cap, sink)
    }
}

/// Degree-1 loop: scalar moves, allocation-free frontier, bitmap dedup when
/// no cosets are tracked.
fn run_search_d1(
    problem: &OrbitProblem,
    state: &mut SearchState,
    region: PruneRegion,
    visited_cap: usize,
    sink: &mut dyn FnMut(&[i64], u32),
) -> Result<()> {
    let emb0 = problem.emb[0];
    let moves: Vec<([i64; 4], Option<&[u16]>)> = problem
        .moves
        .iter()
        .map(|m| ([m.am[0], m.bm[0], m.cm[0], m.dm[0]], m.coset_map.as_deref()))
        .collect();
    let fold = problem.fold_sign;
    let track = problem.accept.is_some();

    if !state.started && !track {
        if let Some(bound) = region_coord_bound(&region) {
            // one generator step from a kept state can at most double a
            // coordinate (x -> x +- y), so cover that ring too before
            // falling back to the hash spill
            state.visited.upgrade_to_bitmap(2 * bound + 4);
        }
    }
    if !state.started {
        state.started = true;
        let (mut x, mut y) = (problem.init_coords[0], problem.init_coords[1]);
        if fold && (x < 0 || (x == 0 && y < 0)) {
            x = -x;
            y = -y;
        }
        state.visited.insert_d1(x, y, problem.init_coset);
        state.parked_d1.push((x, y, problem.init_coset, 0));
    }

    let mut emit = |state: &mut SearchState, x: i64, y: i64, coset: u16, depth: u32| {
        match (&problem.accept, &mut state.emitted) {
            (Some(accept), Some(emitted)) => {
                if accept[coset as usize] && emitted.insert_d1(x, y, 0) {
                    sink(&[x, y], depth);
                }
            }
            _ => sink(&[x, y], depth),
        }
    };

    let parked = std::mem::take(&mut state.parked_d1);
    for (x, y, coset, depth) in parked {
        if region.keeps(x as f64 * emb0, y as f64 * emb0) {
            emit(state, x, y, coset, depth);
            state.frontier_d1.push_back((x, y, coset, depth));
        } else {
            state.parked_d1.push((x, y, coset, depth));
        }
    }

    while let Some((x, y, coset, depth)) = state.frontier_d1.pop_front() {
        state.visited_count += 1;
        if state.visited_count > visited_cap {
            state.frontier_d1.push_front((x, y, coset, depth));
            return Err(Error::FrontierCap {
                visited: state.visited_count,
                frontier: state.frontier_d1.len(),
            });
        }
        for (m, cmap) in &moves {
            let nx128 = m[0] as i128 * x as i128 + m[1] as i128 * y as i128;
            let ny128 = m[2] as i128 * x as i128 + m[3] as i128 * y as i128;
            let (Ok(mut nx), Ok(mut ny)) = (i64::try_from(nx128), i64::try_from(ny128)) else {
                return Err(Error::SmallBackendOverflow);
            };
            if fold && (nx < 0 || (nx == 0 && ny < 0)) {
                nx = -nx;
                ny = -ny;
            }
            let ncoset = match cmap {
                Some(map) => map[coset as usize],
                None => coset,
            };
            if !state.visited.insert_d1(nx, ny, ncoset) {
                continue;
            }
            let ndepth = depth + 1;
            if region.keeps(nx as f64 * emb0, ny as f64 * emb0) {
                emit(state, nx, ny, ncoset, ndepth);
                state.frontier_d1.push_back((nx, ny, ncoset, ndepth));
            } else {
                state.parked_d1.push((nx, ny, ncoset, ndepth));
            }
        }
    }
    Ok(())
}

fn run_search_wide(
    problem: &OrbitProblem,
    state: &mut SearchState,
    region: PruneRegion,
    visited_cap: usize,
    sink: &mut dyn FnMut(&[i64], u32),
) -> Result<()> {
    let d = problem.degree;
    let w = 2 * d;

    if !state.started {
        state.started = true;
        let mut coords = problem.init_coords.clone();
        if problem.fold_sign {
            canonicalize_sign(&mut coords);
        }
        state.visited.insert(&coords, problem.init_coset);
        state.parked.push((coords, problem.init_coset, 0));
    }

    // re-inject parked states that the (possibly enlarged) region now covers
    let parked = std::mem::take(&mut state.parked);
    for (coords, coset, depth) in parked {
        let (x, y) = problem.embed_pair(&coords);
        if region.keeps(x, y) {
            emit_if_accepted(problem, state, &coords, coset, depth, sink);
            state.frontier.push_back((coords, coset, depth));
        } else {
            state.parked.push((coords, coset, depth));
        }
    }

    let mut scratch = vec![0i64; w];
    while let Some((coords, coset, depth)) = state.frontier.pop_front() {
        state.visited_count += 1;
        if state.visited_count > visited_cap {
            state.frontier.push_front((coords, coset, depth));
            return Err(Error::FrontierCap {
                visited: state.visited_count,
                frontier: state.frontier.len(),
            });
        }
        for mv in &problem.moves {
            for i in 0..d {
                let mut xv: i128 = 0;
                let mut yv: i128 = 0;
                for j in 0..d {
                    xv += mv.am[i * d + j] as i128 * coords[j] as i128
                        + mv.bm[i * d + j] as i128 * coords[d + j] as i128;
                    yv += mv.cm[i * d + j] as i128 * coords[j] as i128
                        + mv.dm[i * d + j] as i128 * coords[d + j] as i128;
                }
                scratch[i] = i64::try_from(xv).map_err(|_| Error::SmallBackendOverflow)?;
                scratch[d + i] = i64::try_from(yv).map_err(|_| Error::SmallBackendOverflow)?;
            }
            let mut ncoset = coset;
            if let Some(map) = &mv.coset_map {
                ncoset = map[coset as usize];
            }
            if problem.fold_sign {
                canonicalize_sign(&mut scratch);
            }
            if !state.visited.insert(&scratch, ncoset) {
                continue;
            }
            let ndepth = depth + 1;
            let (x, y) = problem.embed_pair(&scratch);
            if region.keeps(x, y) {
                emit_if_accepted(problem, state, &scratch, ncoset, ndepth, sink);
                state.frontier.push_back((scratch.clone(), ncoset, ndepth));
            } else {
                state.parked.push((scratch.clone(), ncoset, ndepth));
            }
        }
    }
    Ok(())
}

/// Largest |coordinate| a kept state can have, when finite and small enough
/// for a bitmap (used only for degree-1 coset-free problems, where raw
/// coordinates are the embedded values).
fn region_coord_bound(region: &PruneRegion) -> Option<i64> {
    let bound = match region {
        PruneRegion::Ball { p, radius } => radius * op_norm_inv(*p),
        PruneRegion::Box { rows, size } => {
            let inv_min = |r: &[f64; 2]| (r[0] * r[0] + r[1] * r[1]).sqrt();
            // conservative: the box |r0.v|,|r1.v| <= size lies inside the ball
            // of radius size * |M^-1|_op for M = [r0; r1]
            let m = [[rows[0][0], rows[0][1]], [rows[1][0], rows[1][1]]];
            let _ = inv_min;
            size * op_norm_inv(m)
        }
    };
    if bound.is_finite() && bound > 0.0 && bound < 30_000.0 {
        Some(bound.ceil() as i64 + 2)
    } else {
        None
    }
}

#[inline]
fn emit_if_accepted(
    problem: &OrbitProblem,
    state: &mut SearchState,
    coords: &[i64],
    coset: u16,
    depth: u32,
    sink: &mut dyn FnMut(&[i64], u32),
) {
    match (&problem.accept, &mut state.emitted) {
        (Some(accept), Some(emitted)) => {
            if accept[coset as usize] && emitted.insert(coords, 0) {
                sink(coords, depth);
            }
        }
        _ => sink(coords, depth),
    }
}

/// Exact-ring fallback search for coefficients beyond i64. Same algorithm on
/// full ring elements; rebuilt per call (no resume).
fn run_search_ring(
    lattice: &Arc<Lattice>,
    sigma_g: &GroupElement,
    region: PruneRegion,
    visited_cap: usize,
    fold_sign: bool,
    sink: &mut dyn FnMut(&(RingElement, RingElement), u32),
) -> Result<()> {
    if matches!(lattice.kind, LatticeKind::Congruence(n) if n > 1) {
        return Err(Error::UnsupportedLattice(
            "ring-backend enumeration on a congruence cover (coefficients exceeded i64)".into(),
        ));
    }
    let ring = &lattice.ring;
    let s = GroupElement::s_rotation(ring);
    let t = GroupElement::translation(lattice.width_at_infinity.clone());
    let gens = vec![s.clone(), t.clone(), t.inverse()];
    let canon = |v: (RingElement, RingElement)| -> (RingElement, RingElement) {
        if !fold_sign {
            return v;
        }
        let zero = BigInt::from(0);
        for c in v.0.coeffs.iter().chain(v.1.coeffs.iter()) {
            if c > &zero {
                return v;
            }
            if c < &zero {
                return (-&v.0, -&v.1);
            }
        }
        v
    };
    let base = canon(sigma_g.apply(&(ring.from_i64(1), ring.from_i64(0))));
    let mut visited: HashSet<(RingElement, RingElement)> = HashSet::new();
    visited.insert(base.clone());
    let mut frontier = VecDeque::from([(base, 0u32)]);
    let mut visited_count = 0usize;
    while let Some((v, depth)) = frontier.pop_front() {
        let (x, y) = (v.0.embed(), v.1.embed());
        if !region.keeps(x, y) {
            continue;
        }
        sink(&v, depth);
        visited_count += 1;
        if visited_count > visited_cap {
            return Err(Error::FrontierCap { visited: visited_count, frontier: frontier.len() });
        }
        for g in &gens {
            let nv = canon(g.apply(&v));
            if visited.insert(nv.clone()) {
                frontier.push_back((nv, depth + 1));
            }
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// DiscreteOrbit: cached ball enumeration
// ---------------------------------------------------------------------------

/// Enumeration configuration.
#[derive(Clone, Copy, Debug)]
pub struct OrbitConfig {
    /// Branches are pruned once the vector norm exceeds prune_factor * R.
    pub prune_factor: f64,
    /// Hard cap on expanded states per orbit.
    pub visited_cap: usize,
    /// Grid cell size for spatial queries.
    pub grid_cell: f64,
}

impl Default for OrbitConfig {
    fn default() -> Self {
        OrbitConfig { prune_factor: 8.0, visited_cap: 600_000_000, grid_cell: 2.0 }
    }
}

/// One orbit vector: exact coordinates, the float embedding (including the
/// sqrt(width) orbit scale), and the search depth it was found at.
#[derive(Clone, Debug)]
pub struct OrbitVector {
    pub coords: (RingElement, RingElement),
    pub float_coords: (f64, f64),
    pub norm_sq: f64,
    pub word_length: u32,
}

/// A scaled discrete orbit with a cached, norm-sorted enumeration.
///
/// Points are stored unscaled (exact ring coefficients of gamma * g_b e1);
/// the scalar sqrt(width) enters through the cached float embeddings. When
/// -I is in the lattice only one sign representative is stored and every
/// query accounts for the doubled multiplicity.
pub struct DiscreteOrbit {
    pub lattice: Arc<Lattice>,
    pub cusp_index: usize,
    pub config: OrbitConfig,
    scale: f64,
    problem: OrbitProblem,
    search: SearchState,
    ring_backend: bool,
    coeffs: Vec<i64>,
    big_coords: HashMap<u32, (Vec<BigInt>, Vec<BigInt>)>,
    floats: Vec<(f64, f64)>,
    norms_sq: Vec<f64>,
    depths: Vec<u32>,
    cached_radius: f64,
    grid: Option<Grid>,
}

struct Grid {
    cell: f64,
    ranges: HashMap<(i32, i32), (u32, u32)>,
    order: Vec<u32>,
}

impl DiscreteOrbit {
    pub fn new(lattice: Arc<Lattice>, cusp_index: usize, config: OrbitConfig) -> Result<Self> {
        if cusp_index >= lattice.cusps.len() {
            return Err(Error::InvalidParam(format!(
                "cusp index {cusp_index} out of range ({} cusps)",
                lattice.cusps.len()
            )));
        }
        let cusp = &lattice.cusps[cusp_index];
        let scale = cusp.cusp_width.embed().sqrt();
        let problem = OrbitProblem::for_basepoint(&lattice, &cusp.sigma_g)?;
        let track = problem.accept.is_some();
        let degree = problem.degree;
        Ok(DiscreteOrbit {
            lattice,
            cusp_index,
            config,
            scale,
            problem,
            search: SearchState::new(degree, track),
            ring_backend: false,
            coeffs: Vec::new(),
            big_coords: HashMap::new(),
            floats: Vec::new(),
            norms_sq: Vec::new(),
            depths: Vec::new(),
            cached_radius: 0.0,
            grid: None,
        })
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn cached_radius(&self) -> f64 {
        self.cached_radius
    }

    pub fn multiplicity(&self) -> u64 {
        if self.lattice.contains_minus_identity {
            2
        } else {
            1
        }
    }

    pub fn len_folded(&self) -> usize {
        self.norms_sq.len()
    }

    /// Grow the cache so it is complete for every vector of norm <= r.
    pub fn ensure_radius(&mut self, r: f64) -> Result<()> {
        if r <= self.cached_radius {
            return Ok(());
        }
        if self.ring_backend {
            return self.rebuild_with_ring_backend(r);
        }
        let kappa = self.config.prune_factor.max(1.0);
        let raw_radius = kappa * r / self.scale;
        let region = PruneRegion::Ball { p: [[1.0, 0.0], [0.0, 1.0]], radius: raw_radius };
        let d = self.problem.degree;
        let scale = self.scale;
        let emb = self.problem.emb.clone();

        let mut new_coeffs: Vec<i64> = Vec::new();
        let mut new_meta: Vec<(f64, f64, f64, u32)> = Vec::new();
        let res = run_search(
            &self.problem,
            &mut self.search,
            region,
            self.config.visited_cap,
            &mut |coords, depth| {
                let mut x = 0.0;
                let mut y = 0.0;
                for i in 0..d {
                    x += coords[i] as f64 * emb[i];
                    y += coords[d + i] as f64 * emb[i];
                }
                let (sx, sy) = (x * scale, y * scale);
                new_coeffs.extend_from_slice(coords);
                new_meta.push((sx, sy, sx * sx + sy * sy, depth));
            },
        );
        // harvest everything found so far even on failure, so a resumed run
        // does not lose vectors already marked as visited
        self.coeffs.extend_from_slice(&new_coeffs);
        for (sx, sy, n2, depth) in new_meta {
            self.floats.push((sx, sy));
            self.norms_sq.push(n2);
            self.depths.push(depth);
        }
        match res {
            Ok(()) => {
                self.cached_radius = r;
                self.resort();
                self.grid = None;
                Ok(())
            }
            Err(Error::SmallBackendOverflow) => {
                self.ring_backend = true;
                self.rebuild_with_ring_backend(r)
            }
            Err(e) => {
                self.resort();
                self.grid = None;
                Err(e)
            }
        }
    }

    fn rebuild_with_ring_backend(&mut self, r: f64) -> Result<()> {
        let kappa = self.config.prune_factor.max(1.0);
        let raw_radius = kappa * r / self.scale;
        let region = PruneRegion::Ball { p: [[1.0, 0.0], [0.0, 1.0]], radius: raw_radius };
        let cusp = self.lattice.cusps[self.cusp_index].clone();
        let scale = self.scale;
        let d = self.problem.degree;
        let mut coeffs = Vec::new();
        let mut floats = Vec::new();
        let mut norms = Vec::new();
        let mut depths = Vec::new();
        let mut bigs: HashMap<u32, (Vec<BigInt>, Vec<BigInt>)> = HashMap::new();
        let mut idx = 0u32;
        run_search_ring(
            &self.lattice,
            &cusp.sigma_g,
            region,
            self.config.visited_cap,
            self.lattice.contains_minus_identity,
            &mut |v, depth| {
                let (x, y) = (v.0.embed(), v.1.embed());
                let (sx, sy) = (x * scale, y * scale);
                let mut fits = true;
                let mut flat = Vec::with_capacity(2 * d);
                for part in [&v.0, &v.1] {
                    for c in &part.coeffs {
                        match c.to_i64() {
                            Some(w) => flat.push(w),
                            None => {
                                fits = false;
                                flat.push(i64::MAX);
                            }
                        }
                    }
                }
                if !fits {
                    bigs.insert(idx, (v.0.coeffs.clone(), v.1.coeffs.clone()));
                }
                coeffs.extend_from_slice(&flat);
                floats.push((sx, sy));
                norms.push(sx * sx + sy * sy);
                depths.push(depth);
                idx += 1;
            },
        )?;
        self.coeffs = coeffs;
        self.floats = floats;
        self.norms_sq = norms;
        self.depths = depths;
        self.big_coords = bigs;
        self.cached_radius = r;
        self.resort();
        self.grid = None;
        Ok(())
    }

    fn resort(&mut self) {
        let n = self.norms_sq.len();
        let d2 = 2 * self.problem.degree;
        // cache-friendly sort on packed keys; the index tiebreak keeps the
        // deterministic emission order for (measure-zero) exact ties
        let mut keyed: Vec<(f64, f64, u32)> = (0..n)
            .map(|i| (self.norms_sq[i], self.floats[i].1.atan2(self.floats[i].0), i as u32))
            .collect();
        keyed.sort_unstable_by(|a, b| {
            a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)).then(a.2.cmp(&b.2))
        });
        let order: Vec<u32> = keyed.into_iter().map(|k| k.2).collect();
        let mut coeffs_s = Vec::with_capacity(self.coeffs.len());
        let mut floats_s = Vec::with_capacity(n);
        let mut norms_s = Vec::with_capacity(n);
        let mut depths_s = Vec::with_capacity(n);
        let mut bigs_s = HashMap::new();
        for (new_i, &old) in order.iter().enumerate() {
            let old = old as usize;
            coeffs_s.extend_from_slice(&self.coeffs[old * d2..(old + 1) * d2]);
            floats_s.push(self.floats[old]);
            norms_s.push(self.norms_sq[old]);
            depths_s.push(self.depths[old]);
            if let Some(b) = self.big_coords.remove(&(old as u32)) {
                bigs_s.insert(new_i as u32, b);
            }
        }
        self.coeffs = coeffs_s;
        self.floats = floats_s;
        self.norms_sq = norms_s;
        self.depths = depths_s;
        self.big_coords = bigs_s;
    }

    fn exact_coords(&self, i: usize) -> (RingElement, RingElement) {
        if let Some((a, b)) = self.big_coords.get(&(i as u32)) {
            return (
                self.lattice.ring.from_coeffs(a.clone()),
                self.lattice.ring.from_coeffs(b.clone()),
            );
        }
        let d = self.problem.degree;
        let ring = &self.lattice.ring;
        let slice = &self.coeffs[i * 2 * d..(i + 1) * 2 * d];
        (
            ring.from_coeffs(slice[..d].iter().map(|&c| BigInt::from(c)).collect()),
            ring.from_coeffs(slice[d..].iter().map(|&c| BigInt::from(c)).collect()),
        )
    }

    /// All orbit vectors with norm <= r, each exactly once, sorted by
    /// (norm, angle). Extends and reuses the cache.
    pub fn enumerate_ball(&mut self, r: f64) -> Result<Vec<OrbitVector>> {
        if r <= 0.0 {
            return Err(Error::InvalidParam("radius must be positive".into()));
        }
        self.ensure_radius(r)?;
        let prefix = self.prefix_len(r);
        let mut out = Vec::with_capacity(prefix * self.multiplicity() as usize);
        for i in 0..prefix {
            let coords = self.exact_coords(i);
            let f = self.floats[i];
            if self.multiplicity() == 2 {
                out.push(OrbitVector {
                    coords: (-&coords.0, -&coords.1),
                    float_coords: (-f.0, -f.1),
                    norm_sq: self.norms_sq[i],
                    word_length: self.depths[i],
                });
            }
            out.push(OrbitVector {
                coords,
                float_coords: f,
                norm_sq: self.norms_sq[i],
                word_length: self.depths[i],
            });
        }
        out.sort_by(|a, b| {
            a.norm_sq
                .partial_cmp(&b.norm_sq)
                .unwrap()
                .then_with(|| {
                    let aa = a.float_coords.1.atan2(a.float_coords.0);
                    let ab = b.float_coords.1.atan2(b.float_coords.0);
                    aa.partial_cmp(&ab).unwrap()
                })
                .then_with(|| a.coords.cmp(&b.coords))
        });
        Ok(out)
    }

    fn prefix_len(&self, r: f64) -> usize {
        let r2 = r * r;
        self.norms_sq.partition_point(|&n| n <= r2)
    }

    /// |Lambda intersect B_r|.
    pub fn count(&mut self, r: f64) -> Result<u64> {
        if r <= 0.0 {
            return Err(Error::InvalidParam("radius must be positive".into()));
        }
        self.ensure_radius(r)?;
        Ok(self.prefix_len(r) as u64 * self.multiplicity())
    }

    /// Count from the existing cache without extending it.
    pub fn count_cached(&self, r: f64) -> Result<u64> {
        if r > self.cached_radius * (1.0 + 1e-12) {
            return Err(Error::InvalidParam(format!(
                "count_cached({r}) beyond cached radius {}",
                self.cached_radius
            )));
        }
        Ok(self.prefix_len(r) as u64 * self.multiplicity())
    }

    /// |A(Lambda) intersect Omega_r| for an invertible A and a bounded shape
    /// containing the origin; enumerates the pulled-back ball of radius
    /// |A^-1|_op * r * circumradius.
    pub fn count_transformed(
        &mut self,
        a: [[f64; 2]; 2],
        shape: &BorelShape,
        r: f64,
    ) -> Result<u64> {
        let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
        if det.abs() < 1e-300 {
            return Err(Error::InvalidParam("transformation is singular".into()));
        }
        let need = op_norm_inv(a) * r * shape.circumradius();
        self.ensure_radius(need)?;
        let prefix = self.prefix_len(need);
        let mut count = 0u64;
        for i in 0..prefix {
            let (x, y) = self.floats[i];
            let p = (a[0][0] * x + a[0][1] * y, a[1][0] * x + a[1][1] * y);
            if shape.contains_scaled(p, r) {
                count += 1;
            }
            if self.multiplicity() == 2 && shape.contains_scaled((-p.0, -p.1), r) {
                count += 1;
            }
        }
        Ok(count)
    }

    fn ensure_grid(&mut self) {
        if self.grid.is_some() {
            return;
        }
        let cell = self.config.grid_cell;
        let n = self.norms_sq.len();
        let mut cells: Vec<((i32, i32), u32)> = Vec::with_capacity(n);
        for (i, &(x, y)) in self.floats.iter().enumerate() {
            cells.push((((x / cell).floor() as i32, (y / cell).floor() as i32), i as u32));
        }
        cells.sort_unstable();
        let mut ranges = HashMap::new();
        let mut order = Vec::with_capacity(n);
        let mut start = 0usize;
        for i in 0..cells.len() {
            order.push(cells[i].1);
            if i + 1 == cells.len() || cells[i + 1].0 != cells[i].0 {
                ranges.insert(cells[i].0, (start as u32, (i + 1) as u32));
                start = i + 1;
            }
        }
        self.grid = Some(Grid { cell, ranges, order });
    }

    /// Number of orbit points with |A x| <= r (the ellipse A^-1 B_r), via the
    /// spatial grid. The needed cache radius is |A^-1|_op * r.
    pub fn count_ellipse(&mut self, a: [[f64; 2]; 2], r: f64) -> Result<u64> {
        let mut n = 0u64;
        self.walk_ellipse(a, r, &mut |_, _| n += 1)?;
        Ok(n * self.multiplicity())
    }

    /// Collect embedded points with |A x| <= r (both signs when -I is
    /// present), pushing untransformed plane coordinates.
    pub fn points_in_ellipse(
        &mut self,
        a: [[f64; 2]; 2],
        r: f64,
        out: &mut Vec<(f64, f64)>,
    ) -> Result<()> {
        let fold = self.multiplicity() == 2;
        self.walk_ellipse(a, r, &mut |x, y| {
            out.push((x, y));
            if fold {
                out.push((-x, -y));
            }
        })?;
        Ok(())
    }

    fn walk_ellipse(
        &mut self,
        a: [[f64; 2]; 2],
        r: f64,
        visit: &mut dyn FnMut(f64, f64),
    ) -> Result<()> {
        let need = op_norm_inv(a) * r;
        self.ensure_radius(need)?;
        self.ensure_grid();
        let grid = self.grid.as_ref().unwrap();
        let cell = grid.cell;
        let m00 = a[0][0] * a[0][0] + a[1][0] * a[1][0];
        let m01 = a[0][0] * a[0][1] + a[1][0] * a[1][1];
        let m11 = a[0][1] * a[0][1] + a[1][1] * a[1][1];
        let r2 = r * r;
        let det_m = m00 * m11 - m01 * m01;
        if det_m <= 0.0 {
            return Err(Error::InvalidParam("degenerate quadratic form".into()));
        }
        let xmax = (m11 * r2 / det_m).sqrt();
        let ix_lo = ((-xmax) / cell).floor() as i64;
        let ix_hi = (xmax / cell).floor() as i64;
        let ybounds = |x: f64| -> (f64, f64) {
            let disc = m11 * r2 - det_m * x * x;
            if disc <= 0.0 {
                let y = -m01 * x / m11;
                return (y, y);
            }
            let s = disc.sqrt() / m11;
            let mid = -m01 * x / m11;
            (mid - s, mid + s)
        };
        // boundary-branch vertices: upper at x = -m01 r / sqrt(det_m m00)
        let xv = -m01 * r / (det_m * m00).sqrt();
        for ix in ix_lo..=ix_hi {
            let x0 = (ix as f64) * cell;
            let x1 = x0 + cell;
            let xa = x0.max(-xmax);
            let xb = x1.min(xmax);
            if xa > xb {
                continue;
            }
            let (lo_a, hi_a) = ybounds(xa);
            let (lo_b, hi_b) = ybounds(xb);
            let mut ylo = lo_a.min(lo_b);
            let mut yhi = hi_a.max(hi_b);
            for v in [xv, -xv] {
                if v > xa && v < xb {
                    let (l, h) = ybounds(v);
                    ylo = ylo.min(l);
                    yhi = yhi.max(h);
                }
            }
            let iy_lo = (ylo / cell).floor() as i64 - 1;
            let iy_hi = (yhi / cell).floor() as i64 + 1;
            for iy in iy_lo..=iy_hi {
                if let Some(&(s, e)) = grid.ranges.get(&(ix as i32, iy as i32)) {
                    for k in s..e {
                        let idx = grid.order[k as usize] as usize;
                        let (px, py) = self.floats[idx];
                        let q = m00 * px * px + 2.0 * m01 * px * py + m11 * py * py;
                        if q <= r2 {
                            visit(px, py);
                        }
                    }
                }
            }
        }
        Ok(())
    }

    // -- cache file ----------------------------------------------------------

    /// Line-based cache file: header with a config hash, then one vector per
    /// line (coefficients and depth).
    pub fn save_cache(&self, path: &std::path::Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "# lattice-orbits cache")?;
        writeln!(f, "version=1")?;
        writeln!(f, "config_hash={:016x}", self.cache_key())?;
        writeln!(f, "cached_radius={}", self.cached_radius)?;
        writeln!(f, "count={}", self.norms_sq.len())?;
        let d2 = 2 * self.problem.degree;
        for i in 0..self.norms_sq.len() {
            let items: Vec<String> = if let Some((a, b)) = self.big_coords.get(&(i as u32)) {
                a.iter().chain(b.iter()).map(|c| c.to_string()).collect()
            } else {
                self.coeffs[i * d2..(i + 1) * d2].iter().map(|c| c.to_string()).collect()
            };
            writeln!(f, "v {} {}", items.join(" "), self.depths[i])?;
        }
        Ok(())
    }

    /// Fingerprint of everything the cache depends on.
    pub fn cache_key(&self) -> u64 {
        let descr = format!(
            "{}|cusp={}|kappa={}",
            self.lattice.config_string(),
            self.cusp_index,
            self.config.prune_factor
        );
        fnv1a(descr.as_bytes())
    }

    /// Load a cache file; rejects mismatched hash or version. Loaded caches
    /// answer queries up to the stored radius; larger requests re-enumerate
    /// from scratch (the in-memory frontier is not serialized).
    pub fn load_cache(&mut self, path: &std::path::Path) -> Result<()> {
        let f = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut lines = f.lines();
        let mut header = HashMap::new();
        let mut count = 0usize;
        for line in lines.by_ref() {
            let line = line?;
            if line.starts_with('#') {
                continue;
            }
            if let Some((k, v)) = line.split_once('=') {
                header.insert(k.to_string(), v.to_string());
                if k == "count" {
                    count = v.parse().map_err(|_| Error::CacheFile("bad count".into()))?;
                    break;
                }
            } else {
                return Err(Error::CacheFile("malformed header".into()));
            }
        }
        if header.get("version").map(String::as_str) != Some("1") {
            return Err(Error::CacheFile("unsupported version".into()));
        }
        let expect = format!("{:016x}", self.cache_key());
        if header.get("config_hash") != Some(&expect) {
            return Err(Error::CacheFile("config hash mismatch".into()));
        }
        let radius: f64 = header
            .get("cached_radius")
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::CacheFile("missing cached_radius".into()))?;
        let d = self.problem.degree;
        let d2 = 2 * d;
        let scale = self.scale;
        let emb = self.problem.emb.clone();
        let mut coeffs = Vec::with_capacity(count * d2);
        let mut floats = Vec::with_capacity(count);
        let mut norms = Vec::with_capacity(count);
        let mut depths = Vec::with_capacity(count);
        let mut bigs = HashMap::new();
        let mut loaded = 0usize;
        for line in lines {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let mut it = line.split_whitespace();
            if it.next() != Some("v") {
                return Err(Error::CacheFile("bad vector line".into()));
            }
            let items: Vec<&str> = it.collect();
            if items.len() != d2 + 1 {
                return Err(Error::CacheFile("bad vector arity".into()));
            }
            let big: Vec<BigInt> = items[..d2]
                .iter()
                .map(|s| s.parse::<BigInt>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::CacheFile("bad coefficient".into()))?;
            let small: Option<Vec<i64>> = big.iter().map(|c| c.to_i64()).collect();
            let depth: u32 =
                items[d2].parse().map_err(|_| Error::CacheFile("bad depth".into()))?;
            let (mut x, mut y) = (0.0, 0.0);
            for k in 0..d {
                x += big[k].to_f64().unwrap_or(0.0) * emb[k];
                y += big[d + k].to_f64().unwrap_or(0.0) * emb[k];
            }
            match small {
                Some(flat) => coeffs.extend_from_slice(&flat),
                None => {
                    bigs.insert(loaded as u32, (big[..d].to_vec(), big[d..].to_vec()));
                    coeffs.extend(std::iter::repeat(i64::MAX).take(d2));
                }
            }
            let (sx, sy) = (x * scale, y * scale);
            floats.push((sx, sy));
            norms.push(sx * sx + sy * sy);
            depths.push(depth);
            loaded += 1;
        }
        if loaded != count {
            return Err(Error::CacheFile("count mismatch".into()));
        }
        self.coeffs = coeffs;
        self.floats = floats;
        self.norms_sq = norms;
        self.depths = depths;
        self.big_coords = bigs;
        self.cached_radius = radius;
        self.search = SearchState::new(self.problem.degree, self.problem.accept.is_some());
        self.ring_backend = false;
        self.resort();
        self.grid = None;
        Ok(())
    }

    /// Extension entry for loaded caches: if the cache lacks the requested
    /// radius, drop it and re-enumerate from scratch.
    pub fn ensure_radius_rebuilding(&mut self, r: f64) -> Result<()> {
        if r <= self.cached_radius {
            return Ok(());
        }
        if !self.search.started && !self.norms_sq.is_empty() {
            self.coeffs.clear();
            self.floats.clear();
            self.norms_sq.clear();
            self.depths.clear();
            self.big_coords.clear();
            self.cached_radius = 0.0;
        }
        self.ensure_radius(r)
    }
}

fn fnv1a(data: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in data {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Operator norm of the inverse of a 2x2 matrix.
pub fn op_norm_inv(a: [[f64; 2]; 2]) -> f64 {
    let m00 = a[0][0] * a[0][0] + a[1][0] * a[1][0];
    let m01 = a[0][0] * a[0][1] + a[1][0] * a[1][1];
    let m11 = a[0][1] * a[0][1] + a[1][1] * a[1][1];
    let tr = m00 + m11;
    let det = m00 * m11 - m01 * m01;
    let disc = (tr * tr / 4.0 - det).max(0.0).sqrt();
    let smin_sq = (tr / 2.0 - disc).max(1e-300);
    1.0 / smin_sq.sqrt()
}

/// Operator norm of a 2x2 matrix.
pub fn op_norm(a: [[f64; 2]; 2]) -> f64 {
    let m00 = a[0][0] * a[0][0] + a[1][0] * a[1][0];
    let m01 = a[0][0] * a[0][1] + a[1][0] * a[1][1];
    let m11 = a[0][1] * a[0][1] + a[1][1] * a[1][1];
    let tr = m00 + m11;
    let det = m00 * m11 - m01 * m01;
    let disc = (tr * tr / 4.0 - det).max(0.0).sqrt();
    (tr / 2.0 + disc).sqrt()
}

// ---------------------------------------------------------------------------
// Pair-table stream: the auxiliary orbit sigma_a^-1 Gamma sigma_b e1
// ---------------------------------------------------------------------------

/// Stream the auxiliary orbit vectors (a, c) = (z1, w z2), z = g_a^-1 v,
/// v in Gamma g_b e1, for all v whose transformed coordinates stay inside the
/// box max(|a|, |c|) <= prune_factor * size. The sink receives exact ring
/// pairs; when -I is present it sees one sign representative per +- class.
pub(crate) fn stream_pair_box(
    lattice: &Arc<Lattice>,
    cusp_a: usize,
    cusp_b: usize,
    size: f64,
    prune_factor: f64,
    visited_cap: usize,
    sink: &mut dyn FnMut(&RingElement, &RingElement, u32),
) -> Result<()> {
    let ga = &lattice.cusps[cusp_a].sigma_g;
    let gb = &lattice.cusps[cusp_b].sigma_g;
    let omega = lattice.cusps[cusp_a].cusp_width.clone();
    debug_assert_eq!(omega, lattice.cusps[cusp_b].cusp_width, "equal cusp widths");
    let ga_inv = ga.inverse();
    let problem = OrbitProblem::for_basepoint(lattice, gb)?;
    let mut state = SearchState::new(problem.degree, problem.accept.is_some());
    let kappa = prune_factor.max(1.0);
    let gi = ga_inv.embed();
    let w_f = omega.embed();
    let rows = [[gi[0][0], gi[0][1]], [w_f * gi[1][0], w_f * gi[1][1]]];
    let region = PruneRegion::Box { rows, size: kappa * size };
    let ring = lattice.ring.clone();
    let d = problem.degree;
    run_search(&problem, &mut state, region, visited_cap, &mut |coords, depth| {
        let x = ring.from_coeffs(coords[..d].iter().map(|&c| BigInt::from(c)).collect());
        let y = ring.from_coeffs(coords[d..].iter().map(|&c| BigInt::from(c)).collect());
        let z = ga_inv.apply(&(x, y));
        let c = &omega * &z.1;
        sink(&z.0, &c, depth);
    })
}

// ---------------------------------------------------------------------------
// HolonomySet
// ---------------------------------------------------------------------------

/// A finite union of scaled discrete orbits { (lambda_i, Lambda_i) }, with
/// multiset semantics: a vector produced by two components counts twice.
pub struct HolonomySet {
    pub components: Vec<(f64, DiscreteOrbit)>,
}

impl HolonomySet {
    pub fn new(components: Vec<(f64, DiscreteOrbit)>) -> Result<Self> {
        if components.iter().any(|(s, _)| *s <= 0.0) {
            return Err(Error::InvalidParam("holonomy scales must be positive".into()));
        }
        Ok(HolonomySet { components })
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    /// Quadratic growth constant of the union: sum of c_Gamma_i / lambda_i^2.
    pub fn density_constant(&self) -> f64 {
        self.components
            .iter()
            .map(|(lam, orb)| crate::fuchsian::c_gamma(&orb.lattice) / (lam * lam))
            .sum()
    }

    /// All points of the union inside B_r as floats, with component tags.
    pub fn points(&mut self, r: f64) -> Result<Vec<(f64, f64, u32)>> {
        let mut out = Vec::new();
        for (ci, (lam, orb)) in self.components.iter_mut().enumerate() {
            let sub = r / *lam;
            orb.ensure_radius(sub)?;
            let prefix = orb.prefix_len(sub);
            let fold = orb.multiplicity() == 2;
            let lam = *lam;
            for i in 0..prefix {
                let (x, y) = orb.floats[i];
                out.push((lam * x, lam * y, ci as u32));
                if fold {
                    out.push((-lam * x, -lam * y, ci as u32));
                }
            }
        }
        Ok(out)
    }

    pub fn count(&mut self, r: f64) -> Result<u64> {
        let mut n = 0;
        for (lam, orb) in self.components.iter_mut() {
            n += orb.count(r / *lam)?;
        }
        Ok(n)
    }

    /// Points of A(S) inside B_r, pushed as transformed floats.
    pub fn transformed_points(
        &mut self,
        a: [[f64; 2]; 2],
        r: f64,
        out: &mut Vec<(f64, f64)>,
    ) -> Result<()> {
        for (lam, orb) in self.components.iter_mut() {
            let al = [[a[0][0] * *lam, a[0][1] * *lam], [a[1][0] * *lam, a[1][1] * *lam]];
            let start = out.len();
            orb.points_in_ellipse(al, r, out)?;
            for p in out[start..].iter_mut() {
                *p = (al[0][0] * p.0 + al[0][1] * p.1, al[1][0] * p.0 + al[1][1] * p.1);
            }
        }
        Ok(())
    }
}

/// Assemble a holonomy set from (scale, cusp index) component specs over one
/// lattice.
pub fn assemble_holonomy(
    lattice: &Arc<Lattice>,
    components: &[(f64, usize)],
    config: OrbitConfig,
) -> Result<HolonomySet> {
    let mut parts = Vec::new();
    for &(lam, cusp) in components {
        if lam <= 0.0 {
            return Err(Error::InvalidParam("holonomy scale must be positive".into()));
        }
        parts.push((lam, DiscreteOrbit::new(lattice.clone(), cusp, config)?));
    }
    HolonomySet::new(parts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fuchsian::{build_congruence, build_hecke, build_sl2z};
    use num_integer::Integer;

    fn orbit(lattice: Lattice, kappa: f64) -> DiscreteOrbit {
        let config = OrbitConfig { prune_factor: kappa, ..OrbitConfig::default() };
        DiscreteOrbit::new(Arc::new(lattice), 0, config).unwrap()
    }

    /// Primitive integer vectors with m^2 + n^2 <= r^2.
    fn gcd_scan(r: f64) -> Vec<(i64, i64)> {
        let m = r.floor() as i64;
        let mut out = Vec::new();
        for x in -m..=m {
            for y in -m..=m {
                if (x != 0 || y != 0) && x.gcd(&y) == 1 && ((x * x + y * y) as f64) <= r * r {
                    out.push((x, y));
                }
            }
        }
        out.sort_unstable();
        out
    }

    fn as_pairs(vs: &[OrbitVector]) -> Vec<(i64, i64)> {
        let mut out: Vec<(i64, i64)> = vs
            .iter()
            .map(|v| {
                (v.coords.0.coeffs[0].to_i64().unwrap(), v.coords.1.coeffs[0].to_i64().unwrap())
            })
            .collect();
        out.sort_unstable();
        out
    }

    #[test]
    fn sl2z_small_ball() {
        let mut orb = orbit(build_sl2z(), 8.0);
        let vs = orb.enumerate_ball(2.0).unwrap();
        assert_eq!(vs.len(), 8);
        let expect =
            vec![(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)];
        assert_eq!(as_pairs(&vs), expect);
        assert!(orb.enumerate_ball(0.5).unwrap().is_empty());
        assert_eq!(orb.count(2.0).unwrap(), 8);
    }

    #[test]
    fn sl2z_matches_gcd_scan() {
        let mut orb = orbit(build_sl2z(), 8.0);
        for r in [5.0, 17.3, 50.0] {
            let vs = orb.enumerate_ball(r).unwrap();
            assert_eq!(as_pairs(&vs), gcd_scan(r), "r={r}");
        }
    }

    #[test]
    fn sorted_by_norm_then_angle() {
        let mut orb = orbit(build_sl2z(), 8.0);
        let vs = orb.enumerate_ball(7.0).unwrap();
        for w in vs.windows(2) {
            let (a, b) = (&w[0], &w[1]);
            assert!(a.norm_sq <= b.norm_sq + 1e-12);
            if (a.norm_sq - b.norm_sq).abs() < 1e-12 {
                let aa = a.float_coords.1.atan2(a.float_coords.0);
                let ab = b.float_coords.1.atan2(b.float_coords.0);
                assert!(aa <= ab + 1e-12);
            }
        }
    }

    #[test]
    fn monotone_and_symmetric() {
        let mut orb = orbit(build_sl2z(), 8.0);
        let small: std::collections::HashSet<(i64, i64)> =
            as_pairs(&orb.enumerate_ball(10.0).unwrap()).into_iter().collect();
        let large: std::collections::HashSet<(i64, i64)> =
            as_pairs(&orb.enumerate_ball(20.0).unwrap()).into_iter().collect();
        assert!(small.is_subset(&large));
        for &(x, y) in &large {
            assert!(large.contains(&(-x, -y)));
        }
    }

    #[test]
    fn determinism_across_reruns() {
        let run = || {
            let mut orb = orbit(build_hecke(5).unwrap(), 8.0);
            orb.enumerate_ball(6.0)
                .unwrap()
                .iter()
                .map(|v| format!("{:?}{:?}", v.coords.0.coeffs, v.coords.1.coeffs))
                .collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn hecke_self_consistency_with_inflated_prune() {
        let l = build_hecke(5).unwrap();
        let mut tight = orbit(l.clone(), 2.0);
        let mut loose = orbit(l, 10.0);
        let a = tight.enumerate_ball(3.0).unwrap();
        let b = loose.enumerate_ball(3.0).unwrap();
        assert_eq!(a.len(), b.len());
        for (u, v) in a.iter().zip(b.iter()) {
            assert_eq!(u.coords, v.coords);
        }
        for v in &a {
            let (fx, fy) = v.float_coords;
            let s = tight.scale();
            assert!((fx - s * v.coords.0.embed()).abs() < 1e-9);
            assert!((fy - s * v.coords.1.embed()).abs() < 1e-9);
        }
    }

    #[test]
    fn congruence_orbit_matches_residue_scan() {
        for n in [2u32, 3] {
            let l = build_congruence(n).unwrap();
            for cusp_index in 0..l.cusps.len().min(2) {
                let mut orb = DiscreteOrbit::new(
                    Arc::new(l.clone()),
                    cusp_index,
                    OrbitConfig { prune_factor: 3.0, ..OrbitConfig::default() },
                )
                .unwrap();
                let r = 40.0;
                let vs = orb.enumerate_ball(r).unwrap();
                let got = as_pairs(&vs);
                let cusp = &l.cusps[cusp_index];
                let x0 = (
                    cusp.sigma_g.a.coeffs[0].to_i64().unwrap(),
                    cusp.sigma_g.c.coeffs[0].to_i64().unwrap(),
                );
                let sub = r / (n as f64).sqrt();
                let m = sub.floor() as i64;
                let nn = n as i64;
                let mut expect = Vec::new();
                for x in -m..=m {
                    for y in -m..=m {
                        if (x == 0 && y == 0) || x.gcd(&y) != 1 {
                            continue;
                        }
                        if ((x * x + y * y) as f64) > sub * sub {
                            continue;
                        }
                        let plus =
                            (x - x0.0).rem_euclid(nn) == 0 && (y - x0.1).rem_euclid(nn) == 0;
                        let minus =
                            (x + x0.0).rem_euclid(nn) == 0 && (y + x0.1).rem_euclid(nn) == 0;
                        if plus || (l.contains_minus_identity && minus) {
                            expect.push((x, y));
                        }
                    }
                }
                expect.sort_unstable();
                assert_eq!(got, expect, "N={n} cusp={cusp_index}");
            }
        }
    }

    #[test]
    fn count_transformed_examples() {
        let mut orb = orbit(build_sl2z(), 8.0);
        let disk = BorelShape::disk();
        let c1 = orb.count_transformed([[1.0, 0.0], [0.0, 1.0]], &disk, 10.0).unwrap();
        assert_eq!(c1, orb.count(10.0).unwrap());

        // diag(2, 1/2): primitive (m, n) with (2m)^2 + (n/2)^2 <= 2500
        let a = [[2.0, 0.0], [0.0, 0.5]];
        let got = orb.count_transformed(a, &disk, 50.0).unwrap();
        let mut expect = 0u64;
        for m in -25i64..=25 {
            for n in -100i64..=100 {
                if (m != 0 || n != 0) && m.gcd(&n) == 1 && 16 * m * m + n * n <= 10_000 {
                    expect += 1;
                }
            }
        }
        assert_eq!(got, expect);

        let sq = BorelShape::square();
        let got = orb.count_transformed([[1.0, 0.0], [0.0, 1.0]], &sq, 10.0).unwrap();
        let mut expect = 0u64;
        for m in -10i64..=10 {
            for n in -10i64..=10 {
                if (m != 0 || n != 0) && m.gcd(&n) == 1 {
                    expect += 1;
                }
            }
        }
        assert_eq!(got, expect);

        let th = 0.37f64;
        let rot = [[th.cos(), -th.sin()], [th.sin(), th.cos()]];
        assert_eq!(orb.count_transformed(rot, &disk, 30.0).unwrap(), orb.count(30.0).unwrap());
    }

    #[test]
    fn ellipse_walk_matches_prefix_filter() {
        let mut orb = orbit(build_sl2z(), 2.0);
        let a = [[1.3, 0.4], [-0.2, 0.9]];
        let r = 12.0;
        let fast = orb.count_ellipse(a, r).unwrap();
        orb.ensure_radius(op_norm_inv(a) * r).unwrap();
        let prefix = orb.prefix_len(op_norm_inv(a) * r);
        let mut slow = 0u64;
        for i in 0..prefix {
            let (x, y) = orb.floats[i];
            let u = a[0][0] * x + a[0][1] * y;
            let v = a[1][0] * x + a[1][1] * y;
            if u * u + v * v <= r * r {
                slow += 2;
            }
        }
        assert_eq!(fast, slow);
    }

    #[test]
    fn frontier_cap_reports() {
        let l = build_sl2z();
        let config = OrbitConfig { prune_factor: 8.0, visited_cap: 10, grid_cell: 2.0 };
        let mut orb = DiscreteOrbit::new(Arc::new(l), 0, config).unwrap();
        match orb.ensure_radius(50.0) {
            Err(Error::FrontierCap { .. }) => {}
            other => panic!("expected FrontierCap, got {other:?}"),
        }
    }

    #[test]
    fn holonomy_union_multiset() {
        let l = Arc::new(build_sl2z());
        let mut s = assemble_holonomy(&l, &[(1.0, 0), (2.0, 0)], OrbitConfig::default()).unwrap();
        // |S cap B_2| = 8 + 4: the scaled copy contributes (+-2, 0), (0, +-2)
        assert_eq!(s.count(2.0).unwrap(), 12);
        assert_eq!(s.points(2.0).unwrap().len(), 12);
        let mut empty = HolonomySet::new(Vec::new()).unwrap();
        assert!(empty.is_empty());
        assert_eq!(empty.count(5.0).unwrap(), 0);
        assert!(assemble_holonomy(&l, &[(0.0, 0)], OrbitConfig::default()).is_err());
    }

    #[test]
    fn cache_file_roundtrip() {
        let dir = std::env::temp_dir().join("lattice_orbits_test_cache");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("sl2z.cache");
        let mut orb = orbit(build_sl2z(), 8.0);
        orb.ensure_radius(20.0).unwrap();
        let want = orb.count(20.0).unwrap();
        orb.save_cache(&path).unwrap();

        let mut orb2 = orbit(build_sl2z(), 8.0);
        orb2.load_cache(&path).unwrap();
        assert_eq!(orb2.count_cached(20.0).unwrap(), want);
        orb2.ensure_radius_rebuilding(25.0).unwrap();
        let mut fresh = orbit(build_sl2z(), 8.0);
        assert_eq!(orb2.count(25.0).unwrap(), fresh.count(25.0).unwrap());

        let mut orb3 = orbit(build_sl2z(), 2.0);
        assert!(matches!(orb3.load_cache(&path), Err(Error::CacheFile(_))));
        std::fs::remove_file(&path).ok();
    }

    #[test]
    fn resumed_extension_equals_fresh_run() {
        let mut incremental = orbit(build_sl2z(), 3.0);
        incremental.ensure_radius(10.0).unwrap();
        incremental.ensure_radius(30.0).unwrap();
        let mut fresh = orbit(build_sl2z(), 3.0);
        assert_eq!(incremental.count(30.0).unwrap(), fresh.count(30.0).unwrap());
        assert_eq!(
            as_pairs(&incremental.enumerate_ball(30.0).unwrap()),
            as_pairs(&fresh.enumerate_ball(30.0).unwrap())
        );
    }

    #[test]
    fn pair_box_stream_sl2z_is_primitive_pairs() {
        let l = Arc::new(build_sl2z());
        let mut got: Vec<(i64, i64)> = Vec::new();
        stream_pair_box(&l, 0, 0, 20.0, 2.0, 100_000_000, &mut |a, c, _| {
            let (a, c) = (a.coeffs[0].to_i64().unwrap(), c.coeffs[0].to_i64().unwrap());
            if c > 0 && a > 0 && a <= c && c <= 20 {
                got.push((a, c));
            }
        })
        .unwrap();
        got.sort_unstable();
        let mut expect = Vec::new();
        for c in 1i64..=20 {
            for a in 1..=c {
                if a.gcd(&c) == 1 {
                    expect.push((a, c));
                }
            }
        }
        expect.sort_unstable();
        assert_eq!(got, expect);
    }
}
