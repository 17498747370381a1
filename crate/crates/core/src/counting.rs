//! Exact expected microstate counts for uniformly random homomorphisms
//! `sigma: G -> Sym(n)`.
//!
//! For a weight `W` with all masses in `(1/n) Z`, the expected number of
//! labelings `psi: {1..n} -> A` whose empirical weight under `sigma` equals
//! `W` is
//!
//! ```text
//! n!^(1-r) prod_a (n W(a))!^(2r-1) / prod_{i,a,b} (n W(a,b;i))!
//! ```
//!
//! Everything here is exact: rationals over big integers, with distances
//! compared after scaling to a common integer denominator.

use std::collections::BTreeMap;

use num_bigint::{BigInt, BigUint};
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::exact::{factorial_table, int, ln_abs};
use crate::systems::System;
use crate::weights::Weight;

/// Default budget for brute-force enumeration of `Sym(n)^r x A^n`.
pub const DEFAULT_BRUTE_FORCE_BUDGET: u64 = 10_000_000;
/// Default budget for lattice enumeration (search nodes visited).
pub const DEFAULT_LATTICE_BUDGET: u64 = 50_000_000;

/// A homomorphism into `Sym(n)`, given by the images of the generators.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct HomRep {
    perms: Vec<Vec<usize>>,
    inverses: Vec<Vec<usize>>,
}

impl HomRep {
    /// `perms[i]` is the image table of `sigma(s_i)` on `{0..n}`.
    pub fn new(perms: Vec<Vec<usize>>) -> Result<Self> {
        let n = perms.first().map_or(0, |p| p.len());
        if perms.is_empty() || n == 0 {
            return Err(Error::InvalidInput("a homomorphism needs r >= 1 permutations of n >= 1 points".into()));
        }
        let mut inverses = Vec::with_capacity(perms.len());
        for p in &perms {
            if p.len() != n {
                return Err(Error::InvalidInput("all generator images must act on the same n points".into()));
            }
            let mut inv = vec![usize::MAX; n];
            for (x, &y) in p.iter().enumerate() {
                if y >= n || inv[y] != usize::MAX {
                    return Err(Error::InvalidInput("generator image is not a permutation".into()));
                }
                inv[y] = x;
            }
            inverses.push(inv);
        }
        Ok(HomRep { perms, inverses })
    }

    pub fn identity(n: usize, rank: usize) -> Self {
        Self::new(vec![(0..n).collect(); rank]).expect("identity permutations")
    }

    pub fn n(&self) -> usize {
        self.perms[0].len()
    }

    pub fn rank(&self) -> usize {
        self.perms.len()
    }

    pub fn perm(&self, generator: usize) -> &[usize] {
        &self.perms[generator]
    }

    pub fn perms(&self) -> &[Vec<usize>] {
        &self.perms
    }

    /// `sigma(w)` as a point map, for the homomorphism convention: the
    /// letters of `w` compose right to left.
    pub fn word_perm(&self, w: &crate::Word) -> Vec<usize> {
        (0..self.n())
            .map(|j| {
                w.letters().iter().rev().fold(j, |x, l| if l.inverse { self.inverses[l.generator][x] } else { self.perms[l.generator][x] })
            })
            .collect()
    }

    /// The point reached from `j` along `w`, letters applied left to right.
    /// This is the coordinate convention of pattern distributions.
    pub fn walk(&self, w: &crate::Word, j: usize) -> usize {
        crate::systems::act_on_point(&self.perms, &self.inverses, w, j)
    }

    /// Relabel points by `tau`: `sigma^tau(s) = tau sigma(s) tau^-1`.
    pub fn conjugate(&self, tau: &[usize]) -> HomRep {
        let n = self.n();
        let mut tau_inv = vec![0; n];
        for (x, &y) in tau.iter().enumerate() {
            tau_inv[y] = x;
        }
        let perms = self.perms.iter().map(|p| (0..n).map(|x| tau[p[tau_inv[x]]]).collect()).collect();
        HomRep::new(perms).expect("conjugate of a permutation")
    }
}

/// A labeling `psi: {0..n} -> A`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct MicroObservable {
    labels: Vec<usize>,
    alphabet_size: usize,
}

impl MicroObservable {
    pub fn new(labels: Vec<usize>, alphabet_size: usize) -> Result<Self> {
        if labels.iter().any(|&l| l >= alphabet_size) {
            return Err(Error::InvalidInput("label outside the alphabet".into()));
        }
        Ok(MicroObservable { labels, alphabet_size })
    }

    pub fn constant(n: usize, symbol: usize, alphabet_size: usize) -> Self {
        Self::new(vec![symbol; n], alphabet_size).expect("symbol inside alphabet")
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn alphabet_size(&self) -> usize {
        self.alphabet_size
    }
}

/// A lattice weight where the count formula and brute force disagree.
#[derive(Clone, Debug, PartialEq)]
pub struct FormulaMismatch {
    pub weight: LatticeWeight,
    pub formula: BigRational,
    pub brute_force: BigRational,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FormulaCheck {
    pub alphabet_size: usize,
    pub rank: usize,
    pub n: usize,
    /// Lattice weights compared.
    pub checked: usize,
    pub mismatches: Vec<FormulaMismatch>,
}

impl FormulaCheck {
    pub fn passed(&self) -> bool {
        self.mismatches.is_empty()
    }
}

/// Compares [`expected_count_exact`] with full enumeration on every lattice
/// weight at level `n`. One pass over `Sym(n)^r x A^n` tallies the empirical
/// weights; weights that never occur must get formula value zero.
pub fn check_count_formula(alphabet_size: usize, rank: usize, n: usize, budget: u64) -> Result<FormulaCheck> {
    if n == 0 || alphabet_size == 0 || rank == 0 {
        return Err(Error::InvalidInput("n, |A| and r must all be at least 1".into()));
    }
    let mut hist: BTreeMap<(Vec<usize>, Vec<usize>), u64> = BTreeMap::new();
    let homs = for_each_pair(alphabet_size, rank, n, budget, |v, e| {
        *hist.entry((v.to_vec(), e.to_vec())).or_insert(0) += 1;
    })?;
    let everything = int(2 * rank);
    let lattice = lattice_weights(&Weight::uniform(alphabet_size, rank), n, &everything, DEFAULT_LATTICE_BUDGET)?;
    let fact = factorial_table(n);
    let mut mismatches = Vec::new();
    let mut seen = 0usize;
    for lw in &lattice {
        let formula = count_formula(&fact, rank, n, &lw.vertex, &lw.edges);
        let hits = match hist.get(&(lw.vertex.clone(), lw.edges.clone())) {
            Some(&h) => {
                seen += 1;
                h
            }
            None => 0,
        };
        let brute_force = BigRational::new(BigInt::from(hits), BigInt::from(homs));
        if formula != brute_force {
            mismatches.push(FormulaMismatch { weight: lw.clone(), formula, brute_force });
        }
    }
    if seen != hist.len() {
        return Err(Error::Inconsistent(format!("{} empirical weights fall outside the lattice scan", hist.len() - seen)));
    }
    Ok(FormulaCheck { alphabet_size, rank, n, checked: lattice.len(), mismatches })
}

/// Integer counts `(n W(a), n W(a,b;i))` of the empirical weight.
pub fn pair_counts(sigma: &HomRep, psi: &MicroObservable) -> (Vec<usize>, Vec<usize>) {
    let k = psi.alphabet_size;
    let mut vertex = vec![0usize; k];
    let mut edges = vec![0usize; sigma.rank() * k * k];
    for (j, &a) in psi.labels.iter().enumerate() {
        vertex[a] += 1;
        for (i, p) in sigma.perms.iter().enumerate() {
            edges[i * k * k + a * k + psi.labels[p[j]]] += 1;
        }
    }
    (vertex, edges)
}

/// The empirical weight `W_{sigma,psi}`.
pub fn weight_of_pair(sigma: &HomRep, psi: &MicroObservable) -> Result<Weight> {
    if sigma.n() != psi.n() {
        return Err(Error::ShapeMismatch(format!("sigma acts on {} points, psi labels {}", sigma.n(), psi.n())));
    }
    let (v, e) = pair_counts(sigma, psi);
    Weight::from_counts(psi.alphabet_size, sigma.rank(), psi.n(), &v, &e)
}

fn lattice_counts(w: &Weight, n: usize) -> Result<(Vec<usize>, Vec<usize>)> {
    if n == 0 {
        return Err(Error::InvalidInput("n must be at least 1".into()));
    }
    match w.counts(n)? {
        Some(c) => Ok(c),
        None => Err(Error::NotDivisible { q: w.q()?.to_string(), n }),
    }
}

/// Exact expected number of `psi` with `d_*(W, W_{sigma,psi}) = 0`.
pub fn expected_count_exact(w: &Weight, n: usize) -> Result<BigRational> {
    let (v, e) = lattice_counts(w, n)?;
    Ok(count_formula(&factorial_table(n), w.rank(), n, &v, &e))
}

fn count_formula(fact: &[BigUint], rank: usize, n: usize, v: &[usize], e: &[usize]) -> BigRational {
    let big = |x: &BigUint| BigInt::from(x.clone());
    let mut num = BigInt::one();
    let mut den = BigInt::one();
    for &c in v {
        num *= num_traits::pow(big(&fact[c]), 2 * rank - 1);
    }
    for &y in e {
        den *= big(&fact[y]);
    }
    den *= num_traits::pow(big(&fact[n]), rank - 1);
    BigRational::new(num, den)
}

/// Natural log of the expected count, via log-factorials.
pub fn expected_count_log(w: &Weight, n: usize) -> Result<f64> {
    let (v, e) = lattice_counts(w, n)?;
    let r = w.rank() as f64;
    let lf = |m: usize| statrs::function::factorial::ln_factorial(m as u64);
    Ok((1.0 - r) * lf(n) + (2.0 * r - 1.0) * v.iter().map(|&c| lf(c)).sum::<f64>() - e.iter().map(|&y| lf(y)).sum::<f64>())
}

/// `log n!` bounds `sqrt(2 pi m) (m/e)^m <= m! <= e sqrt(m) (m/e)^m`,
/// returned as bounds on `log m! - (m log m - m)`; exact for `m <= 1`.
fn stirling_correction(m: usize) -> (f64, f64) {
    match m {
        0 => (0.0, 0.0),
        1 => (1.0, 1.0),
        _ => {
            let lm = (m as f64).ln();
            (0.5 * (2.0 * std::f64::consts::PI).ln() + 0.5 * lm, 1.0 + 0.5 * lm)
        }
    }
}

/// Bounds `lo <= log E[Z_n(W)] <= hi` of the form `n F(W)` plus explicit
/// Stirling corrections for each factorial in the count formula.
pub fn stirling_sandwich(w: &Weight, n: usize) -> Result<(f64, f64)> {
    let (v, e) = lattice_counts(w, n)?;
    let r = w.rank() as f64;
    let mut terms: Vec<(f64, usize)> = vec![(1.0 - r, n)];
    terms.extend(v.iter().map(|&c| (2.0 * r - 1.0, c)));
    terms.extend(e.iter().map(|&y| (-1.0, y)));
    let base = n as f64 * w.f_value();
    let (mut lo, mut hi) = (base, base);
    for (coeff, m) in terms {
        let (cl, ch) = stirling_correction(m);
        if coeff >= 0.0 {
            lo += coeff * cl;
            hi += coeff * ch;
        } else {
            lo += coeff * ch;
            hi += coeff * cl;
        }
    }
    Ok((lo, hi))
}

/// All permutations of `0..n` in lexicographic order.
pub fn all_permutations(n: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut p: Vec<usize> = (0..n).collect();
    loop {
        out.push(p.clone());
        // next lexicographic permutation
        let Some(i) = (1..n).rev().find(|&i| p[i - 1] < p[i]) else { break };
        let j = (i..n).rev().find(|&j| p[j] > p[i - 1]).expect("pivot exists");
        p.swap(i - 1, j);
        p[i..].reverse();
    }
    out
}

fn brute_force_size(k: usize, rank: usize, n: usize) -> f64 {
    let nfact: f64 = (1..=n).map(|x| x as f64).product();
    nfact.powi(rank as i32) * (k as f64).powi(n as i32)
}

/// Visits every `(sigma, psi)` in `Sym(n)^r x A^n` with the integer counts of
/// `W_{sigma,psi}`. Returns the number of homomorphisms visited.
fn for_each_pair(k: usize, rank: usize, n: usize, budget: u64, mut f: impl FnMut(&[usize], &[usize])) -> Result<u64> {
    let size = brute_force_size(k, rank, n);
    if size > budget as f64 {
        return Err(Error::Budget { what: "brute-force enumeration", needed: format!("{size:.0}"), budget });
    }
    let perms = all_permutations(n);
    let mut choice = vec![0usize; rank];
    let mut homs = 0u64;
    loop {
        let sigma = HomRep::new(choice.iter().map(|&c| perms[c].clone()).collect()).expect("valid permutations");
        homs += 1;
        let mut labels = vec![0usize; n];
        loop {
            let psi = MicroObservable { labels: labels.clone(), alphabet_size: k };
            let (v, e) = pair_counts(&sigma, &psi);
            f(&v, &e);
            if !odometer(&mut labels, k) {
                break;
            }
        }
        if !odometer(&mut choice, perms.len()) {
            break;
        }
    }
    Ok(homs)
}

fn odometer(digits: &mut [usize], base: usize) -> bool {
    for d in digits.iter_mut() {
        *d += 1;
        if *d < base {
            return true;
        }
        *d = 0;
    }
    false
}

/// `E[#{psi : W_{sigma,psi} = W}]` by enumerating every homomorphism and
/// every labeling.
pub fn brute_force_expected_count(w: &Weight, n: usize, budget: u64) -> Result<BigRational> {
    if n == 0 {
        return Err(Error::InvalidInput("n must be at least 1".into()));
    }
    let target = w.counts(n)?;
    let mut hits = 0u64;
    let homs = for_each_pair(w.alphabet_size(), w.rank(), n, budget, |v, e| {
        if let Some((tv, te)) = &target {
            if tv == v && te == e {
                hits += 1;
            }
        }
    })?;
    Ok(BigRational::new(BigInt::from(hits), BigInt::from(homs)))
}

/// `E[#{psi : d_*(target, W_{sigma,psi}) <= eps}]` by full enumeration.
pub fn brute_force_eps_count(target: &Weight, n: usize, eps: &BigRational, budget: u64) -> Result<BigRational> {
    let scaled = ScaledTarget::new(target, n, eps)?;
    let mut hits = 0u64;
    let homs = for_each_pair(target.alphabet_size(), target.rank(), n, budget, |_, e| {
        if scaled.edge_distance(e) <= scaled.eps {
            hits += 1;
        }
    })?;
    Ok(BigRational::new(BigInt::from(hits), BigInt::from(homs)))
}

/// A target weight and threshold scaled to integers: with common
/// denominator `L`, an edge count `y` at level `n` sits at distance
/// `|L W(a,b;i) - y L/n|` from the target, compared with `L eps`.
#[derive(Clone, Debug)]
pub(crate) struct ScaledTarget {
    k: usize,
    rank: usize,
    vertex: Vec<i128>,
    edges: Vec<i128>,
    unit: i128,
    pub(crate) eps: i128,
}

impl ScaledTarget {
    pub(crate) fn new(target: &Weight, n: usize, eps: &BigRational) -> Result<Self> {
        let ev = target.exact_vertex_masses().ok_or_else(|| Error::Inexact("lattice enumeration target".into()))?;
        let ee = target.exact_edge_masses().expect("exact with vertices");
        let eps = if eps.is_negative() { BigRational::zero() } else { eps.clone() };
        let mut l = BigInt::from(n).lcm(eps.denom());
        for m in ev.iter().chain(ee) {
            l = l.lcm(m.denom());
        }
        let to_i = |x: &BigRational| -> Result<i128> {
            (x * BigRational::from_integer(l.clone()))
                .to_integer()
                .to_i128()
                .filter(|v| v.abs() < (1i128 << 100))
                .ok_or_else(|| Error::InvalidInput("common denominator of target and epsilon is too large".into()))
        };
        Ok(ScaledTarget {
            k: target.alphabet_size(),
            rank: target.rank(),
            vertex: ev.iter().map(to_i).collect::<Result<_>>()?,
            edges: ee.iter().map(to_i).collect::<Result<_>>()?,
            unit: (&l / BigInt::from(n)).to_i128().expect("l fits"),
            eps: to_i(&eps)?,
        })
    }

    pub(crate) fn edge_distance(&self, counts: &[usize]) -> i128 {
        self.edges.iter().zip(counts).map(|(t, &y)| (t - y as i128 * self.unit).abs()).sum()
    }
}

/// A weight on the `1/n` lattice, stored as integer counts.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LatticeWeight {
    pub n: usize,
    pub rank: usize,
    pub vertex: Vec<usize>,
    pub edges: Vec<usize>,
}

impl LatticeWeight {
    pub fn to_weight(&self) -> Weight {
        Weight::from_counts(self.vertex.len(), self.rank, self.n, &self.vertex, &self.edges).expect("consistent shape")
    }
}

struct Budget {
    used: u64,
    limit: u64,
}

impl Budget {
    fn tick(&mut self) -> Result<()> {
        self.used += 1;
        if self.used > self.limit {
            return Err(Error::Budget { what: "lattice enumeration", needed: format!("more than {}", self.limit), budget: self.limit });
        }
        Ok(())
    }
}

/// Integer tables with given row/column sums within a scaled distance
/// budget, each paired with its scaled distance.
fn tables_for_color(s: &ScaledTarget, color: usize, margins: &[usize], limit: i128, budget: &mut Budget) -> Result<Vec<(Vec<usize>, i128)>> {
    let k = s.k;
    let target = &s.edges[color * k * k..(color + 1) * k * k];
    let mut out = Vec::new();
    let mut table = vec![0usize; k * k];
    let mut row_left = margins.to_vec();
    let mut col_left = margins.to_vec();

    #[allow(clippy::too_many_arguments)]
    fn rec(
        cell: usize,
        k: usize,
        s: &ScaledTarget,
        target: &[i128],
        limit: i128,
        dist: i128,
        table: &mut Vec<usize>,
        row_left: &mut Vec<usize>,
        col_left: &mut Vec<usize>,
        out: &mut Vec<(Vec<usize>, i128)>,
        budget: &mut Budget,
    ) -> Result<()> {
        budget.tick()?;
        if cell == k * k {
            out.push((table.clone(), dist));
            return Ok(());
        }
        let (a, b) = (cell / k, cell % k);
        let (lo, hi) = if a == k - 1 {
            // last row is forced by the column remainders
            let v = col_left[b];
            if v > row_left[a] {
                return Ok(());
            }
            (v, v)
        } else if b == k - 1 {
            let v = row_left[a];
            if v > col_left[b] {
                return Ok(());
            }
            (v, v)
        } else {
            (0, row_left[a].min(col_left[b]))
        };
        for y in lo..=hi {
            let d = dist + (target[cell] - y as i128 * s.unit).abs();
            if d > limit {
                continue;
            }
            table[cell] = y;
            row_left[a] -= y;
            col_left[b] -= y;
            rec(cell + 1, k, s, target, limit, d, table, row_left, col_left, out, budget)?;
            row_left[a] += y;
            col_left[b] += y;
        }
        table[cell] = 0;
        Ok(())
    }
    rec(0, k, s, target, limit, 0, &mut table, &mut row_left, &mut col_left, &mut out, budget)?;
    Ok(out)
}

/// Vertex count vectors `c` (summing to `n`) with `r sum_a |L W(a) - c_a L/n|
/// <= L eps`, each with its scaled vertex distance.
fn vertex_candidates(s: &ScaledTarget, n: usize, budget: &mut Budget) -> Result<Vec<(Vec<usize>, i128)>> {
    let mut out = Vec::new();
    let r = s.rank as i128;
    fn rec(
        a: usize,
        left: usize,
        s: &ScaledTarget,
        r: i128,
        dist: i128,
        cur: &mut Vec<usize>,
        out: &mut Vec<(Vec<usize>, i128)>,
        budget: &mut Budget,
    ) -> Result<()> {
        budget.tick()?;
        if a == s.k - 1 {
            let d = dist + (s.vertex[a] - left as i128 * s.unit).abs();
            if r * d <= s.eps {
                cur.push(left);
                out.push((cur.clone(), d));
                cur.pop();
            }
            return Ok(());
        }
        for c in 0..=left {
            let d = dist + (s.vertex[a] - c as i128 * s.unit).abs();
            if r * d > s.eps {
                continue;
            }
            cur.push(c);
            rec(a + 1, left - c, s, r, d, cur, out, budget)?;
            cur.pop();
        }
        Ok(())
    }
    rec(0, n, s, r, 0, &mut Vec::new(), &mut out, budget)?;
    Ok(out)
}

/// Per-vertex-vector enumeration shared by [`lattice_weights`] and
/// [`expected_eps_count_exact`]: calls `f(vertex, tables_per_color)` where
/// each color lists candidate tables with their scaled distances.
fn for_each_vertex_block(
    s: &ScaledTarget,
    n: usize,
    budget_limit: u64,
    mut f: impl FnMut(&[usize], &[Vec<(Vec<usize>, i128)>]) -> Result<()>,
) -> Result<()> {
    let mut budget = Budget { used: 0, limit: budget_limit };
    for (v, vdist) in vertex_candidates(s, n, &mut budget)? {
        // every other color contributes at least the vertex distance
        let limit = s.eps - (s.rank as i128 - 1) * vdist;
        let per_color: Vec<Vec<(Vec<usize>, i128)>> =
            (0..s.rank).map(|c| tables_for_color(s, c, &v, limit, &mut budget)).collect::<Result<_>>()?;
        if per_color.iter().any(|t| t.is_empty()) {
            continue;
        }
        f(&v, &per_color)?;
    }
    Ok(())
}

/// Every valid weight with masses in `{0, 1/n, ..., 1}` within `d_* <= eps`
/// of `nearby`, each once, in a deterministic order.
pub fn lattice_weights(nearby: &Weight, n: usize, eps: &BigRational, budget: u64) -> Result<Vec<LatticeWeight>> {
    let mut out = Vec::new();
    for_each_lattice_weight(nearby, n, eps, budget, |w| {
        out.push(w);
        Ok(())
    })?;
    Ok(out)
}

/// Streaming form of [`lattice_weights`].
pub fn for_each_lattice_weight(
    nearby: &Weight,
    n: usize,
    eps: &BigRational,
    budget: u64,
    mut f: impl FnMut(LatticeWeight) -> Result<()>,
) -> Result<()> {
    if n == 0 {
        return Err(Error::InvalidInput("n must be at least 1".into()));
    }
    let s = ScaledTarget::new(nearby, n, eps)?;
    for_each_vertex_block(&s, n, budget, |v, per_color| {
        let mut choice = vec![0usize; s.rank];
        loop {
            let d: i128 = choice.iter().enumerate().map(|(c, &i)| per_color[c][i].1).sum();
            if d <= s.eps {
                let edges: Vec<usize> = choice.iter().enumerate().flat_map(|(c, &i)| per_color[c][i].0.clone()).collect();
                f(LatticeWeight { n, rank: s.rank, vertex: v.to_vec(), edges })?;
            }
            // odometer over colors, last color fastest
            let mut c = s.rank;
            loop {
                if c == 0 {
                    return Ok(());
                }
                c -= 1;
                choice[c] += 1;
                if choice[c] < per_color[c].len() {
                    break;
                }
                choice[c] = 0;
            }
        }
    })
}

/// `E[#{psi : d_*(target, W_{sigma,psi}) <= eps}]`: the sum of
/// [`expected_count_exact`] over [`lattice_weights`].
///
/// The count formula factors over colors once the vertex counts are fixed,
/// so each color's tables are grouped by distance and the colors are
/// combined by a truncated convolution.
pub fn expected_eps_count_exact(target: &Weight, n: usize, eps: &BigRational, budget: u64) -> Result<BigRational> {
    if n == 0 {
        return Err(Error::InvalidInput("n must be at least 1".into()));
    }
    let s = ScaledTarget::new(target, n, eps)?;
    let fact = factorial_table(n);
    let fact_q = |m: usize| BigRational::from_integer(BigInt::from(fact[m].clone()));
    let r = s.rank;
    let mut total = BigRational::zero();
    for_each_vertex_block(&s, n, budget, |v, per_color| {
        let mut prefactor = BigRational::one();
        for &c in v {
            prefactor *= num_traits::pow(fact_q(c), 2 * r - 1);
        }
        prefactor /= num_traits::pow(fact_q(n), r - 1);

        let mut acc: BTreeMap<i128, BigRational> = BTreeMap::from([(0, BigRational::one())]);
        for tables in per_color {
            let mut grouped: BTreeMap<i128, BigRational> = BTreeMap::new();
            for (t, d) in tables {
                let den: BigInt = t.iter().map(|&y| BigInt::from(fact[y].clone())).product();
                *grouped.entry(*d).or_insert_with(BigRational::zero) += BigRational::new(BigInt::one(), den);
            }
            let mut next: BTreeMap<i128, BigRational> = BTreeMap::new();
            for (d1, s1) in &acc {
                for (d2, s2) in &grouped {
                    if d1 + d2 > s.eps {
                        break;
                    }
                    *next.entry(d1 + d2).or_insert_with(BigRational::zero) += s1 * s2;
                }
            }
            acc = next;
        }
        let block: BigRational = acc.into_values().sum();
        total += prefactor * block;
        Ok(())
    })?;
    Ok(total)
}

/// One point of a rate curve.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RatePoint {
    pub n: usize,
    /// `log E[#{psi : d_* <= eps}]`, `-inf` when the count is zero.
    pub log_count: f64,
    /// `log_count / n`.
    pub rate: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RateCurve {
    /// `F(T, phi) = F(W_mu)`, the limit the rates approach as `eps -> 0`.
    pub f_target: f64,
    pub epsilon: BigRational,
    pub points: Vec<RatePoint>,
}

/// `(1/n) log E[#{psi : d*_sigma(phi, psi) <= eps}]` for each `n`, computed
/// exactly from the system's weight.
pub fn rate_curve(sys: &System, eps: &BigRational, ns: &[usize], budget: u64) -> Result<RateCurve> {
    let w = sys.weight();
    let points = ns
        .iter()
        .map(|&n| {
            let count = expected_eps_count_exact(&w, n, eps, budget)?;
            let log_count = ln_abs(&count);
            Ok(RatePoint { n, log_count, rate: log_count / n as f64 })
        })
        .collect::<Result<_>>()?;
    Ok(RateCurve { f_target: w.f_value(), epsilon: eps.clone(), points })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exact::ratio;
    use crate::weights::default_alphabet;

    /// Every valid lattice weight at level `n`, by scanning all vertex
    /// vectors and all tables with entries in `0..=n` without pruning.
    fn unpruned_lattice(k: usize, rank: usize, n: usize) -> Vec<LatticeWeight> {
        let mut tables: Vec<Vec<usize>> = Vec::new();
        let mut t = vec![0usize; k * k];
        loop {
            if t.iter().sum::<usize>() == n {
                tables.push(t.clone());
            }
            if !odometer(&mut t, n + 1) {
                break;
            }
        }
        let rows = |t: &[usize]| -> Vec<usize> { (0..k).map(|a| (0..k).map(|b| t[a * k + b]).sum()).collect() };
        let cols = |t: &[usize]| -> Vec<usize> { (0..k).map(|a| (0..k).map(|b| t[b * k + a]).sum()).collect() };
        let balanced: Vec<&Vec<usize>> = tables.iter().filter(|t| rows(t) == cols(t)).collect();
        let mut out = Vec::new();
        let mut choice = vec![0usize; rank];
        loop {
            let ts: Vec<&Vec<usize>> = choice.iter().map(|&i| balanced[i]).collect();
            let v = rows(ts[0]);
            if ts.iter().all(|t| rows(t) == v) {
                out.push(LatticeWeight { n, rank, vertex: v, edges: ts.iter().flat_map(|t| t.iter().copied()).collect() });
            }
            if !odometer(&mut choice, balanced.len()) {
                break;
            }
        }
        out.sort();
        out
    }

    #[test]
    fn homrep_rejects_non_bijections() {
        assert!(HomRep::new(vec![vec![0, 0]]).is_err());
        assert!(HomRep::new(vec![vec![0, 1], vec![0]]).is_err());
        assert!(HomRep::new(vec![]).is_err());
    }

    #[test]
    fn word_perm_is_a_homomorphism() {
        let s = HomRep::new(vec![vec![1, 2, 0], vec![0, 2, 1]]).unwrap();
        let w: crate::Word = "s1s2".parse().unwrap();
        let p = s.word_perm(&w);
        for j in 0..3 {
            assert_eq!(p[j], s.perm(0)[s.perm(1)[j]]);
            assert_eq!(s.walk(&w, j), s.perm(1)[s.perm(0)[j]]);
        }
        let inv: crate::Word = "s1^-1".parse().unwrap();
        for j in 0..3 {
            assert_eq!(s.perm(0)[s.word_perm(&inv)[j]], j);
        }
    }

    #[test]
    fn weight_of_pair_examples() {
        let sigma = HomRep::new(vec![vec![1, 0]]).unwrap();
        let psi = MicroObservable::new(vec![0, 1], 2).unwrap();
        let w = weight_of_pair(&sigma, &psi).unwrap();
        assert_eq!(w.exact_edge(0, 0, 1).unwrap(), &ratio(1, 2));
        assert_eq!(w.exact_edge(0, 1, 0).unwrap(), &ratio(1, 2));
        assert_eq!(w.exact_edge(0, 0, 0).unwrap(), &ratio(0, 1));

        let id = HomRep::identity(2, 1);
        let w = weight_of_pair(&id, &psi).unwrap();
        assert_eq!(w.exact_edge(0, 0, 0).unwrap(), &ratio(1, 2));
        assert_eq!(w.exact_edge(0, 1, 1).unwrap(), &ratio(1, 2));

        let c = MicroObservable::constant(5, 1, 3);
        let w = weight_of_pair(&HomRep::identity(5, 2), &c).unwrap();
        assert_eq!(w.exact_vertex(1).unwrap(), &ratio(1, 1));
        assert_eq!(w.exact_edge(1, 1, 1).unwrap(), &ratio(1, 1));
        assert!(w.validate(0.0).is_ok());
        assert!(w.q_divides(5).unwrap());
    }

    #[test]
    fn expected_count_examples() {
        for n in 1..=6 {
            for r in 1..=3 {
                assert_eq!(expected_count_exact(&Weight::uniform(1, r), n).unwrap(), BigRational::one());
            }
        }
        let swap = Weight::from_counts(2, 1, 2, &[1, 1], &[0, 1, 1, 0]).unwrap();
        assert_eq!(expected_count_exact(&swap, 2).unwrap(), BigRational::one());
        assert_eq!(expected_count_exact(&Weight::uniform(2, 2), 4).unwrap(), ratio(8, 3));
        assert!(matches!(expected_count_exact(&Weight::uniform(2, 2), 3), Err(Error::NotDivisible { .. })));
    }

    #[test]
    fn brute_force_examples() {
        let swap = Weight::from_counts(2, 1, 2, &[1, 1], &[0, 1, 1, 0]).unwrap();
        assert_eq!(brute_force_expected_count(&swap, 2, 1000).unwrap(), BigRational::one());
        assert_eq!(brute_force_expected_count(&Weight::uniform(1, 2), 3, 1000).unwrap(), BigRational::one());
        assert_eq!(brute_force_expected_count(&Weight::uniform(2, 2), 4, 1 << 20).unwrap(), ratio(8, 3));
        assert!(brute_force_expected_count(&Weight::uniform(2, 2), 3, 1 << 20).unwrap().is_zero());
        assert!(brute_force_expected_count(&Weight::uniform(2, 2), 8, 1000).unwrap_err().is_budget());
    }

    #[test]
    fn brute_force_is_conjugation_invariant() {
        // per-sigma counts are unchanged by relabeling points
        let n = 4;
        let target = Weight::uniform(2, 1);
        let (tv, te) = target.counts(n).unwrap().unwrap();
        let tau = vec![2, 0, 3, 1];
        for p in all_permutations(n) {
            let sigma = HomRep::new(vec![p]).unwrap();
            let conj = sigma.conjugate(&tau);
            let count = |s: &HomRep| {
                let mut labels = vec![0usize; n];
                let mut hits = 0;
                loop {
                    let psi = MicroObservable::new(labels.clone(), 2).unwrap();
                    if pair_counts(s, &psi) == (tv.clone(), te.clone()) {
                        hits += 1;
                    }
                    if !odometer(&mut labels, 2) {
                        break;
                    }
                }
                hits
            };
            assert_eq!(count(&sigma), count(&conj));
        }
    }

    #[test]
    fn log_count_matches_exact() {
        for n in [4, 8, 20, 60] {
            let exact = ln_abs(&expected_count_exact(&Weight::uniform(2, 2), n).unwrap());
            let approx = expected_count_log(&Weight::uniform(2, 2), n).unwrap();
            assert!((exact - approx).abs() <= 1e-9 * exact.abs().max(1.0), "n={n}");
        }
        assert_eq!(expected_count_log(&Weight::uniform(1, 3), 7).unwrap(), 0.0);
        assert!(((8.0f64 / 3.0).ln() - expected_count_log(&Weight::uniform(2, 2), 4).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn sandwich_brackets_exact_values() {
        let (lo, hi) = stirling_sandwich(&Weight::uniform(1, 2), 5).unwrap();
        assert!(lo <= 0.0 && 0.0 <= hi && hi - lo < 1.0);
        let exact = (8.0f64 / 3.0).ln();
        let (lo, hi) = stirling_sandwich(&Weight::uniform(2, 2), 4).unwrap();
        assert!(lo <= exact && exact <= hi);
        let n = 4000;
        let log_e = expected_count_log(&Weight::uniform(2, 2), n).unwrap();
        let (lo, hi) = stirling_sandwich(&Weight::uniform(2, 2), n).unwrap();
        assert!(lo <= log_e && log_e <= hi);
        assert!((hi - lo) / n as f64 <= 0.05);
    }

    #[test]
    fn lattice_eps_zero() {
        let u = Weight::uniform(2, 1);
        let ws = lattice_weights(&u, 4, &BigRational::zero(), DEFAULT_LATTICE_BUDGET).unwrap();
        assert_eq!(ws.len(), 1);
        assert_eq!(ws[0].to_weight(), u);
        assert!(lattice_weights(&u, 3, &BigRational::zero(), DEFAULT_LATTICE_BUDGET).unwrap().is_empty());
    }

    #[test]
    fn lattice_matches_unpruned_scan() {
        for (k, r, n) in [(2, 1, 2), (2, 1, 3), (2, 2, 3), (3, 1, 3), (2, 2, 4), (3, 2, 2)] {
            let everything = unpruned_lattice(k, r, n);
            let all_eps = ratio(2 * r as i64, 1);
            let mut pruned = lattice_weights(&Weight::uniform(k, r), n, &all_eps, DEFAULT_LATTICE_BUDGET).unwrap();
            pruned.sort();
            assert_eq!(pruned, everything, "k={k} r={r} n={n}");
            // a strict sub-ball matches the filtered scan
            let eps = ratio(1, 2);
            let target = Weight::uniform(k, r);
            let mut near = lattice_weights(&target, n, &eps, DEFAULT_LATTICE_BUDGET).unwrap();
            near.sort();
            let filtered: Vec<LatticeWeight> =
                everything.iter().filter(|w| target.d_star_exact(&w.to_weight()).unwrap() <= eps).cloned().collect();
            assert_eq!(near, filtered);
        }
    }

    #[test]
    fn eps_count_total_mass() {
        for (k, r, n) in [(2, 1, 5), (2, 2, 4), (3, 2, 3)] {
            let target = Weight::uniform(k, r);
            let total = expected_eps_count_exact(&target, n, &ratio(2 * r as i64, 1), DEFAULT_LATTICE_BUDGET).unwrap();
            assert_eq!(total, int(k.pow(n as u32)));
        }
    }

    #[test]
    fn eps_count_grouping_matches_naive_sum() {
        let edges = vec![ratio(3, 10), ratio(1, 10), ratio(1, 10), ratio(1, 2), ratio(1, 5), ratio(1, 5), ratio(1, 5), ratio(2, 5)];
        let target = Weight::from_exact_edges(default_alphabet(2), 2, edges).unwrap();
        for n in [3, 5, 10] {
            for eps in [ratio(0, 1), ratio(1, 3), ratio(4, 5), ratio(3, 2)] {
                let naive: BigRational = lattice_weights(&target, n, &eps, DEFAULT_LATTICE_BUDGET)
                    .unwrap()
                    .iter()
                    .map(|w| expected_count_exact(&w.to_weight(), n).unwrap())
                    .sum();
                assert_eq!(expected_eps_count_exact(&target, n, &eps, DEFAULT_LATTICE_BUDGET).unwrap(), naive);
            }
        }
    }

    #[test]
    fn eps_count_matches_brute_force_small() {
        let u = Weight::uniform(2, 1);
        let eps = ratio(1, 2);
        let exact = expected_eps_count_exact(&u, 3, &eps, DEFAULT_LATTICE_BUDGET).unwrap();
        assert_eq!(exact, brute_force_eps_count(&u, 3, &eps, DEFAULT_BRUTE_FORCE_BUDGET).unwrap());
        let at_zero = expected_eps_count_exact(&u, 4, &BigRational::zero(), DEFAULT_LATTICE_BUDGET).unwrap();
        assert_eq!(at_zero, expected_count_exact(&u, 4).unwrap());
    }

    #[test]
    fn lattice_budget_is_enforced() {
        let u = Weight::uniform(3, 2);
        assert!(lattice_weights(&u, 12, &ratio(4, 1), 100).unwrap_err().is_budget());
    }

    #[test]
    fn rate_curve_examples() {
        let spec = crate::GroupSpec::group(1);
        let point = System::bernoulli(spec, vec![ratio(1, 1)]).unwrap();
        let c = rate_curve(&point, &ratio(1, 10), &[1, 5, 9], DEFAULT_LATTICE_BUDGET).unwrap();
        assert_eq!(c.f_target, 0.0);
        assert!(c.points.iter().all(|p| p.rate == 0.0));

        let coin = System::bernoulli(spec, vec![ratio(1, 2), ratio(1, 2)]).unwrap();
        let c = rate_curve(&coin, &ratio(2, 1), &[1, 4, 7, 10], DEFAULT_LATTICE_BUDGET).unwrap();
        assert!((c.f_target - 2f64.ln()).abs() < 1e-15);
        for p in &c.points {
            assert!((p.rate - 2f64.ln()).abs() < 1e-12, "n={}", p.n);
        }
    }

    #[test]
    fn all_permutations_counts() {
        assert_eq!(all_permutations(1), vec![vec![0]]);
        assert_eq!(all_permutations(3).len(), 6);
        assert_eq!(all_permutations(5).len(), 120);
    }

    #[test]
    fn formula_check_small_cases() {
        for (k, r, n) in [(2, 1, 4), (2, 2, 3), (1, 2, 3), (3, 1, 3)] {
            let c = check_count_formula(k, r, n, DEFAULT_BRUTE_FORCE_BUDGET).unwrap();
            assert!(c.passed(), "{k} {r} {n}: {:?}", c.mismatches.first());
            assert!(c.checked > 0);
        }
    }
}
