//! Weights on the colored graph with vertex set `A` and `r` families of
//! directed edges `A x A`.
//!
//! A weight assigns a mass to every symbol and to every colored pair of
//! symbols, such that vertex masses sum to one and for every color the row
//! and column sums of the edge table both reproduce the vertex masses.
//! Masses are kept as binary64 and, when the weight was built from exact
//! data, also as exact rationals.

use std::collections::BTreeMap;

use num_bigint::{BigInt, BigUint};
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exact::{int, lcm_big, to_f64, xlogx};

#[derive(Clone, Debug, PartialEq)]
pub struct Weight {
    alphabet: Vec<String>,
    rank: usize,
    vertex: Vec<f64>,
    edges: Vec<f64>,
    exact: Option<ExactMasses>,
}

#[derive(Clone, Debug, PartialEq)]
struct ExactMasses {
    vertex: Vec<BigRational>,
    edges: Vec<BigRational>,
}

/// Default symbol names `a, b, c, ...`.
pub fn default_alphabet(k: usize) -> Vec<String> {
    (0..k)
        .map(|i| if k <= 26 { ((b'a' + i as u8) as char).to_string() } else { format!("x{i}") })
        .collect()
}

impl Weight {
    /// Builds an exact weight from explicit vertex and edge masses. Edge
    /// masses are indexed `[color][a][b]` row-major. Only shapes are checked;
    /// use [`Weight::validate`] for the weight axioms.
    pub fn from_exact(alphabet: Vec<String>, rank: usize, vertex: Vec<BigRational>, edges: Vec<BigRational>) -> Result<Self> {
        let k = alphabet.len();
        check_shape(k, rank, vertex.len(), edges.len())?;
        Ok(Weight {
            vertex: vertex.iter().map(to_f64).collect(),
            edges: edges.iter().map(to_f64).collect(),
            alphabet,
            rank,
            exact: Some(ExactMasses { vertex, edges }),
        })
    }

    /// Builds an exact weight whose vertex masses are the row sums of the
    /// first color.
    pub fn from_exact_edges(alphabet: Vec<String>, rank: usize, edges: Vec<BigRational>) -> Result<Self> {
        let k = alphabet.len();
        check_shape(k, rank, k, edges.len())?;
        let vertex = (0..k).map(|a| (0..k).map(|b| edges[a * k + b].clone()).sum()).collect();
        Self::from_exact(alphabet, rank, vertex, edges)
    }

    /// A binary64-only weight.
    pub fn from_f64(alphabet: Vec<String>, rank: usize, vertex: Vec<f64>, edges: Vec<f64>) -> Result<Self> {
        check_shape(alphabet.len(), rank, vertex.len(), edges.len())?;
        Ok(Weight { alphabet, rank, vertex, edges, exact: None })
    }

    /// The exact weight `vertex / n`, `edges / n` from integer counts.
    pub fn from_counts(alphabet_size: usize, rank: usize, n: usize, vertex: &[usize], edges: &[usize]) -> Result<Self> {
        let n = int(n);
        Self::from_exact(
            default_alphabet(alphabet_size),
            rank,
            vertex.iter().map(|&c| int(c) / &n).collect(),
            edges.iter().map(|&c| int(c) / &n).collect(),
        )
    }

    /// Vertex masses `1/k`, edge masses `1/k^2`.
    pub fn uniform(alphabet_size: usize, rank: usize) -> Self {
        let k = alphabet_size;
        let v = BigRational::new(BigInt::one(), BigInt::from(k));
        let e = BigRational::new(BigInt::one(), BigInt::from(k * k));
        Self::from_exact(default_alphabet(k), rank, vec![v; k], vec![e; rank * k * k]).expect("consistent shape")
    }

    /// Independent pairs: vertex `p`, edges `p(a) p(b)` in every color.
    pub fn independent(p: &[BigRational], rank: usize) -> Self {
        let k = p.len();
        let mut edges = Vec::with_capacity(rank * k * k);
        for _ in 0..rank {
            for a in p {
                for b in p {
                    edges.push(a * b);
                }
            }
        }
        Self::from_exact(default_alphabet(k), rank, p.to_vec(), edges).expect("consistent shape")
    }

    pub fn alphabet(&self) -> &[String] {
        &self.alphabet
    }

    pub fn alphabet_size(&self) -> usize {
        self.alphabet.len()
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn is_exact(&self) -> bool {
        self.exact.is_some()
    }

    fn idx(&self, color: usize, a: usize, b: usize) -> usize {
        let k = self.alphabet.len();
        color * k * k + a * k + b
    }

    pub fn vertex(&self, a: usize) -> f64 {
        self.vertex[a]
    }

    pub fn edge(&self, color: usize, a: usize, b: usize) -> f64 {
        self.edges[self.idx(color, a, b)]
    }

    pub fn vertex_masses(&self) -> &[f64] {
        &self.vertex
    }

    /// Edge masses of one color, row-major.
    pub fn color_table(&self, color: usize) -> &[f64] {
        let k2 = self.alphabet.len().pow(2);
        &self.edges[color * k2..(color + 1) * k2]
    }

    pub fn exact_vertex(&self, a: usize) -> Option<&BigRational> {
        self.exact.as_ref().map(|e| &e.vertex[a])
    }

    pub fn exact_edge(&self, color: usize, a: usize, b: usize) -> Option<&BigRational> {
        let i = self.idx(color, a, b);
        self.exact.as_ref().map(|e| &e.edges[i])
    }

    pub fn exact_vertex_masses(&self) -> Option<&[BigRational]> {
        self.exact.as_ref().map(|e| e.vertex.as_slice())
    }

    pub fn exact_edge_masses(&self) -> Option<&[BigRational]> {
        self.exact.as_ref().map(|e| e.edges.as_slice())
    }

    fn require_exact(&self, what: &str) -> Result<&ExactMasses> {
        self.exact.as_ref().ok_or_else(|| Error::Inexact(what.to_string()))
    }

    /// Drops the exact representation.
    pub fn to_float(&self) -> Weight {
        Weight { exact: None, ..self.clone() }
    }

    /// Checks the weight axioms. Exact weights are checked exactly and
    /// `tol` is ignored; binary64 weights are checked within `tol`.
    pub fn validate(&self, tol: f64) -> ValidationReport {
        let k = self.alphabet.len();
        let mut violations = Vec::new();
        match &self.exact {
            Some(ex) => {
                let zero = BigRational::zero();
                let one = BigRational::one();
                for (a, m) in ex.vertex.iter().enumerate() {
                    if *m < zero || *m > one {
                        violations.push(Violation::VertexRange { symbol: a, mass: to_f64(m) });
                    }
                }
                for (idx, m) in ex.edges.iter().enumerate() {
                    if *m < zero || *m > one {
                        let (c, a, b) = (idx / (k * k), (idx / k) % k, idx % k);
                        violations.push(Violation::EdgeRange { color: c, from: a, to: b, mass: to_f64(m) });
                    }
                }
                let total: BigRational = ex.vertex.iter().sum();
                if total != one {
                    violations.push(Violation::VertexSum { residual: to_f64(&(total - one)) });
                }
                for c in 0..self.rank {
                    for a in 0..k {
                        let row: BigRational = (0..k).map(|b| &ex.edges[self.idx(c, a, b)]).sum();
                        let col: BigRational = (0..k).map(|b| &ex.edges[self.idx(c, b, a)]).sum();
                        if row != ex.vertex[a] {
                            violations.push(Violation::RowSum { color: c, symbol: a, residual: to_f64(&(row - &ex.vertex[a])) });
                        }
                        if col != ex.vertex[a] {
                            violations.push(Violation::ColumnSum { color: c, symbol: a, residual: to_f64(&(col - &ex.vertex[a])) });
                        }
                    }
                }
            }
            None => {
                for (a, &m) in self.vertex.iter().enumerate() {
                    if !(-tol..=1.0 + tol).contains(&m) || m.is_nan() {
                        violations.push(Violation::VertexRange { symbol: a, mass: m });
                    }
                }
                for (idx, &m) in self.edges.iter().enumerate() {
                    if !(-tol..=1.0 + tol).contains(&m) || m.is_nan() {
                        let (c, a, b) = (idx / (k * k), (idx / k) % k, idx % k);
                        violations.push(Violation::EdgeRange { color: c, from: a, to: b, mass: m });
                    }
                }
                let total: f64 = self.vertex.iter().sum();
                if (total - 1.0).abs() > tol {
                    violations.push(Violation::VertexSum { residual: total - 1.0 });
                }
                for c in 0..self.rank {
                    for a in 0..k {
                        let row: f64 = (0..k).map(|b| self.edge(c, a, b)).sum();
                        let col: f64 = (0..k).map(|b| self.edge(c, b, a)).sum();
                        if (row - self.vertex[a]).abs() > tol {
                            violations.push(Violation::RowSum { color: c, symbol: a, residual: row - self.vertex[a] });
                        }
                        if (col - self.vertex[a]).abs() > tol {
                            violations.push(Violation::ColumnSum { color: c, symbol: a, residual: col - self.vertex[a] });
                        }
                    }
                }
            }
        }
        ValidationReport { violations }
    }

    fn check_compatible(&self, other: &Weight) -> Result<()> {
        if self.alphabet.len() != other.alphabet.len() || self.rank != other.rank {
            return Err(Error::ShapeMismatch(format!(
                "weights over |A|={}, r={} and |A|={}, r={}",
                self.alphabet.len(),
                self.rank,
                other.alphabet.len(),
                other.rank
            )));
        }
        Ok(())
    }

    /// `d_i`: l1 distance between the edge tables of one color.
    pub fn d_color(&self, other: &Weight, color: usize) -> Result<f64> {
        self.check_compatible(other)?;
        if color >= self.rank {
            return Err(Error::ShapeMismatch(format!("color {} out of range", color + 1)));
        }
        Ok(self.color_table(color).iter().zip(other.color_table(color)).map(|(x, y)| (x - y).abs()).sum())
    }

    /// `d_*`: the sum of `d_i` over all colors.
    pub fn d_star(&self, other: &Weight) -> Result<f64> {
        self.check_compatible(other)?;
        (0..self.rank).map(|c| self.d_color(other, c)).sum()
    }

    /// Exact `d_*` for two exact weights.
    pub fn d_star_exact(&self, other: &Weight) -> Result<BigRational> {
        self.check_compatible(other)?;
        let a = self.require_exact("d_star_exact")?;
        let b = other.require_exact("d_star_exact")?;
        Ok(a.edges.iter().zip(&b.edges).map(|(x, y)| (x - y).abs()).sum())
    }

    /// `F(W) = -sum W(a,b;i) log W(a,b;i) + (2r-1) sum W(a) log W(a)`.
    pub fn f_value(&self) -> f64 {
        let edge_term: f64 = self.edges.iter().map(|&m| xlogx(m)).sum();
        let vertex_term: f64 = self.vertex.iter().map(|&m| xlogx(m)).sum();
        -edge_term + (2.0 * self.rank as f64 - 1.0) * vertex_term
    }

    /// Smallest positive `q` with `q W(a,b;i)` integral for every edge.
    pub fn q(&self) -> Result<BigUint> {
        let ex = self.require_exact("q_W is only defined for rational weights")?;
        Ok(ex.edges.iter().fold(BigUint::one(), |acc, m| lcm_big(&acc, m.denom().magnitude())))
    }

    /// `true` when `q_W` divides `n`.
    pub fn q_divides(&self, n: usize) -> Result<bool> {
        Ok((BigUint::from(n) % self.q()?).is_zero())
    }

    /// Integer counts `n W(a)` and `n W(a,b;i)` when all are integral.
    pub fn counts(&self, n: usize) -> Result<Option<(Vec<usize>, Vec<usize>)>> {
        let ex = self.require_exact("lattice counts")?;
        let nn = int(n);
        let conv = |m: &BigRational| -> Option<usize> {
            let x = m * &nn;
            if x.is_integer() {
                x.to_integer().to_usize()
            } else {
                None
            }
        };
        let v: Option<Vec<usize>> = ex.vertex.iter().map(conv).collect();
        let e: Option<Vec<usize>> = ex.edges.iter().map(conv).collect();
        Ok(v.zip(e))
    }

    /// Tensor product of two weights of equal rank; symbol `(a1, a2)` has
    /// index `a1 * |A2| + a2`.
    pub fn tensor(&self, other: &Weight) -> Result<Weight> {
        if self.rank != other.rank {
            return Err(Error::ShapeMismatch("tensor of weights with different ranks".into()));
        }
        let (k1, k2) = (self.alphabet_size(), other.alphabet_size());
        let k = k1 * k2;
        let alphabet: Vec<String> =
            self.alphabet.iter().flat_map(|x| other.alphabet.iter().map(move |y| format!("{x}|{y}"))).collect();
        let pair = |p: usize| (p / k2, p % k2);
        match (&self.exact, &other.exact) {
            (Some(x), Some(y)) => {
                let vertex = (0..k).map(|p| &x.vertex[pair(p).0] * &y.vertex[pair(p).1]).collect();
                let mut edges = Vec::with_capacity(self.rank * k * k);
                for c in 0..self.rank {
                    for p in 0..k {
                        for q in 0..k {
                            let (a1, a2) = pair(p);
                            let (b1, b2) = pair(q);
                            edges.push(&x.edges[self.idx(c, a1, b1)] * &y.edges[other.idx(c, a2, b2)]);
                        }
                    }
                }
                Weight::from_exact(alphabet, self.rank, vertex, edges)
            }
            _ => {
                let vertex = (0..k).map(|p| self.vertex[pair(p).0] * other.vertex[pair(p).1]).collect();
                let mut edges = Vec::with_capacity(self.rank * k * k);
                for c in 0..self.rank {
                    for p in 0..k {
                        for q in 0..k {
                            let (a1, a2) = pair(p);
                            let (b1, b2) = pair(q);
                            edges.push(self.edge(c, a1, b1) * other.edge(c, a2, b2));
                        }
                    }
                }
                Weight::from_f64(alphabet, self.rank, vertex, edges)
            }
        }
    }

    /// Relabel colors: color `c` of the result is color `perm[c]` of `self`.
    pub fn permute_colors(&self, perm: &[usize]) -> Result<Weight> {
        if perm.len() != self.rank {
            return Err(Error::ShapeMismatch("color permutation has wrong length".into()));
        }
        let k2 = self.alphabet_size().pow(2);
        let pick = |v: &[BigRational]| -> Vec<BigRational> { perm.iter().flat_map(|&c| v[c * k2..(c + 1) * k2].to_vec()).collect() };
        match &self.exact {
            Some(ex) => Weight::from_exact(self.alphabet.clone(), self.rank, ex.vertex.clone(), pick(&ex.edges)),
            None => {
                let edges = perm.iter().flat_map(|&c| self.color_table(c).to_vec()).collect();
                Weight::from_f64(self.alphabet.clone(), self.rank, self.vertex.clone(), edges)
            }
        }
    }

    /// Nearby weight with all masses in `(1/n) Z`, so that `q` divides `n`,
    /// within `d_* <= r |A|^2 / n` of `self`.
    ///
    /// The anchored floor construction with the first symbol as anchor is
    /// tried first. When it leaves the weight polytope (some anchored entry
    /// goes negative) or misses the distance bound, the vertex masses are
    /// rounded to `(1/n) Z` and each color table is replaced by an
    /// l1-closest integer transportation table with those margins.
    pub fn round(&self, n: usize) -> Result<Weight> {
        assert!(n > 0, "round_weight needs n >= 1");
        let src = self.exact_or_approx();
        let bound = BigRational::new(BigInt::from(self.rank * self.alphabet_size().pow(2)), BigInt::from(n));
        if let Some(w) = anchored_round(&src, n)? {
            if w.validate(0.0).is_ok() && w.d_star_exact(&src)? <= bound {
                return Ok(w);
            }
        }
        transport_round(&src, n)
    }

    /// Exact copy, approximating binary64 masses by multiples of `2^-40`.
    fn exact_or_approx(&self) -> Weight {
        if self.exact.is_some() {
            return self.clone();
        }
        let scale = BigInt::one() << 40u32;
        let approx = |x: f64| BigRational::new(BigInt::from((x * (1u64 << 40) as f64).round() as i64), scale.clone());
        Weight::from_exact(
            self.alphabet.clone(),
            self.rank,
            self.vertex.iter().map(|&x| approx(x)).collect(),
            self.edges.iter().map(|&x| approx(x)).collect(),
        )
        .expect("same shape")
    }

    pub fn to_doc(&self) -> Result<WeightDoc> {
        let ex = self.require_exact("weight JSON stores exact fractions")?;
        let k2 = self.alphabet_size().pow(2);
        let mut edges = BTreeMap::new();
        for c in 0..self.rank {
            let row: Vec<[i64; 2]> = ex.edges[c * k2..(c + 1) * k2]
                .iter()
                .map(|m| {
                    Ok([
                        m.numer().to_i64().ok_or_else(|| Error::InvalidInput("numerator too large for JSON".into()))?,
                        m.denom().to_i64().ok_or_else(|| Error::InvalidInput("denominator too large for JSON".into()))?,
                    ])
                })
                .collect::<Result<_>>()?;
            edges.insert((c + 1).to_string(), row);
        }
        Ok(WeightDoc { alphabet: self.alphabet.clone(), rank: self.rank, edges })
    }

    pub fn from_doc(doc: &WeightDoc) -> Result<Weight> {
        let k = doc.alphabet.len();
        if k == 0 || doc.rank == 0 {
            return Err(Error::InvalidInput("weight needs a nonempty alphabet and rank >= 1".into()));
        }
        let mut edges = Vec::with_capacity(doc.rank * k * k);
        for c in 1..=doc.rank {
            let row = doc
                .edges
                .get(&c.to_string())
                .ok_or_else(|| Error::InvalidInput(format!("weight is missing edges for color {c}")))?;
            if row.len() != k * k {
                return Err(Error::InvalidInput(format!("color {c} needs {} edge masses, got {}", k * k, row.len())));
            }
            for [num, den] in row {
                if *den <= 0 {
                    return Err(Error::InvalidInput("edge mass denominators must be positive".into()));
                }
                edges.push(BigRational::new(BigInt::from(*num), BigInt::from(*den)));
            }
        }
        if doc.edges.len() != doc.rank {
            return Err(Error::InvalidInput("weight lists edges for colors beyond its rank".into()));
        }
        let w = Weight::from_exact_edges(doc.alphabet.clone(), doc.rank, edges)?;
        let report = w.validate(0.0);
        if !report.is_ok() {
            return Err(Error::InvalidInput(format!("weight violates its constraints: {report}")));
        }
        Ok(w)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_doc()?)?)
    }

    pub fn from_json(s: &str) -> Result<Weight> {
        Weight::from_doc(&serde_json::from_str(s)?)
    }
}

/// A pseudorandom valid exact weight with small denominators.
///
/// Each color is a random nonnegative integer circulation built from up to
/// three weighted cycles (self-loops included); the diagonals are then padded
/// so that all colors share one vertex vector, and everything is normalized.
pub fn random_weight<R: Rng + ?Sized>(rng: &mut R, alphabet_size: usize, rank: usize) -> Weight {
    let k = alphabet_size;
    let symbols: Vec<usize> = (0..k).collect();
    let mut tables = vec![vec![0usize; k * k]; rank];
    for table in tables.iter_mut() {
        for _ in 0..rng.gen_range(0..=3) {
            let len = rng.gen_range(1..=k);
            let cycle: Vec<usize> = symbols.choose_multiple(rng, len).copied().collect();
            let w = rng.gen_range(1..=12);
            for (i, &a) in cycle.iter().enumerate() {
                let b = cycle[(i + 1) % len];
                table[a * k + b] += w;
            }
        }
    }
    let through = |t: &Vec<usize>, a: usize| (0..k).map(|b| t[a * k + b]).sum::<usize>();
    let mut vertex: Vec<usize> =
        (0..k).map(|a| tables.iter().map(|t| through(t, a)).max().unwrap_or(0) + rng.gen_range(0..=2)).collect();
    if vertex.iter().all(|&v| v == 0) {
        vertex[rng.gen_range(0..k)] = 1;
    }
    for table in tables.iter_mut() {
        for a in 0..k {
            let pad = vertex[a] - through(table, a);
            table[a * k + a] += pad;
        }
    }
    let total: usize = vertex.iter().sum();
    let edges: Vec<usize> = tables.concat();
    Weight::from_counts(k, rank, total, &vertex, &edges).expect("consistent shape")
}

fn check_shape(k: usize, rank: usize, vertex_len: usize, edge_len: usize) -> Result<()> {
    if k == 0 || rank == 0 {
        return Err(Error::ShapeMismatch("weights need |A| >= 1 and r >= 1".into()));
    }
    if vertex_len != k || edge_len != rank * k * k {
        return Err(Error::ShapeMismatch(format!(
            "expected {k} vertex and {} edge masses, got {vertex_len} and {edge_len}",
            rank * k * k
        )));
    }
    Ok(())
}

/// On-disk weight document. Edge masses are `[numerator, denominator]`
/// pairs, row-major per color; colors are keyed `"1"..="r"`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightDoc {
    pub alphabet: Vec<String>,
    pub rank: usize,
    pub edges: BTreeMap<String, Vec<[i64; 2]>>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Violation {
    VertexRange { symbol: usize, mass: f64 },
    EdgeRange { color: usize, from: usize, to: usize, mass: f64 },
    VertexSum { residual: f64 },
    RowSum { color: usize, symbol: usize, residual: f64 },
    ColumnSum { color: usize, symbol: usize, residual: f64 },
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Violation::VertexRange { symbol, mass } => write!(f, "vertex mass of symbol {symbol} is {mass}, outside [0,1]"),
            Violation::EdgeRange { color, from, to, mass } => {
                write!(f, "edge ({from},{to}) of color {} has mass {mass}, outside [0,1]", color + 1)
            }
            Violation::VertexSum { residual } => write!(f, "vertex masses sum to 1 + {residual}"),
            Violation::RowSum { color, symbol, residual } => {
                write!(f, "row ({}, {symbol}) misses its vertex mass by {residual}", color + 1)
            }
            Violation::ColumnSum { color, symbol, residual } => {
                write!(f, "column ({}, {symbol}) misses its vertex mass by {residual}", color + 1)
            }
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

impl std::fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.violations.is_empty() {
            return write!(f, "ok");
        }
        let parts: Vec<String> = self.violations.iter().map(|v| v.to_string()).collect();
        write!(f, "{}", parts.join("; "))
    }
}

fn floor_div(m: &BigRational, n: usize) -> BigRational {
    (m * int(n)).floor() / int(n)
}

fn anchored_round(w: &Weight, n: usize) -> Result<Option<Weight>> {
    let ex = w.require_exact("rounding")?;
    let k = w.alphabet_size();
    let one = BigRational::one();
    let mut vt: Vec<BigRational> = ex.vertex.iter().map(|m| floor_div(m, n)).collect();
    vt[0] = &one - vt[1..].iter().sum::<BigRational>();
    let mut edges = Vec::with_capacity(ex.edges.len());
    for c in 0..w.rank {
        let mut t = vec![BigRational::zero(); k * k];
        for b in 1..k {
            for d in 1..k {
                t[b * k + d] = floor_div(&ex.edges[w.idx(c, b, d)], n);
            }
        }
        for b in 1..k {
            t[b] = &vt[b] - (1..k).map(|a| &t[a * k + b]).sum::<BigRational>();
            t[b * k] = &vt[b] - (1..k).map(|a| &t[b * k + a]).sum::<BigRational>();
        }
        t[0] = &vt[0] - (1..k).map(|b| &t[b]).sum::<BigRational>();
        edges.extend(t);
    }
    Ok(Some(Weight::from_exact(w.alphabet.clone(), w.rank, vt, edges)?))
}

fn transport_round(w: &Weight, n: usize) -> Result<Weight> {
    let ex = w.require_exact("rounding")?;
    let k = w.alphabet_size();
    let nn = int(n);
    let scaled_v: Vec<BigRational> = ex.vertex.iter().map(|m| m * &nn).collect();
    let floors: Vec<usize> = scaled_v.iter().map(|x| x.floor().to_integer().to_usize().expect("mass in [0,1]")).collect();
    let remainder = n - floors.iter().sum::<usize>();
    let fractional: Vec<usize> = (0..k).filter(|&a| !scaled_v[a].is_integer()).collect();

    let mut candidates: Vec<Vec<usize>> = Vec::new();
    for_each_subset(&fractional, remainder, &mut |chosen| {
        let mut v = floors.clone();
        for &a in chosen {
            v[a] += 1;
        }
        candidates.push(v);
        candidates.len() < 64
    });
    if candidates.is_empty() {
        // The fractional parts always sum to `remainder`, so at least
        // `remainder` symbols have a fractional part.
        return Err(Error::Inconsistent("vertex rounding found no candidate".into()));
    }

    let scaled_edges: Vec<f64> = ex.edges.iter().map(|m| to_f64(&(m * &nn))).collect();
    let mut best: Option<(f64, Vec<usize>, Vec<usize>)> = None;
    for v in candidates {
        let mut cost = 0.0;
        let mut tables = Vec::with_capacity(w.rank * k * k);
        for c in 0..w.rank {
            let target = &scaled_edges[c * k * k..(c + 1) * k * k];
            let (t, cc) = min_cost_table(target, &v);
            cost += cc;
            tables.extend(t);
        }
        if best.as_ref().is_none_or(|(b, _, _)| cost < *b - 1e-9) {
            best = Some((cost, v, tables));
        }
    }
    let (_, v, tables) = best.expect("at least one candidate");
    Weight::from_counts(k, w.rank, n, &v, &tables).map(|mut out| {
        out.alphabet = w.alphabet.clone();
        out
    })
}

fn for_each_subset(items: &[usize], size: usize, f: &mut dyn FnMut(&[usize]) -> bool) {
    fn rec(items: &[usize], size: usize, start: usize, cur: &mut Vec<usize>, f: &mut dyn FnMut(&[usize]) -> bool) -> bool {
        if cur.len() == size {
            return f(cur);
        }
        for i in start..items.len() {
            if items.len() - i < size - cur.len() {
                break;
            }
            cur.push(items[i]);
            let go_on = rec(items, size, i + 1, cur, f);
            cur.pop();
            if !go_on {
                return false;
            }
        }
        true
    }
    rec(items, size, 0, &mut Vec::new(), f);
}

/// Integer `k x k` table with row and column sums `margins` minimizing
/// `sum |target - table|`, by successive shortest paths with unit
/// augmentations on the convex separable cost.
fn min_cost_table(target: &[f64], margins: &[usize]) -> (Vec<usize>, f64) {
    let k = margins.len();
    let total: usize = margins.iter().sum();
    let mut y = vec![0usize; k * k];
    let mut out_used = vec![0usize; k];
    let mut in_used = vec![0usize; k];
    let add_cost = |t: f64, y: usize| (t - (y as f64 + 1.0)).abs() - (t - y as f64).abs();
    let sub_cost = |t: f64, y: usize| (t - (y as f64 - 1.0)).abs() - (t - y as f64).abs();

    // Nodes: 0 source, 1..=k rows, k+1..=2k columns, 2k+1 sink.
    let nodes = 2 * k + 2;
    let sink = 2 * k + 1;
    for _ in 0..total {
        let mut dist = vec![f64::INFINITY; nodes];
        let mut pred: Vec<Option<usize>> = vec![None; nodes];
        dist[0] = 0.0;
        for _ in 0..nodes {
            let mut changed = false;
            let mut relax = |from: usize, to: usize, w: f64, dist: &mut Vec<f64>, pred: &mut Vec<Option<usize>>| {
                if dist[from].is_finite() && dist[from] + w < dist[to] - 1e-12 {
                    dist[to] = dist[from] + w;
                    pred[to] = Some(from);
                    changed = true;
                }
            };
            for a in 0..k {
                if out_used[a] < margins[a] {
                    relax(0, 1 + a, 0.0, &mut dist, &mut pred);
                }
                if out_used[a] > 0 {
                    relax(1 + a, 0, 0.0, &mut dist, &mut pred);
                }
                if in_used[a] < margins[a] {
                    relax(k + 1 + a, sink, 0.0, &mut dist, &mut pred);
                }
                if in_used[a] > 0 {
                    relax(sink, k + 1 + a, 0.0, &mut dist, &mut pred);
                }
                for b in 0..k {
                    let cell = a * k + b;
                    relax(1 + a, k + 1 + b, add_cost(target[cell], y[cell]), &mut dist, &mut pred);
                    if y[cell] > 0 {
                        relax(k + 1 + b, 1 + a, sub_cost(target[cell], y[cell]), &mut dist, &mut pred);
                    }
                }
            }
            if !changed {
                break;
            }
        }
        // Walk back from the sink, applying the unit of flow.
        let mut node = sink;
        while let Some(p) = pred[node] {
            match (p, node) {
                (0, r) => out_used[r - 1] += 1,
                (r, 0) => out_used[r - 1] -= 1,
                (c, s) if s == sink => in_used[c - k - 1] += 1,
                (s, c) if s == sink => in_used[c - k - 1] -= 1,
                (r, c) if r <= k => y[(r - 1) * k + (c - k - 1)] += 1,
                (c, r) => y[(r - 1) * k + (c - k - 1)] -= 1,
            }
            node = p;
            if node == 0 {
                break;
            }
        }
    }
    let cost = y.iter().zip(target).map(|(&v, &t)| (t - v as f64).abs()).sum();
    (y, cost)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exact::ratio;

    fn exact_edges(k: usize, rank: usize, masses: &[(i64, i64)]) -> Weight {
        let edges = masses.iter().map(|&(p, q)| ratio(p, q)).collect();
        Weight::from_exact_edges(default_alphabet(k), rank, edges).unwrap()
    }

    fn identity_edges() -> Weight {
        exact_edges(2, 2, &[(1, 2), (0, 1), (0, 1), (1, 2), (1, 2), (0, 1), (0, 1), (1, 2)])
    }

    #[test]
    fn uniform_validates() {
        for k in 1..=4 {
            for r in 1..=3 {
                assert!(Weight::uniform(k, r).validate(0.0).is_ok());
            }
        }
    }

    #[test]
    fn row_sum_violation_names_the_row() {
        let w = Weight::from_exact(
            default_alphabet(2),
            1,
            vec![ratio(1, 2), ratio(1, 2)],
            vec![ratio(1, 2), ratio(1, 4), ratio(0, 1), ratio(1, 4)],
        )
        .unwrap();
        let report = w.validate(0.0);
        assert!(report.violations.contains(&Violation::RowSum { color: 0, symbol: 0, residual: 0.25 }));
        assert!(!report.is_ok());
    }

    #[test]
    fn float_weights_use_tolerance() {
        let w = Weight::from_f64(default_alphabet(2), 1, vec![0.5, 0.5], vec![0.25 + 1e-9, 0.25, 0.25, 0.25 - 1e-9]).unwrap();
        assert!(w.validate(1e-8).is_ok());
        assert!(!w.validate(1e-10).is_ok());
    }

    #[test]
    fn distance_examples() {
        let u = Weight::uniform(2, 2);
        assert_eq!(u.d_star(&u).unwrap(), 0.0);
        let id = identity_edges();
        assert!((u.d_star(&id).unwrap() - 2.0).abs() < 1e-15);
        assert_eq!(u.d_star_exact(&id).unwrap(), ratio(2, 1));
        assert!((u.d_color(&id, 0).unwrap() - 1.0).abs() < 1e-15);

        let a = exact_edges(2, 1, &[(3, 10), (2, 10), (2, 10), (3, 10)]);
        let b = exact_edges(2, 1, &[(3, 10), (2, 10), (1, 10), (4, 10)]);
        assert_eq!(a.d_star_exact(&b).unwrap(), ratio(2, 10));
        assert!(Weight::uniform(2, 1).d_star(&u).is_err());
    }

    #[test]
    fn f_value_examples() {
        let point = Weight::uniform(1, 3);
        assert_eq!(point.f_value(), 0.0);
        for k in 1..=4 {
            for r in 1..=3 {
                let f = Weight::uniform(k, r).f_value();
                assert!((f - (k as f64).ln()).abs() < 1e-12, "k={k} r={r} f={f}");
            }
        }
        assert!((identity_edges().f_value() + 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn q_examples() {
        assert_eq!(identity_edges().q().unwrap() * 2u32, BigUint::from(4u32));
        let zero_one = Weight::from_counts(2, 1, 1, &[1, 0], &[1, 0, 0, 0]).unwrap();
        assert_eq!(zero_one.q().unwrap(), BigUint::one());
        assert_eq!(Weight::uniform(2, 2).q().unwrap(), BigUint::from(4u32));
        let w = exact_edges(2, 1, &[(1, 6), (1, 10), (1, 10), (19, 30)]);
        assert_eq!(w.q().unwrap(), BigUint::from(30u32));
        assert!(w.to_float().q().is_err());
    }

    #[test]
    fn round_is_identity_on_lattice_points() {
        let u = Weight::uniform(2, 2);
        for n in [4, 8, 12] {
            let r = u.round(n).unwrap();
            assert_eq!(r, u);
        }
    }

    #[test]
    fn round_anchored_example() {
        let w = exact_edges(2, 1, &[(3, 10), (2, 10), (2, 10), (3, 10)]);
        let r = w.round(3).unwrap();
        let e: Vec<BigRational> = r.exact_edge_masses().unwrap().to_vec();
        assert_eq!(e, vec![ratio(1, 3), ratio(1, 3), ratio(1, 3), ratio(0, 1)]);
        assert_eq!(w.d_star_exact(&r).unwrap(), ratio(3, 5));
    }

    #[test]
    fn round_to_n_one_routes_mass_to_anchor() {
        let w = exact_edges(3, 2, &[
            (1, 9), (1, 9), (1, 9), (1, 9), (1, 9), (1, 9), (1, 9), (1, 9), (1, 9),
            (1, 3), (0, 1), (0, 1), (0, 1), (1, 3), (0, 1), (0, 1), (0, 1), (1, 3),
        ]);
        let r = w.round(1).unwrap();
        assert!(r.validate(0.0).is_ok());
        assert_eq!(r.exact_vertex(0).unwrap(), &ratio(1, 1));
        assert_eq!(r.exact_edge(0, 0, 0).unwrap(), &ratio(1, 1));
        assert_eq!(r.exact_edge(1, 0, 0).unwrap(), &ratio(1, 1));
        assert!(w.d_star(&r).unwrap() <= 2.0 * 9.0);
    }

    #[test]
    fn anchored_construction_can_leave_the_polytope() {
        // Vertex (0, 1/2, 1/2) with all mass spread over the non-anchor
        // block: the anchored corner entry becomes -1 at n = 2.
        let w = exact_edges(3, 1, &[
            (0, 1), (0, 1), (0, 1),
            (0, 1), (1, 4), (1, 4),
            (0, 1), (1, 4), (1, 4),
        ]);
        let anchored = anchored_round(&w, 2).unwrap().unwrap();
        assert!(!anchored.validate(0.0).is_ok());
        let r = w.round(2).unwrap();
        assert!(r.validate(0.0).is_ok());
        assert!(r.q_divides(2).unwrap());
        assert!(w.d_star_exact(&r).unwrap() <= ratio(9, 2));
    }

    #[test]
    fn random_weights_validate_and_round_within_bound() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let k = rng.gen_range(1..=4);
            let r = rng.gen_range(1..=3);
            let w = random_weight(&mut rng, k, r);
            assert!(w.validate(0.0).is_ok());
            for n in 1..=40 {
                let t = w.round(n).unwrap();
                assert!(t.validate(0.0).is_ok(), "{w:?} n={n}");
                assert!(t.q_divides(n).unwrap());
                let bound = BigRational::new(BigInt::from(r * k * k), BigInt::from(n));
                assert!(w.d_star_exact(&t).unwrap() <= bound, "{w:?} n={n}");
            }
        }
    }

    #[test]
    fn json_round_trip() {
        let w = identity_edges();
        let s = w.to_json().unwrap();
        assert_eq!(Weight::from_json(&s).unwrap(), w);
        let bad = r#"{"alphabet":["a","b"],"rank":1,"edges":{"1":[[1,2],[0,1],[1,2],[0,1]]}}"#;
        assert!(Weight::from_json(bad).is_err());
    }

    #[test]
    fn tensor_of_valid_weights_is_valid() {
        let t = identity_edges().tensor(&Weight::uniform(3, 2)).unwrap();
        assert_eq!(t.alphabet_size(), 6);
        assert!(t.validate(0.0).is_ok());
        let f = identity_edges().f_value() + Weight::uniform(3, 2).f_value();
        assert!((t.f_value() - f).abs() < 1e-12);
    }
}
