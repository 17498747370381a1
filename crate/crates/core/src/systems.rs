//! Finite-alphabet models of measure-preserving actions and their pattern
//! statistics.
//!
//! Coordinates of a pattern are indexed by words. The coordinate at `v*s_i`
//! is obtained from the coordinate at `v` by one step of generator `i`, so
//! the pair `(x_v, x_{v s_i})` always has the law of the color-`i` edge of
//! the system's weight. Concretely, finite actions and permutation models
//! apply the letters of a word from left to right.

use std::collections::{BTreeMap, BTreeSet};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exact::{int, shannon, to_f64};
use crate::freegrp::{ball, hull, right_translate, Automorphism, GroupKind, GroupSpec, Subtree, Word};
use crate::weights::{Weight, WeightDoc};

/// Default cap on the number of labelings enumerated for one joint
/// distribution (`2^18`).
pub const DEFAULT_LABELING_CAP: u64 = 1 << 18;

/// Arithmetic used for pattern masses: binary64 or exact rationals.
pub trait Mass:
    Clone + PartialEq + Zero + One + std::ops::Add<Output = Self> + std::ops::Mul<Output = Self> + std::ops::Div<Output = Self>
{
    fn from_ratio(r: &BigRational) -> Self;
    fn as_f64(&self) -> f64;
}

impl Mass for f64 {
    fn from_ratio(r: &BigRational) -> Self {
        to_f64(r)
    }
    fn as_f64(&self) -> f64 {
        *self
    }
}

impl Mass for BigRational {
    fn from_ratio(r: &BigRational) -> Self {
        r.clone()
    }
    fn as_f64(&self) -> f64 {
        to_f64(self)
    }
}

/// A probability distribution on labelings `A^S` of an ordered word list.
/// Only labelings of nonzero mass are stored.
#[derive(Clone, Debug, PartialEq)]
pub struct PatternDistribution<M> {
    words: Vec<Word>,
    alphabet_size: usize,
    masses: BTreeMap<Vec<usize>, M>,
}

impl<M: Mass> PatternDistribution<M> {
    pub fn words(&self) -> &[Word] {
        &self.words
    }

    pub fn alphabet_size(&self) -> usize {
        self.alphabet_size
    }

    pub fn masses(&self) -> &BTreeMap<Vec<usize>, M> {
        &self.masses
    }

    pub fn mass(&self, labeling: &[usize]) -> M {
        self.masses.get(labeling).cloned().unwrap_or_else(M::zero)
    }

    pub fn total(&self) -> M {
        self.masses.values().cloned().fold(M::zero(), |a, b| a + b)
    }

    /// Shannon entropy in nats.
    pub fn entropy(&self) -> f64 {
        shannon(self.masses.values().map(|m| m.as_f64()))
    }

    /// Marginal on a sub-list of the support words, in the given order.
    pub fn marginal(&self, words: &[Word]) -> Result<PatternDistribution<M>> {
        let pos: Vec<usize> = words
            .iter()
            .map(|w| {
                self.words
                    .iter()
                    .position(|x| x == w)
                    .ok_or_else(|| Error::InvalidInput(format!("word {w} is not in the support")))
            })
            .collect::<Result<_>>()?;
        let mut masses: BTreeMap<Vec<usize>, M> = BTreeMap::new();
        for (lab, m) in &self.masses {
            let key: Vec<usize> = pos.iter().map(|&p| lab[p]).collect();
            let slot = masses.entry(key).or_insert_with(M::zero);
            *slot = slot.clone() + m.clone();
        }
        Ok(PatternDistribution { words: words.to_vec(), alphabet_size: self.alphabet_size, masses })
    }

    pub fn to_f64(&self) -> PatternDistribution<f64> {
        PatternDistribution {
            words: self.words.clone(),
            alphabet_size: self.alphabet_size,
            masses: self.masses.iter().map(|(k, v)| (k.clone(), v.as_f64())).collect(),
        }
    }
}

/// The underlying model of a [`System`].
#[derive(Clone, Debug, PartialEq)]
pub enum Model {
    /// Shift on `A^G` with i.i.d. coordinates of law `kappa`.
    Bernoulli { kappa: Vec<BigRational> },
    /// Tree-indexed stationary Markov chain whose color-`i` edge law is the
    /// weight's color-`i` table.
    Markov { weight: Weight },
    /// Generators act on `{0..N}` by the given bijections; the observable is
    /// `labels`.
    FiniteAction { perms: Vec<Vec<usize>>, inverses: Vec<Vec<usize>>, labels: Vec<usize>, alphabet_size: usize },
    /// Diagonal action on the product with observable `(phi1, phi2)`.
    Product(Box<System>, Box<System>),
}

/// A measure-preserving action of a free group or semigroup together with a
/// finite observable.
#[derive(Clone, Debug, PartialEq)]
pub struct System {
    spec: GroupSpec,
    model: Model,
}

impl System {
    pub fn bernoulli(spec: GroupSpec, kappa: Vec<BigRational>) -> Result<Self> {
        if kappa.is_empty() {
            return Err(Error::InvalidInput("bernoulli base measure needs at least one symbol".into()));
        }
        if kappa.iter().any(|p| p.is_negative()) || kappa.iter().sum::<BigRational>() != BigRational::one() {
            return Err(Error::InvalidInput("bernoulli base measure must be a probability vector".into()));
        }
        Ok(System { spec, model: Model::Bernoulli { kappa } })
    }

    pub fn markov(spec: GroupSpec, weight: Weight) -> Result<Self> {
        if weight.rank() != spec.rank() {
            return Err(Error::ShapeMismatch(format!("weight rank {} for a rank {} action", weight.rank(), spec.rank())));
        }
        if !weight.is_exact() {
            return Err(Error::Inexact("markov systems need an exact weight".into()));
        }
        let report = weight.validate(0.0);
        if !report.is_ok() {
            return Err(Error::InvalidInput(format!("markov weight is not a weight: {report}")));
        }
        if let Some(a) = (0..weight.alphabet_size()).find(|&a| weight.exact_vertex(a).is_some_and(|m| m.is_zero())) {
            return Err(Error::ZeroVertexMass(a));
        }
        Ok(System { spec, model: Model::Markov { weight } })
    }

    /// `perms[i]` is the image table of generator `i` on `{0..N}`.
    pub fn finite_action(spec: GroupSpec, perms: Vec<Vec<usize>>, labels: Vec<usize>, alphabet_size: usize) -> Result<Self> {
        let n = labels.len();
        if n == 0 {
            return Err(Error::InvalidInput("finite action needs at least one point".into()));
        }
        if perms.len() != spec.rank() {
            return Err(Error::InvalidInput(format!("expected {} permutations, got {}", spec.rank(), perms.len())));
        }
        if labels.iter().any(|&l| l >= alphabet_size) {
            return Err(Error::InvalidInput("label outside the alphabet".into()));
        }
        let mut inverses = Vec::with_capacity(perms.len());
        for (i, p) in perms.iter().enumerate() {
            if p.len() != n {
                return Err(Error::InvalidInput(format!("permutation {} has length {}, expected {n}", i + 1, p.len())));
            }
            let mut inv = vec![usize::MAX; n];
            for (x, &y) in p.iter().enumerate() {
                if y >= n || inv[y] != usize::MAX {
                    return Err(Error::InvalidInput(format!("generator {} does not act by a bijection", i + 1)));
                }
                inv[y] = x;
            }
            inverses.push(inv);
        }
        Ok(System { spec, model: Model::FiniteAction { perms, inverses, labels, alphabet_size } })
    }

    /// Every generator acts trivially on `n` points, with injective labels.
    pub fn identity_action(spec: GroupSpec, n: usize) -> Result<Self> {
        let perms = vec![(0..n).collect(); spec.rank()];
        Self::finite_action(spec, perms, (0..n).collect(), n)
    }

    pub fn product(left: System, right: System) -> Result<Self> {
        if left.spec != right.spec {
            return Err(Error::ShapeMismatch("product factors must act by the same group".into()));
        }
        Ok(System { spec: left.spec, model: Model::Product(Box::new(left), Box::new(right)) })
    }

    pub fn spec(&self) -> &GroupSpec {
        &self.spec
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn alphabet_size(&self) -> usize {
        match &self.model {
            Model::Bernoulli { kappa } => kappa.len(),
            Model::Markov { weight } => weight.alphabet_size(),
            Model::FiniteAction { alphabet_size, .. } => *alphabet_size,
            Model::Product(a, b) => a.alphabet_size() * b.alphabet_size(),
        }
    }

    /// The weight `W_mu` of the observable: vertex law and the laws of
    /// `(phi, phi o T_{s_i})`.
    pub fn weight(&self) -> Weight {
        let r = self.spec.rank();
        match &self.model {
            Model::Bernoulli { kappa } => Weight::independent(kappa, r),
            Model::Markov { weight } => weight.clone(),
            Model::FiniteAction { perms, labels, alphabet_size, .. } => {
                let k = *alphabet_size;
                let n = labels.len();
                let mut vertex = vec![0usize; k];
                let mut edges = vec![0usize; r * k * k];
                for x in 0..n {
                    vertex[labels[x]] += 1;
                    for (i, p) in perms.iter().enumerate() {
                        edges[i * k * k + labels[x] * k + labels[p[x]]] += 1;
                    }
                }
                Weight::from_counts(k, r, n, &vertex, &edges).expect("consistent shape")
            }
            Model::Product(a, b) => a.weight().tensor(&b.weight()).expect("equal ranks"),
        }
    }

    /// Entropy of the observable itself.
    pub fn entropy_base(&self) -> f64 {
        shannon(self.weight().vertex_masses().iter().copied())
    }

    /// Joint law of the observable over `words`, exactly.
    pub fn joint_distribution_exact(&self, words: &[Word], cap: u64) -> Result<PatternDistribution<BigRational>> {
        self.joint_generic(words, cap)
    }

    /// Joint law of the observable over `words` in binary64.
    pub fn joint_distribution(&self, words: &[Word], cap: u64) -> Result<PatternDistribution<f64>> {
        self.joint_generic(words, cap)
    }

    fn joint_generic<M: Mass>(&self, words: &[Word], cap: u64) -> Result<PatternDistribution<M>> {
        check_word_list(&self.spec, words)?;
        let k = self.alphabet_size();
        let masses = match &self.model {
            Model::Bernoulli { kappa } => {
                require_labelings(k, words.len(), cap)?;
                let kappa: Vec<M> = kappa.iter().map(M::from_ratio).collect();
                let mut masses = BTreeMap::new();
                enumerate_independent(&kappa, words.len(), &mut Vec::new(), M::one(), &mut masses);
                masses
            }
            Model::Markov { weight } => markov_joint(weight, words, cap)?,
            Model::FiniteAction { perms, inverses, labels, .. } => {
                let n = labels.len();
                let mut counts: BTreeMap<Vec<usize>, usize> = BTreeMap::new();
                for x in 0..n {
                    let lab: Vec<usize> = words.iter().map(|w| labels[act_on_point(perms, inverses, w, x)]).collect();
                    *counts.entry(lab).or_default() += 1;
                }
                let nn = int(n);
                counts.into_iter().map(|(lab, c)| (lab, M::from_ratio(&(int(c) / &nn)))).collect()
            }
            Model::Product(a, b) => {
                let ja: PatternDistribution<M> = a.joint_generic(words, cap)?;
                let jb: PatternDistribution<M> = b.joint_generic(words, cap)?;
                let kb = b.alphabet_size();
                let size = ja.masses.len() as u64 * jb.masses.len() as u64;
                if size > cap {
                    return Err(Error::Budget { what: "product joint distribution", needed: size.to_string(), budget: cap });
                }
                let mut masses = BTreeMap::new();
                for (la, ma) in &ja.masses {
                    for (lb, mb) in &jb.masses {
                        let lab: Vec<usize> = la.iter().zip(lb).map(|(x, y)| x * kb + y).collect();
                        masses.insert(lab, ma.clone() * mb.clone());
                    }
                }
                masses
            }
        };
        Ok(PatternDistribution { words: words.to_vec(), alphabet_size: k, masses })
    }
}

fn check_word_list(spec: &GroupSpec, words: &[Word]) -> Result<()> {
    if words.is_empty() {
        return Err(Error::InvalidInput("joint distribution over an empty word set".into()));
    }
    let distinct: BTreeSet<&Word> = words.iter().collect();
    if distinct.len() != words.len() {
        return Err(Error::InvalidInput("word list contains duplicates".into()));
    }
    for w in words {
        crate::freegrp::check_word(w, spec)?;
    }
    Ok(())
}

fn require_labelings(k: usize, len: usize, cap: u64) -> Result<()> {
    let needed = (k as f64).powi(len as i32);
    if needed > cap as f64 {
        return Err(Error::Budget { what: "labeling enumeration", needed: format!("{k}^{len}"), budget: cap });
    }
    Ok(())
}

fn enumerate_independent<M: Mass>(kappa: &[M], len: usize, prefix: &mut Vec<usize>, mass: M, out: &mut BTreeMap<Vec<usize>, M>) {
    if mass.is_zero() {
        return;
    }
    if prefix.len() == len {
        out.insert(prefix.clone(), mass);
        return;
    }
    for (a, p) in kappa.iter().enumerate() {
        prefix.push(a);
        enumerate_independent(kappa, len, prefix, mass.clone() * p.clone(), out);
        prefix.pop();
    }
}

/// Image of point `x` under the word `w`, letters applied left to right.
pub fn act_on_point(perms: &[Vec<usize>], inverses: &[Vec<usize>], w: &Word, mut x: usize) -> usize {
    for l in w.letters() {
        x = if l.inverse { inverses[l.generator][x] } else { perms[l.generator][x] };
    }
    x
}

/// Conditional laws along each tree link: `cond[v][p * k + c]` is the
/// probability that vertex `v` has symbol `c` given its parent has `p`.
fn markov_conditionals<M: Mass>(weight: &Weight, tree: &Subtree) -> Vec<Vec<M>> {
    let k = weight.alphabet_size();
    let ex_v = weight.exact_vertex_masses().expect("markov weights are exact");
    tree.links()
        .iter()
        .map(|link| match link {
            None => Vec::new(),
            Some(l) => {
                let mut t = Vec::with_capacity(k * k);
                for p in 0..k {
                    for c in 0..k {
                        let joint = if l.forward {
                            weight.exact_edge(l.color, p, c)
                        } else {
                            weight.exact_edge(l.color, c, p)
                        }
                        .expect("exact");
                        t.push(M::from_ratio(&(joint / &ex_v[p])));
                    }
                }
                t
            }
        })
        .collect()
}

fn markov_joint<M: Mass>(weight: &Weight, words: &[Word], cap: u64) -> Result<BTreeMap<Vec<usize>, M>> {
    let k = weight.alphabet_size();
    let set: BTreeSet<Word> = words.iter().cloned().collect();
    let tree = hull(&set);
    require_labelings(k, tree.len(), cap)?;
    let cond: Vec<Vec<M>> = markov_conditionals(weight, &tree);
    let root: Vec<M> = weight.exact_vertex_masses().expect("exact").iter().map(M::from_ratio).collect();
    let parents: Vec<usize> = tree.links().iter().map(|l| l.map_or(0, |l| l.parent)).collect();
    let pos: Vec<usize> = words.iter().map(|w| tree.index_of(w).expect("hull contains its words")).collect();

    let mut out: BTreeMap<Vec<usize>, M> = BTreeMap::new();
    let mut labels = vec![0usize; tree.len()];
    let mut stack_mass: Vec<M> = vec![M::zero(); tree.len()];
    fn rec<M: Mass>(
        v: usize,
        k: usize,
        labels: &mut Vec<usize>,
        stack_mass: &mut Vec<M>,
        root: &[M],
        cond: &[Vec<M>],
        parents: &[usize],
        pos: &[usize],
        out: &mut BTreeMap<Vec<usize>, M>,
    ) {
        if v == labels.len() {
            let key: Vec<usize> = pos.iter().map(|&p| labels[p]).collect();
            let m = stack_mass[v - 1].clone();
            let slot = out.entry(key).or_insert_with(M::zero);
            *slot = slot.clone() + m;
            return;
        }
        for c in 0..k {
            let m = if v == 0 {
                root[c].clone()
            } else {
                let p = labels[parents[v]];
                stack_mass[v - 1].clone() * cond[v][p * k + c].clone()
            };
            if m.is_zero() {
                continue;
            }
            labels[v] = c;
            stack_mass[v] = m;
            rec(v + 1, k, labels, stack_mass, root, cond, parents, pos, out);
        }
    }
    rec(0, k, &mut labels, &mut stack_mass, &root, &cond, &parents, &pos, &mut out);
    out.retain(|_, m| !m.is_zero());
    Ok(out)
}

/// Anything whose pattern distributions over word sets can be evaluated: a
/// [`System`] or an automorphism-twisted view of one.
pub trait PatternSource {
    fn spec(&self) -> &GroupSpec;
    fn alphabet_size(&self) -> usize;
    fn joint_exact(&self, words: &[Word], cap: u64) -> Result<PatternDistribution<BigRational>>;
    fn joint(&self, words: &[Word], cap: u64) -> Result<PatternDistribution<f64>>;

    /// Entropy of the joint over `words`, by a closed form when one applies
    /// and by enumeration otherwise.
    fn entropy_over(&self, words: &[Word], cap: u64) -> Result<f64>;

    /// `true` when [`PatternSource::entropy_over`] uses a closed form for
    /// `words` rather than enumerating the joint.
    fn has_closed_form(&self, words: &[Word]) -> bool;

    /// Entropy of the enumerated joint over `words`.
    fn entropy_enumerated(&self, words: &[Word], cap: u64) -> Result<f64> {
        Ok(self.joint(words, cap)?.entropy())
    }
}

impl PatternSource for System {
    fn spec(&self) -> &GroupSpec {
        &self.spec
    }

    fn alphabet_size(&self) -> usize {
        System::alphabet_size(self)
    }

    fn joint_exact(&self, words: &[Word], cap: u64) -> Result<PatternDistribution<BigRational>> {
        self.joint_distribution_exact(words, cap)
    }

    fn joint(&self, words: &[Word], cap: u64) -> Result<PatternDistribution<f64>> {
        self.joint_distribution(words, cap)
    }

    fn entropy_over(&self, words: &[Word], cap: u64) -> Result<f64> {
        check_word_list(&self.spec, words)?;
        match &self.model {
            Model::Bernoulli { kappa } => Ok(words.len() as f64 * shannon(kappa.iter().map(to_f64))),
            Model::Markov { weight } if self.has_closed_form(words) => {
                let set: BTreeSet<Word> = words.iter().cloned().collect();
                Ok(markov_subtree_entropy(weight, &hull(&set)))
            }
            Model::Product(a, b) => Ok(a.entropy_over(words, cap)? + b.entropy_over(words, cap)?),
            _ => self.entropy_enumerated(words, cap),
        }
    }

    fn has_closed_form(&self, words: &[Word]) -> bool {
        match &self.model {
            Model::Bernoulli { .. } => true,
            Model::Markov { .. } => {
                let set: BTreeSet<Word> = words.iter().cloned().collect();
                hull(&set).len() == set.len()
            }
            Model::FiniteAction { .. } => false,
            Model::Product(a, b) => a.has_closed_form(words) && b.has_closed_form(words),
        }
    }
}

/// `H = H_vertex + sum_i E_i (H_edge_i - H_vertex)` for a Markov chain over
/// a subtree with `E_i` edges of color `i`.
pub fn markov_subtree_entropy(weight: &Weight, tree: &Subtree) -> f64 {
    let hv = shannon(weight.vertex_masses().iter().copied());
    let counts = tree.color_counts(weight.rank());
    counts
        .iter()
        .enumerate()
        .map(|(c, &e)| e as f64 * (shannon(weight.color_table(c).iter().copied()) - hv))
        .sum::<f64>()
        + hv
}

/// The action `T^omega_g = T_{omega(g)}` evaluated through its base system.
#[derive(Clone, Debug)]
pub struct Transformed<'a, S: PatternSource> {
    base: &'a S,
    omega: Automorphism,
}

/// Twist `base` by an automorphism after checking that the supplied inverse
/// images really invert it on `B(e, 3)`.
pub fn transform_system<S: PatternSource>(base: &S, omega: Automorphism) -> Result<Transformed<'_, S>> {
    omega.validate(base.spec())?;
    Ok(Transformed { base, omega })
}

impl<S: PatternSource> Transformed<'_, S> {
    fn map_words(&self, words: &[Word]) -> Vec<Word> {
        words.iter().map(|w| self.omega.apply(w)).collect()
    }

    fn relabel<M: Mass>(&self, words: &[Word], d: PatternDistribution<M>) -> PatternDistribution<M> {
        PatternDistribution { words: words.to_vec(), alphabet_size: d.alphabet_size, masses: d.masses }
    }
}

impl<S: PatternSource> PatternSource for Transformed<'_, S> {
    fn spec(&self) -> &GroupSpec {
        self.base.spec()
    }

    fn alphabet_size(&self) -> usize {
        self.base.alphabet_size()
    }

    fn joint_exact(&self, words: &[Word], cap: u64) -> Result<PatternDistribution<BigRational>> {
        let d = self.base.joint_exact(&self.map_words(words), cap)?;
        Ok(self.relabel(words, d))
    }

    fn joint(&self, words: &[Word], cap: u64) -> Result<PatternDistribution<f64>> {
        let d = self.base.joint(&self.map_words(words), cap)?;
        Ok(self.relabel(words, d))
    }

    fn entropy_over(&self, words: &[Word], cap: u64) -> Result<f64> {
        self.base.entropy_over(&self.map_words(words), cap)
    }

    fn has_closed_form(&self, words: &[Word]) -> bool {
        self.base.has_closed_form(&self.map_words(words))
    }
}

/// Settings for level computations.
#[derive(Clone, Copy, Debug)]
pub struct LevelOptions {
    /// Maximum number of labelings enumerated for one joint.
    pub cap: u64,
    /// Recompute closed-form entropies by enumeration whenever that fits
    /// under `cap`, and fail if the two disagree by more than `1e-9`.
    pub cross_check: bool,
}

impl Default for LevelOptions {
    fn default() -> Self {
        LevelOptions { cap: DEFAULT_LABELING_CAP, cross_check: true }
    }
}

const CROSS_CHECK_TOL: f64 = 1e-9;

/// `B(e, m)` and, for each generator, `B(e, m) u B(e, m) s_i`.
pub fn level_word_sets(spec: &GroupSpec, m: usize) -> (Vec<Word>, Vec<Vec<Word>>) {
    let b = ball(spec, m);
    let bset: BTreeSet<Word> = b.iter().cloned().collect();
    let joins = (0..spec.rank())
        .map(|i| {
            let shifted = right_translate(&bset, &Word::generator(i));
            let mut out = b.clone();
            out.extend(shifted.into_iter().filter(|w| !bset.contains(w)));
            out
        })
        .collect();
    (b, joins)
}

fn checked_entropy<P: PatternSource + ?Sized>(src: &P, words: &[Word], opts: &LevelOptions) -> Result<f64> {
    let h = src.entropy_over(words, opts.cap)?;
    let enumerable = (src.alphabet_size() as f64).powi(words.len() as i32) <= opts.cap as f64;
    if opts.cross_check && enumerable && src.has_closed_form(words) {
        let h2 = src.entropy_enumerated(words, opts.cap)?;
        if (h - h2).abs() > CROSS_CHECK_TOL {
            return Err(Error::Inconsistent(format!("closed-form entropy {h} disagrees with enumeration {h2}")));
        }
    }
    Ok(h)
}

/// `F(T, phi^{B(e,m)}) = (1-2r) H(B) + sum_i H(B u B s_i)`.
pub fn f_level<P: PatternSource + ?Sized>(src: &P, m: usize, opts: &LevelOptions) -> Result<f64> {
    let r = src.spec().rank() as f64;
    let (b, joins) = level_word_sets(src.spec(), m);
    let mut total = (1.0 - 2.0 * r) * checked_entropy(src, &b, opts)?;
    for j in &joins {
        total += checked_entropy(src, j, opts)?;
    }
    Ok(total)
}

/// `F(T, phi^{B(e,m)})` with every entropy taken from an enumerated joint.
pub fn f_level_enumerated<P: PatternSource + ?Sized>(src: &P, m: usize, cap: u64) -> Result<f64> {
    let r = src.spec().rank() as f64;
    let (b, joins) = level_word_sets(src.spec(), m);
    let mut total = (1.0 - 2.0 * r) * src.entropy_enumerated(&b, cap)?;
    for j in &joins {
        total += src.entropy_enumerated(j, cap)?;
    }
    Ok(total)
}

/// Levels `F(T, phi^{B(e,m)})` for `m = 0..=max_level`. The minimum is an
/// upper bound for `f(T, phi)`, which is the infimum over all levels.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FEstimate {
    pub levels: Vec<f64>,
    pub min: f64,
    pub argmin: usize,
}

pub fn f_estimate<P: PatternSource + ?Sized>(src: &P, max_level: usize, opts: &LevelOptions) -> Result<FEstimate> {
    let levels: Vec<f64> = (0..=max_level).map(|m| f_level(src, m, opts)).collect::<Result<_>>()?;
    let (argmin, &min) = levels
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.partial_cmp(b.1).expect("finite levels"))
        .expect("at least level 0");
    Ok(FEstimate { levels, min, argmin })
}

/// Per-level differences `F(T^omega, m) - F(T, m)`.
pub fn automorphism_deltas<P: PatternSource>(src: &P, omega: Automorphism, max_level: usize, opts: &LevelOptions) -> Result<Vec<(f64, f64)>> {
    let t = transform_system(src, omega)?;
    (0..=max_level).map(|m| Ok((f_level(src, m, opts)?, f_level(&t, m, opts)?))).collect()
}

// ---------------------------------------------------------------------------
// JSON documents

/// Rational mass as `[numerator, denominator]`.
pub type FractionDoc = [i64; 2];

fn frac(doc: &FractionDoc) -> Result<BigRational> {
    if doc[1] <= 0 {
        return Err(Error::InvalidInput("denominators must be positive".into()));
    }
    Ok(BigRational::new(BigInt::from(doc[0]), BigInt::from(doc[1])))
}

fn unfrac(x: &BigRational) -> Result<FractionDoc> {
    use num_traits::ToPrimitive;
    match (x.numer().to_i64(), x.denom().to_i64()) {
        (Some(p), Some(q)) => Ok([p, q]),
        _ => Err(Error::InvalidInput("fraction too large for JSON".into())),
    }
}

/// On-disk description of a [`System`], discriminated by `"variant"`.
/// Permutations use one-line notation on `1..=N`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case", deny_unknown_fields)]
pub enum SystemDoc {
    Bernoulli {
        rank: usize,
        #[serde(default)]
        kind: GroupKind,
        kappa: Vec<FractionDoc>,
    },
    Markov {
        #[serde(default)]
        kind: GroupKind,
        weight: WeightDoc,
    },
    FiniteAction {
        rank: usize,
        #[serde(default)]
        kind: GroupKind,
        perms: Vec<Vec<usize>>,
        labels: Vec<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        alphabet_size: Option<usize>,
    },
    Product {
        left: Box<SystemDoc>,
        right: Box<SystemDoc>,
    },
}

impl System {
    pub fn from_doc(doc: &SystemDoc) -> Result<System> {
        match doc {
            SystemDoc::Bernoulli { rank, kind, kappa } => {
                System::bernoulli(GroupSpec::new(*rank, *kind)?, kappa.iter().map(frac).collect::<Result<_>>()?)
            }
            SystemDoc::Markov { kind, weight } => {
                let w = Weight::from_doc(weight)?;
                System::markov(GroupSpec::new(w.rank(), *kind)?, w)
            }
            SystemDoc::FiniteAction { rank, kind, perms, labels, alphabet_size } => {
                let zero_based: Vec<Vec<usize>> = perms
                    .iter()
                    .map(|p| {
                        p.iter()
                            .map(|&x| x.checked_sub(1).ok_or_else(|| Error::InvalidInput("permutation images are 1-based".into())))
                            .collect()
                    })
                    .collect::<Result<_>>()?;
                let k = alphabet_size.unwrap_or_else(|| labels.iter().max().map_or(1, |m| m + 1));
                System::finite_action(GroupSpec::new(*rank, *kind)?, zero_based, labels.clone(), k)
            }
            SystemDoc::Product { left, right } => System::product(System::from_doc(left)?, System::from_doc(right)?),
        }
    }

    pub fn to_doc(&self) -> Result<SystemDoc> {
        let kind = self.spec.kind();
        Ok(match &self.model {
            Model::Bernoulli { kappa } => {
                SystemDoc::Bernoulli { rank: self.spec.rank(), kind, kappa: kappa.iter().map(unfrac).collect::<Result<_>>()? }
            }
            Model::Markov { weight } => SystemDoc::Markov { kind, weight: weight.to_doc()? },
            Model::FiniteAction { perms, labels, alphabet_size, .. } => SystemDoc::FiniteAction {
                rank: self.spec.rank(),
                kind,
                perms: perms.iter().map(|p| p.iter().map(|x| x + 1).collect()).collect(),
                labels: labels.clone(),
                alphabet_size: Some(*alphabet_size),
            },
            Model::Product(a, b) => SystemDoc::Product { left: Box::new(a.to_doc()?), right: Box::new(b.to_doc()?) },
        })
    }

    pub fn from_json(s: &str) -> Result<System> {
        System::from_doc(&serde_json::from_str(s)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_doc()?)?)
    }

    /// Symbol names, for display.
    pub fn alphabet(&self) -> Vec<String> {
        match &self.model {
            Model::Markov { weight } => weight.alphabet().to_vec(),
            _ => self.weight().alphabet().to_vec(),
        }
    }
}
