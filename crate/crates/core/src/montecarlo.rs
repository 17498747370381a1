//! Seeded Monte Carlo over uniformly random homomorphisms `G -> Sym(n)`.
//!
//! Draw `d` of a run with seed `s` uses the ChaCha8 stream `d` of the key
//! derived from `s`, so every draw is reproducible on its own and results do
//! not depend on how draws are scheduled across threads.

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{Signed, ToPrimitive, Zero};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::counting::{pair_counts, HomRep, MicroObservable, ScaledTarget};
use crate::error::{Error, Result};
use crate::exact::{parse_rational, to_f64};
use crate::freegrp::{ball, reduce, Word};
use crate::systems::{f_level, LevelOptions, PatternDistribution, System, DEFAULT_LABELING_CAP};

/// Default cap on `|A|^n`, the number of labelings scanned per draw.
pub const DEFAULT_PSI_BUDGET: u64 = 1 << 20;

/// Which distance an ε-count thresholds: `d_*` on weights, or the pattern
/// distance `d_K` over a finite word set.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Region {
    Star,
    Words(Vec<Word>),
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Region::Star => write!(f, "star"),
            Region::Words(ws) => {
                let parts: Vec<String> = ws.iter().map(|w| w.to_string()).collect();
                write!(f, "{}", parts.join(","))
            }
        }
    }
}

impl Serialize for Region {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Region::Star => s.serialize_str("star"),
            Region::Words(ws) => ws.serialize(s),
        }
    }
}

impl<'de> Deserialize<'de> for Region {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Marker(String),
            Words(Vec<Word>),
        }
        match Raw::deserialize(d)? {
            Raw::Marker(m) if m == "star" => Ok(Region::Star),
            Raw::Marker(m) => Err(serde::de::Error::custom(format!("unknown region marker {m:?}, expected \"star\" or a word list"))),
            Raw::Words(ws) => Ok(Region::Words(ws)),
        }
    }
}

mod ratio_str {
    use super::*;

    pub fn serialize<S: Serializer>(x: &BigRational, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&format!("{}/{}", x.numer(), x.denom()))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<BigRational, D::Error> {
        let s = String::deserialize(d)?;
        parse_rational(&s).map_err(serde::de::Error::custom)
    }
}

fn default_psi_budget() -> u64 {
    DEFAULT_PSI_BUDGET
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub samples: usize,
    pub n: usize,
    #[serde(with = "ratio_str")]
    pub epsilon: BigRational,
    pub region: Region,
    #[serde(default = "default_psi_budget")]
    pub psi_budget: u64,
}

impl RunConfig {
    pub fn new(seed: u64, samples: usize, n: usize, epsilon: BigRational, region: Region) -> Self {
        RunConfig { seed, samples, n, epsilon, region, psi_budget: DEFAULT_PSI_BUDGET }
    }

    fn check(&self) -> Result<()> {
        if self.samples == 0 {
            return Err(Error::InvalidInput("samples must be at least 1".into()));
        }
        if self.n == 0 {
            return Err(Error::InvalidInput("n must be at least 1".into()));
        }
        Ok(())
    }
}

/// The generator for draw `draw` of a run seeded with `seed`.
pub fn draw_rng(seed: u64, draw: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(draw);
    rng
}

/// `r` independent uniform permutations of `{0..n}`.
pub fn uniform_homomorphism<R: Rng + ?Sized>(n: usize, rank: usize, rng: &mut R) -> HomRep {
    let perms = (0..rank)
        .map(|_| {
            let mut p: Vec<usize> = (0..n).collect();
            p.shuffle(rng);
            p
        })
        .collect();
    HomRep::new(perms).expect("shuffles are permutations")
}

/// The homomorphism of draw `draw` for a seed.
pub fn sample_homomorphism(seed: u64, draw: u64, n: usize, rank: usize) -> HomRep {
    uniform_homomorphism(n, rank, &mut draw_rng(seed, draw))
}

/// Sample mean and standard error of the mean.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Estimate {
    pub samples: usize,
    pub mean: f64,
    pub stderr: f64,
}

impl Estimate {
    pub fn from_values(values: &[f64]) -> Self {
        let m = values.len();
        let mean = values.iter().sum::<f64>() / m as f64;
        let stderr = if m < 2 {
            0.0
        } else {
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1) as f64;
            (var / m as f64).sqrt()
        };
        Estimate { samples: m, mean, stderr }
    }

    /// Whether `value` lies within `z` standard errors of the mean. With
    /// zero standard error this is exact equality up to rounding.
    pub fn covers(&self, value: f64, z: f64) -> bool {
        (self.mean - value).abs() <= z * self.stderr + 1e-9 * value.abs().max(1.0)
    }
}

/// Empirical `K`-pattern counts of `psi` under `sigma`: the number of points
/// `j` whose labels along `K` (walked from `j`) form each labeling.
pub fn empirical_patterns(sigma: &HomRep, psi: &MicroObservable, words: &[Word]) -> HashMap<Vec<usize>, usize> {
    let mut out = HashMap::new();
    for j in 0..sigma.n() {
        let key: Vec<usize> = words.iter().map(|w| psi.labels()[sigma.walk(w, j)]).collect();
        *out.entry(key).or_insert(0) += 1;
    }
    out
}

/// `d_K` computed exactly against a precomputed joint law over `K`.
pub fn d_k_exact_against(joint: &PatternDistribution<BigRational>, sigma: &HomRep, psi: &MicroObservable) -> BigRational {
    let n = BigRational::from_integer(BigInt::from(sigma.n()));
    let emp = empirical_patterns(sigma, psi, joint.words());
    let mut total = BigRational::zero();
    for (lab, m) in joint.masses() {
        let c = emp.get(lab).copied().unwrap_or(0);
        total += (m - BigRational::from_integer(BigInt::from(c)) / &n).abs();
    }
    for (lab, &c) in &emp {
        if !joint.masses().contains_key(lab) {
            total += BigRational::from_integer(BigInt::from(c)) / &n;
        }
    }
    total
}

/// `d_K(phi, psi)` under `sigma`, exactly.
pub fn d_k_exact(sys: &System, sigma: &HomRep, psi: &MicroObservable, words: &[Word]) -> Result<BigRational> {
    check_pair(sys, sigma, psi)?;
    let joint = sys.joint_distribution_exact(words, DEFAULT_LABELING_CAP)?;
    Ok(d_k_exact_against(&joint, sigma, psi))
}

/// `d_K(phi, psi)` under `sigma` in binary64.
pub fn d_k(sys: &System, sigma: &HomRep, psi: &MicroObservable, words: &[Word]) -> Result<f64> {
    d_k_exact(sys, sigma, psi, words).map(|d| to_f64(&d))
}

fn check_pair(sys: &System, sigma: &HomRep, psi: &MicroObservable) -> Result<()> {
    if sigma.rank() != sys.spec().rank() {
        return Err(Error::ShapeMismatch(format!("sigma has {} generators, the system {}", sigma.rank(), sys.spec().rank())));
    }
    if sigma.n() != psi.n() {
        return Err(Error::ShapeMismatch(format!("sigma acts on {} points, psi labels {}", sigma.n(), psi.n())));
    }
    if psi.alphabet_size() != sys.alphabet_size() {
        return Err(Error::ShapeMismatch(format!("psi uses {} symbols, the system {}", psi.alphabet_size(), sys.alphabet_size())));
    }
    Ok(())
}

/// A pattern law scaled to integers with the threshold: labeling masses
/// `L m`, one point worth `L/n`, threshold `L eps`.
struct ScaledPatterns {
    words: Vec<Word>,
    masses: HashMap<Vec<usize>, i128>,
    total: i128,
    unit: i128,
    eps: i128,
}

impl ScaledPatterns {
    fn new(joint: &PatternDistribution<BigRational>, n: usize, eps: &BigRational) -> Result<Self> {
        let eps = if eps.is_negative() { BigRational::zero() } else { eps.clone() };
        let mut l = BigInt::from(n).lcm(eps.denom());
        for m in joint.masses().values() {
            l = l.lcm(m.denom());
        }
        let big = || Error::InvalidInput("common denominator of pattern law and epsilon is too large".into());
        let scale = |x: &BigRational| -> Result<i128> {
            (x * BigRational::from_integer(l.clone())).to_integer().to_i128().filter(|v| v.abs() < (1i128 << 100)).ok_or_else(big)
        };
        Ok(ScaledPatterns {
            words: joint.words().to_vec(),
            masses: joint.masses().iter().map(|(k, m)| Ok((k.clone(), scale(m)?))).collect::<Result<_>>()?,
            total: l.to_i128().filter(|v| *v < (1i128 << 100)).ok_or_else(big)?,
            unit: (&l / BigInt::from(n)).to_i128().ok_or_else(big)?,
            eps: scale(&eps)?,
        })
    }

    /// `L d_K`, using `sum_lab |m - c u| = L + sum_{c > 0} (|m - c u| - m)`.
    fn distance(&self, emp: &HashMap<Vec<usize>, usize>) -> i128 {
        let mut d = self.total;
        for (lab, &c) in emp {
            let m = self.masses.get(lab).copied().unwrap_or(0);
            d += (m - c as i128 * self.unit).abs() - m;
        }
        d
    }
}

enum Scorer {
    Star(ScaledTarget),
    Words(ScaledPatterns),
}

impl Scorer {
    fn new(sys: &System, n: usize, eps: &BigRational, region: &Region) -> Result<Self> {
        match region {
            Region::Star => Ok(Scorer::Star(ScaledTarget::new(&sys.weight(), n, eps)?)),
            Region::Words(ws) => {
                for w in ws {
                    crate::freegrp::check_word(w, sys.spec())?;
                }
                let joint = sys.joint_distribution_exact(ws, DEFAULT_LABELING_CAP)?;
                Ok(Scorer::Words(ScaledPatterns::new(&joint, n, eps)?))
            }
        }
    }

    fn within(&self, sigma: &HomRep, psi: &MicroObservable) -> bool {
        match self {
            Scorer::Star(t) => t.edge_distance(&pair_counts(sigma, psi).1) <= t.eps,
            Scorer::Words(p) => p.distance(&empirical_patterns(sigma, psi, &p.words)) <= p.eps,
        }
    }
}

fn psi_space(k: usize, n: usize, budget: u64) -> Result<u64> {
    let size = (k as u64).checked_pow(n as u32).filter(|&s| s <= budget);
    size.ok_or_else(|| Error::Budget { what: "labeling enumeration", needed: format!("{k}^{n}"), budget })
}

/// `#{psi : distance <= eps}` for one `sigma`, scanning all of `A^n`.
fn count_within(scorer: &Scorer, sigma: &HomRep, k: usize) -> u64 {
    let n = sigma.n();
    let mut labels = vec![0usize; n];
    let mut count = 0u64;
    loop {
        let psi = MicroObservable::new(labels.clone(), k).expect("labels below k");
        if scorer.within(sigma, &psi) {
            count += 1;
        }
        let mut i = 0;
        loop {
            if i == n {
                return count;
            }
            labels[i] += 1;
            if labels[i] < k {
                break;
            }
            labels[i] = 0;
            i += 1;
        }
    }
}

/// The per-draw ε-counts of a run, in draw order.
pub fn eps_counts(sys: &System, cfg: &RunConfig) -> Result<Vec<u64>> {
    cfg.check()?;
    let k = sys.alphabet_size();
    psi_space(k, cfg.n, cfg.psi_budget)?;
    let scorer = Scorer::new(sys, cfg.n, &cfg.epsilon, &cfg.region)?;
    let rank = sys.spec().rank();
    Ok((0..cfg.samples as u64)
        .into_par_iter()
        .map(|d| count_within(&scorer, &sample_homomorphism(cfg.seed, d, cfg.n, rank), k))
        .collect())
}

/// Sample mean and standard error of `#{psi : distance <= eps}` over
/// `cfg.samples` random homomorphisms.
pub fn empirical_eps_count(sys: &System, cfg: &RunConfig) -> Result<Estimate> {
    let counts: Vec<f64> = eps_counts(sys, cfg)?.into_iter().map(|c| c as f64).collect();
    Ok(Estimate::from_values(&counts))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HRatePoint {
    pub n: usize,
    pub samples: usize,
    pub mean: f64,
    pub stderr: f64,
    /// `(1/n) log mean`; `-inf` when no draw found a labeling.
    pub rate: f64,
}

/// An empirical slice `h(Sigma, T, phi; K)` at fixed ε, never the infimum
/// itself.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HRateCurve {
    pub region: Region,
    #[serde(with = "ratio_str")]
    pub epsilon: BigRational,
    pub seed: u64,
    /// `F(T, phi)`, from the system's weight.
    pub f_target: f64,
    /// `(m, F(T, phi^{B(e,m)}))` when `K = B(e,m)`.
    pub f_level: Option<(usize, f64)>,
    pub points: Vec<HRatePoint>,
}

/// The `m` with `K = B(e,m)` as sets, if any.
fn ball_radius(sys: &System, words: &[Word]) -> Option<usize> {
    let set: BTreeSet<&Word> = words.iter().collect();
    let m = words.iter().map(|w| w.len()).max()?;
    let b = ball(sys.spec(), m);
    (b.len() == set.len() && b.iter().all(|w| set.contains(w))).then_some(m)
}

/// Empirical rates over `ns`, each point using `cfg` with its `n` replaced.
pub fn estimate_h_rate(sys: &System, ns: &[usize], cfg: &RunConfig) -> Result<HRateCurve> {
    let points = ns
        .iter()
        .map(|&n| {
            let est = empirical_eps_count(sys, &RunConfig { n, ..cfg.clone() })?;
            Ok(HRatePoint { n, samples: est.samples, mean: est.mean, stderr: est.stderr, rate: est.mean.ln() / n as f64 })
        })
        .collect::<Result<_>>()?;
    let f_level = match &cfg.region {
        Region::Words(ws) => match ball_radius(sys, ws) {
            Some(m) => Some((m, f_level(sys, m, &LevelOptions::default())?)),
            None => None,
        },
        Region::Star => None,
    };
    Ok(HRateCurve { region: cfg.region.clone(), epsilon: cfg.epsilon.clone(), seed: cfg.seed, f_target: sys.weight().f_value(), f_level, points })
}

/// Mean over draws of `|{j : sigma(g1) j = sigma(g2) j}| / n`.
pub fn freeness_fraction(n: usize, rank: usize, g1: &Word, g2: &Word, seed: u64, samples: usize) -> Result<Estimate> {
    if n == 0 || samples == 0 {
        return Err(Error::InvalidInput("n and samples must be at least 1".into()));
    }
    if let Some(l) = g1.letters().iter().chain(g2.letters()).find(|l| l.generator >= rank) {
        return Err(Error::InvalidInput(format!("generator s{} outside rank {rank}", l.generator + 1)));
    }
    let spec = crate::freegrp::GroupSpec::group(rank);
    if reduce(g1.letters(), &spec)? == reduce(g2.letters(), &spec)? {
        return Err(Error::InvalidInput(format!("{g1} and {g2} are the same group element")));
    }
    let fractions: Vec<f64> = (0..samples as u64)
        .into_par_iter()
        .map(|d| {
            let sigma = sample_homomorphism(seed, d, n, rank);
            let (p1, p2) = (sigma.word_perm(g1), sigma.word_perm(g2));
            p1.iter().zip(&p2).filter(|(a, b)| a == b).count() as f64 / n as f64
        })
        .collect();
    Ok(Estimate::from_values(&fractions))
}
