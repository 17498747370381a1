//! Words, balls and subtrees in the Cayley tree of a free group or free
//! semigroup of finite rank.
//!
//! Generators are numbered `0..rank` internally and printed 1-based
//! (`s1`, `s2`, ...). Inverse letters print as `s1^-1`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Free group or free semigroup.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GroupKind {
    #[default]
    Group,
    Semigroup,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct GroupSpec {
    rank: usize,
    kind: GroupKind,
}

impl GroupSpec {
    pub fn new(rank: usize, kind: GroupKind) -> Result<Self> {
        if rank == 0 {
            return Err(Error::InvalidInput("rank must be at least 1".into()));
        }
        Ok(GroupSpec { rank, kind })
    }

    pub fn group(rank: usize) -> Self {
        Self::new(rank, GroupKind::Group).expect("rank >= 1")
    }

    pub fn semigroup(rank: usize) -> Self {
        Self::new(rank, GroupKind::Semigroup).expect("rank >= 1")
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn kind(&self) -> GroupKind {
        self.kind
    }

    pub fn is_group(&self) -> bool {
        self.kind == GroupKind::Group
    }

    /// Letters available to this spec, in canonical order.
    pub fn letters(&self) -> Vec<Letter> {
        let mut out = Vec::with_capacity(2 * self.rank);
        for g in 0..self.rank {
            out.push(Letter::pos(g));
            if self.is_group() {
                out.push(Letter::neg(g));
            }
        }
        out
    }

    fn check_letter(&self, l: Letter) -> Result<()> {
        if l.generator >= self.rank {
            return Err(Error::InvalidInput(format!(
                "generator s{} out of range for rank {}",
                l.generator + 1,
                self.rank
            )));
        }
        if l.inverse && !self.is_group() {
            return Err(Error::InvalidInput(format!(
                "inverse letter {l} is not allowed in a free semigroup"
            )));
        }
        Ok(())
    }
}

/// A generator or its inverse. Ordered by (generator, sign) with the positive
/// letter first.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Letter {
    pub generator: usize,
    pub inverse: bool,
}

impl Letter {
    pub fn pos(generator: usize) -> Self {
        Letter { generator, inverse: false }
    }

    pub fn neg(generator: usize) -> Self {
        Letter { generator, inverse: true }
    }

    pub fn inv(self) -> Self {
        Letter { generator: self.generator, inverse: !self.inverse }
    }

    fn cancels(self, other: Letter) -> bool {
        self.generator == other.generator && self.inverse != other.inverse
    }
}

impl fmt::Display for Letter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.inverse {
            write!(f, "s{}^-1", self.generator + 1)
        } else {
            write!(f, "s{}", self.generator + 1)
        }
    }
}

/// A reduced word. Ordered by length, then letter-wise.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Default)]
pub struct Word(Vec<Letter>);

impl Ord for Word {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.len().cmp(&other.0.len()).then_with(|| self.0.cmp(&other.0))
    }
}

impl PartialOrd for Word {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Word {
    pub fn identity() -> Self {
        Word(Vec::new())
    }

    pub fn generator(g: usize) -> Self {
        Word(vec![Letter::pos(g)])
    }

    pub fn letters(&self) -> &[Letter] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    /// True for the identity.
    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_identity(&self) -> bool {
        self.0.is_empty()
    }

    pub fn last(&self) -> Option<Letter> {
        self.0.last().copied()
    }

    /// The word with its last letter removed. `None` for the identity.
    pub fn parent(&self) -> Option<Word> {
        if self.0.is_empty() {
            None
        } else {
            Some(Word(self.0[..self.0.len() - 1].to_vec()))
        }
    }

    /// Product `self * other`, reduced. Both inputs must already be reduced.
    pub fn mul(&self, other: &Word) -> Word {
        let mut out = self.0.clone();
        for &l in &other.0 {
            push_reduced(&mut out, l);
        }
        Word(out)
    }

    /// Group inverse. Only meaningful in the group case.
    pub fn inverse(&self) -> Word {
        Word(self.0.iter().rev().map(|l| l.inv()).collect())
    }
}

fn push_reduced(out: &mut Vec<Letter>, l: Letter) {
    match out.last() {
        Some(&last) if last.cancels(l) => {
            out.pop();
        }
        _ => out.push(l),
    }
}

impl fmt::Display for Word {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return write!(f, "e");
        }
        for l in &self.0 {
            write!(f, "{l}")?;
        }
        Ok(())
    }
}

impl FromStr for Word {
    type Err = Error;

    /// Parses `e`, `s1s2^-1`, `s1 s2^-1` or `s1.s2^{-1}`. The result is
    /// reduced but not checked against any rank.
    fn from_str(s: &str) -> Result<Self> {
        let t: String = s.chars().filter(|c| !c.is_whitespace() && *c != '.' && *c != '*').collect();
        if t.is_empty() || t == "e" || t == "1" {
            return Ok(Word::identity());
        }
        let bytes = t.as_bytes();
        let mut i = 0;
        let mut out = Vec::new();
        let bad = || Error::InvalidInput(format!("cannot parse word {s:?}"));
        while i < bytes.len() {
            if bytes[i] != b's' {
                return Err(bad());
            }
            i += 1;
            let start = i;
            while i < bytes.len() && bytes[i].is_ascii_digit() {
                i += 1;
            }
            let idx: usize = t[start..i].parse().map_err(|_| bad())?;
            if idx == 0 {
                return Err(bad());
            }
            let mut inverse = false;
            for suffix in ["^-1", "^{-1}"] {
                if t[i..].starts_with(suffix) {
                    inverse = true;
                    i += suffix.len();
                    break;
                }
            }
            push_reduced(&mut out, Letter { generator: idx - 1, inverse });
        }
        Ok(Word(out))
    }
}

impl Serialize for Word {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Word {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Reduce a raw letter sequence to its canonical word.
pub fn reduce(letters: &[Letter], spec: &GroupSpec) -> Result<Word> {
    let mut out = Vec::with_capacity(letters.len());
    for &l in letters {
        spec.check_letter(l)?;
        push_reduced(&mut out, l);
    }
    Ok(Word(out))
}

/// Check that a word is a valid element of `spec`.
pub fn check_word(w: &Word, spec: &GroupSpec) -> Result<()> {
    for &l in w.letters() {
        spec.check_letter(l)?;
    }
    Ok(())
}

/// The ball `B(e, m)` in length-then-lexicographic order.
pub fn ball(spec: &GroupSpec, m: usize) -> Vec<Word> {
    let letters = spec.letters();
    let mut out = vec![Word::identity()];
    let mut frontier = vec![Word::identity()];
    for _ in 0..m {
        let mut next = Vec::new();
        for w in &frontier {
            for &l in &letters {
                if w.last().is_some_and(|last| last.cancels(l)) {
                    continue;
                }
                let mut v = w.0.clone();
                v.push(l);
                next.push(Word(v));
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

/// Closed-form size of `B(e, m)`.
pub fn ball_size(spec: &GroupSpec, m: usize) -> u128 {
    let r = spec.rank() as u128;
    let m32 = m as u32;
    match spec.kind() {
        GroupKind::Group if r == 1 => 2 * m as u128 + 1,
        GroupKind::Group => 1 + 2 * r * ((2 * r - 1).pow(m32) - 1) / (2 * r - 2),
        GroupKind::Semigroup if r == 1 => m as u128 + 1,
        GroupKind::Semigroup => (r.pow(m32 + 1) - 1) / (r - 1),
    }
}

/// `{ g * w : g in words }`, reduced.
pub fn right_translate(words: &BTreeSet<Word>, w: &Word) -> BTreeSet<Word> {
    words.iter().map(|g| g.mul(w)).collect()
}

/// A finite prefix-closed set of words together with its tree edges.
///
/// Edges are stored in their positive orientation: `(v, i)` is the edge
/// between `v` and `v * s_i`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Subtree {
    vertices: Vec<Word>,
    edges: Vec<(Word, usize)>,
    links: Vec<Option<TreeLink>>,
}

/// How a non-root vertex hangs from its parent.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TreeLink {
    pub parent: usize,
    pub color: usize,
    /// `true` when `child = parent * s_color`; `false` when
    /// `child = parent * s_color^-1`, so the positive edge points from child
    /// to parent.
    pub forward: bool,
}

impl Subtree {
    /// Vertices in length-then-lexicographic order (parents precede
    /// children).
    pub fn vertices(&self) -> &[Word] {
        &self.vertices
    }

    pub fn edges(&self) -> &[(Word, usize)] {
        &self.edges
    }

    /// Parent link for each vertex, `None` for the root `e`.
    pub fn links(&self) -> &[Option<TreeLink>] {
        &self.links
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn index_of(&self, w: &Word) -> Option<usize> {
        self.vertices.binary_search(w).ok()
    }

    /// Number of edges of each color.
    pub fn color_counts(&self, rank: usize) -> Vec<usize> {
        let mut counts = vec![0; rank];
        for (_, c) in &self.edges {
            counts[*c] += 1;
        }
        counts
    }
}

/// Smallest prefix-closed set containing `words` and `e`.
pub fn hull(words: &BTreeSet<Word>) -> Subtree {
    let mut all: BTreeSet<Word> = BTreeSet::new();
    all.insert(Word::identity());
    for w in words {
        for k in 1..=w.len() {
            all.insert(Word(w.0[..k].to_vec()));
        }
    }
    let vertices: Vec<Word> = all.into_iter().collect();
    let index: BTreeMap<&Word, usize> = vertices.iter().enumerate().map(|(i, w)| (w, i)).collect();
    let mut edges = Vec::with_capacity(vertices.len().saturating_sub(1));
    let mut links = Vec::with_capacity(vertices.len());
    for v in &vertices {
        match v.parent() {
            None => links.push(None),
            Some(p) => {
                let last = v.last().expect("non-identity");
                let parent = index[&p];
                if last.inverse {
                    edges.push((v.clone(), last.generator));
                } else {
                    edges.push((p.clone(), last.generator));
                }
                links.push(Some(TreeLink { parent, color: last.generator, forward: !last.inverse }));
            }
        }
    }
    Subtree { vertices, edges, links }
}

/// Extend generator images homomorphically to `w`.
///
/// In the group case the image of `s_i^-1` is the inverse of `images[i]`.
pub fn apply_endomorphism(w: &Word, images: &[Word]) -> Word {
    let mut out = Word::identity();
    for l in w.letters() {
        let img = &images[l.generator];
        if l.inverse {
            out = out.mul(&img.inverse());
        } else {
            out = out.mul(img);
        }
    }
    out
}

/// An automorphism given by generator images together with the images of
/// its claimed inverse. Validity is only sanity-checked on a ball of radius 3.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Automorphism {
    pub images: Vec<Word>,
    pub inverse_images: Vec<Word>,
}

impl Automorphism {
    pub const CHECK_RADIUS: usize = 3;

    pub fn new(spec: &GroupSpec, images: Vec<Word>, inverse_images: Vec<Word>) -> Result<Self> {
        let a = Automorphism { images, inverse_images };
        a.validate(spec)?;
        Ok(a)
    }

    pub fn identity(spec: &GroupSpec) -> Self {
        let ids: Vec<Word> = (0..spec.rank()).map(Word::generator).collect();
        Automorphism { images: ids.clone(), inverse_images: ids }
    }

    /// Exchange generators `a` and `b`.
    pub fn swap(spec: &GroupSpec, a: usize, b: usize) -> Result<Self> {
        let mut images: Vec<Word> = (0..spec.rank()).map(Word::generator).collect();
        if a >= spec.rank() || b >= spec.rank() {
            return Err(Error::InvalidInput("swap generator out of range".into()));
        }
        images.swap(a, b);
        Self::new(spec, images.clone(), images)
    }

    /// Send generator `g` to its inverse (group case only).
    pub fn invert(spec: &GroupSpec, g: usize) -> Result<Self> {
        let mut images: Vec<Word> = (0..spec.rank()).map(Word::generator).collect();
        if g >= spec.rank() {
            return Err(Error::InvalidInput("inverted generator out of range".into()));
        }
        images[g] = images[g].inverse();
        Self::new(spec, images.clone(), images)
    }

    pub fn apply(&self, w: &Word) -> Word {
        apply_endomorphism(w, &self.images)
    }

    /// Checks ranks, letters, and that both compositions are the identity on
    /// `B(e, 3)`.
    pub fn validate(&self, spec: &GroupSpec) -> Result<()> {
        if self.images.len() != spec.rank() || self.inverse_images.len() != spec.rank() {
            return Err(Error::InvalidInput(format!(
                "automorphism needs {} generator images and {} inverse images",
                spec.rank(),
                spec.rank()
            )));
        }
        for w in self.images.iter().chain(&self.inverse_images) {
            check_word(w, spec)?;
        }
        for w in ball(spec, Self::CHECK_RADIUS) {
            let there = apply_endomorphism(&w, &self.images);
            let back = apply_endomorphism(&there, &self.inverse_images);
            let other = apply_endomorphism(&apply_endomorphism(&w, &self.inverse_images), &self.images);
            if back != w || other != w {
                return Err(Error::NotAutomorphism(w.to_string()));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn w(s: &str) -> Word {
        s.parse().unwrap()
    }

    #[test]
    fn reduce_examples() {
        let g2 = GroupSpec::group(2);
        assert_eq!(reduce(&[], &g2).unwrap(), Word::identity());
        assert_eq!(reduce(&[Letter::pos(0), Letter::neg(0)], &g2).unwrap(), Word::identity());
        let raw = [Letter::pos(0), Letter::pos(1), Letter::neg(1), Letter::pos(0)];
        assert_eq!(reduce(&raw, &g2).unwrap(), w("s1s1"));
    }

    #[test]
    fn reduce_rejects_inverse_in_semigroup() {
        let s = GroupSpec::semigroup(2);
        assert!(reduce(&[Letter::neg(0)], &s).is_err());
        assert!(reduce(&[Letter::pos(2)], &s).is_err());
    }

    #[test]
    fn ball_examples() {
        let g2 = GroupSpec::group(2);
        assert_eq!(ball(&g2, 0), vec![Word::identity()]);
        assert_eq!(ball(&g2, 1).len(), 5);
        assert_eq!(ball(&g2, 2).len(), 17);
        let b1: Vec<String> = ball(&g2, 1).iter().map(|w| w.to_string()).collect();
        assert_eq!(b1, ["e", "s1", "s1^-1", "s2", "s2^-1"]);
    }

    #[test]
    fn ball_sizes_match_closed_form() {
        for r in 1..=3 {
            for kind in [GroupKind::Group, GroupKind::Semigroup] {
                let spec = GroupSpec::new(r, kind).unwrap();
                let mut prev: BTreeSet<Word> = BTreeSet::new();
                for m in 0..=6 {
                    let b = ball(&spec, m);
                    let set: BTreeSet<Word> = b.iter().cloned().collect();
                    assert_eq!(set.len(), b.len(), "duplicates in ball");
                    assert_eq!(b.len() as u128, ball_size(&spec, m), "r={r} {kind:?} m={m}");
                    assert!(prev.is_subset(&set));
                    let mut sorted = b.clone();
                    sorted.sort();
                    assert_eq!(sorted, b, "ball not in canonical order");
                    prev = set;
                }
            }
        }
    }

    #[test]
    fn hull_examples() {
        let one: BTreeSet<Word> = [Word::identity()].into();
        let h = hull(&one);
        assert_eq!(h.len(), 1);
        assert!(h.edges().is_empty());

        let h = hull(&[w("s1s2")].into());
        let v: Vec<String> = h.vertices().iter().map(|x| x.to_string()).collect();
        assert_eq!(v, ["e", "s1", "s1s2"]);
        assert_eq!(h.edges().len(), 2);

        // B(e,1) u B(e,1)s1 in rank 2: e, s1^{+-1}, s2^{+-1}, s1s1, s2s1, s2^-1s1.
        let g2 = GroupSpec::group(2);
        let b: BTreeSet<Word> = ball(&g2, 1).into_iter().collect();
        let mut s = b.clone();
        s.extend(right_translate(&b, &w("s1")));
        let h = hull(&s);
        assert_eq!(h.len(), 8);
        assert_eq!(h.edges().len(), 7);
        assert_eq!(h.len(), s.len());
    }

    #[test]
    fn hull_orients_inverse_edges_positively() {
        let h = hull(&[w("s1^-1")].into());
        assert_eq!(h.edges(), &[(w("s1^-1"), 0)]);
        assert_eq!(h.links()[1], Some(TreeLink { parent: 0, color: 0, forward: false }));
    }

    #[test]
    fn right_translate_examples() {
        let e: BTreeSet<Word> = [Word::identity()].into();
        assert_eq!(right_translate(&e, &w("s1")), [w("s1")].into());

        let g1 = GroupSpec::group(1);
        let b: BTreeSet<Word> = ball(&g1, 1).into_iter().collect();
        let t = right_translate(&b, &w("s1"));
        assert_eq!(t, [Word::identity(), w("s1"), w("s1s1")].into());

        let g2 = GroupSpec::group(2);
        let b: BTreeSet<Word> = ball(&g2, 1).into_iter().collect();
        let t = right_translate(&b, &w("s1"));
        assert_eq!(t.len(), 5);
        assert!(t.contains(&Word::identity()) && t.contains(&w("s1s1")));
    }

    #[test]
    fn endomorphism_examples() {
        let g2 = GroupSpec::group(2);
        let id = Automorphism::identity(&g2);
        for x in ball(&g2, 3) {
            assert_eq!(id.apply(&x), x);
        }
        let swap = Automorphism::swap(&g2, 0, 1).unwrap();
        assert_eq!(swap.apply(&w("s1s2")), w("s2s1"));

        let g1 = GroupSpec::group(1);
        let inv = Automorphism::invert(&g1, 0).unwrap();
        assert_eq!(inv.apply(&w("s1s1")), w("s1^-1s1^-1"));
    }

    #[test]
    fn nielsen_move_round_trips() {
        // s1 -> s1 s2, inverse s1 -> s1 s2^-1.
        let g2 = GroupSpec::group(2);
        let a = Automorphism::new(&g2, vec![w("s1s2"), w("s2")], vec![w("s1s2^-1"), w("s2")]).unwrap();
        for x in ball(&g2, 3) {
            assert_eq!(apply_endomorphism(&a.apply(&x), &a.inverse_images), x);
        }
    }

    #[test]
    fn bad_inverse_is_rejected() {
        let g2 = GroupSpec::group(2);
        let r = Automorphism::new(&g2, vec![w("s1s2"), w("s2")], vec![w("s1"), w("s2")]);
        assert!(matches!(r, Err(Error::NotAutomorphism(_))));
    }

    #[test]
    fn word_parse_display() {
        for s in ["e", "s1", "s1^-1", "s2s1^-1s3"] {
            assert_eq!(w(s).to_string(), s);
        }
        assert_eq!(w("s1 s1^{-1}"), Word::identity());
        assert!("x1".parse::<Word>().is_err());
        assert!("s0".parse::<Word>().is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn raw_letters() -> impl Strategy<Value = Vec<Letter>> {
            prop::collection::vec((0usize..3, any::<bool>()), 0..12)
                .prop_map(|v| v.into_iter().map(|(g, inverse)| Letter { generator: g, inverse }).collect())
        }

        proptest! {
            #[test]
            fn reduce_idempotent_and_shortening(raw in raw_letters()) {
                let spec = GroupSpec::group(3);
                let once = reduce(&raw, &spec).unwrap();
                prop_assert!(once.len() <= raw.len());
                let twice = reduce(once.letters(), &spec).unwrap();
                prop_assert_eq!(once, twice);
            }

            #[test]
            fn hull_is_a_tree(raws in prop::collection::vec(raw_letters(), 1..6)) {
                let spec = GroupSpec::group(3);
                let set: BTreeSet<Word> = raws.iter().map(|r| reduce(r, &spec).unwrap()).collect();
                let h = hull(&set);
                prop_assert_eq!(h.edges().len() + 1, h.len());
                for v in h.vertices() {
                    let mut p = v.clone();
                    while let Some(q) = p.parent() {
                        prop_assert!(h.index_of(&q).is_some());
                        p = q;
                    }
                }
                for s in &set {
                    prop_assert!(h.index_of(s).is_some());
                }
            }
        }
    }
}
