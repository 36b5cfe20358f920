//! Reduced words in the free group `F_n`, metric balls of the weighted Cayley
//! tree, horofunction eigenfunctions and the weighted Laplacian on finite balls.
//!
//! Word syntax: lowercase `a, b, c, …` are the generators `a_1, a_2, a_3, …`
//! and uppercase letters their inverses, so `"abAB"` is `a b a⁻¹ b⁻¹`. A letter
//! may also be followed by `⁻¹` or `^-1`; whitespace is ignored and `1`
//! denotes the identity.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};
use std::fmt;

use crate::error::{Error, Result};
use crate::params::{EdgeLengths, UVector, Weights};

/// Default cap on the number of vertices a ball enumeration may produce.
pub const DEFAULT_BALL_CAP: usize = 10_000_000;

/// A generator or inverse generator, stored as `±(index + 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Letter(i16);

impl Letter {
    pub fn new(generator: usize, inverse: bool) -> Self {
        let g = generator as i16 + 1;
        Letter(if inverse { -g } else { g })
    }

    /// Zero-based generator index.
    pub fn generator(self) -> usize {
        (self.0.unsigned_abs() - 1) as usize
    }

    pub fn is_inverse(self) -> bool {
        self.0 < 0
    }

    pub fn inverse(self) -> Self {
        Letter(-self.0)
    }

    /// Half-edge slot: `2g` for `a_g`, `2g + 1` for `a_g^{-1}`.
    pub fn slot(self) -> usize {
        2 * self.generator() + self.is_inverse() as usize
    }

    pub fn from_slot(slot: usize) -> Self {
        Letter::new(slot / 2, slot % 2 == 1)
    }

    /// All `2n` letters in canonical order `a_1, a_1⁻¹, a_2, a_2⁻¹, …`.
    pub fn all(rank: usize) -> impl Iterator<Item = Letter> {
        (0..2 * rank).map(Letter::from_slot)
    }

    pub fn from_char(c: char, rank: usize) -> Result<Self> {
        let unknown = Error::UnknownLetter { letter: c, rank };
        if !c.is_ascii_alphabetic() {
            return Err(unknown);
        }
        let g = (c.to_ascii_lowercase() as u8 - b'a') as usize;
        if g >= rank {
            return Err(unknown);
        }
        Ok(Letter::new(g, c.is_ascii_uppercase()))
    }

    pub fn to_char(self) -> char {
        let c = (b'a' + self.generator() as u8) as char;
        if self.is_inverse() {
            c.to_ascii_uppercase()
        } else {
            c
        }
    }
}

impl Ord for Letter {
    fn cmp(&self, other: &Self) -> Ordering {
        self.slot().cmp(&other.slot())
    }
}

impl PartialOrd for Letter {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Parses a letter sequence without reducing it.
pub fn parse_letters(rank: usize, text: &str) -> Result<Vec<Letter>> {
    let mut letters: Vec<Letter> = Vec::new();
    let mut chars = text.chars().peekable();
    while let Some(c) = chars.next() {
        match c {
            // `1` is the identity, as printed by `Display`.
            c if c.is_whitespace() || c == '1' => {}
            '⁻' => {
                if chars.next() != Some('¹') {
                    return Err(Error::UnknownLetter { letter: c, rank });
                }
                invert_last(&mut letters, c, rank)?;
            }
            '^' => {
                if chars.next() != Some('-') || chars.next() != Some('1') {
                    return Err(Error::UnknownLetter { letter: c, rank });
                }
                invert_last(&mut letters, c, rank)?;
            }
            c => letters.push(Letter::from_char(c, rank)?),
        }
    }
    Ok(letters)
}

fn invert_last(letters: &mut [Letter], c: char, rank: usize) -> Result<()> {
    match letters.last_mut() {
        Some(last) => {
            *last = last.inverse();
            Ok(())
        }
        None => Err(Error::UnknownLetter { letter: c, rank }),
    }
}

/// A freely reduced word: no letter is followed by its inverse.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct ReducedWord(Vec<Letter>);

impl ReducedWord {
    pub fn identity() -> Self {
        ReducedWord(Vec::new())
    }

    /// Parses and freely reduces.
    pub fn parse(rank: usize, text: &str) -> Result<Self> {
        Ok(reduce(parse_letters(rank, text)?))
    }

    pub fn letters(&self) -> &[Letter] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn last(&self) -> Option<Letter> {
        self.0.last().copied()
    }

    /// Right multiplication by one letter, with cancellation.
    pub fn push(&mut self, letter: Letter) {
        if self.0.last() == Some(&letter.inverse()) {
            self.0.pop();
        } else {
            self.0.push(letter);
        }
    }

    pub fn times(&self, letter: Letter) -> Self {
        let mut w = self.clone();
        w.push(letter);
        w
    }

    pub fn mul(&self, other: &ReducedWord) -> Self {
        let mut w = self.clone();
        for &l in &other.0 {
            w.push(l);
        }
        w
    }

    pub fn inverse(&self) -> Self {
        ReducedWord(self.0.iter().rev().map(|l| l.inverse()).collect())
    }

    /// `w g w⁻¹`.
    pub fn conjugate(&self, g: &ReducedWord) -> Self {
        self.mul(g).mul(&self.inverse())
    }

    /// `d_r(id, w)`: sum of `-log r_i` over the letters.
    pub fn metric_length(&self, lengths: &EdgeLengths) -> f64 {
        self.0.iter().map(|l| lengths.edge_length(l.generator())).sum()
    }

    /// Largest generator index used, plus one.
    pub fn min_rank(&self) -> usize {
        self.0.iter().map(|l| l.generator() + 1).max().unwrap_or(0)
    }
}

impl fmt::Display for ReducedWord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return f.write_str("1");
        }
        self.0.iter().try_for_each(|l| write!(f, "{}", l.to_char()))
    }
}

/// Free reduction of an arbitrary letter sequence.
pub fn reduce(letters: impl IntoIterator<Item = Letter>) -> ReducedWord {
    let mut w = ReducedWord::identity();
    for l in letters {
        w.push(l);
    }
    w
}

/// Every reduced word of length at most `max_len`, in shortlex order.
pub fn words_up_to(rank: usize, max_len: usize, cap: usize) -> Result<Vec<ReducedWord>> {
    let mut out = vec![ReducedWord::identity()];
    let mut frontier = vec![ReducedWord::identity()];
    for _ in 0..max_len {
        let mut next = Vec::new();
        for w in &frontier {
            for l in Letter::all(rank) {
                if w.last() == Some(l.inverse()) {
                    continue;
                }
                next.push(w.times(l));
            }
        }
        if out.len() + next.len() > cap {
            return Err(Error::ResourceCap {
                what: "word enumeration",
                cap,
            });
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    Ok(out)
}

fn within(d: f64, radius: f64) -> bool {
    d <= radius + 1e-12 * radius.max(1.0)
}

/// All `(w, d_r(id, w))` with `d_r(id, w) ≤ radius`, depth first in canonical
/// letter order. Distances within a relative `1e-12` of the radius count as inside.
pub fn ball(lengths: &EdgeLengths, radius: f64, cap: usize) -> Result<Vec<(ReducedWord, f64)>> {
    if !(radius >= 0.0) {
        return Err(Error::InvalidParameter(format!("radius must be ≥ 0, got {radius}")));
    }
    let rank = lengths.rank();
    let mut out = Vec::new();
    let mut stack = vec![(ReducedWord::identity(), 0.0)];
    while let Some((w, d)) = stack.pop() {
        if out.len() >= cap {
            return Err(Error::ResourceCap { what: "ball", cap });
        }
        // Reverse so the smallest letter is expanded first.
        for l in Letter::all(rank).collect::<Vec<_>>().into_iter().rev() {
            if w.last() == Some(l.inverse()) {
                continue;
            }
            let dn = d + lengths.edge_length(l.generator());
            if within(dn, radius) {
                stack.push((w.times(l), dn));
            }
        }
        out.push((w, d));
    }
    Ok(out)
}

/// Size of [`ball`] without listing it: reduced words are counted by their
/// last letter and their letter-count vector, which fixes the length.
pub fn ball_count(lengths: &EdgeLengths, radius: f64) -> Result<u128> {
    let rank = lengths.rank();
    let ell: Vec<f64> = (0..rank).map(|i| lengths.edge_length(i)).collect();
    let dist = |counts: &[u32]| counts.iter().zip(&ell).map(|(c, l)| *c as f64 * l).sum::<f64>();

    let mut total: u128 = 1;
    let mut layer: HashMap<(usize, Vec<u32>), u128> = HashMap::new();
    for l in Letter::all(rank) {
        let mut counts = vec![0u32; rank];
        counts[l.generator()] += 1;
        if within(dist(&counts), radius) {
            layer.insert((l.slot(), counts), 1);
        }
    }
    while !layer.is_empty() {
        let mut next: HashMap<(usize, Vec<u32>), u128> = HashMap::new();
        for ((slot, counts), n) in &layer {
            total = total.checked_add(*n).ok_or(Error::ResourceCap {
                what: "ball count",
                cap: usize::MAX,
            })?;
            let last = Letter::from_slot(*slot);
            for l in Letter::all(rank) {
                if l == last.inverse() {
                    continue;
                }
                let mut c = counts.clone();
                c[l.generator()] += 1;
                if within(dist(&c), radius) {
                    *next.entry((l.slot(), c)).or_insert(0) += n;
                }
            }
        }
        layer = next;
    }
    Ok(total)
}

/// An infinite reduced word `prefix · period^∞`, i.e. a point of the tree boundary.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BoundaryRay {
    prefix: Vec<Letter>,
    period: Vec<Letter>,
}

impl BoundaryRay {
    pub fn new(prefix: Vec<Letter>, period: Vec<Letter>) -> Result<Self> {
        if period.is_empty() {
            return Err(Error::InvalidParameter("boundary ray needs a nonempty period".into()));
        }
        let mut seq: Vec<Letter> = prefix.clone();
        seq.extend(&period);
        seq.push(period[0]);
        if seq.windows(2).any(|w| w[1] == w[0].inverse()) {
            return Err(Error::InvalidParameter(
                "boundary ray must describe a reduced infinite word".into(),
            ));
        }
        Ok(BoundaryRay { prefix, period })
    }

    pub fn parse(rank: usize, prefix: &str, period: &str) -> Result<Self> {
        Self::new(parse_letters(rank, prefix)?, parse_letters(rank, period)?)
    }

    /// The `k`-th letter (zero based) of the infinite word.
    pub fn letter(&self, k: usize) -> Letter {
        if k < self.prefix.len() {
            self.prefix[k]
        } else {
            self.period[(k - self.prefix.len()) % self.period.len()]
        }
    }
}

/// The eigenfunction `h = j(·, ξ)^s` written multiplicatively: `h(id) = 1`, each
/// step toward `ξ` along an `a_i^{±1}` edge multiplies by `u_i^{-1} = r_i^{-s}`,
/// each step away multiplies by `u_i`.
#[derive(Debug, Clone)]
pub struct Horofunction {
    ray: BoundaryRay,
    u: UVector,
}

impl Horofunction {
    pub fn new(ray: BoundaryRay, u: UVector) -> Self {
        Horofunction { ray, u }
    }

    pub fn u(&self) -> &UVector {
        &self.u
    }

    pub fn value(&self, x: &ReducedWord) -> f64 {
        let u = self.u.values();
        let shared = x
            .letters()
            .iter()
            .enumerate()
            .take_while(|(k, l)| self.ray.letter(*k) == **l)
            .count();
        let toward: f64 = x.letters()[..shared].iter().map(|l| 1.0 / u[l.generator()]).product();
        let away: f64 = x.letters()[shared..].iter().map(|l| u[l.generator()]).product();
        toward * away
    }

    pub fn on_words<'a>(&self, words: impl IntoIterator<Item = &'a ReducedWord>) -> HashMap<ReducedWord, f64> {
        words.into_iter().map(|w| (w.clone(), self.value(w))).collect()
    }
}

/// `(Δ_p f)(x) = f(x) − Σ_i p_i (f(x a_i) + f(x a_i⁻¹))`.
pub fn laplacian_at(weights: &Weights, f: &HashMap<ReducedWord, f64>, x: &ReducedWord) -> Result<f64> {
    let fx = *f.get(x).ok_or_else(|| Error::MissingNeighbor { word: x.to_string() })?;
    let mut avg = 0.0;
    for l in Letter::all(weights.rank()) {
        let y = x.times(l);
        let fy = f.get(&y).ok_or_else(|| Error::MissingNeighbor { word: y.to_string() })?;
        avg += weights.get(l.generator()) * fy;
    }
    Ok(fx - avg)
}

/// [`laplacian_at`] at every vertex whose `2n` neighbours all carry values.
pub fn apply_laplacian(weights: &Weights, f: &HashMap<ReducedWord, f64>) -> BTreeMap<ReducedWord, f64> {
    f.keys()
        .filter_map(|x| laplacian_at(weights, f, x).ok().map(|v| (x.clone(), v)))
        .collect()
}

/// Largest relative residual `|Δ_p h − λ h| / h` over the interior of the
/// word-length ball of the given radius, i.e. words of length `< radius`.
pub fn eigen_residual(h: &Horofunction, p: &Weights, lambda: f64, radius: usize) -> Result<f64> {
    let words = words_up_to(p.rank(), radius, DEFAULT_BALL_CAP)?;
    let values = h.on_words(&words);
    let mut worst = 0.0f64;
    for (x, lap) in apply_laplacian(p, &values) {
        let hx = values[&x];
        worst = worst.max((lap - lambda * hx).abs() / hx);
    }
    Ok(worst)
}
