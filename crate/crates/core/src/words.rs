//! Reduced words, cyclic words and morphisms of a free group of finite rank.
//!
//! Letters are signed generator indices. In text a lowercase symbol is a
//! generator and the matching uppercase symbol its inverse, so `cAd` is
//! `c a⁻¹ d`. Output is always compact.

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WordError {
    #[error("unknown generator symbol {0:?}")]
    UnknownSymbol(char),
    #[error("invalid basis: {0}")]
    InvalidBasis(String),
    #[error("generator index {index} out of range for rank {rank}")]
    OutOfRange { index: usize, rank: usize },
    #[error("image of generator {0} reduces to the identity")]
    EmptyImage(char),
    #[error("expected {expected} images, found {found}")]
    ImageCount { expected: usize, found: usize },
    #[error("morphism has no declared inverse")]
    NoDeclaredInverse,
    #[error("rank mismatch: {0} vs {1}")]
    RankMismatch(usize, usize),
    #[error("operation needs a nonempty word")]
    EmptyWord,
}

/// A generator or inverse generator. Internally `gen + 1` with the sign
/// carrying the orientation, so zero is free to act as a sentinel.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Letter(i32);

impl Letter {
    pub fn new(gen: usize, inverse: bool) -> Letter {
        let v = gen as i32 + 1;
        Letter(if inverse { -v } else { v })
    }

    pub fn gen(self) -> usize {
        (self.0.unsigned_abs() - 1) as usize
    }

    pub fn is_inverse(self) -> bool {
        self.0 < 0
    }

    pub fn inverse(self) -> Letter {
        Letter(-self.0)
    }

    /// Dense index in `0..2*rank`: generator `i` is `2i`, its inverse `2i+1`.
    pub fn index(self) -> usize {
        2 * self.gen() + self.is_inverse() as usize
    }

    pub fn from_index(i: usize) -> Letter {
        Letter::new(i / 2, i % 2 == 1)
    }

    /// Reserved letter outside every basis, used as a separator.
    pub(crate) const SENTINEL: Letter = Letter(0);

    pub fn symbol(self) -> char {
        standard_symbol(self.gen(), self.is_inverse())
    }
}

fn standard_symbol(gen: usize, inverse: bool) -> char {
    let c = if gen < 26 { (b'a' + gen as u8) as char } else { '?' };
    if inverse {
        c.to_ascii_uppercase()
    } else {
        c
    }
}

// a < A < b < B < ...
impl Ord for Letter {
    fn cmp(&self, other: &Self) -> Ordering {
        self.index().cmp(&other.index())
    }
}

impl PartialOrd for Letter {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Debug for Letter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.symbol())
    }
}

/// Named free basis. Names are distinct lowercase ASCII letters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Basis {
    names: Vec<char>,
}

impl Basis {
    pub fn new(names: &str) -> Result<Basis, WordError> {
        let names: Vec<char> = names.chars().filter(|c| !c.is_whitespace()).collect();
        if names.is_empty() {
            return Err(WordError::InvalidBasis("empty basis".into()));
        }
        for (i, c) in names.iter().enumerate() {
            if !c.is_ascii_lowercase() {
                return Err(WordError::InvalidBasis(format!("{c:?} is not a lowercase letter")));
            }
            if names[..i].contains(c) {
                return Err(WordError::InvalidBasis(format!("duplicate generator {c:?}")));
            }
        }
        Ok(Basis { names })
    }

    /// `a, b, c, ...`
    pub fn standard(rank: usize) -> Basis {
        assert!((1..=26).contains(&rank), "rank must be in 1..=26");
        Basis { names: (0..rank).map(|i| standard_symbol(i, false)).collect() }
    }

    pub fn rank(&self) -> usize {
        self.names.len()
    }

    pub fn name(&self, gen: usize) -> char {
        self.names[gen]
    }

    pub fn letter(&self, c: char) -> Result<Letter, WordError> {
        let lower = c.to_ascii_lowercase();
        match self.names.iter().position(|&n| n == lower) {
            Some(g) => Ok(Letter::new(g, c.is_ascii_uppercase())),
            None => Err(WordError::UnknownSymbol(c)),
        }
    }

    /// Parses and freely reduces. Whitespace is ignored; `1` alone is the identity.
    pub fn parse_letters(&self, text: &str) -> Result<Vec<Letter>, WordError> {
        let t = text.trim();
        if t == "1" {
            return Ok(Vec::new());
        }
        t.chars().filter(|c| !c.is_whitespace()).map(|c| self.letter(c)).collect()
    }

    pub fn parse(&self, text: &str) -> Result<FreeWord, WordError> {
        Ok(FreeWord::reduce(&self.parse_letters(text)?))
    }

    pub fn parse_cyclic(&self, text: &str) -> Result<CyclicWord, WordError> {
        Ok(CyclicWord::new(&self.parse(text)?))
    }

    pub fn render(&self, letters: &[Letter]) -> String {
        letters
            .iter()
            .map(|l| {
                let c = self.names[l.gen()];
                if l.is_inverse() {
                    c.to_ascii_uppercase()
                } else {
                    c
                }
            })
            .collect()
    }
}

/// Free reduction with a stack; returns the reduced letter sequence.
pub fn reduce_letters(letters: &[Letter]) -> Vec<Letter> {
    let mut out: Vec<Letter> = Vec::with_capacity(letters.len());
    for &l in letters {
        push_reduced(&mut out, l);
    }
    out
}

#[inline]
pub(crate) fn push_reduced(out: &mut Vec<Letter>, l: Letter) {
    if out.last() == Some(&l.inverse()) {
        out.pop();
    } else {
        out.push(l);
    }
}

pub fn is_reduced(letters: &[Letter]) -> bool {
    letters.windows(2).all(|w| w[0] != w[1].inverse())
}

pub fn invert_letters(letters: &[Letter]) -> Vec<Letter> {
    letters.iter().rev().map(|l| l.inverse()).collect()
}

/// Number of letters cancelled when the reduced words `u` and `v` are multiplied.
pub fn cancellation(u: &[Letter], v: &[Letter]) -> usize {
    u.iter().rev().zip(v.iter()).take_while(|(a, b)| **a == b.inverse()).count()
}

/// A freely reduced word.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
pub struct FreeWord(Vec<Letter>);

impl FreeWord {
    pub fn identity() -> FreeWord {
        FreeWord(Vec::new())
    }

    pub fn reduce(letters: &[Letter]) -> FreeWord {
        FreeWord(reduce_letters(letters))
    }

    pub fn from_reduced(letters: Vec<Letter>) -> FreeWord {
        debug_assert!(is_reduced(&letters));
        FreeWord(letters)
    }

    pub fn generator(gen: usize) -> FreeWord {
        FreeWord(vec![Letter::new(gen, false)])
    }

    pub fn letters(&self) -> &[Letter] {
        &self.0
    }

    pub fn into_letters(self) -> Vec<Letter> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn inverse(&self) -> FreeWord {
        FreeWord(invert_letters(&self.0))
    }

    pub fn mul(&self, other: &FreeWord) -> FreeWord {
        let mut out = self.0.clone();
        for &l in &other.0 {
            push_reduced(&mut out, l);
        }
        FreeWord(out)
    }

    pub fn pow(&self, k: i64) -> FreeWord {
        let base = if k < 0 { self.inverse() } else { self.clone() };
        let mut out = FreeWord::identity();
        for _ in 0..k.unsigned_abs() {
            out = out.mul(&base);
        }
        out
    }

    /// `self * x * self⁻¹`
    pub fn conjugate(&self, x: &FreeWord) -> FreeWord {
        self.mul(x).mul(&self.inverse())
    }

    /// Splits as `u · core · u⁻¹` with `core` cyclically reduced.
    pub fn cyclic_split(&self) -> (FreeWord, FreeWord) {
        let w = &self.0;
        let n = w.len();
        let mut k = 0;
        while 2 * k + 1 < n && w[k] == w[n - 1 - k].inverse() {
            k += 1;
        }
        (FreeWord(w[..k].to_vec()), FreeWord(w[k..n - k].to_vec()))
    }

    pub fn cyclically_reduced(&self) -> FreeWord {
        self.cyclic_split().1
    }

    pub fn is_cyclically_reduced(&self) -> bool {
        self.0.len() < 2 || self.0[0] != self.0[self.0.len() - 1].inverse()
    }

    pub fn max_gen(&self) -> Option<usize> {
        self.0.iter().map(|l| l.gen()).max()
    }
}

impl fmt::Display for FreeWord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return write!(f, "1");
        }
        for l in &self.0 {
            write!(f, "{}", l.symbol())?;
        }
        Ok(())
    }
}

impl fmt::Debug for FreeWord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "FreeWord({self})")
    }
}

/// Index of the lexicographically least rotation (Booth-style two pointers).
pub fn least_rotation(w: &[Letter]) -> usize {
    let n = w.len();
    if n == 0 {
        return 0;
    }
    let (mut i, mut j, mut k) = (0usize, 1usize, 0usize);
    while i < n && j < n && k < n {
        let a = w[(i + k) % n];
        let b = w[(j + k) % n];
        match a.cmp(&b) {
            Ordering::Equal => k += 1,
            Ordering::Greater => {
                i += k + 1;
                if i == j {
                    i += 1;
                }
                k = 0;
            }
            Ordering::Less => {
                j += k + 1;
                if i == j {
                    j += 1;
                }
                k = 0;
            }
        }
    }
    i.min(j)
}

/// A conjugacy class, stored as the least rotation of a cyclically reduced
/// representative. Orientation is kept: `[w]` and `[w⁻¹]` differ.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CyclicWord(Vec<Letter>);

impl CyclicWord {
    pub fn new(w: &FreeWord) -> CyclicWord {
        Self::from_cyclically_reduced(w.cyclically_reduced().0)
    }

    fn from_cyclically_reduced(mut v: Vec<Letter>) -> CyclicWord {
        let r = least_rotation(&v);
        v.rotate_left(r);
        CyclicWord(v)
    }

    pub fn from_letters(letters: &[Letter]) -> CyclicWord {
        CyclicWord::new(&FreeWord::reduce(letters))
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

    pub fn as_word(&self) -> FreeWord {
        FreeWord(self.0.clone())
    }

    pub fn inverse(&self) -> CyclicWord {
        Self::from_cyclically_reduced(invert_letters(&self.0))
    }

    /// Letter at cyclic position `i`.
    pub fn at(&self, i: usize) -> Letter {
        self.0[i % self.0.len()]
    }

    pub fn rotations(&self) -> impl Iterator<Item = Vec<Letter>> + '_ {
        (0..self.0.len().max(1)).map(move |r| {
            let mut v = self.0.clone();
            if !v.is_empty() {
                v.rotate_left(r);
            }
            v
        })
    }

    /// True when the class is not a proper power.
    pub fn is_root_free(&self) -> Result<bool, WordError> {
        let n = self.0.len();
        if n == 0 {
            return Err(WordError::EmptyWord);
        }
        Ok(!(1..n).any(|d| n.is_multiple_of(d) && (0..n - d).all(|i| self.0[i] == self.0[i + d])))
    }
}

impl fmt::Display for CyclicWord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}]", FreeWord(self.0.clone()))
    }
}

impl fmt::Debug for CyclicWord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self}")
    }
}

/// First generator on which `φ∘φ⁻¹` or `φ⁻¹∘φ` is not the identity.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InverseMismatch {
    pub generator: usize,
    /// `"phi∘inv"` or `"inv∘phi"`.
    pub composition: String,
    pub image: FreeWord,
}

/// An endomorphism given by generator images, optionally with a declared inverse.
#[derive(Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Morphism {
    images: Vec<FreeWord>,
    inverse: Option<Vec<FreeWord>>,
}

impl Morphism {
    pub fn new(images: Vec<FreeWord>) -> Result<Morphism, WordError> {
        let rank = images.len();
        for (g, w) in images.iter().enumerate() {
            if w.is_empty() {
                return Err(WordError::EmptyImage(standard_symbol(g, false)));
            }
            if let Some(m) = w.max_gen() {
                if m >= rank {
                    return Err(WordError::OutOfRange { index: m, rank });
                }
            }
        }
        Ok(Morphism { images, inverse: None })
    }

    pub fn with_inverse(images: Vec<FreeWord>, inverse: Vec<FreeWord>) -> Result<Morphism, WordError> {
        if inverse.len() != images.len() {
            return Err(WordError::ImageCount { expected: images.len(), found: inverse.len() });
        }
        let inv = Morphism::new(inverse)?;
        let mut m = Morphism::new(images)?;
        m.inverse = Some(inv.images);
        Ok(m)
    }

    /// Parses images (and an optional inverse) over `basis`.
    pub fn parse(basis: &Basis, images: &[&str], inverse: Option<&[&str]>) -> Result<Morphism, WordError> {
        let parse_all = |v: &[&str]| -> Result<Vec<FreeWord>, WordError> {
            if v.len() != basis.rank() {
                return Err(WordError::ImageCount { expected: basis.rank(), found: v.len() });
            }
            v.iter().map(|s| basis.parse(s)).collect()
        };
        let im = parse_all(images)?;
        match inverse {
            Some(inv) => Morphism::with_inverse(im, parse_all(inv)?),
            None => Morphism::new(im),
        }
    }

    pub fn identity(rank: usize) -> Morphism {
        let ids: Vec<FreeWord> = (0..rank).map(FreeWord::generator).collect();
        Morphism { images: ids.clone(), inverse: Some(ids) }
    }

    pub fn rank(&self) -> usize {
        self.images.len()
    }

    pub fn images(&self) -> &[FreeWord] {
        &self.images
    }

    pub fn image_of(&self, l: Letter) -> Vec<Letter> {
        let w = self.images[l.gen()].letters();
        if l.is_inverse() {
            invert_letters(w)
        } else {
            w.to_vec()
        }
    }

    pub fn has_inverse(&self) -> bool {
        self.inverse.is_some()
    }

    pub fn declared_inverse(&self) -> Option<&[FreeWord]> {
        self.inverse.as_deref()
    }

    /// The declared inverse as a morphism (whose own inverse is `self`).
    pub fn inverse(&self) -> Result<Morphism, WordError> {
        let inv = self.inverse.clone().ok_or(WordError::NoDeclaredInverse)?;
        Ok(Morphism { images: inv, inverse: Some(self.images.clone()) })
    }

    pub fn apply_letters(&self, letters: &[Letter]) -> Vec<Letter> {
        let mut out = Vec::with_capacity(letters.len() * 2);
        for &l in letters {
            let w = self.images[l.gen()].letters();
            if l.is_inverse() {
                for &x in w.iter().rev() {
                    push_reduced(&mut out, x.inverse());
                }
            } else {
                for &x in w {
                    push_reduced(&mut out, x);
                }
            }
        }
        out
    }

    pub fn apply(&self, w: &FreeWord) -> FreeWord {
        FreeWord(self.apply_letters(&w.0))
    }

    pub fn apply_cyclic(&self, c: &CyclicWord) -> CyclicWord {
        CyclicWord::new(&FreeWord(self.apply_letters(&c.0)))
    }

    fn compose_images(outer: &[FreeWord], inner: &[FreeWord]) -> Vec<FreeWord> {
        let outer = Morphism { images: outer.to_vec(), inverse: None };
        inner.iter().map(|w| outer.apply(w)).collect()
    }

    /// `self ∘ other`. The declared inverse is composed in reverse order when
    /// both factors carry one.
    pub fn compose(&self, other: &Morphism) -> Result<Morphism, WordError> {
        if self.rank() != other.rank() {
            return Err(WordError::RankMismatch(self.rank(), other.rank()));
        }
        let images = Self::compose_images(&self.images, &other.images);
        let inverse = match (&self.inverse, &other.inverse) {
            (Some(a), Some(b)) => Some(Self::compose_images(b, a)),
            _ => None,
        };
        // A composite of injective maps never kills a generator.
        Ok(Morphism { images, inverse })
    }

    /// `self^k` for `k ≥ 0`; negative powers use the declared inverse.
    pub fn pow(&self, k: i64) -> Result<Morphism, WordError> {
        let base = if k < 0 { self.inverse()? } else { self.clone() };
        let mut out = Morphism::identity(self.rank());
        if !self.has_inverse() && k >= 0 {
            out.inverse = None;
        }
        for _ in 0..k.unsigned_abs() {
            out = base.compose(&out)?;
        }
        Ok(out)
    }

    pub fn inverse_mismatch(&self) -> Result<Option<InverseMismatch>, WordError> {
        let inv = self.inverse.as_ref().ok_or(WordError::NoDeclaredInverse)?;
        let checks = [("phi∘inv", Self::compose_images(&self.images, inv)), ("inv∘phi", Self::compose_images(inv, &self.images))];
        for (name, comp) in checks {
            for (g, w) in comp.into_iter().enumerate() {
                if w != FreeWord::generator(g) {
                    return Ok(Some(InverseMismatch { generator: g, composition: name.into(), image: w }));
                }
            }
        }
        Ok(None)
    }

    pub fn verify_inverse_pair(&self) -> Result<bool, WordError> {
        Ok(self.inverse_mismatch()?.is_none())
    }

    /// Images rendered over `basis`.
    pub fn render(&self, basis: &Basis) -> Vec<String> {
        self.images.iter().map(|w| basis.render(w.letters())).collect()
    }
}

impl fmt::Debug for Morphism {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.images.iter().enumerate().map(|(g, w)| format!("{}->{}", standard_symbol(g, false), w)).collect();
        write!(f, "Morphism({})", parts.join(", "))
    }
}
