//! Finite-horizon language oracles and word generators.
//!
//! Oracles answer membership and return-time queries for a subshift's
//! language up to a horizon. Text-backed oracles (Sturmian, substitution,
//! Bernoulli) take the language to be the factors of one long generated word.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use num_rational::Ratio;
use thiserror::Error;

use crate::arrays::Symbol;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GeneratorError {
    #[error("rotation number {0} needs 0 < alpha < 1")]
    RotationRange(String),
    #[error("denominator {den} must exceed the word length {len}")]
    DenominatorTooSmall { den: u64, len: usize },
    #[error("probability {0} must satisfy 0 < p < 1")]
    Probability(String),
    #[error("requested length {requested} exceeds the oracle horizon {horizon}")]
    HorizonExhausted { requested: usize, horizon: usize },
    #[error("invalid substitution: {0}")]
    Substitution(String),
    #[error("cannot enumerate {0} words")]
    TooMany(String),
    #[error("invalid oracle spec {spec:?}: {reason}")]
    Spec { spec: String, reason: String },
    #[error("empty word")]
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OracleKind {
    Periodic,
    Sturmian,
    Substitution,
    Bernoulli,
    FullShift,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Source {
    /// Bi-infinite repetition of one word.
    Cyclic(Vec<Symbol>),
    /// Factors of a finite text.
    Text(Vec<Symbol>),
    /// All words over `1..=size`.
    Full(u32),
}

/// Queryable finite-horizon language of a generator subshift.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LanguageOracle {
    kind: OracleKind,
    source: Source,
    alphabet: Vec<Symbol>,
}

pub fn periodic_oracle(word: &[Symbol]) -> Result<LanguageOracle, GeneratorError> {
    if word.is_empty() {
        return Err(GeneratorError::Empty);
    }
    Ok(LanguageOracle::new(OracleKind::Periodic, Source::Cyclic(word.to_vec())))
}

pub fn full_shift_oracle(size: u32) -> Result<LanguageOracle, GeneratorError> {
    if size == 0 {
        return Err(GeneratorError::Empty);
    }
    Ok(LanguageOracle::new(OracleKind::FullShift, Source::Full(size)))
}

/// Oracle whose language is the set of factors of `text`.
pub fn text_oracle(kind: OracleKind, text: Vec<Symbol>) -> Result<LanguageOracle, GeneratorError> {
    if text.is_empty() {
        return Err(GeneratorError::Empty);
    }
    Ok(LanguageOracle::new(kind, Source::Text(text)))
}

pub fn sturmian_oracle(alpha: Ratio<u64>, rho: Ratio<u64>, len: usize) -> Result<LanguageOracle, GeneratorError> {
    text_oracle(OracleKind::Sturmian, sturmian_word(alpha, rho, len)?)
}

/// Language of the `depth`-fold iterate of `rules` applied to `seed`.
pub fn substitution_oracle(
    rules: &[(Symbol, Vec<Symbol>)],
    seed: Symbol,
    depth: usize,
) -> Result<LanguageOracle, GeneratorError> {
    text_oracle(OracleKind::Substitution, iterate_substitution(rules, seed, depth)?)
}

pub fn chacon_rules() -> Vec<(Symbol, Vec<Symbol>)> {
    vec![(0, vec![0, 0, 1, 0]), (1, vec![1])]
}

impl LanguageOracle {
    fn new(kind: OracleKind, source: Source) -> Self {
        let alphabet = match &source {
            Source::Cyclic(w) | Source::Text(w) => {
                w.iter().copied().collect::<BTreeSet<_>>().into_iter().collect()
            }
            Source::Full(s) => (1..=*s).collect(),
        };
        Self {
            kind,
            source,
            alphabet,
        }
    }

    pub fn kind(&self) -> OracleKind {
        self.kind
    }

    /// Sorted symbols in use.
    pub fn alphabet(&self) -> &[Symbol] {
        &self.alphabet
    }

    /// Largest queryable word length, `None` when unbounded.
    pub fn horizon(&self) -> Option<usize> {
        match &self.source {
            Source::Text(t) => Some(t.len()),
            _ => None,
        }
    }

    fn check_horizon(&self, n: usize) -> Result<(), GeneratorError> {
        match self.horizon() {
            Some(h) if n > h => Err(GeneratorError::HorizonExhausted {
                requested: n,
                horizon: h,
            }),
            _ => Ok(()),
        }
    }

    pub fn contains(&self, word: &[Symbol]) -> bool {
        match &self.source {
            Source::Full(s) => word.iter().all(|&c| c >= 1 && c <= *s),
            Source::Text(t) => word.is_empty() || t.windows(word.len()).any(|w| w == word),
            Source::Cyclic(w) => {
                let p = w.len();
                (0..p).any(|phase| word.iter().enumerate().all(|(i, &c)| w[(phase + i) % p] == c))
            }
        }
    }

    /// All words of length `n` in the language.
    pub fn words(&self, n: usize) -> Result<BTreeSet<Vec<Symbol>>, GeneratorError> {
        self.check_horizon(n)?;
        match &self.source {
            Source::Text(t) => Ok(t.windows(n).map(<[Symbol]>::to_vec).collect()),
            Source::Cyclic(w) => Ok((0..w.len()).map(|phase| cyclic_slice(w, phase, n)).collect()),
            Source::Full(s) => {
                let count = u64::from(*s).checked_pow(n as u32).filter(|&c| c <= 1 << 20);
                let count = count.ok_or_else(|| GeneratorError::TooMany(format!("{s}^{n}")))?;
                Ok((0..count)
                    .map(|mut code| {
                        let mut word = vec![0; n];
                        for slot in word.iter_mut().rev() {
                            *slot = (code % u64::from(*s)) as Symbol + 1;
                            code /= u64::from(*s);
                        }
                        word
                    })
                    .collect())
            }
        }
    }

    /// Lexicographically smallest word of length `n`.
    pub fn min_word(&self, n: usize) -> Result<Vec<Symbol>, GeneratorError> {
        self.check_horizon(n)?;
        match &self.source {
            Source::Full(_) => Ok(vec![1; n]),
            Source::Text(t) => Ok(t.windows(n).min().map(<[Symbol]>::to_vec).unwrap_or_default()),
            Source::Cyclic(w) => Ok((0..w.len())
                .map(|phase| cyclic_slice(w, phase, n))
                .min()
                .unwrap_or_default()),
        }
    }

    /// `result[l - 1]` says whether some word of the language has `u` at
    /// offset 0 and at offset `l`, for `l = 1..=max_shift`.
    pub fn return_profile(&self, u: &[Symbol], max_shift: usize) -> Result<Vec<bool>, GeneratorError> {
        self.check_horizon(max_shift + u.len())?;
        match &self.source {
            Source::Full(_) => Ok((1..=max_shift)
                .map(|l| self.contains(u) && self_overlap_ok(u, l))
                .collect()),
            Source::Text(t) => {
                let hits = occurrences(t, u);
                let mut at = vec![false; t.len() + 1];
                for &p in &hits {
                    at[p] = true;
                }
                let mut profile = vec![false; max_shift];
                for &p in &hits {
                    for (l, slot) in profile.iter_mut().enumerate() {
                        let q = p + l + 1;
                        if q >= at.len() {
                            break;
                        }
                        *slot |= at[q];
                    }
                }
                Ok(profile)
            }
            Source::Cyclic(w) => {
                let period = w.len();
                let phases: Vec<usize> = (0..period)
                    .filter(|&ph| u.iter().enumerate().all(|(i, &c)| w[(ph + i) % period] == c))
                    .collect();
                Ok((1..=max_shift)
                    .map(|l| phases.iter().any(|ph| phases.contains(&((ph + l) % period))))
                    .collect())
            }
        }
    }

    /// Lexicographically smallest word of length `shift + |u|` with `u` at
    /// offset 0 and at offset `shift`.
    pub fn return_witness(&self, u: &[Symbol], shift: usize) -> Result<Option<Vec<Symbol>>, GeneratorError> {
        let n = shift + u.len();
        self.check_horizon(n)?;
        let fits = |w: &[Symbol]| w[..u.len()] == *u && w[shift..] == *u;
        match &self.source {
            Source::Full(_) => {
                if !self.contains(u) || !self_overlap_ok(u, shift) {
                    return Ok(None);
                }
                let mut w = vec![1; n];
                w[shift..].copy_from_slice(u);
                w[..u.len()].copy_from_slice(u);
                Ok(Some(w))
            }
            Source::Text(t) => Ok(occurrences(t, u)
                .into_iter()
                .filter(|&p| p + n <= t.len())
                .map(|p| &t[p..p + n])
                .filter(|w| fits(w))
                .min()
                .map(<[Symbol]>::to_vec)),
            Source::Cyclic(w) => Ok((0..w.len())
                .map(|phase| cyclic_slice(w, phase, n))
                .filter(|c| fits(c))
                .min()),
        }
    }
}

fn cyclic_slice(w: &[Symbol], phase: usize, n: usize) -> Vec<Symbol> {
    (0..n).map(|i| w[(phase + i) % w.len()]).collect()
}

/// `u` placed at 0 and at `shift` agrees with itself on the overlap.
fn self_overlap_ok(u: &[Symbol], shift: usize) -> bool {
    shift >= u.len() || (shift..u.len()).all(|i| u[i] == u[i - shift])
}

fn occurrences(text: &[Symbol], u: &[Symbol]) -> Vec<usize> {
    if u.is_empty() {
        return (0..=text.len()).collect();
    }
    text.windows(u.len())
        .enumerate()
        .filter(|(_, w)| *w == u)
        .map(|(i, _)| i)
        .collect()
}

/// Lower mechanical word: `c_n = floor((n+1)α + ρ) - floor(nα + ρ)` for
/// `n = 0..len`.
pub fn sturmian_word(alpha: Ratio<u64>, rho: Ratio<u64>, len: usize) -> Result<Vec<Symbol>, GeneratorError> {
    if *alpha.numer() == 0 || alpha >= Ratio::from_integer(1) {
        return Err(GeneratorError::RotationRange(alpha.to_string()));
    }
    if *alpha.denom() <= len as u64 {
        return Err(GeneratorError::DenominatorTooSmall {
            den: *alpha.denom(),
            len,
        });
    }
    let (p, q) = (u128::from(*alpha.numer()), u128::from(*alpha.denom()));
    let (r, s) = (u128::from(*rho.numer()), u128::from(*rho.denom()));
    let floor_at = |n: u128| (n * p * s + r * q) / (q * s);
    Ok((0..len as u128)
        .map(|n| (floor_at(n + 1) - floor_at(n)) as Symbol)
        .collect())
}

pub fn iterate_substitution(
    rules: &[(Symbol, Vec<Symbol>)],
    seed: Symbol,
    depth: usize,
) -> Result<Vec<Symbol>, GeneratorError> {
    let image = |c: Symbol| rules.iter().find(|(s, _)| *s == c).map(|(_, w)| w);
    for (s, w) in rules {
        if w.is_empty() {
            return Err(GeneratorError::Substitution(format!("rule for {s} is erasing")));
        }
        if let Some(&c) = w.iter().find(|&&c| image(c).is_none()) {
            return Err(GeneratorError::Substitution(format!("no rule for symbol {c}")));
        }
    }
    if image(seed).is_none() {
        return Err(GeneratorError::Substitution(format!("no rule for seed {seed}")));
    }
    let mut word = vec![seed];
    for _ in 0..depth {
        word = word
            .iter()
            .flat_map(|&c| image(c).expect("checked").iter().copied())
            .collect();
    }
    Ok(word)
}

/// SplitMix64 output sequence starting from `seed`.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
}

/// Binary word with symbol 1 at step `i` iff `floor(z_i * q / 2^64) < p`,
/// where `z_i` is the `i`-th SplitMix64 output and `p/q` the probability.
pub fn bernoulli_window(p: Ratio<u64>, seed: u64, len: usize) -> Result<Vec<Symbol>, GeneratorError> {
    if *p.numer() == 0 || p >= Ratio::from_integer(1) {
        return Err(GeneratorError::Probability(p.to_string()));
    }
    let (num, den) = (u128::from(*p.numer()), u128::from(*p.denom()));
    let mut rng = SplitMix64::new(seed);
    Ok((0..len)
        .map(|_| Symbol::from((u128::from(rng.next_u64()) * den) >> 64 < num))
        .collect())
}

/// Textual description of a generator, as accepted on the command line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum OracleSpec {
    Periodic(Vec<Symbol>),
    Sturmian {
        alpha: Ratio<u64>,
        rho: Ratio<u64>,
        len: Option<usize>,
    },
    Chacon {
        depth: usize,
    },
    Bernoulli {
        p: Ratio<u64>,
        seed: u64,
        len: usize,
    },
    Full(u32),
}

pub const DEFAULT_TEXT_LEN: usize = 100_000;
pub const DEFAULT_CHACON_DEPTH: usize = 10;

impl OracleSpec {
    pub fn oracle(&self) -> Result<LanguageOracle, GeneratorError> {
        match self {
            OracleSpec::Periodic(w) => periodic_oracle(w),
            OracleSpec::Full(s) => full_shift_oracle(*s),
            OracleSpec::Chacon { depth } => substitution_oracle(&chacon_rules(), 0, *depth),
            OracleSpec::Sturmian { .. } => text_oracle(OracleKind::Sturmian, self.word(self.default_len())?),
            OracleSpec::Bernoulli { len, .. } => text_oracle(OracleKind::Bernoulli, self.word(*len)?),
        }
    }

    fn default_len(&self) -> usize {
        match self {
            OracleSpec::Sturmian { alpha, len, .. } => {
                len.unwrap_or_else(|| DEFAULT_TEXT_LEN.min(*alpha.denom() as usize - 1))
            }
            OracleSpec::Bernoulli { len, .. } => *len,
            _ => DEFAULT_TEXT_LEN,
        }
    }

    /// A word of length `len` from the generator, starting at its origin.
    pub fn word(&self, len: usize) -> Result<Vec<Symbol>, GeneratorError> {
        self.word_at(len, 0)
    }

    /// A word of length `len` starting `offset` steps into the generator.
    pub fn word_at(&self, len: usize, offset: u64) -> Result<Vec<Symbol>, GeneratorError> {
        match self {
            OracleSpec::Periodic(w) => {
                let start = (offset % w.len() as u64) as usize;
                Ok(cyclic_slice(w, start, len))
            }
            OracleSpec::Sturmian { alpha, rho, .. } => {
                // shifting by `offset` adds offset*alpha to the intercept
                let shifted = *rho + *alpha * Ratio::from_integer(offset);
                let frac = shifted - Ratio::from_integer(shifted.to_integer());
                sturmian_word(*alpha, frac, len)
            }
            OracleSpec::Chacon { .. } => {
                let mut depth = 0;
                let mut word = vec![0];
                while (word.len() as u64) < offset + len as u64 {
                    depth += 1;
                    word = iterate_substitution(&chacon_rules(), 0, depth)?;
                }
                Ok(word[offset as usize..offset as usize + len].to_vec())
            }
            OracleSpec::Bernoulli { p, seed, .. } => {
                let full = bernoulli_window(*p, *seed, offset as usize + len)?;
                Ok(full[offset as usize..].to_vec())
            }
            OracleSpec::Full(_) => Err(GeneratorError::Spec {
                spec: self.to_string(),
                reason: "the full shift has no canonical sample word".into(),
            }),
        }
    }
}

fn parse_ratio(spec: &str, s: &str) -> Result<Ratio<u64>, GeneratorError> {
    let err = || GeneratorError::Spec {
        spec: spec.into(),
        reason: format!("bad fraction {s:?}"),
    };
    let (p, q) = s.split_once('/').unwrap_or((s, "1"));
    let p: u64 = p.parse().map_err(|_| err())?;
    let q: u64 = q.parse().map_err(|_| err())?;
    if q == 0 {
        return Err(err());
    }
    Ok(Ratio::new(p, q))
}

impl FromStr for OracleSpec {
    type Err = GeneratorError;

    fn from_str(spec: &str) -> Result<Self, Self::Err> {
        let fail = |reason: &str| GeneratorError::Spec {
            spec: spec.into(),
            reason: reason.into(),
        };
        let mut parts = spec.split(':');
        let head = parts.next().unwrap_or_default();
        let mut positional = Vec::new();
        let mut options = Vec::new();
        for part in parts {
            match part.split_once('=') {
                Some((k, v)) => options.push((k, v)),
                None => positional.push(part),
            }
        }
        let option = |key: &str| options.iter().find(|(k, _)| *k == key).map(|(_, v)| *v);
        let number = |key: &str| -> Result<Option<u64>, GeneratorError> {
            option(key)
                .map(|v| v.parse::<u64>().map_err(|_| fail(&format!("bad {key}"))))
                .transpose()
        };
        if let Some((k, _)) = options
            .iter()
            .find(|(k, _)| !["rho", "n", "seed", "depth"].contains(k))
        {
            return Err(fail(&format!("unknown option {k}")));
        }
        match head {
            "periodic" => {
                let word = positional.first().ok_or_else(|| fail("missing word"))?;
                let symbols: Option<Vec<Symbol>> = word.chars().map(|c| c.to_digit(10)).collect();
                match symbols {
                    Some(w) if !w.is_empty() => Ok(OracleSpec::Periodic(w)),
                    _ => Err(fail("periodic words are nonempty digit strings")),
                }
            }
            "sturmian" => {
                let alpha = parse_ratio(spec, positional.first().ok_or_else(|| fail("missing alpha"))?)?;
                let rho = option("rho")
                    .map(|r| parse_ratio(spec, r))
                    .transpose()?
                    .unwrap_or_else(|| Ratio::from_integer(0));
                if *alpha.numer() == 0 || alpha >= Ratio::from_integer(1) {
                    return Err(fail("alpha must lie in (0, 1)"));
                }
                if rho >= Ratio::from_integer(1) {
                    return Err(fail("rho must lie in [0, 1)"));
                }
                Ok(OracleSpec::Sturmian {
                    alpha,
                    rho,
                    len: number("n")?.map(|n| n as usize),
                })
            }
            "chacon" => Ok(OracleSpec::Chacon {
                depth: number("depth")?.map_or(DEFAULT_CHACON_DEPTH, |d| d as usize),
            }),
            "bernoulli" => {
                let p = parse_ratio(spec, positional.first().ok_or_else(|| fail("missing p"))?)?;
                if *p.numer() == 0 || p >= Ratio::from_integer(1) {
                    return Err(fail("p must lie in (0, 1)"));
                }
                Ok(OracleSpec::Bernoulli {
                    p,
                    seed: number("seed")?.unwrap_or(0),
                    len: number("n")?.map_or(DEFAULT_TEXT_LEN, |n| n as usize),
                })
            }
            "full" => {
                let s: u32 = positional
                    .first()
                    .and_then(|s| s.parse().ok())
                    .filter(|&s| s > 0)
                    .ok_or_else(|| fail("full shift needs a positive alphabet size"))?;
                Ok(OracleSpec::Full(s))
            }
            _ => Err(fail("unknown generator kind")),
        }
    }
}

impl fmt::Display for OracleSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OracleSpec::Periodic(w) => {
                f.write_str("periodic:")?;
                w.iter().try_for_each(|c| write!(f, "{c}"))
            }
            OracleSpec::Sturmian { alpha, rho, len } => {
                write!(f, "sturmian:{}/{}", alpha.numer(), alpha.denom())?;
                if *rho.numer() != 0 {
                    write!(f, ":rho={}/{}", rho.numer(), rho.denom())?;
                }
                if let Some(n) = len {
                    write!(f, ":n={n}")?;
                }
                Ok(())
            }
            OracleSpec::Chacon { depth } if *depth == DEFAULT_CHACON_DEPTH => f.write_str("chacon"),
            OracleSpec::Chacon { depth } => write!(f, "chacon:depth={depth}"),
            OracleSpec::Bernoulli { p, seed, len } => {
                write!(f, "bernoulli:{}/{}:seed={seed}", p.numer(), p.denom())?;
                if *len != DEFAULT_TEXT_LEN {
                    write!(f, ":n={len}")?;
                }
                Ok(())
            }
            OracleSpec::Full(s) => write!(f, "full:{s}"),
        }
    }
}
