//! Empirical rectangle measures and the truncated `d*` distance.
//!
//! Everything is exact: weights and distances are [`BigRational`]s. The
//! frequency of `Q` in `R` divides by the number of horizontal offsets, so
//! weights of one dimension pair always sum to one.

use std::collections::{BTreeMap, HashMap};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use rayon::prelude::*;
use thiserror::Error;

use crate::arrays::{Rectangle, Symbol};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MeasureError {
    #[error("truncation {want} exceeds a {rows}x{width} rectangle")]
    TruncationTooLarge {
        want: Truncation,
        rows: usize,
        width: usize,
    },
    #[error("truncation mismatch: {left} vs {right}")]
    TruncationMismatch { left: Truncation, right: Truncation },
    #[error("invalid mixture weights: {0}")]
    Weights(String),
    #[error("rectangles to concatenate have different row counts")]
    RowMismatch,
    #[error("nothing to concatenate")]
    Empty,
    #[error("word of length {len} is shorter than twice the block length {block}")]
    WindowTooShort { len: usize, block: usize },
    #[error("invalid truncation: {0}")]
    InvalidTruncation(String),
}

/// Largest rectangle dimensions `(rows, width)` kept by a measure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Truncation {
    pub rows: usize,
    pub width: usize,
}

impl Truncation {
    pub fn new(rows: usize, width: usize) -> Result<Self, MeasureError> {
        if rows == 0 || width == 0 {
            return Err(MeasureError::InvalidTruncation(format!("{rows}x{width}")));
        }
        Ok(Self { rows, width })
    }

    pub fn dims(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (1..=self.rows).flat_map(move |l| (1..=self.width).map(move |r| (l, r)))
    }

    /// `2 * sum of 2^(-l-r)` over the dimension pairs the truncation drops.
    pub fn tail_bound(&self) -> BigRational {
        let kept = (BigRational::one() - pow2_inv(self.rows))
            * (BigRational::one() - pow2_inv(self.width));
        (BigRational::one() - kept) * BigRational::from_integer(BigInt::from(2))
    }
}

impl std::fmt::Display for Truncation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}", self.rows, self.width)
    }
}

impl std::str::FromStr for Truncation {
    type Err = MeasureError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || MeasureError::InvalidTruncation(s.to_string());
        let (l, r) = s.split_once('x').ok_or_else(bad)?;
        Truncation::new(l.trim().parse().map_err(|_| bad())?, r.trim().parse().map_err(|_| bad())?)
    }
}

fn pow2_inv(e: usize) -> BigRational {
    BigRational::new(BigInt::one(), BigInt::one() << e)
}

/// Finitely supported cylinder weights up to a truncation. Only nonzero
/// weights are stored; the map is keyed by rectangles, which order by
/// dimensions first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EmpiricalMeasure {
    truncation: Truncation,
    weights: BTreeMap<Rectangle, BigRational>,
    source: String,
}

impl EmpiricalMeasure {
    /// Builds a measure from explicit weights. Zero weights are dropped and
    /// every key must fit inside the truncation.
    pub fn from_weights(
        truncation: Truncation,
        weights: impl IntoIterator<Item = (Rectangle, BigRational)>,
        source: impl Into<String>,
    ) -> Result<Self, MeasureError> {
        let mut map = BTreeMap::new();
        for (q, w) in weights {
            if q.rows() > truncation.rows || q.width() > truncation.width {
                return Err(MeasureError::Weights(format!(
                    "{}x{} key outside truncation {truncation}",
                    q.rows(),
                    q.width()
                )));
            }
            if w.is_negative() {
                return Err(MeasureError::Weights("negative weight".into()));
            }
            if !w.is_zero() {
                map.insert(q, w);
            }
        }
        Ok(Self {
            truncation,
            weights: map,
            source: source.into(),
        })
    }

    /// `weights(Q) = frequency(rect, Q)` for every `Q` inside the truncation.
    pub fn from_rectangle(rect: &Rectangle, truncation: Truncation) -> Result<Self, MeasureError> {
        if rect.rows() < truncation.rows || rect.width() < truncation.width {
            return Err(MeasureError::TruncationTooLarge {
                want: truncation,
                rows: rect.rows(),
                width: rect.width(),
            });
        }
        let mut weights = BTreeMap::new();
        for (l, r) in truncation.dims() {
            let offsets = (rect.width() - r + 1) as u64;
            for (q, count) in count_subrectangles(rect, l, r) {
                weights.insert(q, BigRational::new(BigInt::from(count), BigInt::from(offsets)));
            }
        }
        Ok(Self {
            truncation,
            weights,
            source: String::from("rectangle"),
        })
    }

    /// The invariant measure of the constant array whose every column is
    /// `column` (no markers).
    pub fn constant(column: &[Symbol], truncation: Truncation) -> Result<Self, MeasureError> {
        if column.len() < truncation.rows {
            return Err(MeasureError::TruncationTooLarge {
                want: truncation,
                rows: column.len(),
                width: truncation.width,
            });
        }
        let weights = truncation.dims().map(|(l, r)| {
            let rows: Vec<Vec<Symbol>> = column[..l].iter().map(|&s| vec![s; r]).collect();
            (
                Rectangle::from_rows(&rows).expect("nonempty constant block"),
                BigRational::one(),
            )
        });
        Self::from_weights(truncation, weights, format!("constant:{column:?}"))
    }

    pub fn with_source(mut self, source: impl Into<String>) -> Self {
        self.source = source.into();
        self
    }

    pub fn truncation(&self) -> Truncation {
        self.truncation
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn weight(&self, q: &Rectangle) -> BigRational {
        self.weights.get(q).cloned().unwrap_or_else(BigRational::zero)
    }

    pub fn weights(&self) -> &BTreeMap<Rectangle, BigRational> {
        &self.weights
    }

    pub fn support_len(&self) -> usize {
        self.weights.len()
    }

    pub fn dimension_sum(&self, rows: usize, width: usize) -> BigRational {
        self.weights
            .iter()
            .filter(|(q, _)| q.dims() == (rows, width))
            .map(|(_, w)| w)
            .sum()
    }

    /// Pointwise convex combination of measures sharing one truncation.
    pub fn mixture(parts: &[(BigRational, &EmpiricalMeasure)]) -> Result<Self, MeasureError> {
        let first = parts.first().ok_or(MeasureError::Empty)?;
        let truncation = first.1.truncation;
        let mut total = BigRational::zero();
        for (lambda, m) in parts {
            if m.truncation != truncation {
                return Err(MeasureError::TruncationMismatch {
                    left: truncation,
                    right: m.truncation,
                });
            }
            if lambda.is_negative() {
                return Err(MeasureError::Weights("negative coefficient".into()));
            }
            total += lambda;
        }
        if !total.is_one() {
            return Err(MeasureError::Weights(format!("coefficients sum to {total}")));
        }
        let mut weights: BTreeMap<Rectangle, BigRational> = BTreeMap::new();
        for (lambda, m) in parts {
            if lambda.is_zero() {
                continue;
            }
            for (q, w) in &m.weights {
                *weights.entry(q.clone()).or_insert_with(BigRational::zero) += lambda * w;
            }
        }
        Ok(Self {
            truncation,
            weights,
            source: String::from("mixture"),
        })
    }
}

/// Occurrence counts of all `rows x width` sub-rectangles of `rect`.
///
/// Wide rectangles are split into offset ranges counted in parallel; the
/// merged counts do not depend on the split.
pub fn count_subrectangles(rect: &Rectangle, rows: usize, width: usize) -> HashMap<Rectangle, u64> {
    const CHUNK: usize = 1 << 14;
    let offsets = rect.width() + 1 - width;
    let count_range = |from: usize, to: usize| {
        let mut counts: HashMap<Rectangle, u64> = HashMap::new();
        for i in from..to {
            *counts.entry(rect.sub(rows, i, width)).or_default() += 1;
        }
        counts
    };
    if offsets <= CHUNK {
        return count_range(0, offsets);
    }
    let starts: Vec<usize> = (0..offsets).step_by(CHUNK).collect();
    starts
        .into_par_iter()
        .map(|s| count_range(s, (s + CHUNK).min(offsets)))
        .reduce(HashMap::new, |mut acc, part| {
            for (q, c) in part {
                *acc.entry(q).or_default() += c;
            }
            acc
        })
}

/// Share of horizontal offsets at which `q` occurs in `rect`; zero when `q`
/// has more rows or columns than `rect`.
pub fn frequency(rect: &Rectangle, q: &Rectangle) -> BigRational {
    if q.rows() > rect.rows() || q.width() > rect.width() {
        return BigRational::zero();
    }
    let offsets = rect.width() - q.width() + 1;
    let hits = (0..offsets).filter(|&i| rect.matches_at(q, i)).count();
    BigRational::new(BigInt::from(hits), BigInt::from(offsets))
}

/// Truncated `d*` value together with a bound on the omitted terms.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TruncatedDistance {
    pub value: BigRational,
    pub tail_bound: BigRational,
}

impl TruncatedDistance {
    pub fn to_f64(&self) -> f64 {
        self.value.to_f64().unwrap_or(f64::NAN)
    }
}

/// Either side of a `d*` comparison.
#[derive(Debug, Clone, Copy)]
pub enum Operand<'a> {
    Rectangle(&'a Rectangle),
    Measure(&'a EmpiricalMeasure),
}

impl<'a> From<&'a Rectangle> for Operand<'a> {
    fn from(r: &'a Rectangle) -> Self {
        Operand::Rectangle(r)
    }
}

impl<'a> From<&'a EmpiricalMeasure> for Operand<'a> {
    fn from(m: &'a EmpiricalMeasure) -> Self {
        Operand::Measure(m)
    }
}

enum Resolved<'a> {
    Owned(EmpiricalMeasure),
    Borrowed(&'a EmpiricalMeasure),
}

impl Resolved<'_> {
    fn get(&self) -> &EmpiricalMeasure {
        match self {
            Resolved::Owned(m) => m,
            Resolved::Borrowed(m) => m,
        }
    }
}

fn resolve(op: Operand<'_>, truncation: Truncation) -> Result<Resolved<'_>, MeasureError> {
    match op {
        Operand::Rectangle(r) => Ok(Resolved::Owned(EmpiricalMeasure::from_rectangle(r, truncation)?)),
        Operand::Measure(m) if m.truncation == truncation => Ok(Resolved::Borrowed(m)),
        Operand::Measure(m) => Err(MeasureError::TruncationMismatch {
            left: truncation,
            right: m.truncation,
        }),
    }
}

/// `sum_{l <= L, r <= Rw} 2^(-l-r) sum_Q |a(Q) - b(Q)|`, with rectangles
/// converted to their empirical measures first.
pub fn dstar<'a, 'b>(
    a: impl Into<Operand<'a>>,
    b: impl Into<Operand<'b>>,
    truncation: Truncation,
) -> Result<TruncatedDistance, MeasureError> {
    let a = resolve(a.into(), truncation)?;
    let b = resolve(b.into(), truncation)?;
    Ok(TruncatedDistance {
        value: weighted_l1(a.get(), b.get()),
        tail_bound: truncation.tail_bound(),
    })
}

/// Truncated `d*` between two measures of equal truncation.
pub fn dstar_measures(a: &EmpiricalMeasure, b: &EmpiricalMeasure) -> Result<BigRational, MeasureError> {
    if a.truncation != b.truncation {
        return Err(MeasureError::TruncationMismatch {
            left: a.truncation,
            right: b.truncation,
        });
    }
    Ok(weighted_l1(a, b))
}

fn weighted_l1(a: &EmpiricalMeasure, b: &EmpiricalMeasure) -> BigRational {
    let mut per_dim: BTreeMap<(usize, usize), BigRational> = BTreeMap::new();
    let mut add = |q: &Rectangle, diff: BigRational| {
        *per_dim.entry(q.dims()).or_insert_with(BigRational::zero) += diff;
    };
    let mut left = a.weights.iter().peekable();
    let mut right = b.weights.iter().peekable();
    loop {
        match (left.peek(), right.peek()) {
            (None, None) => break,
            (Some((q, w)), None) => {
                add(q, (*w).clone());
                left.next();
            }
            (None, Some((q, w))) => {
                add(q, (*w).clone());
                right.next();
            }
            (Some((qa, wa)), Some((qb, wb))) => match qa.cmp(qb) {
                std::cmp::Ordering::Less => {
                    add(qa, (*wa).clone());
                    left.next();
                }
                std::cmp::Ordering::Greater => {
                    add(qb, (*wb).clone());
                    right.next();
                }
                std::cmp::Ordering::Equal => {
                    add(qa, (*wa - *wb).abs());
                    left.next();
                    right.next();
                }
            },
        }
    }
    per_dim
        .into_iter()
        .map(|((l, r), sum)| sum * pow2_inv(l + r))
        .sum()
}

/// Juxtaposes rectangles of equal height, setting a marker flag on the last
/// cell of every row at each internal junction.
pub fn concat(parts: &[Rectangle]) -> Result<Rectangle, MeasureError> {
    let first = parts.first().ok_or(MeasureError::Empty)?;
    if parts.iter().any(|p| p.rows() != first.rows()) {
        return Err(MeasureError::RowMismatch);
    }
    let refs: Vec<&Rectangle> = parts.iter().collect();
    let mut out = Rectangle::juxtapose(&refs).map_err(|_| MeasureError::RowMismatch)?;
    let mut junction = 0;
    for p in &parts[..parts.len() - 1] {
        junction += p.width();
        for r in 0..out.rows() {
            out.set_marker(r, junction - 1, true);
        }
    }
    Ok(out)
}

/// Spread (max minus min) over all start positions of the `block`-long
/// averages of the indicator "`pattern` occurs here".
pub fn cesaro_spread(word: &[Symbol], pattern: &[Symbol], block: usize) -> Result<BigRational, MeasureError> {
    if block == 0 || word.len() < 2 * block || pattern.is_empty() || pattern.len() > word.len() {
        return Err(MeasureError::WindowTooShort {
            len: word.len(),
            block,
        });
    }
    let hits: Vec<u32> = word
        .windows(pattern.len())
        .map(|w| u32::from(w == pattern))
        .collect();
    if hits.len() < block {
        return Err(MeasureError::WindowTooShort {
            len: word.len(),
            block,
        });
    }
    let mut sum: u32 = hits[..block].iter().sum();
    let (mut lo, mut hi) = (sum, sum);
    for i in block..hits.len() {
        sum = sum + hits[i] - hits[i - block];
        lo = lo.min(sum);
        hi = hi.max(sum);
    }
    Ok(BigRational::new(BigInt::from(hi - lo), BigInt::from(block)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rat(p: i64, q: i64) -> BigRational {
        BigRational::new(BigInt::from(p), BigInt::from(q))
    }

    fn row(s: &str) -> Rectangle {
        Rectangle::from_row_str(s).unwrap()
    }

    fn t(l: usize, r: usize) -> Truncation {
        Truncation::new(l, r).unwrap()
    }

    #[test]
    fn frequency_examples() {
        assert_eq!(frequency(&row("12121"), &row("12")), rat(1, 2));
        assert_eq!(frequency(&row("12121"), &row("12121")), rat(1, 1));
        assert_eq!(frequency(&row("121"), &row("1")), rat(2, 3));
        assert_eq!(frequency(&row("12"), &row("121")), rat(0, 1));
        // flags take part in equality
        assert_eq!(frequency(&row("1|21"), &row("1")), rat(1, 3));
    }

    #[test]
    fn empirical_examples() {
        let m = EmpiricalMeasure::from_rectangle(&row("1111"), t(1, 2)).unwrap();
        assert_eq!(m.weight(&row("1")), rat(1, 1));
        assert_eq!(m.weight(&row("11")), rat(1, 1));
        assert_eq!(m.support_len(), 2);

        let m = EmpiricalMeasure::from_rectangle(&row("1212"), t(1, 1)).unwrap();
        assert_eq!(m.weight(&row("1")), rat(1, 2));
        assert_eq!(m.weight(&row("2")), rat(1, 2));

        assert!(matches!(
            EmpiricalMeasure::from_rectangle(&row("12"), t(1, 3)),
            Err(MeasureError::TruncationTooLarge { .. })
        ));
    }

    #[test]
    fn empirical_two_rows_by_enumeration() {
        let w = crate::arrays::lift_binary(&[0, 1, 0, 0, 1, 0], 2).unwrap();
        let rect = w.to_rectangle(2, None).unwrap();
        let m = EmpiricalMeasure::from_rectangle(&rect, t(2, 2)).unwrap();
        for (l, r) in t(2, 2).dims() {
            let offsets = rect.width() - r + 1;
            let subs: Vec<Rectangle> = (0..offsets).map(|i| rect.sub(l, i, r)).collect();
            for q in &subs {
                let count = subs.iter().filter(|s| *s == q).count();
                assert_eq!(m.weight(q), rat(count as i64, offsets as i64));
            }
            assert_eq!(m.dimension_sum(l, r), rat(1, 1));
        }
    }

    #[test]
    fn dstar_examples() {
        let r = row("12112");
        assert!(dstar(&r, &r, t(1, 3)).unwrap().value.is_zero());
        assert_eq!(dstar(&row("11"), &row("12"), t(1, 2)).unwrap().value, rat(1, 2));
        let point = EmpiricalMeasure::constant(&[1], t(1, 2)).unwrap();
        let d = dstar(&row("121"), &point, t(1, 2)).unwrap();
        assert_eq!(d.value, rat(5, 12));
        // 2 * (1 - (1 - 1/2)(1 - 1/4))
        assert_eq!(d.tail_bound, rat(5, 4));
        let other = EmpiricalMeasure::constant(&[1], t(1, 3)).unwrap();
        assert!(matches!(
            dstar(&row("121"), &other, t(1, 2)),
            Err(MeasureError::TruncationMismatch { .. })
        ));
    }

    #[test]
    fn mixture_examples() {
        let a = EmpiricalMeasure::constant(&[1], t(1, 2)).unwrap();
        let b = EmpiricalMeasure::constant(&[2], t(1, 2)).unwrap();
        let same = EmpiricalMeasure::mixture(&[(rat(1, 1), &a)]).unwrap();
        assert_eq!(same.weights(), a.weights());
        let half = EmpiricalMeasure::mixture(&[(rat(1, 2), &a), (rat(1, 2), &b)]).unwrap();
        assert_eq!(half.weight(&row("1")), rat(1, 2));
        assert_eq!(half.dimension_sum(1, 2), rat(1, 1));
        assert!(EmpiricalMeasure::mixture(&[(rat(1, 2), &a)]).is_err());
    }

    #[test]
    fn concat_examples() {
        let r = row("121");
        assert_eq!(concat(std::slice::from_ref(&r)).unwrap(), r);
        let c = concat(&[row("11"), row("2")]).unwrap();
        assert_eq!(c, row("11|2"));
        let parts = [row("12"), row("212"), row("1")];
        assert_eq!(concat(&parts).unwrap().width(), 6);
        let two = Rectangle::from_rows(&[vec![1, 1], vec![1, 2]]).unwrap();
        assert_eq!(concat(&[two, row("1")]), Err(MeasureError::RowMismatch));
    }

    #[test]
    fn cesaro_examples() {
        let periodic: Vec<Symbol> = [1, 2].repeat(20);
        assert!(cesaro_spread(&periodic, &[1], 4).unwrap().is_zero());
        assert_eq!(cesaro_spread(&periodic, &[1], 3).unwrap(), rat(1, 3));
        assert!(cesaro_spread(&[2; 30], &[2, 2], 5).unwrap().is_zero());
        assert!(cesaro_spread(&[1; 5], &[1], 3).is_err());
    }

    #[test]
    fn parallel_counting_is_partition_independent() {
        let bits: Vec<u32> = (0..40_000u32).map(|i| 1 + (i.wrapping_mul(2_654_435_761) >> 31) % 2).collect();
        let rect = Rectangle::from_rows(&[bits]).unwrap();
        let counts = count_subrectangles(&rect, 1, 3);
        let mut serial: HashMap<Rectangle, u64> = HashMap::new();
        for i in 0..rect.width() - 2 {
            *serial.entry(rect.sub(1, i, 3)).or_default() += 1;
        }
        assert_eq!(counts, serial);
    }

    #[test]
    fn truncation_parsing() {
        assert_eq!("2x4".parse::<Truncation>().unwrap(), t(2, 4));
        assert!("2by4".parse::<Truncation>().is_err());
        assert!("0x4".parse::<Truncation>().is_err());
    }
}
