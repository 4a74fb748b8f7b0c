//! Hierarchical marker systems with two gap sizes per row.
//!
//! A marker at position `n` sits between columns `n` and `n + 1`. Rows are
//! zero-based; row `r` uses base gap `gaps[r]` and may only show gaps of
//! length `gaps[r]` or `gaps[r] + 1` between consecutive markers inside the
//! window.

use std::cmp::Ordering;

use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MarkerError {
    #[error("gap {p} has no decomposition into positive numbers of {l}- and {}-gaps", l + 1)]
    NoDecomposition { p: u64, l: u64 },
    #[error("no flanking markers around position {target} to re-decompose from")]
    InsufficientRoom { target: i64 },
    #[error("invalid gap sequence: {0}")]
    GapSequence(String),
    #[error("invalid marker positions: {0}")]
    Positions(String),
}

/// `a` gaps of length `l` followed by `b` gaps of length `l + 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GapDecomposition {
    pub a: u64,
    pub b: u64,
    pub l: u64,
}

impl GapDecomposition {
    pub fn total(&self) -> u64 {
        self.a * self.l + self.b * (self.l + 1)
    }

    /// Smaller of the two lengths covered by each gap kind.
    pub fn min_share(&self) -> u64 {
        (self.a * self.l).min(self.b * (self.l + 1))
    }
}

/// Among the positive solutions of `a*l + b*(l+1) = p`, picks the one with
/// `|a/b - 1|` minimal, ties going to the larger `a`.
pub fn decompose_gap(p: u64, l: u64) -> Result<GapDecomposition, MarkerError> {
    if l < 2 {
        return Err(MarkerError::GapSequence(format!("base gap {l} < 2")));
    }
    // a*l ≡ -a (mod l+1), so a ≡ -p.
    let m = l + 1;
    let mut a0 = (m - p % m) % m;
    if a0 == 0 {
        a0 = m;
    }
    let candidate = |t: u64| -> Option<GapDecomposition> {
        let a = a0 + t * m;
        let used = a.checked_mul(l)?;
        if used >= p {
            return None;
        }
        let rest = p - used;
        rest.is_multiple_of(m).then(|| GapDecomposition { a, b: rest / m, l })
    };
    // a/b is increasing in t, so |a/b - 1| is unimodal: look around a = b.
    let balanced = p / (2 * l + 1);
    let centre = balanced.saturating_sub(a0) / m;
    let mut best: Option<GapDecomposition> = None;
    for t in centre.saturating_sub(2)..=centre + 2 {
        let Some(d) = candidate(t) else { continue };
        best = Some(match best {
            None => d,
            Some(cur) => match ratio_distance(&d).cmp_with(&ratio_distance(&cur)) {
                Ordering::Less => d,
                Ordering::Equal if d.a > cur.a => d,
                _ => cur,
            },
        });
    }
    if best.is_none() && candidate(0).is_some() {
        best = candidate(0);
    }
    best.ok_or(MarkerError::NoDecomposition { p, l })
}

/// `|a - b| / b` kept as a fraction.
struct RatioDistance {
    num: u128,
    den: u128,
}

impl RatioDistance {
    fn cmp_with(&self, other: &RatioDistance) -> Ordering {
        (self.num * other.den).cmp(&(other.num * self.den))
    }
}

fn ratio_distance(d: &GapDecomposition) -> RatioDistance {
    RatioDistance {
        num: u128::from(d.a.abs_diff(d.b)),
        den: u128::from(d.b),
    }
}

/// Interior cuts splitting `[start, end]` into `a` gaps of length `l`
/// followed by `b` gaps of length `l + 1`.
pub fn subdivide_gap(start: i64, end: i64, l: u64) -> Result<Vec<i64>, MarkerError> {
    if end <= start {
        return Err(MarkerError::NoDecomposition { p: 0, l });
    }
    let d = decompose_gap((end - start) as u64, l)?;
    let mut cuts = Vec::with_capacity((d.a + d.b) as usize);
    let mut pos = start;
    for _ in 0..d.a {
        pos += l as i64;
        cuts.push(pos);
    }
    for _ in 0..d.b {
        pos += l as i64 + 1;
        cuts.push(pos);
    }
    cuts.pop();
    Ok(cuts)
}

/// Like [`subdivide_gap`] but only materializes cuts in `[lo, hi]`, plus the
/// first cut past `hi` if there is one.
fn subdivide_clipped(start: i64, end: i64, l: u64, lo: i64, hi: i64) -> Result<Vec<i64>, MarkerError> {
    let d = decompose_gap((end - start) as u64, l)?;
    let l = l as i64;
    let long_start = start + d.a as i64 * l;
    let mut cuts = Vec::new();
    let mut push = |pos: i64| -> bool {
        if pos >= end {
            return false;
        }
        if pos >= lo {
            cuts.push(pos);
        }
        pos <= hi
    };
    let first_short = if lo > start { ((lo - start) / l).max(1) } else { 1 };
    for i in first_short..=d.a as i64 {
        if !push(start + i * l) {
            return Ok(cuts);
        }
    }
    let first_long = if lo > long_start {
        ((lo - long_start) / (l + 1)).max(1)
    } else {
        1
    };
    for i in first_long..=d.b as i64 {
        if !push(long_start + i * (l + 1)) {
            return Ok(cuts);
        }
    }
    Ok(cuts)
}

/// Per-row sorted marker positions over a window of `columns` columns
/// starting at `origin`. Positions lie in `[origin - 1, origin + columns - 1]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MarkerSystem {
    origin: i64,
    columns: usize,
    gaps: Vec<u64>,
    rows: Vec<Vec<i64>>,
}

impl MarkerSystem {
    pub fn from_positions(
        origin: i64,
        columns: usize,
        gaps: Vec<u64>,
        rows: Vec<Vec<i64>>,
    ) -> Result<Self, MarkerError> {
        if gaps.len() != rows.len() {
            return Err(MarkerError::Positions(format!(
                "{} gap parameters for {} rows",
                gaps.len(),
                rows.len()
            )));
        }
        let (lo, hi) = (origin - 1, origin + columns as i64 - 1);
        for (r, row) in rows.iter().enumerate() {
            if row.windows(2).any(|w| w[0] >= w[1]) {
                return Err(MarkerError::Positions(format!("row {r} is not strictly sorted")));
            }
            if row.iter().any(|&p| p < lo || p > hi) {
                return Err(MarkerError::Positions(format!(
                    "row {r} has positions outside [{lo}, {hi}]"
                )));
            }
        }
        Ok(Self {
            origin,
            columns,
            gaps,
            rows,
        })
    }

    /// Infers each row's base gap as its smallest interior gap (or 0 when the
    /// row has fewer than two markers).
    pub fn infer(origin: i64, columns: usize, rows: Vec<Vec<i64>>) -> Result<Self, MarkerError> {
        let gaps = rows
            .iter()
            .map(|row| {
                row.windows(2)
                    .map(|w| (w[1] - w[0]) as u64)
                    .min()
                    .unwrap_or(0)
            })
            .collect();
        Self::from_positions(origin, columns, gaps, rows)
    }

    /// Top-down construction: the top row alternates gaps `l_K`, `l_K + 1`
    /// starting right before the window; each lower row subdivides every gap
    /// of the row above with [`subdivide_gap`].
    pub fn build(columns: usize, origin: i64, gaps: &[u64]) -> Result<Self, MarkerError> {
        validate_gap_sequence(gaps)?;
        let lo = origin - 1;
        let hi = origin + columns as i64 - 1;
        let top = *gaps.last().expect("validated nonempty") as i64;
        let mut extended = vec![lo];
        let mut pos = lo;
        let mut long = false;
        while pos <= hi {
            pos += if long { top + 1 } else { top };
            long = !long;
            extended.push(pos);
        }
        let mut rows = vec![Vec::new(); gaps.len()];
        rows[gaps.len() - 1] = extended.clone();
        for r in (0..gaps.len() - 1).rev() {
            let upper = std::mem::take(&mut extended);
            let pieces: Result<Vec<Vec<i64>>, MarkerError> = upper
                .par_windows(2)
                .map(|w| {
                    let mut piece = vec![w[0]];
                    if w[0] <= hi {
                        piece.extend(subdivide_clipped(w[0], w[1], gaps[r], lo, hi)?);
                    }
                    Ok(piece)
                })
                .collect();
            let mut next: Vec<i64> = pieces?.concat();
            next.push(*upper.last().expect("nonempty"));
            // keep everything up to and including the first position past hi
            if let Some(cut) = next.iter().position(|&p| p > hi) {
                next.truncate(cut + 1);
            }
            rows[r] = next.clone();
            extended = next;
        }
        for row in &mut rows {
            row.retain(|&p| p <= hi);
        }
        Self::from_positions(origin, columns, gaps.to_vec(), rows)
    }

    pub fn origin(&self) -> i64 {
        self.origin
    }

    pub fn columns(&self) -> usize {
        self.columns
    }

    pub fn row_count(&self) -> usize {
        self.rows.len()
    }

    pub fn gap(&self, r: usize) -> u64 {
        self.gaps[r]
    }

    pub fn gaps(&self) -> &[u64] {
        &self.gaps
    }

    pub fn row(&self, r: usize) -> &[i64] {
        &self.rows[r]
    }

    pub fn rows(&self) -> &[Vec<i64>] {
        &self.rows
    }

    pub fn has_marker(&self, r: usize, position: i64) -> bool {
        self.rows
            .get(r)
            .is_some_and(|row| row.binary_search(&position).is_ok())
    }

    /// Consecutive marker pairs of row `r`.
    pub fn interior_gaps(&self, r: usize) -> impl Iterator<Item = (i64, i64)> + '_ {
        self.rows[r].windows(2).map(|w| (w[0], w[1]))
    }

    pub fn shift(&self, t: i64) -> Self {
        Self {
            origin: self.origin - t,
            columns: self.columns,
            gaps: self.gaps.clone(),
            rows: self
                .rows
                .iter()
                .map(|row| row.iter().map(|p| p - t).collect())
                .collect(),
        }
    }

    pub(crate) fn set_row(&mut self, r: usize, positions: Vec<i64>) {
        self.rows[r] = positions;
    }

    pub fn check_two_gaps(&self, r: usize) -> bool {
        let l = self.gaps[r] as i64;
        self.interior_gaps(r)
            .all(|(p, q)| q - p == l || q - p == l + 1)
    }

    /// Every interval of `length` columns inside the window must fully
    /// contain at least `length / (3l)` gaps of length `l` and
    /// `length / (3(l+1))` gaps of length `l + 1`.
    ///
    /// Panics if `length < 3(l + 1)`.
    pub fn check_balanced(&self, r: usize, length: u64) -> bool {
        let l = self.gaps[r];
        assert!(length >= 3 * (l + 1), "balance length {length} below 3(l+1)");
        if length > self.columns as u64 {
            return true;
        }
        let gaps: Vec<(i64, i64)> = self.interior_gaps(r).collect();
        let mut short_prefix = vec![0u64; gaps.len() + 1];
        let mut long_prefix = vec![0u64; gaps.len() + 1];
        for (i, &(p, q)) in gaps.iter().enumerate() {
            let len = (q - p) as u64;
            short_prefix[i + 1] = short_prefix[i] + u64::from(len == l);
            long_prefix[i + 1] = long_prefix[i] + u64::from(len == l + 1);
        }
        let span = length as i64;
        let last_start = self.origin + self.columns as i64 - span;
        (self.origin..=last_start).all(|s| {
            // gap (p, q) covers columns p+1..=q
            let from = gaps.partition_point(|&(p, _)| p < s - 1);
            let to = gaps.partition_point(|&(_, q)| q < s + span);
            let (short, long) = if to > from {
                (
                    short_prefix[to] - short_prefix[from],
                    long_prefix[to] - long_prefix[from],
                )
            } else {
                (0, 0)
            };
            short * 3 * l >= length && long * 3 * (l + 1) >= length
        })
    }

    /// Positions of row `r + 1` are a subset of those of row `r`.
    pub fn check_congruency(&self) -> bool {
        self.rows.windows(2).all(|pair| {
            pair[1]
                .iter()
                .all(|p| pair[0].binary_search(p).is_ok())
        })
    }

    /// Balance length used for row `r` of a built system:
    /// `6 (l_r + 1)` times the span of two consecutive gaps of the row above
    /// (of the row itself for the top row).
    pub fn balance_length(&self, r: usize) -> u64 {
        let l = self.gaps[r];
        let span = match self.gaps.get(r + 1) {
            Some(&upper) => upper.saturating_mul(2).saturating_add(2),
            None => l.saturating_mul(2).saturating_add(1),
        };
        span.saturating_mul(6 * (l + 1))
    }

    /// All three structural checks over every row.
    pub fn check_all(&self) -> MarkerChecks {
        MarkerChecks {
            two_gaps: (0..self.row_count()).all(|r| self.check_two_gaps(r)),
            balanced: (0..self.row_count()).all(|r| self.check_balanced(r, self.balance_length(r))),
            congruent: self.check_congruency(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MarkerChecks {
    pub two_gaps: bool,
    pub balanced: bool,
    pub congruent: bool,
}

impl MarkerChecks {
    pub fn all(&self) -> bool {
        self.two_gaps && self.balanced && self.congruent
    }
}

pub fn validate_gap_sequence(gaps: &[u64]) -> Result<(), MarkerError> {
    if gaps.is_empty() {
        return Err(MarkerError::GapSequence("no rows".into()));
    }
    if gaps[0] < 2 {
        return Err(MarkerError::GapSequence(format!("l_1 = {} < 2", gaps[0])));
    }
    for (k, w) in gaps.windows(2).enumerate() {
        let min = w[0].checked_mul(w[0]).and_then(|sq| sq.checked_mul(9));
        if min.is_none_or(|m| w[1] < m) {
            return Err(MarkerError::GapSequence(format!(
                "l_{} = {} < 9 * l_{}^2",
                k + 2,
                w[1],
                k + 1
            )));
        }
    }
    Ok(())
}

/// Moves markers of one row so that `target` becomes a marker, keeping all
/// interior gaps in `{l, l + 1}`.
///
/// The nearest flanking markers `p- < target < p+` whose distances to
/// `target` both decompose are used; everything in `(p-, p+)` is replaced by
/// `subdivide_gap(p-, target) ∪ {target} ∪ subdivide_gap(target, p+)`.
/// Flanking markers are searched within `9l² + l` of `target`.
pub fn repair_congruency(positions: &[i64], target: i64, l: u64) -> Result<Vec<i64>, MarkerError> {
    if positions.binary_search(&target).is_ok() {
        return Ok(positions.to_vec());
    }
    let radius = (9 * l * l + l) as i64;
    let split = positions.partition_point(|&p| p < target);
    let (left, right) = positions.split_at(split);
    let pick = |candidates: &mut dyn Iterator<Item = &i64>| -> Result<i64, MarkerError> {
        let mut seen = false;
        let mut last_err = MarkerError::InsufficientRoom { target };
        for &p in candidates {
            if (p - target).abs() > radius {
                break;
            }
            seen = true;
            match decompose_gap((p - target).unsigned_abs(), l) {
                Ok(_) => return Ok(p),
                Err(e) => last_err = e,
            }
        }
        if seen {
            Err(last_err)
        } else {
            Err(MarkerError::InsufficientRoom { target })
        }
    };
    let before = pick(&mut left.iter().rev())?;
    let after = pick(&mut right.iter())?;
    let mut out: Vec<i64> = positions.iter().copied().filter(|&p| p <= before).collect();
    out.extend(subdivide_gap(before, target, l)?);
    out.push(target);
    out.extend(subdivide_gap(target, after, l)?);
    out.extend(positions.iter().copied().filter(|&p| p >= after));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// All positive solutions, by enumeration.
    fn all_solutions(p: u64, l: u64) -> Vec<(u64, u64)> {
        (1..=p / l)
            .filter_map(|a| {
                let rest = p.checked_sub(a * l)?;
                (rest > 0 && rest % (l + 1) == 0).then_some((a, rest / (l + 1)))
            })
            .collect()
    }

    #[test]
    fn decompose_examples() {
        let d = decompose_gap(7, 3).unwrap();
        assert_eq!((d.a, d.b), (1, 1));
        let d = decompose_gap(100, 3).unwrap();
        assert_eq!((d.a, d.b), (16, 13));
        assert_eq!(
            decompose_gap(12, 3),
            Err(MarkerError::NoDecomposition { p: 12, l: 3 })
        );
        assert_eq!(all_solutions(100, 3).len(), 8);
    }

    #[test]
    fn decompose_matches_enumeration() {
        for l in 2..=9u64 {
            for p in 1..=400u64 {
                let sols = all_solutions(p, l);
                match decompose_gap(p, l) {
                    Err(_) => assert!(sols.is_empty(), "p={p} l={l}"),
                    Ok(d) => {
                        let best = sols
                            .iter()
                            .copied()
                            .min_by(|x, y| {
                                let dx = x.0.abs_diff(x.1) * y.1;
                                let dy = y.0.abs_diff(y.1) * x.1;
                                dx.cmp(&dy).then(y.0.cmp(&x.0))
                            })
                            .unwrap();
                        assert_eq!((d.a, d.b), best, "p={p} l={l}");
                    }
                }
            }
        }
    }

    #[test]
    fn subdivide_examples() {
        assert_eq!(subdivide_gap(0, 7, 3).unwrap(), vec![3]);
        assert_eq!(subdivide_gap(0, 10, 3).unwrap(), vec![3, 6]);
        assert!(matches!(
            subdivide_gap(0, 12, 3),
            Err(MarkerError::NoDecomposition { .. })
        ));
    }

    #[test]
    fn clipped_subdivision_agrees_with_full() {
        for (start, end, l) in [(0i64, 100i64, 3u64), (5, 405, 4), (-10, 90, 2)] {
            let full = subdivide_gap(start, end, l).unwrap();
            for (lo, hi) in [(start, end), (start + 17, start + 40), (end - 9, end + 5)] {
                let clipped = subdivide_clipped(start, end, l, lo, hi).unwrap();
                let mut expected: Vec<i64> = full.iter().copied().filter(|&p| p >= lo && p <= hi).collect();
                if let Some(&next) = full.iter().find(|&&p| p > hi) {
                    expected.push(next);
                }
                assert_eq!(clipped, expected);
            }
        }
    }

    fn system(rows: Vec<Vec<i64>>, gaps: Vec<u64>, columns: usize) -> MarkerSystem {
        MarkerSystem::from_positions(1, columns, gaps, rows).unwrap()
    }

    fn from_gaps(gaps: &[i64]) -> Vec<i64> {
        let mut pos = vec![0];
        for g in gaps {
            pos.push(pos.last().unwrap() + g);
        }
        pos
    }

    #[test]
    fn two_gap_examples() {
        let ms = system(vec![from_gaps(&[3, 4, 3, 3, 4])], vec![3], 40);
        assert!(ms.check_two_gaps(0));
        let ms = system(vec![from_gaps(&[3, 5])], vec![3], 40);
        assert!(!ms.check_two_gaps(0));
        let ms = system(vec![vec![4]], vec![3], 40);
        assert!(ms.check_two_gaps(0));
    }

    #[test]
    fn balance_examples() {
        let alternating = from_gaps(&[3, 4].repeat(20));
        let ms = system(vec![alternating], vec![3], 140);
        // full containment: a 21-interval starting mid-gap holds only two 3-gaps
        assert!(!ms.check_balanced(0, 21));
        assert!(ms.check_balanced(0, 35));
        let ms = system(vec![from_gaps(&[3; 40])], vec![3], 120);
        assert!(!ms.check_balanced(0, 21));
        assert!(!ms.check_balanced(0, 60));
        let ms = system(vec![from_gaps(&[4; 40])], vec![3], 160);
        assert!(!ms.check_balanced(0, 60));
    }

    #[test]
    fn balance_against_brute_force() {
        let positions = from_gaps(&[3, 3, 4, 3, 4, 4, 3, 3, 3, 4, 4, 3, 4, 3, 4, 4, 3, 3]);
        let columns = *positions.last().unwrap();
        let ms = system(vec![positions.clone()], vec![3], columns as usize);
        for length in 12..=columns as u64 {
            let brute = (1..=columns - length as i64 + 1).all(|s| {
                let e = s + length as i64 - 1;
                let (mut short, mut long) = (0u64, 0u64);
                for w in positions.windows(2) {
                    if w[0] + 1 >= s && w[1] <= e {
                        match w[1] - w[0] {
                            3 => short += 1,
                            4 => long += 1,
                            _ => {}
                        }
                    }
                }
                short * 9 >= length && long * 12 >= length
            });
            assert_eq!(ms.check_balanced(0, length), brute, "length {length}");
        }
    }

    #[test]
    fn congruency_examples() {
        let ms = system(vec![vec![0, 3, 6, 9, 12], vec![0, 12]], vec![3, 12], 20);
        assert!(ms.check_congruency());
        let ms = system(vec![vec![0, 3, 6], vec![5]], vec![3, 5], 20);
        assert!(!ms.check_congruency());
        let ms = system(vec![vec![0, 3]], vec![3], 20);
        assert!(ms.check_congruency());
    }

    #[test]
    fn repair_examples() {
        let row: Vec<i64> = (0..=10).map(|i| 3 * i).collect();
        assert_eq!(repair_congruency(&row, 9, 3).unwrap(), row);

        let fixed = repair_congruency(&row, 7, 3).unwrap();
        assert!(fixed.contains(&7));
        let gaps: Vec<i64> = fixed.windows(2).map(|w| w[1] - w[0]).collect();
        assert!(gaps.iter().all(|&g| g == 3 || g == 4), "{gaps:?}");
        // left side re-decomposes 7 as 3 + 4
        assert_eq!(&fixed[..3], &[0, 3, 7]);
        // positions beyond the repaired stretch are untouched
        assert_eq!(fixed.last(), Some(&30));
        for p in row.iter().filter(|p| !fixed.contains(p)) {
            assert!((p - 7).abs() <= 9 * 9 + 3);
        }

        assert_eq!(
            repair_congruency(&[20, 23], 5, 3),
            Err(MarkerError::InsufficientRoom { target: 5 })
        );
    }

    #[test]
    fn build_examples() {
        let ms = MarkerSystem::build(20, 0, &[3]).unwrap();
        assert!(ms.check_two_gaps(0));
        assert!(ms.row(0).len() >= 5);

        let ms = MarkerSystem::build(1000, 0, &[3, 100]).unwrap();
        assert!(ms.check_congruency());
        assert!(ms.check_all().all());
        assert!(ms.row(1).iter().all(|p| ms.has_marker(0, *p)));

        assert!(MarkerSystem::build(100, 0, &[3, 12]).is_err());
    }

    #[test]
    fn four_rows_with_huge_top_gap() {
        let gaps = [2, 37, 9 * 37 * 37, 9 * 12_321 * 12_321];
        let m = MarkerSystem::build(5000, 7, &gaps).unwrap();
        assert!(m.check_all().all());
        assert_eq!(m.row(3), &[6]);
        assert!(validate_gap_sequence(&[2, 36, 11_664, u64::MAX / 2, u64::MAX]).is_err());
    }

    #[test]
    fn exact_third_share_under_a_run_is_unbalanced() {
        // 36 = 6*2 + 8*3: the short gaps hold exactly a third of each
        // row-1 gap, and row 1 is a run of 36s under the wide third row.
        assert_eq!(decompose_gap(36, 2).unwrap().min_share() * 3, 36);
        let m = MarkerSystem::build(5000, 7, &[2, 36, 11_664]).unwrap();
        let checks = m.check_all();
        assert!(checks.two_gaps && checks.congruent);
        assert!(!checks.balanced);
        assert!(MarkerSystem::build(5000, 7, &[2, 36]).unwrap().check_all().all());
    }

    #[test]
    fn build_covers_the_window() {
        let ms = MarkerSystem::build(5000, -37, &[2, 40, 14_400]).unwrap();
        assert!(ms.check_all().all());
        assert_eq!(ms.row(0)[0], -38);
        let last = *ms.row(0).last().unwrap();
        assert!(last > -37 + 5000 - 1 - 4);
    }
}
