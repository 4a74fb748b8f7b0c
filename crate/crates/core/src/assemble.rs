//! Base rectangles, transition lengths and tabbed rectangles in a binary
//! reference system, embedding of periodic and aperiodic windows, and the
//! language-level convergence check.

use std::collections::{BTreeSet, HashMap};

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::arrays::{lift_binary, unlift_binary, ArrayError, ArrayWindow, ConstraintMode, Rectangle, Symbol};
use crate::generators::{GeneratorError, LanguageOracle, OracleKind};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AssembleError {
    #[error("reference system must be binary, alphabet has {0} symbols")]
    NotBinary(usize),
    #[error("base rectangle {0} is not in the lifted language")]
    BaseNotInLanguage(String),
    #[error("no transition length for {base} certified within horizon {horizon}")]
    NotFoundWithinHorizon { base: String, horizon: usize },
    #[error("no witness for gap {0}")]
    NoWitness(usize),
    #[error("length {0} is below the smallest kit length")]
    BelowKit(usize),
    #[error("invalid period set: {0}")]
    InvalidPeriodSpec(String),
    #[error("unsupported period family: {0}")]
    UnsupportedFamily(String),
    #[error("cannot embed: {0}")]
    Embed(String),
    #[error("rows from {0} on are not inverse-limit consistent")]
    Inconsistent(usize),
    #[error(transparent)]
    Generator(#[from] GeneratorError),
    #[error(transparent)]
    Array(#[from] ArrayError),
}

pub type Result<T> = std::result::Result<T, AssembleError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum PeriodFamily {
    None,
    AllPrimes,
    Geometric(u64),
}

/// The set of minimal periods: an explicit finite part plus an optional
/// symbolic infinite family.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PeriodSpec {
    pub explicit: BTreeSet<u64>,
    pub family: PeriodFamily,
    pub all_periodic: bool,
}

/// Exceptional iff all measures are periodic and some infinite sequence of
/// periods has no member of the set dividing all but finitely many of its
/// terms.
pub fn detect_exceptional(spec: &PeriodSpec) -> Result<bool> {
    if spec.explicit.contains(&0) {
        return Err(AssembleError::InvalidPeriodSpec("periods are positive".into()));
    }
    if spec.all_periodic && spec.family == PeriodFamily::None && spec.explicit.is_empty() {
        return Err(AssembleError::InvalidPeriodSpec("no periods given".into()));
    }
    if let PeriodFamily::Geometric(b) = spec.family {
        if b < 2 {
            return Err(AssembleError::UnsupportedFamily(format!("geometric({b})")));
        }
    }
    if !spec.all_periodic {
        return Ok(false);
    }
    Ok(match spec.family {
        PeriodFamily::None => false,
        // b divides every b^n
        PeriodFamily::Geometric(_) => false,
        // only 1 divides infinitely many primes
        PeriodFamily::AllPrimes => !spec.explicit.contains(&1),
    })
}

fn require_binary(x0: &LanguageOracle) -> Result<()> {
    match x0.alphabet().len() {
        1 | 2 => Ok(()),
        n => Err(AssembleError::NotBinary(n)),
    }
}

fn to_bits(x0: &LanguageOracle, word: &[Symbol]) -> Vec<u8> {
    word.iter()
        .map(|c| x0.alphabet().iter().position(|a| a == c).expect("symbol of the alphabet") as u8)
        .collect()
}

fn to_symbols(x0: &LanguageOracle, bits: &[u8]) -> Option<Vec<Symbol>> {
    bits.iter().map(|&b| x0.alphabet().get(b as usize).copied()).collect()
}

fn lift_rect(bits: &[u8], rows: usize) -> Rectangle {
    lift_binary(bits, rows)
        .and_then(|w| w.to_rectangle(rows, None))
        .expect("word long enough for its lift")
}

/// Membership of a rectangle in the lifted language of `x0`. Marker flags
/// are ignored.
pub fn in_lifted_language(x0: &LanguageOracle, rect: &Rectangle) -> bool {
    unlift_binary(rect)
        .and_then(|bits| to_symbols(x0, &bits))
        .is_some_and(|w| x0.contains(&w))
}

/// Smallest `l0` such that every shift in `[l0, horizon]` has a word with
/// the base word at offset 0 and at that shift. The run of witnesses must
/// cover at least the upper half of `[1, horizon]`.
pub fn transition_length(x0: &LanguageOracle, base: &Rectangle, horizon: usize) -> Result<usize> {
    require_binary(x0)?;
    let word = unlift_binary(base)
        .and_then(|bits| to_symbols(x0, &bits))
        .filter(|w| x0.contains(w))
        .ok_or_else(|| AssembleError::BaseNotInLanguage(base.to_string()))?;
    transition_length_of_word(x0, &word, horizon).map_err(|e| match e {
        AssembleError::NotFoundWithinHorizon { horizon, .. } => AssembleError::NotFoundWithinHorizon {
            base: base.to_string(),
            horizon,
        },
        other => other,
    })
}

fn transition_length_of_word(x0: &LanguageOracle, word: &[Symbol], horizon: usize) -> Result<usize> {
    let not_found = || AssembleError::NotFoundWithinHorizon {
        base: format!("{word:?}"),
        horizon,
    };
    if horizon == 0 {
        return Err(not_found());
    }
    let profile = x0.return_profile(word, horizon)?;
    let run = profile.iter().rev().take_while(|&&ok| ok).count();
    let l0 = horizon + 1 - run;
    if run == 0 || 2 * l0 > horizon {
        return Err(not_found());
    }
    Ok(l0)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KitLevel {
    pub k: usize,
    /// Word of length `3k - 1` whose lift is the base rectangle.
    pub base_word: Vec<Symbol>,
    pub base: Rectangle,
    pub transition: usize,
}

#[derive(Debug, Clone)]
pub struct StitchKit {
    pub x0: LanguageOracle,
    pub horizon: usize,
    pub levels: Vec<KitLevel>,
    /// `l_k = k + max_{i <= k} l(B^(i))`.
    pub lengths: Vec<usize>,
}

/// Tabbed rectangles `R_l` (width `l`) and `R̄_l` (width `l + 1`) over `k`
/// rows.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TabbedPair {
    pub l: usize,
    pub k: usize,
    pub short: Rectangle,
    pub long: Rectangle,
}

pub fn build_stitch_kit(x0: &LanguageOracle, max_level: usize, horizon: usize) -> Result<StitchKit> {
    require_binary(x0)?;
    let levels: Vec<KitLevel> = (1..=max_level)
        .into_par_iter()
        .map(|k| {
            let base_word = x0.min_word(3 * k - 1)?;
            let base = lift_rect(&to_bits(x0, &base_word), k);
            let transition = transition_length_of_word(x0, &base_word, horizon).map_err(|e| match e {
                AssembleError::NotFoundWithinHorizon { horizon, .. } => AssembleError::NotFoundWithinHorizon {
                    base: format!("B^({k}) = {base}"),
                    horizon,
                },
                other => other,
            })?;
            Ok(KitLevel {
                k,
                base_word,
                base,
                transition,
            })
        })
        .collect::<Result<_>>()?;
    let mut lengths = Vec::with_capacity(max_level);
    let mut worst = 0;
    for level in &levels {
        worst = worst.max(level.transition);
        lengths.push(level.k + worst);
    }
    Ok(StitchKit {
        x0: x0.clone(),
        horizon,
        levels,
        lengths,
    })
}

impl StitchKit {
    /// The level `k_l` with `l_{k_l} <= l < l_{k_l + 1}`; the top level is
    /// open-ended.
    pub fn level_for(&self, l: usize) -> Option<usize> {
        let count = self.lengths.partition_point(|&x| x <= l);
        (count > 0).then_some(count)
    }

    fn level(&self, k: usize) -> &KitLevel {
        &self.levels[k - 1]
    }

    /// Columns `k..l+k-1` (resp. `k..l+k`) of the lifted lex-smallest
    /// witness with the base word at offsets 0 and `l` (resp. `l + 1`).
    pub fn tabbed_rectangles(&self, l: usize) -> Result<TabbedPair> {
        let k = self.level_for(l).ok_or(AssembleError::BelowKit(l))?;
        let level = self.level(k);
        let cut = |shift: usize| -> Result<Rectangle> {
            let witness = self
                .x0
                .return_witness(&level.base_word, shift)
                .ok()
                .flatten()
                .ok_or(AssembleError::NoWitness(shift))?;
            let full = lift_rect(&to_bits(&self.x0, &witness), k);
            Ok(full.sub(k, k, shift))
        };
        Ok(TabbedPair {
            l,
            k,
            short: cut(l)?,
            long: cut(l + 1)?,
        })
    }

    /// Every `k_l x k_l` sub-rectangle of the four juxtapositions of the
    /// tabbed pair must lie in the lifted language.
    pub fn check_stitchable(&self, l: usize) -> Result<StitchReport> {
        let pair = self.tabbed_rectangles(l)?;
        Ok(check_pair_stitchable(&self.x0, &pair))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StitchViolation {
    pub pair: String,
    pub column: usize,
    pub rectangle: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StitchReport {
    pub l: usize,
    pub k: usize,
    pub checked: usize,
    pub violations: Vec<StitchViolation>,
}

impl StitchReport {
    pub fn ok(&self) -> bool {
        self.violations.is_empty()
    }
}

pub fn check_pair_stitchable(x0: &LanguageOracle, pair: &TabbedPair) -> StitchReport {
    let k = pair.k;
    let combos = [
        ("RR", &pair.short, &pair.short),
        ("RR'", &pair.short, &pair.long),
        ("R'R", &pair.long, &pair.short),
        ("R'R'", &pair.long, &pair.long),
    ];
    let mut checked = 0;
    let mut violations = Vec::new();
    for (name, a, b) in combos {
        let joined = Rectangle::juxtapose(&[a, b]).expect("equal heights").without_markers();
        for col in 0..=joined.width() - k {
            checked += 1;
            let sub = joined.sub(k, col, k);
            if !in_lifted_language(x0, &sub) {
                violations.push(StitchViolation {
                    pair: name.into(),
                    column: col,
                    rectangle: sub.to_string(),
                });
            }
        }
    }
    StitchReport {
        l: pair.l,
        k,
        checked,
        violations,
    }
}

/// A window whose first `k` rows were overwritten block by block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EmbeddedSystem {
    pub label: String,
    pub window: ArrayWindow,
    pub k: usize,
    /// Marker positions used for the blocks.
    pub markers: Vec<i64>,
    /// First and last replaced column, if any block was complete.
    pub span: Option<(i64, i64)>,
}

impl EmbeddedSystem {
    /// `(k, distinct block widths)`.
    pub fn marker_signature(&self) -> (usize, Vec<u64>) {
        let widths: BTreeSet<u64> = self.markers.windows(2).map(|w| (w[1] - w[0]) as u64).collect();
        (self.k, widths.into_iter().collect())
    }
}

fn embed_blocks(
    window: &ArrayWindow,
    markers: &[i64],
    pair: &TabbedPair,
    label: String,
    allow_long: bool,
) -> Result<EmbeddedSystem> {
    if pair.k >= window.row_count() {
        return Err(AssembleError::Embed(format!(
            "level {} needs more than {} rows",
            pair.k,
            window.row_count()
        )));
    }
    let (lo, hi) = (window.origin() - 1, window.end() - 1);
    if markers.windows(2).any(|w| w[0] >= w[1]) || markers.iter().any(|&m| m < lo || m > hi) {
        return Err(AssembleError::Embed("markers must be increasing and inside the window".into()));
    }
    let mut out = window.clone().with_mode(ConstraintMode::Independent);
    let mut span: Option<(i64, i64)> = None;
    for w in markers.windows(2) {
        let width = (w[1] - w[0]) as usize;
        let block = if width == pair.l {
            &pair.short
        } else if allow_long && width == pair.l + 1 {
            &pair.long
        } else {
            return Err(AssembleError::Embed(format!("gap {width} does not match length {}", pair.l)));
        };
        out.write_block(w[0] + 1, block);
        span = Some((span.map_or(w[0] + 1, |s| s.0), w[1]));
    }
    Ok(EmbeddedSystem {
        label,
        window: out,
        k: pair.k,
        markers: markers.to_vec(),
        span,
    })
}

/// Replaces the first `k_p` rows of every complete period block by `R_p`.
pub fn embed_periodic(window: &ArrayWindow, markers: &[i64], period: usize, kit: &StitchKit) -> Result<EmbeddedSystem> {
    if markers.windows(2).any(|w| (w[1] - w[0]) as usize != period) {
        return Err(AssembleError::Embed(format!("markers are not {period}-periodic")));
    }
    let pair = kit.tabbed_rectangles(period)?;
    embed_blocks(window, markers, &pair, format!("periodic:{period}"), false)
}

/// Replaces every complete gap of width `l` or `l + 1` by the tabbed
/// rectangle of matching width.
pub fn embed_aperiodic(window: &ArrayWindow, markers: &[i64], l: usize, kit: &StitchKit) -> Result<EmbeddedSystem> {
    let pair = kit.tabbed_rectangles(l)?;
    embed_blocks(window, markers, &pair, format!("aperiodic:{l}"), true)
}

/// Recomputes rows `0..k` from row `k` by amalgamation.
pub fn reconstruct(window: &ArrayWindow, from_row: usize) -> Result<ArrayWindow> {
    if from_row >= window.row_count() {
        return Err(AssembleError::Embed(format!("row {from_row} missing")));
    }
    if !window.chain().has_maps() || !window.rows_consistent(from_row) {
        return Err(AssembleError::Inconsistent(from_row));
    }
    let mut out = window.clone();
    for r in (0..from_row).rev() {
        let row = out
            .row(r + 1)
            .iter()
            .map(|&s| window.chain().amalgamate(r, s))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        out.set_row(r, row);
    }
    Ok(out.with_mode(ConstraintMode::InverseLimit))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SystemCheck {
    pub label: String,
    pub k: usize,
    pub precondition_met: bool,
    pub checked: usize,
    pub distinct: usize,
    pub violations: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ConvergenceReport {
    pub w: usize,
    pub reference: String,
    pub systems: Vec<SystemCheck>,
}

impl ConvergenceReport {
    pub fn ok(&self) -> bool {
        self.systems.iter().all(|s| s.precondition_met && s.violations.is_empty())
    }
}

/// Every `w x w` rectangle of each system's first `w` rows inside its
/// replaced span must lie in the lifted language of `x0`.
pub fn convergence_check(systems: &[EmbeddedSystem], x0: &LanguageOracle, w: usize) -> ConvergenceReport {
    let reference = match x0.kind() {
        OracleKind::Periodic => "periodic",
        OracleKind::Sturmian => "sturmian",
        OracleKind::Substitution => "substitution",
        OracleKind::Bernoulli => "bernoulli",
        OracleKind::FullShift => "full_shift",
    };
    let checks = systems
        .par_iter()
        .map(|sys| {
            let mut check = SystemCheck {
                label: sys.label.clone(),
                k: sys.k,
                precondition_met: w >= 1 && sys.k >= w,
                checked: 0,
                distinct: 0,
                violations: Vec::new(),
            };
            let Some((first, last)) = sys.span.filter(|_| check.precondition_met) else {
                return check;
            };
            if ((last - first + 1) as usize) < w {
                return check;
            }
            let rect = sys
                .window
                .extract_rectangle(w, first, last, None)
                .expect("span inside the window");
            let mut seen: HashMap<Rectangle, bool> = HashMap::new();
            for col in 0..=rect.width() - w {
                check.checked += 1;
                let sub = rect.sub(w, col, w);
                let ok = *seen.entry(sub.clone()).or_insert_with(|| in_lifted_language(x0, &sub));
                if !ok {
                    check.violations.push(format!("column {}: {sub}", first + col as i64));
                }
            }
            check.distinct = seen.len();
            check
        })
        .collect();
    ConvergenceReport {
        w,
        reference: reference.into(),
        systems: checks,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generators::{chacon_rules, full_shift_oracle, periodic_oracle, substitution_oracle};

    fn spec(explicit: &[u64], family: PeriodFamily) -> PeriodSpec {
        PeriodSpec {
            explicit: explicit.iter().copied().collect(),
            family,
            all_periodic: true,
        }
    }

    #[test]
    fn exceptional_examples() {
        assert!(!detect_exceptional(&spec(&[2, 4, 6], PeriodFamily::None)).unwrap());
        assert!(detect_exceptional(&spec(&[], PeriodFamily::AllPrimes)).unwrap());
        assert!(!detect_exceptional(&spec(&[], PeriodFamily::Geometric(2))).unwrap());
        assert!(!detect_exceptional(&spec(&[1], PeriodFamily::AllPrimes)).unwrap());
        assert!(!detect_exceptional(&spec(&[3], PeriodFamily::Geometric(2))).unwrap());
        let mut mixed = spec(&[], PeriodFamily::AllPrimes);
        mixed.all_periodic = false;
        assert!(!detect_exceptional(&mixed).unwrap());
        assert!(detect_exceptional(&spec(&[], PeriodFamily::None)).is_err());
        assert!(detect_exceptional(&spec(&[], PeriodFamily::Geometric(1))).is_err());
    }

    #[test]
    fn primes_have_no_cofinal_divisor() {
        let primes: Vec<u64> = (2..2000u64).filter(|&n| (2..n).take_while(|d| d * d <= n).all(|d| n % d != 0)).collect();
        for &d in &primes {
            assert_eq!(primes.iter().filter(|&&p| p % d == 0).count(), 1);
        }
        let powers: Vec<u64> = (1..40).map(|n| 1u64 << n).collect();
        assert!(powers.iter().all(|p| p % 2 == 0));
    }

    fn r(s: &str) -> Rectangle {
        Rectangle::from_row_str(s).unwrap()
    }

    #[test]
    fn transition_examples() {
        let full = full_shift_oracle(2).unwrap();
        assert_eq!(transition_length(&full, &r("12"), 20).unwrap(), 2);
        assert_eq!(transition_length(&full, &r("11"), 20).unwrap(), 1);
        let alternating = periodic_oracle(&[1, 2]).unwrap();
        assert!(matches!(
            transition_length(&alternating, &r("1"), 20),
            Err(AssembleError::NotFoundWithinHorizon { .. })
        ));
        assert!(matches!(
            transition_length(&periodic_oracle(&[1]).unwrap(), &r("2"), 20),
            Err(AssembleError::BaseNotInLanguage(_))
        ));
    }

    /// Exhaustive search over all words: smallest l0 with witnesses for
    /// every shift in [l0, horizon].
    fn brute_transition(u: &[u8], horizon: usize) -> usize {
        let has = |l: usize| {
            let n = l + u.len();
            (0u32..1 << n).any(|code| {
                let bit = |i: usize| ((code >> i) & 1) as u8;
                (0..u.len()).all(|i| bit(i) == u[i] && bit(l + i) == u[i])
            })
        };
        let mut l0 = horizon + 1;
        while l0 > 1 && has(l0 - 1) {
            l0 -= 1;
        }
        l0
    }

    #[test]
    fn full_shift_transitions_match_enumeration() {
        let full = full_shift_oracle(2).unwrap();
        for len in 1..=4 {
            for code in 0u32..1 << len {
                let u: Vec<u8> = (0..len).map(|i| ((code >> i) & 1) as u8).collect();
                let rect = Rectangle::from_rows(&[u.iter().map(|&b| Symbol::from(b) + 1).collect()]).unwrap();
                assert_eq!(transition_length(&full, &rect, 12).unwrap(), brute_transition(&u, 12), "{u:?}");
            }
        }
    }

    #[test]
    fn full_shift_kit() {
        let kit = build_stitch_kit(&full_shift_oracle(2).unwrap(), 3, 40).unwrap();
        assert_eq!(kit.levels[0].base, r("11"));
        assert_eq!(kit.levels[0].transition, 1);
        assert_eq!(kit.lengths, vec![2, 3, 4]);
        assert_eq!(kit.levels[1].base.dims(), (2, 4));
        assert_eq!(kit.level_for(1), None);
        assert_eq!(kit.level_for(2), Some(1));
        assert_eq!(kit.level_for(3), Some(2));
        assert_eq!(kit.level_for(50), Some(3));
        for l in 2..=12 {
            let pair = kit.tabbed_rectangles(l).unwrap();
            assert_eq!((pair.short.width(), pair.long.width()), (l, l + 1));
            let k = pair.k;
            let base = &kit.levels[k - 1].base;
            for t in [&pair.short, &pair.long] {
                assert_eq!(t.sub(k, 0, k), base.sub(k, k, k));
                assert_eq!(t.sub(k, t.width() - k, k), base.sub(k, 0, k));
            }
            assert!(kit.check_stitchable(l).unwrap().ok());
        }
    }

    #[test]
    fn single_level_example() {
        let kit = build_stitch_kit(&full_shift_oracle(2).unwrap(), 1, 20).unwrap();
        let pair = kit.tabbed_rectangles(4).unwrap();
        assert_eq!(pair.short, r("1111"));
        assert_eq!(pair.long, r("11111"));
        assert!(matches!(kit.tabbed_rectangles(1), Err(AssembleError::BelowKit(1))));
    }

    #[test]
    fn corrupted_pair_is_not_stitchable() {
        let x0 = periodic_oracle(&[1]).unwrap();
        let kit = build_stitch_kit(&x0, 2, 30).unwrap();
        let mut pair = kit.tabbed_rectangles(6).unwrap();
        assert!(check_pair_stitchable(&x0, &pair).ok());
        pair.short.set_cell(0, 2, 2);
        let report = check_pair_stitchable(&x0, &pair);
        assert!(!report.ok());
        assert!(report.violations.iter().any(|v| v.pair == "RR"));
    }

    #[test]
    fn chacon_kit_outcome_is_explicit() {
        let x0 = substitution_oracle(&chacon_rules(), 0, 8).unwrap();
        match build_stitch_kit(&x0, 2, 200) {
            Ok(kit) => {
                for &l in &kit.lengths {
                    assert!(kit.check_stitchable(l).unwrap().ok());
                }
            }
            Err(e) => assert!(matches!(e, AssembleError::NotFoundWithinHorizon { .. }), "{e}"),
        }
    }

    fn periodic_window(period_bits: &[u8], columns: usize, rows: usize) -> ArrayWindow {
        let bits: Vec<u8> = (0..columns + rows - 1).map(|i| period_bits[i % period_bits.len()]).collect();
        lift_binary(&bits, rows).unwrap()
    }

    #[test]
    fn periodic_embedding_example() {
        let kit = build_stitch_kit(&full_shift_oracle(2).unwrap(), 1, 20).unwrap();
        let window = periodic_window(&[0, 1, 0, 1], 24, 3);
        assert_eq!(&window.row(0)[..4], &[1, 2, 1, 2]);
        let markers: Vec<i64> = (0..7).map(|i| -1 + 4 * i).collect();
        let emb = embed_periodic(&window, &markers, 4, &kit).unwrap();
        assert_eq!(emb.k, 1);
        assert!(emb.window.row(0).iter().all(|&s| s == 1));
        assert_eq!(emb.window.row(1), window.row(1));
        assert_eq!(emb.window.row(2), window.row(2));
        assert_eq!(emb.window.mode(), ConstraintMode::Independent);
        let again = embed_periodic(&emb.window, &markers, 4, &kit).unwrap();
        assert_eq!(again.window, emb.window);
        let back = reconstruct(&emb.window, emb.k).unwrap();
        assert_eq!(back.rows(), window.rows());
        assert!(back.validate());
        assert_eq!(reconstruct(&window, 2).unwrap(), window);
        let report = convergence_check(&[emb], &full_shift_oracle(2).unwrap(), 1);
        assert!(report.ok());
    }

    #[test]
    fn aperiodic_embedding_matches_widths() {
        let kit = build_stitch_kit(&periodic_oracle(&[1]).unwrap(), 3, 40).unwrap();
        let bits: Vec<u8> = (0..64).map(|i| ((i * 7 + i / 3) % 2) as u8).collect();
        let window = lift_binary(&bits, 5).unwrap();
        let l = 6;
        let markers = vec![-1, 5, 12, 18, 25, 32, 38];
        let emb = embed_aperiodic(&window, &markers, l, &kit).unwrap();
        let pair = kit.tabbed_rectangles(l).unwrap();
        for w in markers.windows(2) {
            let block = emb.window.extract_rectangle(pair.k, w[0] + 1, w[1], None).unwrap();
            let expected = if w[1] - w[0] == l as i64 { &pair.short } else { &pair.long };
            assert_eq!(&block, expected);
        }
        for row in pair.k..5 {
            assert_eq!(emb.window.row(row), window.row(row));
        }
        assert_eq!(emb.window.row(0)[40..], window.row(0)[40..]);
        assert_eq!(reconstruct(&emb.window, pair.k).unwrap().rows(), window.rows());
        let report = convergence_check(std::slice::from_ref(&emb), &kit.x0, pair.k);
        assert!(report.ok(), "{report:?}");

        let mut broken = emb.clone();
        let mut rows = broken.window.rows().to_vec();
        rows[0][10] = 2;
        broken.window = ArrayWindow::new(broken.window.chain().clone(), 0, rows, ConstraintMode::Independent).unwrap();
        let report = convergence_check(&[broken], &kit.x0, 1);
        assert!(!report.ok());
        assert_eq!(report.systems[0].violations.len(), 1);

        assert!(embed_aperiodic(&window, &[-1, 5, 14], l, &kit).is_err());
    }

    #[test]
    fn convergence_precondition_and_signatures() {
        let kit = build_stitch_kit(&full_shift_oracle(2).unwrap(), 3, 40).unwrap();
        let window = periodic_window(&[1, 0, 0, 1, 1], 60, 5);
        let five: Vec<i64> = (0..12).map(|i| -1 + 5 * i).collect();
        let six: Vec<i64> = (0..10).map(|i| -1 + 6 * i).collect();
        let a = embed_periodic(&window, &five, 5, &kit).unwrap();
        let b = embed_periodic(&window, &six, 6, &kit).unwrap();
        assert_ne!(a.marker_signature(), b.marker_signature());
        let report = convergence_check(std::slice::from_ref(&a), &kit.x0, 4);
        assert!(!report.systems[0].precondition_met);
        assert!(convergence_check(&[a, b], &kit.x0, 3).ok());
    }

    #[test]
    fn reconstruct_rejects_inconsistent_rows() {
        let window = periodic_window(&[0, 1, 1], 20, 3);
        let mut rows = window.rows().to_vec();
        rows[2][4] = if rows[2][4] == 1 { 8 } else { 1 };
        let bad = ArrayWindow::new(window.chain().clone(), 0, rows, ConstraintMode::Independent).unwrap();
        assert!(matches!(reconstruct(&bad, 1), Err(AssembleError::Inconsistent(1))));
        assert!(reconstruct(&bad, 2).is_ok());
    }
}
