//! Good/bad classification of k-rectangles, tabbed replacement and the
//! nested multi-stage pipeline.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::arrays::{ArrayError, ArrayWindow, ConstraintMode, Rectangle};
use crate::markers::{validate_gap_sequence, MarkerError, MarkerSystem};
use crate::measures::{dstar_measures, EmpiricalMeasure, MeasureError, Truncation};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PurifyError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid marker system: {0}")]
    Markers(String),
    #[error("family {family:?} has no good rectangle of width {width}")]
    MissingLength { family: Vec<usize>, width: usize },
    #[error("stage {stage}: gamma {gamma} is not below the separation bound {bound}")]
    SeparationViolation {
        stage: usize,
        gamma: String,
        bound: String,
    },
    #[error(transparent)]
    Measure(#[from] MeasureError),
    #[error(transparent)]
    Array(#[from] ArrayError),
    #[error(transparent)]
    Marker(#[from] MarkerError),
}

pub type Result<T> = std::result::Result<T, PurifyError>;

/// Exact rational with a decimal rendering for reports.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExactValue {
    pub exact: String,
    pub decimal: f64,
}

impl From<&BigRational> for ExactValue {
    fn from(v: &BigRational) -> Self {
        Self {
            exact: v.to_string(),
            decimal: v.to_f64().unwrap_or(f64::NAN),
        }
    }
}

/// Finite list of target measures standing in for one atom of the
/// partition at a given stage.
#[derive(Debug, Clone)]
pub struct TargetFamily {
    pub id: Vec<usize>,
    pub members: Vec<EmpiricalMeasure>,
    pub gamma: BigRational,
}

impl TargetFamily {
    pub fn new(id: Vec<usize>, members: Vec<EmpiricalMeasure>, gamma: BigRational) -> Result<Self> {
        let first = members
            .first()
            .ok_or_else(|| PurifyError::Config(format!("family {id:?} has no members")))?;
        if members.iter().any(|m| m.truncation() != first.truncation()) {
            return Err(PurifyError::Config(format!("family {id:?} mixes truncations")));
        }
        Ok(Self { id, members, gamma })
    }

    pub fn truncation(&self) -> Truncation {
        self.members[0].truncation()
    }

    /// Largest pairwise distance among the members.
    pub fn diameter(&self) -> Result<BigRational> {
        let mut best = BigRational::zero();
        for (i, a) in self.members.iter().enumerate() {
            for b in &self.members[i + 1..] {
                best = best.max(dstar_measures(a, b)?);
            }
        }
        Ok(best)
    }
}

/// Good k-rectangles of one family at one stage, split by width.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GoodFamily {
    pub stage: usize,
    pub k: usize,
    pub family: Vec<usize>,
    pub short: BTreeSet<Rectangle>,
    pub long: BTreeSet<Rectangle>,
    pub tabbed: (Rectangle, Rectangle),
}

impl GoodFamily {
    pub fn contains(&self, rect: &Rectangle) -> bool {
        self.short.contains(rect) || self.long.contains(rect)
    }
}

/// Stage parameters shared by all families.
#[derive(Debug, Clone, PartialEq)]
pub struct PurifyConfig {
    pub epsilons: Vec<BigRational>,
    pub gammas: Vec<BigRational>,
    /// Stage depths `k_m`, 1-based row counts.
    pub depths: Vec<usize>,
    /// Gap parameters `l_1, l_2, ...` of the marker rows.
    pub gaps: Vec<u64>,
    pub truncation: Truncation,
}

impl PurifyConfig {
    pub fn stages(&self) -> usize {
        self.depths.len()
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.depths.len();
        let fail = |s: String| Err(PurifyError::Config(s));
        if m == 0 {
            return fail("at least one stage is required".into());
        }
        if self.epsilons.len() != m || self.gammas.len() != m {
            return fail(format!(
                "{m} depths but {} epsilons and {} gammas",
                self.epsilons.len(),
                self.gammas.len()
            ));
        }
        validate_gap_sequence(&self.gaps).map_err(|e| PurifyError::Config(e.to_string()))?;
        if self.depths[0] == 0 || self.depths.windows(2).any(|w| w[0] >= w[1]) {
            return fail(format!("depths {:?} must be positive and strictly increasing", self.depths));
        }
        if self.depths[m - 1] > self.gaps.len() {
            return fail(format!(
                "depth {} exceeds the {} marker rows",
                self.depths[m - 1],
                self.gaps.len()
            ));
        }
        let eps1 = &self.epsilons[0];
        for (i, eps) in self.epsilons.iter().enumerate() {
            if !eps.is_positive() {
                return fail(format!("epsilon_{} must be positive", i + 1));
            }
            // eps_m <= eps_1 * 2^(1-m)
            let cap = eps1 / BigRational::from_integer(BigInt::one() << i);
            if *eps > cap {
                return fail(format!("epsilon_{} = {eps} exceeds eps_1 * 2^-{i} = {cap}", i + 1));
            }
            let gamma = &self.gammas[i];
            if gamma.is_negative() || gamma >= eps {
                return fail(format!("gamma_{} = {gamma} must lie in [0, epsilon_{})", i + 1, i + 1));
            }
        }
        if self.truncation.rows > self.depths[0] {
            return fail(format!(
                "truncation {} has more rows than depth {}",
                self.truncation, self.depths[0]
            ));
        }
        if self.truncation.width as u64 > self.gaps[self.depths[0] - 1] {
            return fail(format!(
                "truncation {} is wider than the shortest rectangles ({})",
                self.truncation,
                self.gaps[self.depths[0] - 1]
            ));
        }
        Ok(())
    }
}

/// One markered sample window.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sample {
    pub label: String,
    pub window: ArrayWindow,
    pub markers: MarkerSystem,
}

impl Sample {
    pub fn measure(&self, truncation: Truncation) -> Result<EmpiricalMeasure> {
        let rect = self.window.to_rectangle(truncation.rows, Some(&self.markers))?;
        Ok(EmpiricalMeasure::from_rectangle(&rect, truncation)?.with_source(self.label.clone()))
    }
}

/// A leaf of the partition tree: one target measure with its samples.
#[derive(Debug, Clone)]
pub struct TargetLeaf {
    pub path: Vec<usize>,
    pub name: String,
    pub target: EmpiricalMeasure,
    pub samples: Vec<Sample>,
}

/// A k-rectangle together with the absolute columns it occupies.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlacedRectangle {
    pub first: i64,
    pub last: i64,
    pub rect: Rectangle,
}

/// The rectangles between consecutive markers of row `k - 1`, over rows
/// `0..k`, carrying the marker flags of those rows.
pub fn extract_k_rectangles(window: &ArrayWindow, markers: &MarkerSystem, k: usize) -> Result<Vec<PlacedRectangle>> {
    if k == 0 || k > markers.row_count() || k > window.row_count() {
        return Err(PurifyError::Markers(format!(
            "depth {k} outside {} marker rows and {} window rows",
            markers.row_count(),
            window.row_count()
        )));
    }
    if markers.origin() != window.origin() || markers.columns() != window.columns() {
        return Err(PurifyError::Markers("marker system does not cover the window".into()));
    }
    if !(0..k).all(|r| markers.check_two_gaps(r)) {
        return Err(PurifyError::Markers("gaps outside {l, l+1}".into()));
    }
    if !markers.check_congruency() {
        return Err(PurifyError::Markers("rows are not nested".into()));
    }
    markers
        .interior_gaps(k - 1)
        .map(|(p, q)| {
            Ok(PlacedRectangle {
                first: p + 1,
                last: q,
                rect: window.extract_rectangle(k, p + 1, q, Some(markers))?,
            })
        })
        .collect()
}

/// Good iff the truncated distance to some member is strictly below gamma.
pub fn classify(rect: &Rectangle, family: &TargetFamily) -> Result<bool> {
    let own = EmpiricalMeasure::from_rectangle(rect, family.truncation())?;
    for member in &family.members {
        if dstar_measures(&own, member)? < family.gamma {
            return Ok(true);
        }
    }
    Ok(false)
}

/// Classifies the distinct rectangles of `rects` in parallel.
fn classify_all<'a>(
    rects: impl IntoIterator<Item = &'a Rectangle>,
    family: &TargetFamily,
) -> Result<HashMap<Rectangle, bool>> {
    let distinct: BTreeSet<&Rectangle> = rects.into_iter().collect();
    let verdicts: Result<Vec<(Rectangle, bool)>> = distinct
        .into_par_iter()
        .map(|r| Ok((r.clone(), classify(r, family)?)))
        .collect();
    Ok(verdicts?.into_iter().collect())
}

/// Lexicographically smallest good rectangle of width `l` and of width
/// `l + 1`.
pub fn select_tabbed<'a>(
    good: impl IntoIterator<Item = &'a Rectangle>,
    l: usize,
) -> std::result::Result<(Rectangle, Rectangle), usize> {
    let mut short: Option<&Rectangle> = None;
    let mut long: Option<&Rectangle> = None;
    for rect in good {
        let slot = match rect.width() {
            w if w == l => &mut short,
            w if w == l + 1 => &mut long,
            _ => continue,
        };
        if slot.is_none_or(|cur| rect < cur) {
            *slot = Some(rect);
        }
    }
    match (short, long) {
        (Some(s), Some(t)) => Ok((s.clone(), t.clone())),
        (None, _) => Err(l),
        (_, None) => Err(l + 1),
    }
}

/// Output of [`replace_bad`].
#[derive(Debug, Clone)]
pub struct Replacement {
    pub window: ArrayWindow,
    pub markers: MarkerSystem,
    /// Column spans `(first, last)` that were overwritten.
    pub replaced: Vec<(i64, i64)>,
}

impl Replacement {
    pub fn changed_columns(&self) -> usize {
        self.replaced.iter().map(|(a, b)| (b - a + 1) as usize).sum()
    }
}

/// Overwrites every bad k-rectangle with the tabbed rectangle of the same
/// width. Marker rows `0..k-1` inside a replaced span take the tabbed flags.
pub fn replace_bad(
    window: &ArrayWindow,
    markers: &MarkerSystem,
    k: usize,
    family: &TargetFamily,
    tabbed: &(Rectangle, Rectangle),
) -> Result<Replacement> {
    let placed = extract_k_rectangles(window, markers, k)?;
    let verdicts = classify_all(placed.iter().map(|p| &p.rect), family)?;
    replace_with_verdicts(window, markers, k, &placed, &verdicts, tabbed)
}

fn replace_with_verdicts(
    window: &ArrayWindow,
    markers: &MarkerSystem,
    k: usize,
    placed: &[PlacedRectangle],
    verdicts: &HashMap<Rectangle, bool>,
    tabbed: &(Rectangle, Rectangle),
) -> Result<Replacement> {
    let mut out = window.clone().with_mode(ConstraintMode::Independent);
    let mut rows: Vec<Vec<i64>> = markers.rows()[..k.saturating_sub(1)].to_vec();
    let mut replaced = Vec::new();
    for p in placed {
        if verdicts[&p.rect] {
            continue;
        }
        let block = [&tabbed.0, &tabbed.1]
            .into_iter()
            .find(|t| t.width() == p.rect.width())
            .unwrap_or_else(|| panic!("no tabbed rectangle of width {}", p.rect.width()));
        out.write_block(p.first, block);
        for (r, row) in rows.iter_mut().enumerate() {
            let lo = row.partition_point(|&x| x < p.first);
            let hi = row.partition_point(|&x| x < p.last);
            let fresh = (0..block.width() - 1)
                .filter(|&c| block.marker(r, c))
                .map(|c| p.first + c as i64);
            row.splice(lo..hi, fresh);
        }
        replaced.push((p.first, p.last));
    }
    let mut new_markers = markers.clone();
    for (r, row) in rows.into_iter().enumerate() {
        new_markers.set_row(r, row);
    }
    Ok(Replacement {
        window: out,
        markers: new_markers,
        replaced,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Census {
    pub rectangles: usize,
    pub distinct: usize,
    pub good: usize,
    pub bad: usize,
    pub good_short: usize,
    pub good_long: usize,
    pub covered_columns: usize,
    pub good_columns: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WindowReport {
    pub label: String,
    pub columns: usize,
    pub bad_rectangles: usize,
    pub changed_columns: usize,
    pub recounted_columns: usize,
    pub changed_fraction: ExactValue,
    pub displacement: ExactValue,
    pub displacement_ok: bool,
    pub rows_above_unchanged: bool,
    pub all_good_after: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FamilyReport {
    pub id: Vec<usize>,
    pub members: Vec<String>,
    pub census: Census,
    pub tabbed_short: String,
    pub tabbed_long: String,
    pub windows: Vec<WindowReport>,
    pub changed_fraction: ExactValue,
    pub within_two_gamma: bool,
    pub totality: bool,
    pub diameter: ExactValue,
    pub diameter_bound: ExactValue,
    pub hypothesis_met: bool,
    pub diameter_ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageReport {
    pub stage: usize,
    pub k: usize,
    pub gamma: ExactValue,
    pub epsilon: ExactValue,
    pub separation_bound: Option<ExactValue>,
    pub families: Vec<FamilyReport>,
}

impl StageReport {
    /// Exact invariants of the stage. A diameter overrun only counts when
    /// the census hypothesis held.
    pub fn invariants_hold(&self) -> bool {
        self.families.iter().all(|f| {
            f.totality
                && (f.diameter_ok || !f.hypothesis_met)
                && f.windows.iter().all(|w| {
                    w.displacement_ok
                        && w.rows_above_unchanged
                        && w.all_good_after
                        && w.changed_columns == w.recounted_columns
                })
        })
    }
}

type WindowOutcome = (Sample, WindowReport, Vec<(i64, i64)>, EmpiricalMeasure);

/// Everything a stage produces besides its report.
#[derive(Debug, Clone)]
pub struct StageOutput {
    pub report: StageReport,
    pub samples: Vec<Vec<Sample>>,
    pub good: Vec<GoodFamily>,
    /// Replaced spans per family and sample, for change accounting.
    pub replaced: Vec<Vec<Vec<(i64, i64)>>>,
}

fn ratio(num: usize, den: usize) -> BigRational {
    BigRational::new(BigInt::from(num), BigInt::from(den.max(1)))
}

/// `(min cross-family distance - max family diameter) / 2`, clipped at zero;
/// `None` with fewer than two families.
pub fn separation_bound(families: &[TargetFamily]) -> Result<Option<BigRational>> {
    if families.len() < 2 {
        return Ok(None);
    }
    let mut cross: Option<BigRational> = None;
    for (i, f) in families.iter().enumerate() {
        for g in &families[i + 1..] {
            for a in &f.members {
                for b in &g.members {
                    let d = dstar_measures(a, b)?;
                    cross = Some(cross.map_or(d.clone(), |c| c.min(d)));
                }
            }
        }
    }
    let mut intra = BigRational::zero();
    for f in families {
        intra = intra.max(f.diameter()?);
    }
    let bound = (cross.expect("two families") - intra) / BigRational::from_integer(2.into());
    Ok(Some(bound.max(BigRational::zero())))
}

/// One stage: census, tabbed selection, replacement and the stage checks.
/// `families[i]` is processed on `samples[i]`; `stage` is 0-based.
pub fn purify_stage(
    config: &PurifyConfig,
    stage: usize,
    families: &[TargetFamily],
    samples: &[Vec<Sample>],
) -> Result<StageOutput> {
    config.validate()?;
    if stage >= config.stages() || families.len() != samples.len() {
        return Err(PurifyError::Config(format!(
            "stage {stage} with {} families and {} sample groups",
            families.len(),
            samples.len()
        )));
    }
    let k = config.depths[stage];
    let l = config.gaps[k - 1] as usize;
    let gamma = &config.gammas[stage];
    let epsilon = &config.epsilons[stage];
    let truncation = config.truncation;
    let bound = separation_bound(families)?;
    if let Some(b) = &bound {
        if gamma >= b {
            return Err(PurifyError::SeparationViolation {
                stage: stage + 1,
                gamma: gamma.to_string(),
                bound: b.to_string(),
            });
        }
    }
    let mut report = StageReport {
        stage: stage + 1,
        k,
        gamma: gamma.into(),
        epsilon: epsilon.into(),
        separation_bound: bound.as_ref().map(Into::into),
        families: Vec::new(),
    };
    let mut out_samples = Vec::new();
    let mut goods = Vec::new();
    let mut spans = Vec::new();
    for (family, group) in families.iter().zip(samples) {
        let family = TargetFamily {
            gamma: gamma.clone(),
            ..family.clone()
        };
        let placed: Vec<Vec<PlacedRectangle>> = group
            .par_iter()
            .map(|s| extract_k_rectangles(&s.window, &s.markers, k))
            .collect::<Result<_>>()?;
        let verdicts = classify_all(placed.iter().flatten().map(|p| &p.rect), &family)?;
        let mut census = Census {
            distinct: verdicts.len(),
            ..Census::default()
        };
        let mut short = BTreeSet::new();
        let mut long = BTreeSet::new();
        for p in placed.iter().flatten() {
            census.rectangles += 1;
            census.covered_columns += p.rect.width();
            if verdicts[&p.rect] {
                census.good += 1;
                census.good_columns += p.rect.width();
                if p.rect.width() == l {
                    census.good_short += 1;
                    short.insert(p.rect.clone());
                } else {
                    census.good_long += 1;
                    long.insert(p.rect.clone());
                }
            } else {
                census.bad += 1;
            }
        }
        let tabbed = select_tabbed(short.iter().chain(long.iter()), l).map_err(|width| PurifyError::MissingLength {
            family: family.id.clone(),
            width,
        })?;
        let results: Vec<WindowOutcome> = group
            .par_iter()
            .zip(placed.par_iter())
            .map(|(sample, placed)| -> Result<_> {
                let rep = replace_with_verdicts(&sample.window, &sample.markers, k, placed, &verdicts, &tabbed)?;
                let after = Sample {
                    label: sample.label.clone(),
                    window: rep.window.clone(),
                    markers: rep.markers.clone(),
                };
                let post = extract_k_rectangles(&after.window, &after.markers, k)?;
                let all_good_after = post.len() == placed.len()
                    && post.iter().all(|p| verdicts.get(&p.rect).copied().unwrap_or(false) || classify(&p.rect, &family).unwrap_or(false));
                let recounted: usize = placed
                    .iter()
                    .zip(&post)
                    .filter(|(a, b)| a.rect != b.rect)
                    .map(|(a, _)| a.rect.width())
                    .sum();
                let rows_above_unchanged = (k..sample.window.row_count()).all(|r| sample.window.row(r) == after.window.row(r))
                    && (k - 1..sample.markers.row_count()).all(|r| sample.markers.row(r) == after.markers.row(r));
                let before_measure = sample.measure(truncation)?;
                let after_measure = after.measure(truncation)?;
                let displacement = dstar_measures(&before_measure, &after_measure)?;
                let changed = rep.changed_columns();
                let report = WindowReport {
                    label: sample.label.clone(),
                    columns: sample.window.columns(),
                    bad_rectangles: rep.replaced.len(),
                    changed_columns: changed,
                    recounted_columns: recounted,
                    changed_fraction: (&ratio(changed, sample.window.columns())).into(),
                    displacement_ok: displacement < epsilon * BigRational::from_integer(2.into()),
                    displacement: (&displacement).into(),
                    rows_above_unchanged,
                    all_good_after,
                };
                Ok((after, report, rep.replaced, after_measure))
            })
            .collect::<Result<_>>()?;
        let mut diameter = BigRational::zero();
        for (i, a) in results.iter().enumerate() {
            for b in &results[i + 1..] {
                diameter = diameter.max(dstar_measures(&a.3, &b.3)?);
            }
        }
        let diameter_bound = epsilon * BigRational::from_integer(3.into());
        let total_columns: usize = group.iter().map(|s| s.window.columns()).sum();
        let total_changed: usize = results.iter().map(|r| r.1.changed_columns).sum();
        let changed_fraction = ratio(total_changed, total_columns);
        let coverage = ratio(census.good_columns, census.covered_columns);
        let windows: Vec<WindowReport> = results.iter().map(|r| r.1.clone()).collect();
        report.families.push(FamilyReport {
            id: family.id.clone(),
            members: family.members.iter().map(|m| m.source().to_string()).collect(),
            tabbed_short: tabbed.0.to_string(),
            tabbed_long: tabbed.1.to_string(),
            totality: windows.iter().all(|w| w.all_good_after),
            within_two_gamma: changed_fraction <= gamma * BigRational::from_integer(2.into()),
            changed_fraction: (&changed_fraction).into(),
            hypothesis_met: coverage > BigRational::one() - gamma,
            diameter_ok: diameter <= diameter_bound,
            diameter: (&diameter).into(),
            diameter_bound: (&diameter_bound).into(),
            census,
            windows,
        });
        goods.push(GoodFamily {
            stage: stage + 1,
            k,
            family: family.id.clone(),
            short,
            long,
            tabbed,
        });
        spans.push(results.iter().map(|r| r.2.clone()).collect());
        out_samples.push(results.into_iter().map(|r| r.0).collect());
    }
    Ok(StageOutput {
        report,
        samples: out_samples,
        good: goods,
        replaced: spans,
    })
}

/// Splits `rect` at its row `k - 1` flags into rectangles over rows `0..k`.
pub fn split_at_row_markers(rect: &Rectangle, k: usize) -> Vec<Rectangle> {
    let mut pieces = Vec::new();
    let mut start = 0;
    for c in 0..rect.width() {
        if rect.marker(k - 1, c) {
            pieces.push(rect.sub(k, start, c + 1 - start));
            start = c + 1;
        }
    }
    if start < rect.width() {
        pieces.push(rect.sub(k, start, rect.width() - start));
    }
    pieces
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NestingReport {
    pub from_stage: usize,
    pub to_stage: usize,
    pub rectangles: usize,
    pub pieces: usize,
    pub violations: usize,
    pub ok: bool,
}

/// Every good rectangle of `child` splits into good rectangles of `parent`.
pub fn check_nesting(parent: &GoodFamily, child: &GoodFamily) -> (usize, usize) {
    let mut pieces = 0;
    let mut violations = 0;
    for rect in child.short.iter().chain(&child.long) {
        for piece in split_at_row_markers(rect, parent.k) {
            pieces += 1;
            if !parent.contains(&piece) {
                violations += 1;
            }
        }
    }
    (pieces, violations)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CumulativeReport {
    pub label: String,
    pub columns: usize,
    pub changed_per_stage: Vec<usize>,
    pub columns_ever_changed: usize,
    pub max_changes_per_column: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PipelineReport {
    pub stages: Vec<StageReport>,
    pub nesting: Vec<NestingReport>,
    pub cumulative: Vec<CumulativeReport>,
    pub error: Option<String>,
}

impl PipelineReport {
    pub fn invariants_hold(&self) -> bool {
        self.error.is_none()
            && self.stages.iter().all(StageReport::invariants_hold)
            && self.nesting.iter().all(|n| n.ok)
    }
}

/// Result of a full run: the final samples per leaf and the good families
/// of every stage.
#[derive(Debug, Clone)]
pub struct PipelineRun {
    pub report: PipelineReport,
    pub leaves: Vec<Vec<Sample>>,
    pub good: Vec<Vec<GoodFamily>>,
}

fn validate_leaves(config: &PurifyConfig, leaves: &[TargetLeaf]) -> Result<()> {
    let depth = config.stages();
    if leaves.is_empty() {
        return Err(PurifyError::Config("no target leaves".into()));
    }
    let mut seen = BTreeSet::new();
    for leaf in leaves {
        if leaf.path.len() != depth {
            return Err(PurifyError::Config(format!(
                "leaf {} has path {:?}, expected depth {depth}",
                leaf.name, leaf.path
            )));
        }
        if !seen.insert(leaf.path.clone()) {
            return Err(PurifyError::Config(format!("duplicate leaf path {:?}", leaf.path)));
        }
        if leaf.target.truncation() != config.truncation {
            return Err(PurifyError::Config(format!("leaf {} uses another truncation", leaf.name)));
        }
        if leaf.samples.is_empty() {
            return Err(PurifyError::Config(format!("leaf {} has no samples", leaf.name)));
        }
        for s in &leaf.samples {
            if s.markers.gaps() != config.gaps.as_slice() {
                return Err(PurifyError::Config(format!("sample {} uses other gaps", s.label)));
            }
        }
    }
    Ok(())
}

/// Runs every stage on the families given by the leaf-path prefixes and
/// verifies nesting between consecutive stages. Errors end the run early
/// with the stages completed so far.
pub fn purify_pipeline(config: &PurifyConfig, leaves: &[TargetLeaf]) -> PipelineRun {
    let mut report = PipelineReport {
        stages: Vec::new(),
        nesting: Vec::new(),
        cumulative: Vec::new(),
        error: None,
    };
    let mut current: Vec<Vec<Sample>> = leaves.iter().map(|l| l.samples.clone()).collect();
    let mut good: Vec<Vec<GoodFamily>> = Vec::new();
    let mut counts: Vec<Vec<Vec<u32>>> = current
        .iter()
        .map(|g| g.iter().map(|s| vec![0; s.window.columns()]).collect())
        .collect();
    let mut per_stage: Vec<Vec<Vec<usize>>> = current.iter().map(|g| vec![Vec::new(); g.len()]).collect();

    let outcome = (|| -> Result<()> {
        config.validate()?;
        validate_leaves(config, leaves)?;
        for stage in 0..config.stages() {
            let mut groups: BTreeMap<&[usize], Vec<usize>> = BTreeMap::new();
            for (i, leaf) in leaves.iter().enumerate() {
                groups.entry(&leaf.path[..=stage]).or_default().push(i);
            }
            let families = groups
                .iter()
                .map(|(id, members)| {
                    TargetFamily::new(
                        id.to_vec(),
                        members.iter().map(|&i| leaves[i].target.clone()).collect(),
                        config.gammas[stage].clone(),
                    )
                })
                .collect::<Result<Vec<_>>>()?;
            let samples: Vec<Vec<Sample>> = groups
                .values()
                .map(|members| members.iter().flat_map(|&i| current[i].clone()).collect())
                .collect();
            let out = purify_stage(config, stage, &families, &samples)?;
            for ((members, processed), spans) in groups.values().zip(out.samples).zip(out.replaced) {
                let mut processed = processed.into_iter().zip(spans);
                for &leaf in members {
                    for (j, slot) in current[leaf].iter_mut().enumerate() {
                        let (sample, replaced) = processed.next().expect("one output per sample");
                        let origin = sample.window.origin();
                        let mut changed = 0;
                        for &(a, b) in &replaced {
                            for c in a..=b {
                                counts[leaf][j][(c - origin) as usize] += 1;
                            }
                            changed += (b - a + 1) as usize;
                        }
                        per_stage[leaf][j].push(changed);
                        *slot = sample;
                    }
                }
            }
            if let Some(previous) = good.last() {
                let mut rectangles = 0;
                let mut pieces = 0;
                let mut violations = 0;
                for child in &out.good {
                    let parent = previous
                        .iter()
                        .find(|p| child.family.starts_with(&p.family))
                        .expect("every family has a parent");
                    rectangles += child.short.len() + child.long.len();
                    let (p, v) = check_nesting(parent, child);
                    pieces += p;
                    violations += v;
                }
                report.nesting.push(NestingReport {
                    from_stage: stage,
                    to_stage: stage + 1,
                    rectangles,
                    pieces,
                    violations,
                    ok: violations == 0,
                });
            }
            report.stages.push(out.report);
            good.push(out.good);
        }
        Ok(())
    })();
    if let Err(e) = outcome {
        report.error = Some(e.to_string());
    }
    for (leaf, group) in current.iter().enumerate() {
        for (j, sample) in group.iter().enumerate() {
            let c = &counts[leaf][j];
            report.cumulative.push(CumulativeReport {
                label: sample.label.clone(),
                columns: c.len(),
                changed_per_stage: per_stage[leaf][j].clone(),
                columns_ever_changed: c.iter().filter(|&&x| x > 0).count(),
                max_changes_per_column: c.iter().copied().max().unwrap_or(0) as usize,
            });
        }
    }
    PipelineRun {
        report,
        leaves: current,
        good,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arrays::{lift_binary, AmalgamationChain, Symbol};
    use crate::generators::bernoulli_window;
    use num_rational::Ratio;

    fn q(n: i64, d: i64) -> BigRational {
        BigRational::new(n.into(), d.into())
    }

    fn one_row(symbols: &str) -> ArrayWindow {
        let row: Vec<Symbol> = symbols.chars().map(|c| c.to_digit(10).unwrap()).collect();
        ArrayWindow::new(
            AmalgamationChain::from_sizes(vec![2]).unwrap(),
            1,
            vec![row],
            ConstraintMode::Independent,
        )
        .unwrap()
    }

    fn point_mass(symbol: Symbol, t: Truncation) -> EmpiricalMeasure {
        EmpiricalMeasure::constant(&[symbol], t).unwrap()
    }

    #[test]
    fn extraction_examples() {
        let w = one_row("1211212");
        let ms = MarkerSystem::infer(1, 7, vec![vec![0, 3, 7]]).unwrap();
        let rects = extract_k_rectangles(&w, &ms, 1).unwrap();
        let widths: Vec<usize> = rects.iter().map(|p| p.rect.width()).collect();
        assert_eq!(widths, vec![3, 4]);
        assert_eq!(rects[0].rect, Rectangle::from_row_str("121|").unwrap());
        let ms = MarkerSystem::infer(1, 7, vec![vec![2]]).unwrap();
        assert!(extract_k_rectangles(&w, &ms, 1).unwrap().is_empty());
        let ms = MarkerSystem::infer(1, 7, vec![vec![0, 3, 7]]).unwrap();
        let bad = MarkerSystem::from_positions(1, 7, vec![2], ms.rows().to_vec()).unwrap();
        assert!(matches!(extract_k_rectangles(&w, &bad, 1), Err(PurifyError::Markers(_))));
    }

    #[test]
    fn extracted_widths_are_two_valued() {
        let bits = bernoulli_window(Ratio::new(1, 2), 5, 3000).unwrap();
        let bits: Vec<u8> = bits.iter().map(|&b| b as u8).collect();
        let w = lift_binary(&bits, 2).unwrap();
        let ms = MarkerSystem::build(w.columns(), w.origin(), &[4, 144]).unwrap();
        for k in 1..=2 {
            let l = ms.gap(k - 1) as usize;
            let rects = extract_k_rectangles(&w, &ms, k).unwrap();
            assert!(!rects.is_empty());
            assert!(rects.iter().all(|p| p.rect.width() == l || p.rect.width() == l + 1));
            assert!(rects.iter().all(|p| p.rect.rows() == k));
        }
    }

    #[test]
    fn classify_examples() {
        let t = Truncation::new(1, 2).unwrap();
        let family = TargetFamily::new(vec![0], vec![point_mass(1, t)], q(3, 10)).unwrap();
        assert!(classify(&Rectangle::from_row_str("111").unwrap(), &family).unwrap());
        assert!(!classify(&Rectangle::from_row_str("121").unwrap(), &family).unwrap());
        let exact = TargetFamily::new(vec![0], vec![point_mass(1, t)], q(0, 1)).unwrap();
        assert!(!classify(&Rectangle::from_row_str("111").unwrap(), &exact).unwrap());
        let m = EmpiricalMeasure::from_rectangle(&Rectangle::from_row_str("1212").unwrap(), t).unwrap();
        let tight = TargetFamily::new(vec![0], vec![m], q(1, 1_000_000)).unwrap();
        assert!(classify(&Rectangle::from_row_str("1212").unwrap(), &tight).unwrap());
        assert!(!classify(&Rectangle::from_row_str("2121").unwrap(), &tight).unwrap());
    }

    #[test]
    fn tabbed_selection() {
        let r = |s: &str| Rectangle::from_row_str(s).unwrap();
        let good = [r("1111"), r("111")];
        assert_eq!(select_tabbed(&good, 3).unwrap(), (r("111"), r("1111")));
        let good = [r("111"), r("112")];
        assert_eq!(select_tabbed(&good, 3), Err(4));
        let mut good = vec![r("212"), r("112|"), r("112"), r("2111"), r("1211")];
        let expected = select_tabbed(&good, 3).unwrap();
        assert_eq!(expected, (r("112"), r("1211")));
        good.reverse();
        assert_eq!(select_tabbed(&good, 3).unwrap(), expected);
        good.swap(0, 3);
        assert_eq!(select_tabbed(&good, 3).unwrap(), expected);
    }

    #[test]
    fn replacement_example() {
        let t = Truncation::new(1, 2).unwrap();
        let family = TargetFamily::new(vec![0], vec![point_mass(1, t)], q(3, 10)).unwrap();
        let w = one_row("1111211111");
        let ms = MarkerSystem::infer(1, 10, vec![vec![0, 3, 6, 10]]).unwrap();
        let tabbed = (
            Rectangle::from_row_str("111|").unwrap(),
            Rectangle::from_row_str("1111|").unwrap(),
        );
        let rep = replace_bad(&w, &ms, 1, &family, &tabbed).unwrap();
        assert_eq!(rep.window.to_rectangle(1, Some(&rep.markers)).unwrap().to_string(), "111|111|1111|");
        assert_eq!(rep.replaced, vec![(4, 6)]);
        assert_eq!(rep.changed_columns(), 3);
        assert_eq!(rep.window.mode(), ConstraintMode::Independent);

        let clean = one_row("1111111111");
        let same = replace_bad(&clean, &ms, 1, &family, &tabbed).unwrap();
        assert_eq!(same.window.rows(), clean.rows());
        assert_eq!(same.markers, ms);
        assert!(same.replaced.is_empty());
    }

    #[test]
    fn replacement_moves_lower_markers_and_keeps_upper_rows() {
        // two marker rows: gaps 2 below 3/4-wide... rows built by hand
        let rows = vec![vec![1, 2, 1, 2, 2, 1, 1, 2, 2], vec![1, 2, 3, 4, 4, 3, 2, 1, 1]];
        let chain = AmalgamationChain::canonical(2).unwrap();
        let w = ArrayWindow::new(chain, 1, rows, ConstraintMode::Independent).unwrap();
        let ms = MarkerSystem::from_positions(1, 9, vec![2, 4], vec![vec![0, 2, 4, 6, 9], vec![0, 4, 9]]).unwrap();
        let placed = extract_k_rectangles(&w, &ms, 2).unwrap();
        assert_eq!(placed.len(), 2);
        let short = placed[0].rect.clone();
        let mut long = placed[1].rect.clone();
        // move the interior row-0 flag of the long tabbed rectangle
        long.set_marker(0, 1, false);
        long.set_marker(0, 2, true);
        let mut verdicts = HashMap::new();
        verdicts.insert(placed[0].rect.clone(), true);
        verdicts.insert(placed[1].rect.clone(), false);
        let rep = replace_with_verdicts(&w, &ms, 2, &placed, &verdicts, &(short, long.clone())).unwrap();
        assert_eq!(rep.markers.row(0), &[0, 2, 4, 7, 9]);
        assert_eq!(rep.markers.row(1), ms.row(1));
        assert_eq!(rep.window.extract_rectangle(2, 5, 9, Some(&rep.markers)).unwrap(), long);
    }

    /// Constant-symbol windows with markers from `gaps`, `rows` rows.
    fn constant_sample(label: &str, symbol: Symbol, columns: usize, gaps: &[u64]) -> Sample {
        let rows = gaps.len();
        let chain = AmalgamationChain::from_sizes(vec![2; rows]).unwrap();
        let window = ArrayWindow::new(chain, 0, vec![vec![symbol; columns]; rows], ConstraintMode::Independent).unwrap();
        let markers = MarkerSystem::build(columns, 0, gaps).unwrap();
        Sample {
            label: label.into(),
            window,
            markers,
        }
    }

    fn coin_sample(label: &str, seed: u64, columns: usize, gaps: &[u64]) -> Sample {
        let bits = bernoulli_window(Ratio::new(1, 2), seed, columns).unwrap();
        let row: Vec<Symbol> = bits.iter().map(|b| b + 1).collect();
        let chain = AmalgamationChain::from_sizes(vec![2; gaps.len()]).unwrap();
        let window = ArrayWindow::new(chain, 0, vec![row; gaps.len()], ConstraintMode::Independent).unwrap();
        let markers = MarkerSystem::build(columns, 0, gaps).unwrap();
        Sample {
            label: label.into(),
            window,
            markers,
        }
    }

    fn point_mass_config(gaps: Vec<u64>) -> PurifyConfig {
        PurifyConfig {
            epsilons: vec![q(1, 5)],
            gammas: vec![q(1, 10)],
            depths: vec![1],
            gaps,
            truncation: Truncation::new(1, 2).unwrap(),
        }
    }

    #[test]
    fn pure_windows_need_no_replacement() {
        let config = point_mass_config(vec![40]);
        let t = config.truncation;
        let families = vec![
            TargetFamily::new(vec![0], vec![point_mass(1, t)], q(1, 10)).unwrap(),
            TargetFamily::new(vec![1], vec![point_mass(2, t)], q(1, 10)).unwrap(),
        ];
        let samples = vec![
            vec![constant_sample("ones", 1, 2000, &[40])],
            vec![constant_sample("twos", 2, 2000, &[40])],
        ];
        let out = purify_stage(&config, 0, &families, &samples).unwrap();
        for f in &out.report.families {
            assert_eq!(f.census.bad, 0);
            assert!(f.windows.iter().all(|w| w.changed_columns == 0));
        }
        assert!(out.report.invariants_hold());
        assert_eq!(out.samples[0][0].window.rows(), samples[0][0].window.rows());
    }

    #[test]
    fn coin_windows_are_almost_entirely_replaced() {
        let config = point_mass_config(vec![40]);
        let t = config.truncation;
        let families = vec![
            TargetFamily::new(vec![0], vec![point_mass(1, t)], q(1, 10)).unwrap(),
            TargetFamily::new(vec![1], vec![point_mass(2, t)], q(1, 10)).unwrap(),
        ];
        let samples = vec![
            vec![constant_sample("ones", 1, 2000, &[40]), coin_sample("coin-a", 1, 2000, &[40])],
            vec![constant_sample("twos", 2, 2000, &[40]), coin_sample("coin-b", 2, 2000, &[40])],
        ];
        let out = purify_stage(&config, 0, &families, &samples).unwrap();
        for f in &out.report.families {
            let coin = &f.windows[1];
            let covered = coin.columns - 40;
            assert!(coin.changed_columns >= covered - 41, "{} of {}", coin.changed_columns, coin.columns);
            assert!(f.totality);
            assert_eq!(coin.changed_columns, coin.recounted_columns);
            assert!(!f.within_two_gamma);
        }
    }

    #[test]
    fn separation_violation_is_reported() {
        let mut config = point_mass_config(vec![40]);
        config.gammas = vec![q(19, 100)];
        let t = config.truncation;
        let near = EmpiricalMeasure::from_rectangle(&Rectangle::from_row_str("1111111112").unwrap(), t).unwrap();
        let families = vec![
            TargetFamily::new(vec![0], vec![point_mass(1, t)], q(0, 1)).unwrap(),
            TargetFamily::new(vec![1], vec![near], q(0, 1)).unwrap(),
        ];
        let samples = vec![
            vec![constant_sample("a", 1, 500, &[40])],
            vec![constant_sample("b", 1, 500, &[40])],
        ];
        assert!(matches!(
            purify_stage(&config, 0, &families, &samples),
            Err(PurifyError::SeparationViolation { .. })
        ));
    }

    #[test]
    fn config_validation() {
        let good = PurifyConfig {
            epsilons: vec![q(1, 5), q(1, 10)],
            gammas: vec![q(1, 10), q(1, 20)],
            depths: vec![1, 2],
            gaps: vec![4, 144],
            truncation: Truncation::new(1, 2).unwrap(),
        };
        good.validate().unwrap();
        let mut c = good.clone();
        c.epsilons[1] = q(3, 20);
        assert!(c.validate().is_err());
        let mut c = good.clone();
        c.depths = vec![2, 2];
        assert!(c.validate().is_err());
        let mut c = good.clone();
        c.gammas[0] = q(1, 5);
        assert!(c.validate().is_err());
        let mut c = good.clone();
        c.gaps = vec![4, 100];
        assert!(c.validate().is_err());
        let mut c = good;
        c.truncation = Truncation::new(2, 2).unwrap();
        assert!(c.validate().is_err());
    }

    #[test]
    fn splitting_recovers_pieces() {
        let pieces = [Rectangle::from_row_str("12").unwrap(), Rectangle::from_row_str("211").unwrap()];
        let joined = crate::measures::concat(&pieces).unwrap();
        let mut tail = joined.clone();
        tail.set_marker(0, 4, true);
        let split = split_at_row_markers(&tail, 1);
        assert_eq!(split.len(), 2);
        assert_eq!(split[0], Rectangle::from_row_str("12|").unwrap());
        assert_eq!(split[1], Rectangle::from_row_str("211|").unwrap());
    }

    #[test]
    fn two_stage_point_mass_pipeline() {
        let gaps = vec![8u64, 576];
        let t = Truncation::new(1, 2).unwrap();
        let config = PurifyConfig {
            epsilons: vec![q(1, 2), q(1, 4)],
            gammas: vec![q(1, 3), q(1, 5)],
            depths: vec![1, 2],
            gaps: gaps.clone(),
            truncation: t,
        };
        let leaf = |path: Vec<usize>, symbol: Symbol, seed: u64| TargetLeaf {
            name: format!("mass-{symbol}"),
            path,
            target: point_mass(symbol, t),
            samples: vec![
                constant_sample(&format!("{symbol}-pure"), symbol, 3000, &gaps),
                coin_sample(&format!("{symbol}-coin"), seed, 3000, &gaps),
            ],
        };
        let leaves = vec![leaf(vec![0, 0], 1, 11), leaf(vec![1, 0], 2, 12)];
        let run = purify_pipeline(&config, &leaves);
        assert_eq!(run.report.error, None);
        assert_eq!(run.report.stages.len(), 2);
        assert_eq!(run.report.nesting.len(), 1);
        assert!(run.report.nesting[0].ok);
        assert!(run.report.stages.iter().all(|s| s.families.iter().all(|f| f.totality)));
        assert_eq!(run.report.cumulative.len(), 4);
        let coin = &run.report.cumulative[1];
        assert!(coin.columns_ever_changed > 0);
        assert!(coin.max_changes_per_column <= 2);

        let mut bad = config.clone();
        bad.epsilons[1] = q(1, 1);
        let run = purify_pipeline(&bad, &leaves);
        assert!(run.report.error.is_some());
        assert!(run.report.stages.is_empty());
    }
}
