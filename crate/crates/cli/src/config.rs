//! Experiment configuration files.

use std::collections::BTreeSet;

use num_bigint::BigInt;
use num_rational::BigRational;
use serde::{Deserialize, Serialize};
use strictform_core::arrays::{lift_binary, ArrayWindow, Symbol};
use strictform_core::assemble::{PeriodFamily, PeriodSpec};
use strictform_core::generators::OracleSpec;
use strictform_core::markers::MarkerSystem;
use strictform_core::measures::{EmpiricalMeasure, Truncation};
use strictform_core::purify::{PurifyConfig, Sample, TargetLeaf};

use crate::CliError;

fn default_reference_offset() -> u64 {
    1_000_000
}

fn default_windows() -> usize {
    1
}

/// Experiment description for `strictform purify`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PurifyExperiment {
    pub truncation: String,
    pub gaps: Vec<u64>,
    pub depths: Vec<usize>,
    pub epsilons: Vec<String>,
    pub gammas: Vec<String>,
    pub window_length: usize,
    #[serde(default = "default_windows")]
    pub windows_per_leaf: usize,
    pub reference_length: usize,
    #[serde(default = "default_reference_offset")]
    pub reference_offset: u64,
    pub leaves: Vec<LeafConfig>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LeafConfig {
    pub path: Vec<usize>,
    /// Generator spec string for the sample windows.
    pub generator: String,
    /// `constant:<digits>` for a point-mass target; defaults to a reference
    /// window of the generator.
    #[serde(default)]
    pub target: Option<String>,
    #[serde(default)]
    pub name: Option<String>,
}

pub fn parse_fraction(s: &str) -> Result<BigRational, CliError> {
    let bad = || CliError::Config(format!("bad fraction {s:?}"));
    let (p, q) = s.split_once('/').unwrap_or((s, "1"));
    let p: BigInt = p.trim().parse().map_err(|_| bad())?;
    let q: BigInt = q.trim().parse().map_err(|_| bad())?;
    if q == BigInt::from(0) {
        return Err(bad());
    }
    Ok(BigRational::new(p, q))
}

pub fn parse_truncation(s: &str) -> Result<Truncation, CliError> {
    s.parse().map_err(|e| CliError::Config(format!("truncation {s:?}: {e}")))
}

pub fn parse_generator(s: &str) -> Result<OracleSpec, CliError> {
    s.parse().map_err(|e| CliError::Config(format!("{e}")))
}

/// Bits of a generator word. Periodic and full-shift symbols start at 1;
/// the other generators emit 0/1.
pub fn word_bits(spec: &OracleSpec, word: &[Symbol]) -> Result<Vec<u8>, CliError> {
    let shift = u32::from(matches!(spec, OracleSpec::Periodic(_) | OracleSpec::Full(_)));
    word.iter()
        .map(|&s| match s.checked_sub(shift) {
            Some(b @ (0 | 1)) => Ok(b as u8),
            _ => Err(CliError::Config(format!("{spec} is not binary (symbol {s})"))),
        })
        .collect()
}

/// The `rows`-row lift of the generator word starting `offset` steps in.
pub fn lifted_window(spec: &OracleSpec, columns: usize, rows: usize, offset: u64) -> Result<ArrayWindow, CliError> {
    let word = spec
        .word_at(columns + rows - 1, offset)
        .map_err(|e| CliError::Config(e.to_string()))?;
    lift_binary(&word_bits(spec, &word)?, rows).map_err(|e| CliError::Config(e.to_string()))
}

/// A lifted window with one marker row per gap.
pub fn markered_window(spec: &OracleSpec, gaps: &[u64], columns: usize, offset: u64, label: String) -> Result<Sample, CliError> {
    let window = lifted_window(spec, columns, gaps.len(), offset)?;
    let markers = MarkerSystem::build(columns, 0, gaps).map_err(|e| CliError::Config(e.to_string()))?;
    Ok(Sample {
        label,
        window,
        markers,
    })
}

impl PurifyExperiment {
    pub fn purify_config(&self) -> Result<PurifyConfig, CliError> {
        let config = PurifyConfig {
            epsilons: self.epsilons.iter().map(|s| parse_fraction(s)).collect::<Result<_, _>>()?,
            gammas: self.gammas.iter().map(|s| parse_fraction(s)).collect::<Result<_, _>>()?,
            depths: self.depths.clone(),
            gaps: self.gaps.clone(),
            truncation: parse_truncation(&self.truncation)?,
        };
        config.validate().map_err(|e| CliError::Config(e.to_string()))?;
        if self.windows_per_leaf == 0 || self.window_length == 0 || self.reference_length == 0 {
            return Err(CliError::Config("window counts and lengths must be positive".into()));
        }
        Ok(config)
    }

    /// Checks everything that can be checked before any window is built.
    pub fn validate(&self) -> Result<PurifyConfig, CliError> {
        let config = self.purify_config()?;
        if self.leaves.is_empty() {
            return Err(CliError::Config("no leaves".into()));
        }
        let mut paths = BTreeSet::new();
        for leaf in &self.leaves {
            if leaf.path.len() != config.stages() {
                return Err(CliError::Config(format!(
                    "leaf path {:?} must have {} entries",
                    leaf.path,
                    config.stages()
                )));
            }
            if !paths.insert(&leaf.path) {
                return Err(CliError::Config(format!("duplicate leaf path {:?}", leaf.path)));
            }
            let spec = parse_generator(&leaf.generator)?;
            if matches!(spec, OracleSpec::Full(_)) {
                return Err(CliError::Config("full-shift leaves have no sample windows".into()));
            }
            if let Some(t) = &leaf.target {
                constant_column(t, config.truncation.rows)?;
            }
        }
        Ok(config)
    }

    pub fn leaves(&self, config: &PurifyConfig) -> Result<Vec<TargetLeaf>, CliError> {
        self.leaves
            .iter()
            .map(|leaf| {
                let spec = parse_generator(&leaf.generator)?;
                let name = leaf.name.clone().unwrap_or_else(|| leaf.generator.clone());
                let samples = (0..self.windows_per_leaf)
                    .map(|j| {
                        let offset = (j * self.window_length) as u64;
                        markered_window(&spec, &config.gaps, self.window_length, offset, format!("{name}#{j}"))
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                let target = match &leaf.target {
                    Some(t) => EmpiricalMeasure::constant(&constant_column(t, config.truncation.rows)?, config.truncation)
                        .map_err(|e| CliError::Config(e.to_string()))?
                        .with_source(t.clone()),
                    None => {
                        let reference = markered_window(
                            &spec,
                            &config.gaps,
                            self.reference_length,
                            self.reference_offset,
                            format!("{name}@ref"),
                        )?;
                        reference
                            .measure(config.truncation)
                            .map_err(|e| CliError::Config(e.to_string()))?
                            .with_source(format!("{name}@ref"))
                    }
                };
                Ok(TargetLeaf {
                    path: leaf.path.clone(),
                    name,
                    target,
                    samples,
                })
            })
            .collect()
    }
}

/// `constant:<digits>`: the column of a constant array, top row first.
fn constant_column(target: &str, rows: usize) -> Result<Vec<Symbol>, CliError> {
    let digits = target
        .strip_prefix("constant:")
        .ok_or_else(|| CliError::Config(format!("unknown target {target:?}")))?;
    let column: Option<Vec<Symbol>> = digits.chars().map(|c| c.to_digit(10)).collect();
    match column {
        Some(c) if c.len() >= rows && c.iter().all(|&s| s > 0) => Ok(c),
        _ => Err(CliError::Config(format!(
            "target {target:?} needs at least {rows} nonzero digits"
        ))),
    }
}

/// Experiment description for `strictform assemble`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AssembleExperiment {
    pub reference: String,
    pub levels: usize,
    pub horizon: usize,
    /// Lengths whose tabbed pairs are checked; defaults to the kit lengths.
    #[serde(default)]
    pub stitch_lengths: Option<Vec<usize>>,
    #[serde(default)]
    pub periodic: Vec<PeriodicFixture>,
    #[serde(default)]
    pub aperiodic: Vec<AperiodicFixture>,
    /// Window size of the convergence check; defaults to the smallest level
    /// among the fixtures.
    #[serde(default)]
    pub convergence_window: Option<usize>,
    #[serde(default)]
    pub periods: Option<PeriodConfig>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PeriodicFixture {
    /// One period of the model word, as binary digits.
    pub bits: String,
    pub columns: usize,
    pub rows: usize,
    #[serde(default)]
    pub phase: i64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AperiodicFixture {
    pub gap: u64,
    pub generator: String,
    pub columns: usize,
    pub rows: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PeriodConfig {
    #[serde(default)]
    pub explicit: Vec<u64>,
    /// `none`, `all_primes` or `geometric:<base>`.
    #[serde(default = "default_family")]
    pub family: String,
    pub all_periodic: bool,
}

fn default_family() -> String {
    "none".into()
}

impl PeriodConfig {
    pub fn spec(&self) -> Result<PeriodSpec, CliError> {
        let family = match self.family.as_str() {
            "none" => PeriodFamily::None,
            "all_primes" => PeriodFamily::AllPrimes,
            other => match other.strip_prefix("geometric:").and_then(|b| b.parse().ok()) {
                Some(b) => PeriodFamily::Geometric(b),
                None => return Err(CliError::Config(format!("unknown period family {other:?}"))),
            },
        };
        Ok(PeriodSpec {
            explicit: self.explicit.iter().copied().collect(),
            family,
            all_periodic: self.all_periodic,
        })
    }
}

pub fn parse_bits(s: &str) -> Result<Vec<u8>, CliError> {
    let bits: Option<Vec<u8>> = s
        .chars()
        .map(|c| match c {
            '0' => Some(0),
            '1' => Some(1),
            _ => None,
        })
        .collect();
    bits.filter(|b| !b.is_empty())
        .ok_or_else(|| CliError::Config(format!("bad bit string {s:?}")))
}

impl AssembleExperiment {
    pub fn validate(&self) -> Result<(), CliError> {
        let reference = parse_generator(&self.reference)?;
        if matches!(reference, OracleSpec::Bernoulli { .. }) {
            return Err(CliError::Config("bernoulli windows are not a reference system".into()));
        }
        if self.levels == 0 || self.horizon == 0 {
            return Err(CliError::Config("levels and horizon must be positive".into()));
        }
        for f in &self.periodic {
            let bits = parse_bits(&f.bits)?;
            if f.columns < bits.len() || f.rows < 2 {
                return Err(CliError::Config(format!("periodic fixture {} is too small", f.bits)));
            }
        }
        for f in &self.aperiodic {
            parse_generator(&f.generator)?;
            if f.gap < 2 || f.rows < 2 || (f.columns as u64) < 2 * f.gap {
                return Err(CliError::Config(format!("aperiodic fixture with gap {} is too small", f.gap)));
            }
        }
        if let Some(p) = &self.periods {
            p.spec()?;
        }
        Ok(())
    }
}
