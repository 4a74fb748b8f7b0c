//! One function per subcommand.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{json, Value};
use strictform_core::arrays::lift_binary;
use strictform_core::assemble::{
    build_stitch_kit, convergence_check, detect_exceptional, embed_aperiodic, embed_periodic, reconstruct,
    EmbeddedSystem, StitchKit, StitchReport,
};
use strictform_core::formats::{parse_arr, parse_emp, write_kit, write_mrk};
use strictform_core::markers::MarkerSystem;
use strictform_core::measures::{dstar as dstar_value, EmpiricalMeasure, Truncation};
use strictform_core::purify::{purify_pipeline, ExactValue};

use crate::config::{
    lifted_window, parse_bits, parse_generator, parse_truncation, AssembleExperiment, PurifyExperiment,
};
use crate::output::{config_hash, plot_points, read_envelope, write_atomic, write_csv, write_envelope, Envelope};
use crate::CliError;

fn read_text(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    serde_json::from_str(&read_text(path)?).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn config_err(e: impl std::fmt::Display) -> CliError {
    CliError::Config(e.to_string())
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("report serializes")
}

pub fn markers(columns: usize, origin: i64, gaps: &[u64], out: Option<&Path>) -> Result<bool, CliError> {
    let system = MarkerSystem::build(columns, origin, gaps).map_err(config_err)?;
    for r in 0..system.row_count() {
        println!("row {r} gap {} markers {}", system.gap(r), system.row(r).len());
    }
    let checks = system.check_all();
    println!("two_gaps {}", checks.two_gaps);
    println!("congruent {}", checks.congruent);
    println!("balanced {}", checks.balanced);
    if let Some(path) = out {
        write_atomic(path, write_mrk(&system).as_bytes())?;
    }
    Ok(checks.all())
}

enum Loaded {
    Rect(strictform_core::arrays::Rectangle),
    Measure(EmpiricalMeasure),
}

fn load_operand(path: &Path) -> Result<Loaded, CliError> {
    let text = read_text(path)?;
    let bad = |e: strictform_core::formats::FormatError| CliError::Config(format!("{}: {e}", path.display()));
    if path.extension().is_some_and(|e| e == "emp") {
        Ok(Loaded::Measure(parse_emp(&text).map_err(bad)?))
    } else {
        Ok(Loaded::Rect(parse_arr(&text).map_err(bad)?.to_rectangle()))
    }
}

pub fn dstar(a: &Path, b: &Path, trunc: &str) -> Result<bool, CliError> {
    let t: Truncation = parse_truncation(trunc)?;
    let (a, b) = (load_operand(a)?, load_operand(b)?);
    let d = match (&a, &b) {
        (Loaded::Rect(x), Loaded::Rect(y)) => dstar_value(x, y, t),
        (Loaded::Rect(x), Loaded::Measure(y)) => dstar_value(x, y, t),
        (Loaded::Measure(x), Loaded::Rect(y)) => dstar_value(x, y, t),
        (Loaded::Measure(x), Loaded::Measure(y)) => dstar_value(x, y, t),
    }
    .map_err(config_err)?;
    let value = ExactValue::from(&d.value);
    let tail = ExactValue::from(&d.tail_bound);
    println!("d* {} {}", value.exact, value.decimal);
    println!("tail_bound {} {}", tail.exact, tail.decimal);
    Ok(true)
}

pub fn purify(config_path: &Path, out: &Path, csv: Option<&Path>) -> Result<bool, CliError> {
    let experiment: PurifyExperiment = read_json(config_path)?;
    let config = experiment.validate()?;
    let leaves = experiment.leaves(&config)?;
    let run = purify_pipeline(&config, &leaves);
    let passed = run.report.invariants_hold();
    let leaf_info: Vec<Value> = leaves
        .iter()
        .map(|l| {
            json!({
                "name": l.name,
                "path": l.path,
                "target": l.target.source(),
                "samples": l.samples.iter().map(|s| s.label.clone()).collect::<Vec<_>>(),
            })
        })
        .collect();
    let report = json!({
        "truncation": config.truncation.to_string(),
        "leaves": leaf_info,
        "pipeline": to_value(&run.report),
    });
    finish("purify", config_hash(&experiment), passed, report, out, csv)
}

fn finish(command: &str, hash: String, passed: bool, report: Value, out: &Path, csv: Option<&Path>) -> Result<bool, CliError> {
    let envelope = Envelope::new(command, hash, passed, report);
    write_envelope(out, &envelope)?;
    if let Some(path) = csv {
        write_csv(path, &plot_points(command, &envelope.report))?;
    }
    println!("{command}: {}", if passed { "passed" } else { "FAILED" });
    Ok(passed)
}

#[derive(Serialize)]
struct EmbeddingOut {
    label: String,
    k: Option<usize>,
    widths: Vec<u64>,
    span: Option<(i64, i64)>,
    roundtrip: bool,
    error: Option<String>,
}

fn embedding_entry(
    label: String,
    window: &strictform_core::arrays::ArrayWindow,
    result: Result<EmbeddedSystem, strictform_core::assemble::AssembleError>,
    systems: &mut Vec<EmbeddedSystem>,
) -> EmbeddingOut {
    match result {
        Ok(emb) => {
            let roundtrip = reconstruct(&emb.window, emb.k).is_ok_and(|back| back.rows() == window.rows());
            let (k, widths) = emb.marker_signature();
            let out = EmbeddingOut {
                label: emb.label.clone(),
                k: Some(k),
                widths,
                span: emb.span,
                roundtrip,
                error: None,
            };
            systems.push(emb);
            out
        }
        Err(e) => EmbeddingOut {
            label,
            k: None,
            widths: Vec::new(),
            span: None,
            roundtrip: false,
            error: Some(e.to_string()),
        },
    }
}

fn embed_fixtures(experiment: &AssembleExperiment, kit: &StitchKit) -> Result<(Vec<EmbeddingOut>, Vec<EmbeddedSystem>), CliError> {
    let mut entries = Vec::new();
    let mut systems = Vec::new();
    for f in &experiment.periodic {
        let bits = parse_bits(&f.bits)?;
        let p = bits.len();
        let word: Vec<u8> = (0..f.columns + f.rows - 1).map(|i| bits[i % p]).collect();
        let window = lift_binary(&word, f.rows).map_err(config_err)?;
        let phase = f.phase.rem_euclid(p as i64);
        let markers: Vec<i64> = (0..).map(|j| phase - 1 + j * p as i64).take_while(|&m| m < f.columns as i64).collect();
        let result = embed_periodic(&window, &markers, p, kit);
        entries.push(embedding_entry(format!("periodic:{}", f.bits), &window, result, &mut systems));
    }
    for f in &experiment.aperiodic {
        let spec = parse_generator(&f.generator)?;
        let window = lifted_window(&spec, f.columns, f.rows, 0)?;
        let markers = MarkerSystem::build(f.columns, 0, &[f.gap]).map_err(config_err)?;
        let result = embed_aperiodic(&window, markers.row(0), f.gap as usize, kit);
        entries.push(embedding_entry(format!("aperiodic:{}:{}", f.gap, f.generator), &window, result, &mut systems));
    }
    Ok((entries, systems))
}

pub fn assemble(config_path: &Path, out: &Path, kit_path: Option<&Path>, csv: Option<&Path>) -> Result<bool, CliError> {
    let experiment: AssembleExperiment = read_json(config_path)?;
    experiment.validate()?;
    let exceptional = match &experiment.periods {
        Some(p) => Some(detect_exceptional(&p.spec()?).map_err(config_err)?),
        None => None,
    };
    let spec = parse_generator(&experiment.reference)?;
    let x0 = spec.oracle().map_err(config_err)?;
    let hash = config_hash(&experiment);
    let kit = match build_stitch_kit(&x0, experiment.levels, experiment.horizon) {
        Ok(kit) => kit,
        Err(e) => {
            let report = json!({
                "reference": experiment.reference,
                "horizon": experiment.horizon,
                "exceptional": exceptional,
                "kit_error": e.to_string(),
            });
            eprintln!("strictform: {e}");
            return finish("assemble", hash, false, report, out, csv);
        }
    };
    let lengths = experiment.stitch_lengths.clone().unwrap_or_else(|| kit.lengths.clone());
    let mut passed = true;
    let mut stitch: Vec<StitchReport> = Vec::new();
    let mut stitch_errors: Vec<String> = Vec::new();
    for &l in &lengths {
        match kit.check_stitchable(l) {
            Ok(r) => {
                passed &= r.ok();
                stitch.push(r);
            }
            Err(e) => {
                passed = false;
                stitch_errors.push(format!("l = {l}: {e}"));
            }
        }
    }
    if let Some(path) = kit_path {
        let valid: Vec<usize> = lengths.iter().copied().filter(|&l| kit.level_for(l).is_some()).collect();
        let text = write_kit(&kit, &valid).map_err(config_err)?;
        write_atomic(path, text.as_bytes())?;
    }
    let (embeddings, systems) = embed_fixtures(&experiment, &kit)?;
    passed &= embeddings.iter().all(|e| e.roundtrip && e.error.is_none());
    let w = experiment
        .convergence_window
        .or_else(|| systems.iter().map(|s| s.k).min());
    let convergence = w.map(|w| convergence_check(&systems, &x0, w));
    passed &= convergence.as_ref().is_none_or(|c| c.ok());
    let levels: Vec<Value> = kit
        .levels
        .iter()
        .zip(&kit.lengths)
        .map(|(level, l_k)| {
            json!({
                "k": level.k,
                "base": level.base.to_string(),
                "transition": level.transition,
                "length": l_k,
            })
        })
        .collect();
    let report = json!({
        "reference": experiment.reference,
        "horizon": experiment.horizon,
        "exceptional": exceptional,
        "kit": {"levels": levels, "lengths": kit.lengths},
        "stitch": to_value(&stitch),
        "stitch_errors": stitch_errors,
        "embeddings": to_value(&embeddings),
        "convergence": to_value(&convergence),
    });
    finish("assemble", hash, passed, report, out, csv)
}

pub fn verify(report: &Path, config: Option<&Path>) -> Result<bool, CliError> {
    let envelope = read_envelope(report)?;
    let mut ok = envelope.passed;
    println!("command {}", envelope.command);
    println!("version {}", envelope.version);
    println!("passed {}", envelope.passed);
    if let Some(path) = config {
        let hash = match envelope.command.as_str() {
            "purify" => config_hash(&read_json::<PurifyExperiment>(path)?),
            "assemble" => config_hash(&read_json::<AssembleExperiment>(path)?),
            other => return Err(CliError::Config(format!("unknown report command {other:?}"))),
        };
        let matches = hash == envelope.config_sha256;
        println!("config_hash {}", if matches { "matches" } else { "differs" });
        ok &= matches;
    }
    Ok(ok)
}

pub fn report(report: &Path, csv: &Path) -> Result<bool, CliError> {
    let envelope = read_envelope(report)?;
    let points = plot_points(&envelope.command, &envelope.report);
    write_csv(csv, &points)?;
    println!("{} points", points.len());
    Ok(true)
}
