//! Text formats: arrays (`.arr`), marker rows (`.mrk`), empirical measures
//! (`.emp`) and stitch kits (`.kit`).

use std::fmt::Write as _;

use num_bigint::BigInt;
use num_rational::BigRational;
use thiserror::Error;

use crate::arrays::{AmalgamationChain, ArrayWindow, ConstraintMode, Rectangle, Symbol};
use crate::assemble::StitchKit;
use crate::markers::MarkerSystem;
use crate::measures::{EmpiricalMeasure, Truncation};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}: {message}")]
pub struct FormatError {
    pub line: usize,
    pub message: String,
}

fn err<T>(line: usize, message: impl Into<String>) -> Result<T, FormatError> {
    Err(FormatError {
        line,
        message: message.into(),
    })
}

fn parse<T: std::str::FromStr>(line: usize, token: &str, what: &str) -> Result<T, FormatError> {
    token.parse().or_else(|_| err(line, format!("bad {what} {token:?}")))
}

/// A window with per-cell marker flags, as stored in `.arr` files.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArrayFile {
    pub window: ArrayWindow,
    pub flags: Vec<Vec<bool>>,
}

impl ArrayFile {
    pub fn new(window: ArrayWindow, markers: Option<&MarkerSystem>) -> Self {
        let flags = (0..window.row_count())
            .map(|r| match markers.filter(|m| r < m.row_count()) {
                Some(m) => (window.origin()..window.end()).map(|c| m.has_marker(r, c)).collect(),
                None => vec![false; window.columns()],
            })
            .collect();
        Self { window, flags }
    }

    pub fn has_markers(&self) -> bool {
        self.flags.iter().flatten().any(|&f| f)
    }

    /// Marker rows read off the flags, up to the last flagged row.
    pub fn markers(&self) -> Option<MarkerSystem> {
        let used = self.flags.iter().rposition(|row| row.iter().any(|&f| f))? + 1;
        let origin = self.window.origin();
        let rows = self.flags[..used]
            .iter()
            .map(|row| {
                row.iter()
                    .enumerate()
                    .filter(|(_, &f)| f)
                    .map(|(c, _)| origin + c as i64)
                    .collect()
            })
            .collect();
        MarkerSystem::infer(origin, self.window.columns(), rows).ok()
    }

    /// The whole window as a rectangle, flags included.
    pub fn to_rectangle(&self) -> Rectangle {
        let rows = self.window.row_count();
        let width = self.window.columns();
        Rectangle::new(rows, width, self.window.rows().concat(), self.flags.concat()).expect("window shape")
    }
}

fn write_cells(out: &mut String, cells: &[Symbol], flags: &[bool]) {
    for (i, (c, &f)) in cells.iter().zip(flags).enumerate() {
        if i > 0 {
            out.push(' ');
        }
        let _ = write!(out, "{c}");
        if f {
            out.push('|');
        }
    }
    out.push('\n');
}

fn parse_cells(line: usize, text: &str) -> Result<(Vec<Symbol>, Vec<bool>), FormatError> {
    let mut cells = Vec::new();
    let mut flags = Vec::new();
    for token in text.split_whitespace() {
        let (digits, flag) = match token.strip_suffix('|') {
            Some(d) => (d, true),
            None => (token, false),
        };
        cells.push(parse::<Symbol>(line, digits, "symbol")?);
        flags.push(flag);
    }
    Ok((cells, flags))
}

pub fn write_arr(file: &ArrayFile) -> String {
    let w = &file.window;
    let mut out = format!("{} {} {} {}\n", w.row_count(), w.columns(), w.origin(), w.mode().as_str());
    let sizes: Vec<String> = w.chain().alphabet_sizes().iter().map(u32::to_string).collect();
    out.push_str(&sizes.join(" "));
    out.push('\n');
    for (row, flags) in w.rows().iter().zip(&file.flags) {
        write_cells(&mut out, row, flags);
    }
    out
}

pub fn parse_arr(text: &str) -> Result<ArrayFile, FormatError> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l)).filter(|(_, l)| !l.trim().is_empty());
    let (n, header) = lines.next().map_or_else(|| err(1, "empty file"), Ok)?;
    let head: Vec<&str> = header.split_whitespace().collect();
    if head.len() != 4 {
        return err(n, "header must be `K N origin mode`");
    }
    let rows: usize = parse(n, head[0], "row count")?;
    let columns: usize = parse(n, head[1], "column count")?;
    let origin: i64 = parse(n, head[2], "origin")?;
    let mode: ConstraintMode = parse(n, head[3], "mode")?;
    let (n, size_line) = lines.next().map_or_else(|| err(n + 1, "missing alphabet sizes"), Ok)?;
    let sizes = size_line
        .split_whitespace()
        .map(|t| parse::<u32>(n, t, "alphabet size"))
        .collect::<Result<Vec<_>, _>>()?;
    if sizes.len() != rows {
        return err(n, format!("{} alphabet sizes for {rows} rows", sizes.len()));
    }
    let mut grid = Vec::with_capacity(rows);
    let mut flags = Vec::with_capacity(rows);
    for r in 0..rows {
        let (n, line) = lines.next().map_or_else(|| err(n + r + 1, format!("missing row {r}")), Ok)?;
        let (cells, f) = parse_cells(n, line)?;
        if cells.len() != columns {
            return err(n, format!("row {r} has {} tokens, expected {columns}", cells.len()));
        }
        grid.push(cells);
        flags.push(f);
    }
    if let Some((n, _)) = lines.next() {
        return err(n, "trailing content");
    }
    let chain = AmalgamationChain::from_sizes(sizes).or_else(|e| err(2, e.to_string()))?;
    let chain = if chain.is_canonical() {
        AmalgamationChain::canonical(rows).expect("canonical sizes")
    } else {
        chain
    };
    let window = ArrayWindow::new(chain, origin, grid, mode).or_else(|e| err(3, e.to_string()))?;
    Ok(ArrayFile { window, flags })
}

pub fn write_mrk(markers: &MarkerSystem) -> String {
    let mut out = String::new();
    for row in markers.rows() {
        let tokens: Vec<String> = row.iter().map(i64::to_string).collect();
        out.push_str(&tokens.join(" "));
        out.push('\n');
    }
    out
}

/// Marker rows from a `.mrk` file, one line per row.
pub fn parse_mrk(text: &str) -> Result<Vec<Vec<i64>>, FormatError> {
    text.lines()
        .enumerate()
        .map(|(i, line)| {
            line.split_whitespace()
                .map(|t| parse::<i64>(i + 1, t, "position"))
                .collect()
        })
        .collect()
}

pub fn write_emp(measure: &EmpiricalMeasure) -> String {
    let t = measure.truncation();
    let mut out = format!("{} {}\n", t.rows, t.width);
    for (q, w) in measure.weights() {
        let _ = write!(out, "{} {}", q.rows(), q.width());
        for c in q.cells() {
            let _ = write!(out, " {c}");
        }
        let mask: String = q.markers().iter().map(|&f| if f { '1' } else { '0' }).collect();
        let _ = writeln!(out, " {mask} {}/{}", w.numer(), w.denom());
    }
    out
}

pub fn parse_emp(text: &str) -> Result<EmpiricalMeasure, FormatError> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l)).filter(|(_, l)| !l.trim().is_empty());
    let (n, header) = lines.next().map_or_else(|| err(1, "empty file"), Ok)?;
    let head: Vec<&str> = header.split_whitespace().collect();
    if head.len() != 2 {
        return err(n, "header must be `L Rw`");
    }
    let truncation = Truncation::new(parse(n, head[0], "rows")?, parse(n, head[1], "width")?)
        .or_else(|e| err(n, e.to_string()))?;
    let mut weights = Vec::new();
    for (n, line) in lines {
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.len() < 2 {
            return err(n, "missing dimensions");
        }
        let rows: usize = parse(n, tokens[0], "rows")?;
        let width: usize = parse(n, tokens[1], "width")?;
        let size = rows * width;
        if tokens.len() != size + 4 {
            return err(n, format!("expected {size} symbols, a bitmask and a weight"));
        }
        let cells = tokens[2..2 + size]
            .iter()
            .map(|t| parse::<Symbol>(n, t, "symbol"))
            .collect::<Result<Vec<_>, _>>()?;
        let mask = tokens[2 + size];
        if mask.len() != size || !mask.chars().all(|c| c == '0' || c == '1') {
            return err(n, format!("bitmask {mask:?} must have {size} binary digits"));
        }
        let flags = mask.chars().map(|c| c == '1').collect();
        let weight = parse_fraction(n, tokens[3 + size])?;
        let q = Rectangle::new(rows, width, cells, flags).or_else(|e| err(n, e.to_string()))?;
        weights.push((q, weight));
    }
    EmpiricalMeasure::from_weights(truncation, weights, "file").or_else(|e| err(1, e.to_string()))
}

fn parse_fraction(line: usize, token: &str) -> Result<BigRational, FormatError> {
    let (p, q) = token.split_once('/').unwrap_or((token, "1"));
    let p: BigInt = parse(line, p, "numerator")?;
    let q: BigInt = parse(line, q, "denominator")?;
    if q == BigInt::from(0) {
        return err(line, "zero denominator");
    }
    Ok(BigRational::new(p, q))
}

fn write_rect(out: &mut String, rect: &Rectangle) {
    for r in 0..rect.rows() {
        write_cells(out, rect.row(r), rect.row_markers(r));
    }
}

/// Kit summary: one block per level with its base rectangle, then both
/// tabbed rectangles for each requested length.
pub fn write_kit(kit: &StitchKit, lengths: &[usize]) -> Result<String, crate::assemble::AssembleError> {
    let mut out = format!("kit levels {} horizon {}\n", kit.levels.len(), kit.horizon);
    for (level, l_k) in kit.levels.iter().zip(&kit.lengths) {
        let _ = writeln!(
            out,
            "level {} transition {} length {} horizon {}",
            level.k, level.transition, l_k, kit.horizon
        );
        write_rect(&mut out, &level.base);
    }
    for &l in lengths {
        let pair = kit.tabbed_rectangles(l)?;
        let _ = writeln!(out, "tabbed {} rows {}", l, pair.k);
        write_rect(&mut out, &pair.short);
        write_rect(&mut out, &pair.long);
    }
    Ok(out)
}

/// Parsed `.kit` contents.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KitFile {
    pub horizon: usize,
    /// `(k, l(B^(k)), l_k, B^(k))`.
    pub levels: Vec<(usize, usize, usize, Rectangle)>,
    /// `(l, R_l, R̄_l)`.
    pub tabbed: Vec<(usize, Rectangle, Rectangle)>,
}

struct Cursor<'a> {
    lines: Vec<(usize, &'a str)>,
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(text: &'a str) -> Self {
        let lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l))
            .filter(|(_, l)| !l.trim().is_empty())
            .collect();
        Self { lines, pos: 0 }
    }

    fn done(&self) -> bool {
        self.pos >= self.lines.len()
    }

    fn next(&mut self, what: &str) -> Result<(usize, Vec<&'a str>), FormatError> {
        let Some(&(n, line)) = self.lines.get(self.pos) else {
            return err(self.lines.last().map_or(1, |l| l.0), format!("missing {what}"));
        };
        self.pos += 1;
        Ok((n, line.split_whitespace().collect()))
    }

    fn rect(&mut self, rows: usize, width: usize) -> Result<Rectangle, FormatError> {
        let mut cells = Vec::new();
        let mut flags = Vec::new();
        let mut last = 0;
        for r in 0..rows {
            let (n, tokens) = self.next("rectangle row")?;
            let (c, f) = parse_cells(n, &tokens.join(" "))?;
            if c.len() != width {
                return err(n, format!("row {r} has {} cells, expected {width}", c.len()));
            }
            cells.extend(c);
            flags.extend(f);
            last = n;
        }
        Rectangle::new(rows, width, cells, flags).or_else(|e| err(last, e.to_string()))
    }
}

pub fn parse_kit(text: &str) -> Result<KitFile, FormatError> {
    let mut cur = Cursor::new(text);
    let (n, head) = cur.next("header")?;
    if head.len() != 5 || head[0] != "kit" || head[1] != "levels" || head[3] != "horizon" {
        return err(n, "header must be `kit levels K horizon H`");
    }
    let level_count: usize = parse(n, head[2], "level count")?;
    let horizon: usize = parse(n, head[4], "horizon")?;
    let mut levels = Vec::new();
    for _ in 0..level_count {
        let (n, t) = cur.next("level line")?;
        if t.len() != 8 || t[0] != "level" || t[2] != "transition" || t[4] != "length" {
            return err(n, "level line must be `level k transition t length l horizon H`");
        }
        let k: usize = parse(n, t[1], "level")?;
        let transition = parse(n, t[3], "transition")?;
        let length = parse(n, t[5], "length")?;
        levels.push((k, transition, length, cur.rect(k, 2 * k)?));
    }
    let mut tabbed = Vec::new();
    while !cur.done() {
        let (n, t) = cur.next("tabbed line")?;
        if t.len() != 4 || t[0] != "tabbed" || t[2] != "rows" {
            return err(n, "tabbed line must be `tabbed l rows k`");
        }
        let l: usize = parse(n, t[1], "length")?;
        let k: usize = parse(n, t[3], "rows")?;
        let short = cur.rect(k, l)?;
        let long = cur.rect(k, l + 1)?;
        tabbed.push((l, short, long));
    }
    Ok(KitFile {
        horizon,
        levels,
        tabbed,
    })
}
