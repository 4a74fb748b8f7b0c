//! Finite windows of the universal array system.
//!
//! Row indices are zero-based throughout: row `r` carries the alphabet
//! `{1, ..., |Λ_{r+1}|}`. A window is a `K x N` slab with an absolute
//! column origin, so shifting only moves the origin.

use std::fmt;

use thiserror::Error;

use crate::markers::MarkerSystem;

pub type Symbol = u32;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ArrayError {
    #[error("row {row} is out of range for a chain with {rows} rows")]
    RowOutOfRange { row: usize, rows: usize },
    #[error("symbol {symbol} is not in the alphabet of row {row} (size {size})")]
    SymbolOutOfRange { row: usize, symbol: Symbol, size: u32 },
    #[error("no amalgamation map is defined between rows {row} and {}", row + 1)]
    NoMap { row: usize },
    #[error("invalid chain: {0}")]
    InvalidChain(String),
    #[error("window shape mismatch: {0}")]
    Shape(String),
    #[error("range violation: rows 1..={rows}, columns [{first}, {last}] not inside the window")]
    Range { rows: usize, first: i64, last: i64 },
    #[error("word of length {len} is shorter than the row count {rows}")]
    WordTooShort { len: usize, rows: usize },
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum ChainMaps {
    /// `map(m) = ceil(m / fan_out)`, with `fan_out = |Λ_{k+1}| / |Λ_k|`.
    Block,
    /// `maps[r][m - 1]` is the image in row `r` of symbol `m` from row `r + 1`.
    Explicit(Vec<Vec<Symbol>>),
    /// Alphabets only; usable for independent-mode windows.
    Unconstrained,
}

/// Per-row alphabets together with the surjections collapsing row `r + 1`
/// onto row `r`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AmalgamationChain {
    sizes: Vec<u32>,
    maps: ChainMaps,
}

impl AmalgamationChain {
    /// The chain with `|Λ_k| = 2^k` and `map(m) = ceil(m / 2)`.
    pub fn canonical(rows: usize) -> Result<Self, ArrayError> {
        if rows == 0 || rows > 31 {
            return Err(ArrayError::InvalidChain(format!(
                "canonical chain needs 1..=31 rows, got {rows}"
            )));
        }
        Ok(Self {
            sizes: (1..=rows).map(|k| 1u32 << k).collect(),
            maps: ChainMaps::Block,
        })
    }

    /// Builds a chain from alphabet sizes alone. Sizes where each one divides
    /// the next get block amalgamations; anything else is unconstrained.
    pub fn from_sizes(sizes: Vec<u32>) -> Result<Self, ArrayError> {
        if sizes.is_empty() || sizes.contains(&0) {
            return Err(ArrayError::InvalidChain(
                "alphabet sizes must be positive and nonempty".into(),
            ));
        }
        let divisible = sizes.windows(2).all(|w| w[1] % w[0] == 0);
        let maps = if divisible {
            ChainMaps::Block
        } else {
            ChainMaps::Unconstrained
        };
        Ok(Self { sizes, maps })
    }

    pub fn explicit(sizes: Vec<u32>, maps: Vec<Vec<Symbol>>) -> Result<Self, ArrayError> {
        if sizes.is_empty() || sizes.contains(&0) {
            return Err(ArrayError::InvalidChain(
                "alphabet sizes must be positive and nonempty".into(),
            ));
        }
        if maps.len() + 1 != sizes.len() {
            return Err(ArrayError::InvalidChain(format!(
                "{} rows need {} maps, got {}",
                sizes.len(),
                sizes.len() - 1,
                maps.len()
            )));
        }
        for (row, map) in maps.iter().enumerate() {
            if map.len() != sizes[row + 1] as usize {
                return Err(ArrayError::InvalidChain(format!(
                    "map {row} is not total on an alphabet of size {}",
                    sizes[row + 1]
                )));
            }
            let mut hit = vec![false; sizes[row] as usize];
            for &image in map {
                if image == 0 || image > sizes[row] {
                    return Err(ArrayError::SymbolOutOfRange {
                        row,
                        symbol: image,
                        size: sizes[row],
                    });
                }
                hit[image as usize - 1] = true;
            }
            if !hit.iter().all(|&h| h) {
                return Err(ArrayError::InvalidChain(format!(
                    "map {row} is not surjective"
                )));
            }
        }
        Ok(Self {
            sizes,
            maps: ChainMaps::Explicit(maps),
        })
    }

    pub fn row_count(&self) -> usize {
        self.sizes.len()
    }

    pub fn alphabet_sizes(&self) -> &[u32] {
        &self.sizes
    }

    pub fn alphabet_size(&self, row: usize) -> Result<u32, ArrayError> {
        self.sizes.get(row).copied().ok_or(ArrayError::RowOutOfRange {
            row,
            rows: self.sizes.len(),
        })
    }

    pub fn is_canonical(&self) -> bool {
        self.maps == ChainMaps::Block
            && self
                .sizes
                .iter()
                .enumerate()
                .all(|(r, &s)| u64::from(s) == 1u64 << (r + 1))
    }

    pub fn has_maps(&self) -> bool {
        self.maps != ChainMaps::Unconstrained
    }

    /// Truncates the chain to its first `rows` rows.
    pub fn truncated(&self, rows: usize) -> Result<Self, ArrayError> {
        if rows == 0 || rows > self.sizes.len() {
            return Err(ArrayError::RowOutOfRange {
                row: rows,
                rows: self.sizes.len(),
            });
        }
        let maps = match &self.maps {
            ChainMaps::Explicit(m) => ChainMaps::Explicit(m[..rows - 1].to_vec()),
            other => other.clone(),
        };
        Ok(Self {
            sizes: self.sizes[..rows].to_vec(),
            maps,
        })
    }

    /// Image in row `row` of `symbol`, which must belong to row `row + 1`.
    pub fn amalgamate(&self, row: usize, symbol: Symbol) -> Result<Symbol, ArrayError> {
        if row + 1 >= self.sizes.len() {
            return Err(ArrayError::RowOutOfRange {
                row: row + 1,
                rows: self.sizes.len(),
            });
        }
        let upper = self.sizes[row + 1];
        if symbol == 0 || symbol > upper {
            return Err(ArrayError::SymbolOutOfRange {
                row: row + 1,
                symbol,
                size: upper,
            });
        }
        match &self.maps {
            ChainMaps::Block => {
                let fan_out = upper / self.sizes[row];
                Ok(symbol.div_ceil(fan_out))
            }
            ChainMaps::Explicit(maps) => Ok(maps[row][symbol as usize - 1]),
            ChainMaps::Unconstrained => Err(ArrayError::NoMap { row }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ConstraintMode {
    InverseLimit,
    Independent,
}

impl ConstraintMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ConstraintMode::InverseLimit => "inverse_limit",
            ConstraintMode::Independent => "independent",
        }
    }
}

impl std::str::FromStr for ConstraintMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "inverse_limit" => Ok(ConstraintMode::InverseLimit),
            "independent" => Ok(ConstraintMode::Independent),
            other => Err(format!("unknown constraint mode {other:?}")),
        }
    }
}

/// A `K x N` slab of an array, addressed by absolute column index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArrayWindow {
    chain: AmalgamationChain,
    origin: i64,
    rows: Vec<Vec<Symbol>>,
    mode: ConstraintMode,
}

impl ArrayWindow {
    pub fn new(
        chain: AmalgamationChain,
        origin: i64,
        rows: Vec<Vec<Symbol>>,
        mode: ConstraintMode,
    ) -> Result<Self, ArrayError> {
        if rows.len() != chain.row_count() {
            return Err(ArrayError::Shape(format!(
                "{} rows given for a chain with {} rows",
                rows.len(),
                chain.row_count()
            )));
        }
        let columns = rows[0].len();
        if columns == 0 {
            return Err(ArrayError::Shape("window has no columns".into()));
        }
        for (r, row) in rows.iter().enumerate() {
            if row.len() != columns {
                return Err(ArrayError::Shape(format!(
                    "row {r} has {} columns, expected {columns}",
                    row.len()
                )));
            }
            let size = chain.sizes[r];
            if let Some(&bad) = row.iter().find(|&&s| s == 0 || s > size) {
                return Err(ArrayError::SymbolOutOfRange {
                    row: r,
                    symbol: bad,
                    size,
                });
            }
        }
        if mode == ConstraintMode::InverseLimit && !chain.has_maps() {
            return Err(ArrayError::InvalidChain(
                "inverse-limit windows need amalgamation maps".into(),
            ));
        }
        Ok(Self {
            chain,
            origin,
            rows,
            mode,
        })
    }

    pub fn chain(&self) -> &AmalgamationChain {
        &self.chain
    }

    pub fn origin(&self) -> i64 {
        self.origin
    }

    pub fn columns(&self) -> usize {
        self.rows[0].len()
    }

    /// One past the last absolute column.
    pub fn end(&self) -> i64 {
        self.origin + self.columns() as i64
    }

    pub fn row_count(&self) -> usize {
        self.rows.len()
    }

    pub fn mode(&self) -> ConstraintMode {
        self.mode
    }

    pub fn row(&self, r: usize) -> &[Symbol] {
        &self.rows[r]
    }

    pub fn rows(&self) -> &[Vec<Symbol>] {
        &self.rows
    }

    pub fn contains_column(&self, column: i64) -> bool {
        column >= self.origin && column < self.end()
    }

    /// Symbol at row `r` and absolute column `column`.
    pub fn cell(&self, r: usize, column: i64) -> Symbol {
        self.rows[r][(column - self.origin) as usize]
    }

    pub fn with_mode(mut self, mode: ConstraintMode) -> Self {
        self.mode = mode;
        self
    }

    /// True iff every cell obeys the obligations of the window's mode.
    pub fn validate(&self) -> bool {
        match self.mode {
            ConstraintMode::Independent => true,
            ConstraintMode::InverseLimit => self.rows_consistent(0),
        }
    }

    /// Checks `cell(r, n) = map_r(cell(r + 1, n))` for every `r >= from_row`.
    pub fn rows_consistent(&self, from_row: usize) -> bool {
        (from_row..self.rows.len().saturating_sub(1)).all(|r| {
            self.rows[r]
                .iter()
                .zip(&self.rows[r + 1])
                .all(|(&lower, &upper)| self.chain.amalgamate(r, upper) == Ok(lower))
        })
    }

    pub fn shift(&self, t: i64) -> Self {
        let mut shifted = self.clone();
        shifted.origin -= t;
        shifted
    }

    /// Copies rows `0..rows` over the absolute columns `first..=last`, with
    /// marker flags taken from `markers` where it has the row.
    pub fn extract_rectangle(
        &self,
        rows: usize,
        first: i64,
        last: i64,
        markers: Option<&MarkerSystem>,
    ) -> Result<Rectangle, ArrayError> {
        if rows == 0
            || rows > self.row_count()
            || first > last
            || !self.contains_column(first)
            || !self.contains_column(last)
        {
            return Err(ArrayError::Range { rows, first, last });
        }
        let width = (last - first + 1) as usize;
        let start = (first - self.origin) as usize;
        let mut cells = Vec::with_capacity(rows * width);
        let mut flags = Vec::with_capacity(rows * width);
        for r in 0..rows {
            cells.extend_from_slice(&self.rows[r][start..start + width]);
            match markers.filter(|m| r < m.row_count()) {
                Some(m) => flags.extend((first..=last).map(|c| m.has_marker(r, c))),
                None => flags.extend(std::iter::repeat_n(false, width)),
            }
        }
        Ok(Rectangle {
            rows,
            width,
            cells,
            markers: flags,
        })
    }

    /// The whole window as a rectangle over its first `rows` rows.
    pub fn to_rectangle(
        &self,
        rows: usize,
        markers: Option<&MarkerSystem>,
    ) -> Result<Rectangle, ArrayError> {
        self.extract_rectangle(rows, self.origin, self.end() - 1, markers)
    }

    /// Overwrites the symbols of rows `0..block.rows()` starting at absolute
    /// column `first`. Marker flags of `block` are ignored here.
    pub(crate) fn write_block(&mut self, first: i64, block: &Rectangle) {
        let start = (first - self.origin) as usize;
        for r in 0..block.rows() {
            self.rows[r][start..start + block.width()].copy_from_slice(block.row(r));
        }
    }

    pub(crate) fn set_row(&mut self, r: usize, row: Vec<Symbol>) {
        debug_assert_eq!(row.len(), self.columns());
        self.rows[r] = row;
    }
}

/// A `rows x width` block of symbols with per-cell marker flags. A set flag
/// means "marker after this cell". Identity ignores horizontal position.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Rectangle {
    rows: usize,
    width: usize,
    cells: Vec<Symbol>,
    markers: Vec<bool>,
}

impl Rectangle {
    pub fn new(
        rows: usize,
        width: usize,
        cells: Vec<Symbol>,
        markers: Vec<bool>,
    ) -> Result<Self, ArrayError> {
        if rows == 0 || width == 0 {
            return Err(ArrayError::Shape("rectangles must be nonempty".into()));
        }
        if cells.len() != rows * width || markers.len() != rows * width {
            return Err(ArrayError::Shape(format!(
                "{rows}x{width} rectangle needs {} cells and flags, got {} and {}",
                rows * width,
                cells.len(),
                markers.len()
            )));
        }
        Ok(Self {
            rows,
            width,
            cells,
            markers,
        })
    }

    /// Rectangle without markers from a list of equally long rows.
    pub fn from_rows(rows: &[Vec<Symbol>]) -> Result<Self, ArrayError> {
        let width = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != width) {
            return Err(ArrayError::Shape("ragged rows".into()));
        }
        let cells: Vec<Symbol> = rows.concat();
        let n = cells.len();
        Self::new(rows.len(), width, cells, vec![false; n])
    }

    /// One-row rectangle written as digits, with `|` after a digit marking a
    /// marker after that cell, e.g. `"111|121|"`.
    pub fn from_row_str(s: &str) -> Result<Self, ArrayError> {
        let mut cells = Vec::new();
        let mut markers = Vec::new();
        for ch in s.chars() {
            match ch {
                '|' => match markers.last_mut() {
                    Some(flag) => *flag = true,
                    None => return Err(ArrayError::Shape("leading marker".into())),
                },
                c if c.is_ascii_digit() => {
                    cells.push(c.to_digit(10).unwrap_or_default());
                    markers.push(false);
                }
                c => return Err(ArrayError::Shape(format!("unexpected character {c:?}"))),
            }
        }
        let width = cells.len();
        Self::new(1, width, cells, markers)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.rows, self.width)
    }

    pub fn cell(&self, r: usize, c: usize) -> Symbol {
        self.cells[r * self.width + c]
    }

    pub fn marker(&self, r: usize, c: usize) -> bool {
        self.markers[r * self.width + c]
    }

    pub fn row(&self, r: usize) -> &[Symbol] {
        &self.cells[r * self.width..(r + 1) * self.width]
    }

    pub fn row_markers(&self, r: usize) -> &[bool] {
        &self.markers[r * self.width..(r + 1) * self.width]
    }

    pub fn cells(&self) -> &[Symbol] {
        &self.cells
    }

    pub fn markers(&self) -> &[bool] {
        &self.markers
    }

    pub fn has_markers(&self) -> bool {
        self.markers.iter().any(|&m| m)
    }

    pub fn set_marker(&mut self, r: usize, c: usize, flag: bool) {
        self.markers[r * self.width + c] = flag;
    }

    pub fn set_cell(&mut self, r: usize, c: usize, symbol: Symbol) {
        self.cells[r * self.width + c] = symbol;
    }

    /// Sub-rectangle over rows `0..rows` and columns `col..col + width`.
    pub fn sub(&self, rows: usize, col: usize, width: usize) -> Rectangle {
        assert!(rows <= self.rows && col + width <= self.width && rows > 0 && width > 0);
        let mut cells = Vec::with_capacity(rows * width);
        let mut markers = Vec::with_capacity(rows * width);
        for r in 0..rows {
            let base = r * self.width + col;
            cells.extend_from_slice(&self.cells[base..base + width]);
            markers.extend_from_slice(&self.markers[base..base + width]);
        }
        Rectangle {
            rows,
            width,
            cells,
            markers,
        }
    }

    /// True iff the sub-rectangle at (`rows`, `col`) equals `q` cellwise.
    pub fn matches_at(&self, q: &Rectangle, col: usize) -> bool {
        (0..q.rows).all(|r| {
            let base = r * self.width + col;
            self.cells[base..base + q.width] == *q.row(r)
                && self.markers[base..base + q.width] == *q.row_markers(r)
        })
    }

    pub fn without_markers(&self) -> Rectangle {
        Rectangle {
            markers: vec![false; self.markers.len()],
            ..self.clone()
        }
    }

    /// Plain column-wise juxtaposition; no flags are added.
    pub fn juxtapose(parts: &[&Rectangle]) -> Result<Rectangle, ArrayError> {
        let rows = parts.first().map_or(0, |p| p.rows);
        if parts.iter().any(|p| p.rows != rows) {
            return Err(ArrayError::Shape("row counts differ".into()));
        }
        let width: usize = parts.iter().map(|p| p.width).sum();
        let mut cells = Vec::with_capacity(rows * width);
        let mut markers = Vec::with_capacity(rows * width);
        for r in 0..rows {
            for p in parts {
                cells.extend_from_slice(p.row(r));
                markers.extend_from_slice(p.row_markers(r));
            }
        }
        Rectangle::new(rows, width, cells, markers)
    }
}

impl fmt::Display for Rectangle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for r in 0..self.rows {
            if r > 0 {
                f.write_str("/")?;
            }
            for c in 0..self.width {
                if c > 0 && self.rows > 1 {
                    f.write_str(" ")?;
                }
                write!(f, "{}", self.cell(r, c))?;
                if self.marker(r, c) {
                    f.write_str("|")?;
                }
            }
        }
        Ok(())
    }
}

/// Block coding of a binary word into the canonical inverse-limit system:
/// `cell(r, n) = 1 + value(u[n..=n + r])`, read most significant bit first.
pub fn lift_binary(bits: &[u8], rows: usize) -> Result<ArrayWindow, ArrayError> {
    if bits.len() < rows || rows == 0 {
        return Err(ArrayError::WordTooShort {
            len: bits.len(),
            rows,
        });
    }
    if let Some(&b) = bits.iter().find(|&&b| b > 1) {
        return Err(ArrayError::SymbolOutOfRange {
            row: 0,
            symbol: u32::from(b),
            size: 2,
        });
    }
    let chain = AmalgamationChain::canonical(rows)?;
    let columns = bits.len() - rows + 1;
    let mut grid = vec![Vec::with_capacity(columns); rows];
    for n in 0..columns {
        let mut value = 0u32;
        for (r, row) in grid.iter_mut().enumerate() {
            value = (value << 1) | u32::from(bits[n + r]);
            row.push(value + 1);
        }
    }
    ArrayWindow::new(chain, 0, grid, ConstraintMode::InverseLimit)
}

/// Inverse of [`lift_binary`] on rectangles: recovers the binary word whose
/// lift equals the rectangle's symbols, or `None` if no such word exists.
/// Marker flags are ignored.
pub fn unlift_binary(rect: &Rectangle) -> Option<Vec<u8>> {
    let k = rect.rows();
    if k > 31 {
        return None;
    }
    let deepest = rect.row(k - 1);
    let first = deepest[0].checked_sub(1)?;
    if first >= 1 << k {
        return None;
    }
    let mut bits: Vec<u8> = (0..k).rev().map(|i| ((first >> i) & 1) as u8).collect();
    for &cell in &deepest[1..] {
        let v = cell.checked_sub(1)?;
        bits.push((v & 1) as u8);
    }
    for n in 0..rect.width() {
        let mut value = 0u32;
        for r in 0..k {
            value = (value << 1) | u32::from(bits[n + r]);
            if rect.cell(r, n) != value + 1 {
                return None;
            }
        }
    }
    Some(bits)
}
