//! File formats: PGM and digit-grid masks, field CSV, PGM snapshots and trace CSV.
//!
//! Numbers are written with Rust's shortest round-trip formatting, so output is
//! locale independent and reading it back gives the same bits.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::{GridGeometry, PhaseMask, ScalarField};
use crate::scheme::EvolutionTrace;

/// Gray levels below this (on a 0..=255 scale) are phase 0, i.e. inside.
pub const PGM_THRESHOLD: u32 = 128;

fn parse_err(msg: impl Into<String>) -> Error {
    Error::Parse(msg.into())
}

/// Parse a plain (P2) or raw (P5) PGM. Pixel `(col, row)` becomes cell `(col, row)`.
pub fn parse_pgm(bytes: &[u8], spacing: f64) -> Result<PhaseMask> {
    let mut pos = 0;
    let magic = next_token(bytes, &mut pos).ok_or_else(|| parse_err("empty PGM"))?;
    let binary = match magic.as_str() {
        "P2" => false,
        "P5" => true,
        other => return Err(parse_err(format!("not a PGM file (magic {other:?})"))),
    };
    let mut header = [0usize; 3];
    for (k, slot) in header.iter_mut().enumerate() {
        let tok = next_token(bytes, &mut pos).ok_or_else(|| parse_err("truncated PGM header"))?;
        *slot = tok.parse().map_err(|_| parse_err(format!("bad PGM header field {k}: {tok:?}")))?;
    }
    let [width, height, maxval] = header;
    if maxval == 0 || maxval > 65535 {
        return Err(parse_err(format!("PGM maxval out of range: {maxval}")));
    }
    let n = width * height;
    let mut pixels = Vec::with_capacity(n);
    if binary {
        // Exactly one whitespace byte separates the header from the raster.
        pos += 1;
        let wide = maxval > 255;
        let need = if wide { 2 * n } else { n };
        let raster = bytes.get(pos..pos + need).ok_or_else(|| parse_err("truncated PGM raster"))?;
        if wide {
            pixels.extend(raster.chunks_exact(2).map(|c| u32::from(c[0]) << 8 | u32::from(c[1])));
        } else {
            pixels.extend(raster.iter().map(|&b| u32::from(b)));
        }
    } else {
        for _ in 0..n {
            let tok = next_token(bytes, &mut pos).ok_or_else(|| parse_err("truncated PGM raster"))?;
            pixels.push(tok.parse().map_err(|_| parse_err(format!("bad PGM pixel {tok:?}")))?);
        }
    }
    let geometry = GridGeometry::new(&[width, height], spacing)?;
    let labels = pixels
        .iter()
        .map(|&p| {
            // Compare on the 0..=255 scale without rounding: p·255/maxval < 128.
            u32::from(u64::from(p) * 255 >= u64::from(PGM_THRESHOLD) * maxval as u64)
        })
        .collect();
    PhaseMask::new(geometry, labels)
}

/// Whitespace-separated token, skipping `#` comments.
fn next_token(bytes: &[u8], pos: &mut usize) -> Option<String> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    (start < *pos).then(|| String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
}

/// Rows of digits, one row per line (`y` increases downwards). Each digit is a
/// phase label; spaces are ignored and `#` starts a comment line.
pub fn parse_text_mask(text: &str, spacing: f64) -> Result<PhaseMask> {
    let mut rows: Vec<Vec<u32>> = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let row = line
            .chars()
            .filter(|c| !c.is_whitespace())
            .map(|c| c.to_digit(10).ok_or_else(|| parse_err(format!("line {}: unexpected {c:?}", n + 1))))
            .collect::<Result<Vec<u32>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(parse_err(format!("line {}: row has {} cells, expected {}", n + 1, row.len(), first.len())));
            }
        }
        rows.push(row);
    }
    let width = rows.first().map_or(0, Vec::len);
    let geometry = GridGeometry::new(&[width, rows.len()], spacing)?;
    PhaseMask::new(geometry, rows.concat())
}

/// Read a mask, choosing the format from the leading bytes (`P2`/`P5` is PGM).
pub fn read_mask(path: &Path, spacing: f64) -> Result<PhaseMask> {
    let bytes = fs::read(path)?;
    if bytes.starts_with(b"P2") || bytes.starts_with(b"P5") {
        parse_pgm(&bytes, spacing)
    } else {
        let text = String::from_utf8(bytes).map_err(|_| parse_err("mask is neither PGM nor text"))?;
        parse_text_mask(&text, spacing)
    }
}

const AXES: [&str; 3] = ["x", "y", "z"];

/// `x,y[,z],value` with physical coordinates `i·ε`, axis 0 varying fastest.
pub fn field_to_csv(field: &ScalarField) -> String {
    let g = field.geometry();
    let dim = g.dim();
    let eps = g.spacing();
    let mut out = String::with_capacity(32 * g.len());
    for a in AXES.iter().take(dim) {
        out.push_str(a);
        out.push(',');
    }
    out.push_str("value\n");
    let mut p = vec![0usize; dim];
    for (i, v) in field.values().iter().enumerate() {
        g.coords_into(i, &mut p);
        for &c in &p {
            let _ = write!(out, "{},", c as f64 * eps);
        }
        let _ = writeln!(out, "{v}");
    }
    out
}

/// Inverse of [`field_to_csv`]. The spacing is recovered from the coordinates
/// (it must be positive along at least one axis), and every cell must appear once.
pub fn field_from_csv(text: &str, saturation: f64) -> Result<ScalarField> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().ok_or_else(|| parse_err("empty field CSV"))?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    let dim = cols.len().saturating_sub(1);
    if !(1..=3).contains(&dim) || cols[..dim] != AXES[..dim] || cols[dim] != "value" {
        return Err(parse_err(format!("unexpected field CSV header {header:?}")));
    }
    let mut coords: Vec<Vec<f64>> = Vec::new();
    let mut values = Vec::new();
    for (n, line) in lines.enumerate() {
        let parts: Vec<f64> = line
            .split(',')
            .map(|s| s.trim().parse::<f64>().map_err(|_| parse_err(format!("row {}: bad number {s:?}", n + 2))))
            .collect::<Result<_>>()?;
        if parts.len() != dim + 1 {
            return Err(parse_err(format!("row {}: expected {} columns", n + 2, dim + 1)));
        }
        values.push(parts[dim]);
        coords.push(parts[..dim].to_vec());
    }
    // Smallest positive coordinate along any axis is the spacing.
    let eps = coords
        .iter()
        .flatten()
        .copied()
        .filter(|&c| c > 0.0)
        .fold(f64::INFINITY, f64::min);
    if !eps.is_finite() {
        return Err(parse_err("cannot infer the spacing from the coordinates"));
    }
    let idx: Vec<Vec<usize>> = coords
        .iter()
        .map(|c| c.iter().map(|&x| (x / eps).round().max(0.0) as usize).collect())
        .collect();
    let extents: Vec<usize> = (0..dim).map(|a| idx.iter().map(|p| p[a]).max().unwrap_or(0) + 1).collect();
    let geometry = GridGeometry::new(&extents, eps)?;
    if idx.len() != geometry.len() {
        return Err(parse_err(format!("field CSV has {} rows for a grid of {} cells", idx.len(), geometry.len())));
    }
    let mut out = vec![f64::NAN; geometry.len()];
    for (p, v) in idx.iter().zip(values) {
        let i = geometry.index(p);
        if !out[i].is_nan() {
            return Err(parse_err(format!("duplicate cell {p:?}")));
        }
        out[i] = v;
    }
    ScalarField::new(geometry, out, saturation)
}

/// Binary PGM of a 2D field, `[−d̄, d̄]` mapped linearly onto `[0, 255]`.
pub fn field_to_pgm(field: &ScalarField) -> Result<Vec<u8>> {
    let g = field.geometry();
    if g.dim() != 2 {
        return Err(Error::WrongDimension { expected: 2, found: g.dim() });
    }
    let s = field.saturation();
    let mut out = format!("P5\n{} {}\n255\n", g.extents()[0], g.extents()[1]).into_bytes();
    out.extend(field.values().iter().map(|&v| {
        let t = ((v.clamp(-s, s) + s) / (2.0 * s) * 255.0).round();
        t as u8
    }));
    Ok(out)
}

/// Per-step trace `step,time,neg_cells,area,radius`.
pub fn trace_to_csv(trace: &EvolutionTrace) -> String {
    let mut out = String::from("step,time,neg_cells,area,radius\n");
    for r in &trace.records {
        let _ = writeln!(out, "{},{},{},{},{}", r.step, r.time, r.neg_cells, r.area, r.radius);
    }
    out
}
