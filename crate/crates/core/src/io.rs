//! Field file formats.
//!
//! * F2D1: one ASCII header line `field2d <nx> <ny> <x0> <y0> <dx> <dy>\n`
//!   followed by `nx·ny` little-endian `f64` values, row-major with `y`
//!   outermost. Vector fields are written as two such files with the
//!   suffixes `.ux` and `.uy`.
//! * CSV: `x,y,value` rows.
//! * PGM: 16-bit binary greymap (top row = largest `y`) with a `.range`
//!   sidecar recording the normalization; masks are 8-bit.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::grid::{Grid2D, ScalarField2D, VectorField2D};

fn header(grid: &Grid2D) -> String {
    format!(
        "field2d {} {} {} {} {} {}\n",
        grid.nx, grid.ny, grid.x0, grid.y0, grid.dx, grid.dy
    )
}

/// Serializes a field to F2D1 bytes.
pub fn encode_f2d(field: &ScalarField2D) -> Vec<u8> {
    let mut out = header(field.grid()).into_bytes();
    out.reserve(8 * field.values().len());
    for v in field.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Parses F2D1 bytes; `path` is only used in error messages.
pub fn decode_f2d(bytes: &[u8], path: &Path) -> Result<ScalarField2D> {
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::format(path, "missing header line"))?;
    let head = std::str::from_utf8(&bytes[..nl]).map_err(|_| Error::format(path, "header is not ASCII"))?;
    let parts: Vec<&str> = head.split(' ').collect();
    if parts.len() != 7 || parts[0] != "field2d" {
        return Err(Error::format(path, format!("bad header {head:?}")));
    }
    let int = |s: &str| s.parse::<usize>().map_err(|_| Error::format(path, format!("bad integer {s:?}")));
    let real = |s: &str| s.parse::<f64>().map_err(|_| Error::format(path, format!("bad number {s:?}")));
    let grid = Grid2D::new(
        int(parts[1])?,
        int(parts[2])?,
        real(parts[3])?,
        real(parts[4])?,
        real(parts[5])?,
        real(parts[6])?,
    )
    .map_err(|e| Error::format(path, e.to_string()))?;
    let body = &bytes[nl + 1..];
    if body.len() != 8 * grid.len() {
        return Err(Error::format(
            path,
            format!("expected {} payload bytes, found {}", 8 * grid.len(), body.len()),
        ));
    }
    let values = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    ScalarField2D::new(grid, values).map_err(|e| Error::format(path, e.to_string()))
}

pub fn write_f2d(path: impl AsRef<Path>, field: &ScalarField2D) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_f2d(field)).map_err(|e| Error::io(path, e))
}

pub fn read_f2d(path: impl AsRef<Path>) -> Result<ScalarField2D> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_f2d(&bytes, path)
}

fn with_suffix(base: &Path, suffix: &str) -> PathBuf {
    let mut s = base.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

/// Paths of the two component files of a vector field stored at `base`.
pub fn vector_paths(base: impl AsRef<Path>) -> (PathBuf, PathBuf) {
    let base = base.as_ref();
    (with_suffix(base, ".ux"), with_suffix(base, ".uy"))
}

pub fn write_vector(base: impl AsRef<Path>, field: &VectorField2D) -> Result<()> {
    let (px, py) = vector_paths(base);
    write_f2d(px, field.x())?;
    write_f2d(py, field.y())
}

pub fn read_vector(base: impl AsRef<Path>) -> Result<VectorField2D> {
    let (px, py) = vector_paths(&base);
    let x = read_f2d(&px)?;
    let y = read_f2d(&py)?;
    VectorField2D::new(x, y).map_err(|e| Error::format(px, e.to_string()))
}

pub fn write_csv(path: impl AsRef<Path>, field: &ScalarField2D) -> Result<()> {
    let path = path.as_ref();
    let g = field.grid();
    let mut s = String::from("x,y,value\n");
    for j in 0..g.ny {
        for i in 0..g.nx {
            s.push_str(&format!("{},{},{}\n", g.x(i), g.y(j), field.at(i, j)));
        }
    }
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

/// 16-bit PGM bytes plus the `(min, max)` used for normalization.
pub fn encode_pgm16(field: &ScalarField2D) -> (Vec<u8>, f64, f64) {
    let g = field.grid();
    let (lo, hi) = (field.min(), field.max());
    let span = hi - lo;
    let mut out = format!("P5\n{} {}\n65535\n", g.nx, g.ny).into_bytes();
    for j in (0..g.ny).rev() {
        for i in 0..g.nx {
            let t = if span > 0.0 { (field.at(i, j) - lo) / span } else { 0.0 };
            let q = (t * 65535.0).round().clamp(0.0, 65535.0) as u16;
            out.extend_from_slice(&q.to_be_bytes());
        }
    }
    (out, lo, hi)
}

/// Writes `path` (16-bit PGM) and `path.range` (`min`/`max` lines).
pub fn write_pgm16(path: impl AsRef<Path>, field: &ScalarField2D) -> Result<()> {
    let path = path.as_ref();
    let (bytes, lo, hi) = encode_pgm16(field);
    fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    let range = with_suffix(path, ".range");
    fs::write(&range, format!("min {lo}\nmax {hi}\n")).map_err(|e| Error::io(&range, e))
}

/// 8-bit mask image: 255 where `mask` is true.
pub fn write_mask_pgm(path: impl AsRef<Path>, grid: &Grid2D, mask: &[bool]) -> Result<()> {
    let path = path.as_ref();
    let mut out = format!("P5\n{} {}\n255\n", grid.nx, grid.ny).into_bytes();
    for j in (0..grid.ny).rev() {
        for i in 0..grid.nx {
            out.push(if mask[grid.index(i, j)] { 255 } else { 0 });
        }
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))
}

/// Reads a mask written by [`write_mask_pgm`]; nonzero pixels are `true`.
pub fn read_mask_pgm(path: impl AsRef<Path>, grid: &Grid2D) -> Result<Vec<bool>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let head = format!("P5\n{} {}\n255\n", grid.nx, grid.ny);
    if !bytes.starts_with(head.as_bytes()) {
        return Err(Error::format(path, format!("expected an 8-bit {}x{} PGM", grid.nx, grid.ny)));
    }
    let data = &bytes[head.len()..];
    if data.len() != grid.len() {
        return Err(Error::format(path, format!("{} pixels, expected {}", data.len(), grid.len())));
    }
    let mut mask = vec![false; grid.len()];
    for (r, row) in data.chunks(grid.nx).enumerate() {
        let j = grid.ny - 1 - r;
        for (i, &v) in row.iter().enumerate() {
            mask[grid.index(i, j)] = v != 0;
        }
    }
    Ok(mask)
}
