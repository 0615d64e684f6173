//! Binary PGM (P5) image IO.
//!
//! PGM is the interchange format for everything pixel-shaped here: input
//! images, ground-truth labelings, per-pixel marginal histograms, and
//! quantile overlays. Only the binary variant (`P5`) is supported, at 8 or
//! 16 bits per sample.
//!
//! # Format
//!
//! ```text
//! P5 <ws> width <ws> height <ws> maxval <single-ws> data…
//! ```
//!
//! where `<ws>` is any run of whitespace, possibly containing `#`-comments
//! that extend to the end of their line, and the single whitespace byte
//! after `maxval` separates the header from raw sample data. Samples are one
//! byte each when `maxval < 256`, two bytes big-endian otherwise, row-major
//! from the top-left pixel.
//!
//! Reading scales samples to `[0, 1]` by the declared `maxval`; writing
//! quantizes with round-half-up, so a round trip reproduces each value
//! within `1/(2·maxval)`. Histograms are written 16-bit to keep small
//! marginal probabilities from quantizing to zero; overlays and synthetic
//! images use 8-bit.
//!
//! Parse errors name the byte offset at which the file stopped making
//! sense, which turns "image won't load" reports into one-line diagnoses.

use std::fs;
use std::path::Path;

use shapemcmc_core::grid::{Grid, Image, Labeling};

use crate::error::{CliError, CliResult};

/// Incremental header parser over the raw file bytes.
struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    /// Skips whitespace and `#`-comments; errors at end of input.
    fn skip_separators(&mut self) -> Result<(), String> {
        let mut progressed = false;
        loop {
            match self.bytes.get(self.pos) {
                Some(b) if b.is_ascii_whitespace() => {
                    self.pos += 1;
                    progressed = true;
                }
                Some(b'#') => {
                    while let Some(&b) = self.bytes.get(self.pos) {
                        self.pos += 1;
                        if b == b'\n' {
                            break;
                        }
                    }
                    progressed = true;
                }
                Some(_) if progressed => return Ok(()),
                Some(&b) => Err(format!(
                    "expected whitespace at byte {}, found 0x{b:02x}",
                    self.pos
                ))?,
                None => Err(format!("header ended early at byte {}", self.pos))?,
            }
        }
    }

    /// Parses a decimal integer field.
    fn read_number(&mut self, what: &str) -> Result<u64, String> {
        let start = self.pos;
        let mut value: u64 = 0;
        while let Some(&b) = self.bytes.get(self.pos) {
            if !b.is_ascii_digit() {
                break;
            }
            value = value
                .checked_mul(10)
                .and_then(|v| v.checked_add(u64::from(b - b'0')))
                .ok_or_else(|| format!("{what} at byte {start} overflows"))?;
            self.pos += 1;
        }
        if self.pos == start {
            return Err(format!(
                "expected {what} at byte {start}, found {}",
                match self.bytes.get(start) {
                    Some(b) => format!("0x{b:02x}"),
                    None => "end of file".to_string(),
                }
            ));
        }
        Ok(value)
    }
}

/// Reads a binary PGM file into an [`Image`] with intensities in `[0, 1]`.
///
/// Supports 8-bit (`maxval < 256`) and 16-bit big-endian samples. Header
/// comments are honored. Malformed input fails with a message naming the
/// byte offset of the problem.
pub fn read_pgm(path: &Path) -> CliResult<Image> {
    let bytes = fs::read(path).map_err(|e| CliError::from_io(path, e))?;
    let grid = parse_pgm(&bytes).map_err(|msg| CliError::data(path, msg))?;
    Image::new(grid).map_err(|e| CliError::data(path, e.to_string()))
}

/// Parses PGM bytes into a `[0, 1]`-scaled grid. Split from [`read_pgm`] so
/// tests can exercise the grammar without touching the filesystem.
fn parse_pgm(bytes: &[u8]) -> Result<Grid<f64>, String> {
    if bytes.len() < 2 || bytes[0] != b'P' {
        return Err("not a PGM file: missing 'P' magic at byte 0".to_string());
    }
    if bytes[1] != b'5' {
        return Err(format!(
            "unsupported magic 'P{}' at byte 0: only binary PGM (P5) is supported",
            bytes[1] as char
        ));
    }

    let mut cur = Cursor { bytes, pos: 2 };
    cur.skip_separators()?;
    let width = cur.read_number("width")?;
    cur.skip_separators()?;
    let height = cur.read_number("height")?;
    cur.skip_separators()?;
    let maxval = cur.read_number("maxval")?;

    if width == 0 || height == 0 {
        return Err(format!("degenerate dimensions {width}x{height}"));
    }
    if maxval == 0 || maxval > 65_535 {
        return Err(format!("maxval {maxval} outside 1..=65535"));
    }

    // Exactly one whitespace byte separates the header from sample data;
    // sample bytes may themselves look like whitespace, so no skipping.
    match bytes.get(cur.pos) {
        Some(b) if b.is_ascii_whitespace() => cur.pos += 1,
        Some(&b) => {
            return Err(format!(
                "expected single whitespace after maxval at byte {}, found 0x{b:02x}",
                cur.pos
            ))
        }
        None => return Err(format!("file ends at byte {} before sample data", cur.pos)),
    }

    let pixels = (width as usize)
        .checked_mul(height as usize)
        .ok_or("dimensions overflow")?;
    let wide = maxval > 255;
    let bytes_per = if wide { 2 } else { 1 };
    let need = pixels * bytes_per;
    let have = bytes.len() - cur.pos;
    if have < need {
        return Err(format!(
            "truncated payload: need {need} sample bytes at byte {}, found {have}",
            cur.pos
        ));
    }

    let scale = 1.0 / maxval as f64;
    let mut data = Vec::with_capacity(pixels);
    let payload = &bytes[cur.pos..cur.pos + need];
    if wide {
        for pair in payload.chunks_exact(2) {
            let sample = u16::from_be_bytes([pair[0], pair[1]]);
            data.push((sample.min(maxval as u16)) as f64 * scale);
        }
    } else {
        for &b in payload {
            data.push((b.min(maxval as u8)) as f64 * scale);
        }
    }
    Grid::from_raw(width as usize, height as usize, data).map_err(|e| e.to_string())
}

/// Writes a `[0, 1]`-valued field as binary PGM with the given `maxval`.
///
/// Samples are `round_half_up(value · maxval)`: one byte when
/// `maxval < 256`, two bytes big-endian otherwise. Output is deterministic
/// byte-for-byte.
pub fn write_pgm(field: &Grid<f64>, maxval: u16, path: &Path) -> CliResult<()> {
    if maxval == 0 {
        return Err(CliError::Usage("PGM maxval must be at least 1".to_string()));
    }
    for (i, &v) in field.as_slice().iter().enumerate() {
        if !(0.0..=1.0).contains(&v) {
            return Err(CliError::data(
                path,
                format!("pixel {i} value {v} outside [0, 1]"),
            ));
        }
    }

    let wide = maxval > 255;
    let header = format!("P5\n{} {}\n{}\n", field.width(), field.height(), maxval);
    let mut out = Vec::with_capacity(header.len() + field.len() * if wide { 2 } else { 1 });
    out.extend_from_slice(header.as_bytes());
    for &v in field.as_slice() {
        let sample = ((v * maxval as f64 + 0.5).floor() as u32).min(maxval as u32);
        if wide {
            out.extend_from_slice(&(sample as u16).to_be_bytes());
        } else {
            out.push(sample as u8);
        }
    }
    fs::write(path, out).map_err(|e| CliError::from_io(path, e))
}

/// Writes an 8-bit PGM (`maxval` 255) — synthetic images and overlays.
pub fn write_pgm8(field: &Grid<f64>, path: &Path) -> CliResult<()> {
    write_pgm(field, 255, path)
}

/// Writes a 16-bit PGM (`maxval` 65535) — marginal histograms, where 8 bits
/// would round small probabilities down to zero.
pub fn write_pgm16(field: &Grid<f64>, path: &Path) -> CliResult<()> {
    write_pgm(field, 65_535, path)
}

/// A labeling as a black/white field (foreground = 1.0).
pub fn labeling_to_field(labeling: &Labeling) -> Grid<f64> {
    let mut out = Grid::new(labeling.width(), labeling.height(), 0.0);
    for i in 0..labeling.len() {
        if labeling.as_slice()[i] {
            out.as_mut_slice()[i] = 1.0;
        }
    }
    out
}

/// Reads a black/white PGM back into a labeling (foreground where the
/// intensity is at least one half).
pub fn read_labeling(path: &Path) -> CliResult<Labeling> {
    let image = read_pgm(path)?;
    let mut out = Labeling::new(image.grid().width(), image.grid().height(), false);
    for i in 0..out.len() {
        out.as_mut_slice()[i] = image.intensity(i) >= 0.5;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use tempfile::tempdir;

    #[test]
    fn eight_bit_samples_scale_by_maxval() {
        let bytes = b"P5\n2 2\n255\n\x00\xff\x80\x40";
        let grid = parse_pgm(bytes).unwrap();
        assert_eq!(grid.as_slice()[0], 0.0);
        assert_eq!(grid.as_slice()[1], 1.0);
        assert_eq!(grid.as_slice()[2], 128.0 / 255.0);
        assert_eq!(grid.as_slice()[3], 64.0 / 255.0);
    }

    #[test]
    fn sixteen_bit_full_scale_reads_as_one() {
        let mut bytes = b"P5 1 1 65535 ".to_vec();
        bytes.extend_from_slice(&[0xff, 0xff]);
        let grid = parse_pgm(&bytes).unwrap();
        assert_eq!(grid.as_slice()[0], 1.0);
    }

    #[test]
    fn ascii_magic_is_rejected_by_name() {
        let err = parse_pgm(b"P2\n2 2\n255\n0 1 2 3").unwrap_err();
        assert!(err.contains("unsupported magic 'P2'"), "{err}");
    }

    #[test]
    fn truncation_names_the_byte_offset() {
        let err = parse_pgm(b"P5\n2 2\n255\n\x00\x01").unwrap_err();
        assert!(err.contains("truncated"), "{err}");
        assert!(err.contains("byte 11"), "{err}");
    }

    #[test]
    fn header_comments_are_skipped() {
        let bytes = b"P5\n# made by hand\n2 1 # trailing\n255\n\x10\x20";
        let grid = parse_pgm(bytes).unwrap();
        assert_eq!(grid.width(), 2);
        assert_eq!(grid.as_slice()[0], 16.0 / 255.0);
    }

    #[test]
    fn sample_data_may_begin_with_whitespace_bytes() {
        // 0x0a is '\n'; after the single post-maxval separator it must be
        // taken as a sample, not skipped.
        let bytes = b"P5\n1 2\n255\n\x0a\x0a";
        let grid = parse_pgm(bytes).unwrap();
        assert_eq!(grid.as_slice(), &[10.0 / 255.0, 10.0 / 255.0]);
    }

    #[test]
    fn round_half_up_on_a_constant_half_field() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("half.pgm");
        let field = Grid::new(3, 2, 0.5);
        write_pgm8(&field, &path).unwrap();
        let bytes = fs::read(&path).unwrap();
        // 0.5 · 255 = 127.5 rounds up.
        assert!(bytes[bytes.len() - 6..].iter().all(|&b| b == 128));
    }

    #[test]
    fn round_trip_error_is_within_half_a_quantum() {
        let dir = tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut field = Grid::new(8, 8, 0.0);
        for v in field.as_mut_slice() {
            *v = rng.random::<f64>();
        }

        for (maxval, name) in [(255u16, "8.pgm"), (65_535u16, "16.pgm")] {
            let path = dir.path().join(name);
            write_pgm(&field, maxval, &path).unwrap();
            let back = read_pgm(&path).unwrap();
            let bound = 1.0 / (2.0 * maxval as f64);
            for i in 0..field.len() {
                let err = (back.intensity(i) - field.as_slice()[i]).abs();
                assert!(err <= bound, "pixel {i}: err {err} > bound {bound}");
            }
        }
    }

    #[test]
    fn zero_maxval_and_out_of_range_values_are_refused() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("x.pgm");
        // Empty grids cannot be constructed at all, so the only write-side
        // contract checks are the maxval and the value range.
        let field = Grid::new(1, 1, 0.5);
        assert!(write_pgm(&field, 0, &path).is_err());
        let field = Grid::new(1, 1, 1.5);
        let err = write_pgm8(&field, &path).unwrap_err().to_string();
        assert!(err.contains("outside [0, 1]"), "{err}");
    }

    #[test]
    fn labeling_round_trips_through_pgm() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("gt.pgm");
        let mut labeling = Labeling::new(5, 4, false);
        labeling[(2, 1)] = true;
        labeling[(3, 3)] = true;
        write_pgm8(&labeling_to_field(&labeling), &path).unwrap();
        assert_eq!(read_labeling(&path).unwrap(), labeling);
    }
}
