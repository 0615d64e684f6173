//! Disk cache for the 2^21-entry curve-length flip-delta table.
//!
//! Building the table means evaluating the fast-marching curve-length
//! oracle for every sign pattern of the 5×5-minus-corners neighborhood —
//! minutes of CPU even in parallel — while loading a cached copy takes
//! milliseconds. The cache is a flat binary file:
//!
//! ```text
//! offset 0   magic  "CLUT"                      (4 bytes)
//! offset 4   format version                     (1 byte, currently 1)
//! offset 5   connectivity tag                   (1 byte: 0 = 4-8, 1 = 8-4)
//! offset 6   2^21 little-endian f32 entries     (8 MiB)
//! trailer    FNV-1a 64-bit checksum of all preceding bytes, little-endian
//! ```
//!
//! The connectivity tag records the adjacency convention of the run that
//! built the file; the curve-length construction itself is
//! connectivity-independent, so the tag is provenance, not a pledge of
//! different contents.
//!
//! Verification is two-layered. The checksum catches any corruption.
//! When it fails, the verifier exploits the table's exact antisymmetry —
//! `entry(i XOR center) = −entry(i)` holds bit-for-bit by construction —
//! to localize the damage with a pure memory scan, then recomputes the
//! oracle for the two candidate indices of the violated pair and names
//! the one that disagrees. When the checksum passes, a seeded random
//! sample of entries is still recomputed against the oracle, guarding
//! against a stale file from a different build of the table logic.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use shapemcmc_core::energy::{
    build_curve_lut_range, lut_entry_oracle, CurveLengthLut, LUT_CENTER_BIT, LUT_ENTRIES,
};
use shapemcmc_core::grid::ConnectivityPair;

use crate::error::{CliError, CliResult};

const MAGIC: [u8; 4] = *b"CLUT";
const VERSION: u8 = 1;
const HEADER_LEN: usize = 6;
const FILE_LEN: usize = HEADER_LEN + LUT_ENTRIES * 4 + 8;

/// Number of build slices; entries are computed slice-parallel and
/// concatenated in order, so builds are deterministic.
const BUILD_SLICES: usize = 256;

/// FNV-1a, 64-bit.
fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

fn connectivity_tag(pair: ConnectivityPair) -> u8 {
    if pair == ConnectivityPair::FOUR_EIGHT {
        0
    } else {
        1
    }
}

fn tag_connectivity(tag: u8) -> Option<ConnectivityPair> {
    match tag {
        0 => Some(ConnectivityPair::FOUR_EIGHT),
        1 => Some(ConnectivityPair::EIGHT_FOUR),
        _ => None,
    }
}

/// Computes all 2^21 entries, slice-parallel. Deterministic: two builds
/// return identical vectors.
pub fn build_entries() -> Vec<f32> {
    let slice_len = LUT_ENTRIES.div_ceil(BUILD_SLICES);
    let slices: Vec<Vec<f32>> = (0..BUILD_SLICES)
        .into_par_iter()
        .map(|s| {
            let start = s * slice_len;
            let end = (start + slice_len).min(LUT_ENTRIES);
            build_curve_lut_range(start, end)
        })
        .collect();
    let mut entries = Vec::with_capacity(LUT_ENTRIES);
    for slice in slices {
        entries.extend_from_slice(&slice);
    }
    entries
}

/// Serializes entries into the cache format.
fn encode(entries: &[f32], pair: ConnectivityPair) -> Vec<u8> {
    let mut out = Vec::with_capacity(FILE_LEN);
    out.extend_from_slice(&MAGIC);
    out.push(VERSION);
    out.push(connectivity_tag(pair));
    for &e in entries {
        out.extend_from_slice(&e.to_le_bytes());
    }
    let checksum = fnv1a64(&out);
    out.extend_from_slice(&checksum.to_le_bytes());
    out
}

/// Writes a cache file. Output is byte-deterministic in its inputs.
pub fn write_cache(path: &Path, entries: &[f32], pair: ConnectivityPair) -> CliResult<()> {
    if entries.len() != LUT_ENTRIES {
        return Err(CliError::Internal(format!(
            "flip-delta table has {} entries, expected {LUT_ENTRIES}",
            entries.len()
        )));
    }
    fs::write(path, encode(entries, pair)).map_err(|e| CliError::from_io(path, e))
}

/// Structural read: magic, version, length, and checksum. Returns the
/// entries and the file's connectivity tag.
fn read_checked(path: &Path) -> CliResult<(Vec<f32>, ConnectivityPair)> {
    let bytes = fs::read(path).map_err(|e| CliError::from_io(path, e))?;
    decode(&bytes).map_err(|msg| CliError::data(path, msg))
}

fn decode(bytes: &[u8]) -> Result<(Vec<f32>, ConnectivityPair), String> {
    if bytes.len() < HEADER_LEN {
        return Err(format!("file is {} bytes, not a flip-delta cache", bytes.len()));
    }
    if bytes[0..4] != MAGIC {
        return Err("bad magic: not a flip-delta cache file".to_string());
    }
    if bytes[4] != VERSION {
        return Err(format!("format version {} unsupported (expected {VERSION})", bytes[4]));
    }
    let pair = tag_connectivity(bytes[5])
        .ok_or_else(|| format!("unknown connectivity tag {}", bytes[5]))?;
    if bytes.len() != FILE_LEN {
        return Err(format!(
            "file is {} bytes, expected {FILE_LEN} (truncated or padded)",
            bytes.len()
        ));
    }
    let body = &bytes[..FILE_LEN - 8];
    let stored = u64::from_le_bytes(bytes[FILE_LEN - 8..].try_into().unwrap());
    let computed = fnv1a64(body);
    let mut entries = Vec::with_capacity(LUT_ENTRIES);
    for chunk in bytes[HEADER_LEN..FILE_LEN - 8].chunks_exact(4) {
        entries.push(f32::from_le_bytes(chunk.try_into().unwrap()));
    }
    if stored != computed {
        let diagnosis = localize_corruption(&entries);
        return Err(format!(
            "checksum mismatch (stored {stored:016x}, computed {computed:016x}); {diagnosis}"
        ));
    }
    Ok((entries, pair))
}

/// Names the corrupted entry after a checksum failure, using the exact
/// antisymmetry invariant to find the violated pair and the oracle to
/// pick the wrong half.
fn localize_corruption(entries: &[f32]) -> String {
    let center = 1usize << LUT_CENTER_BIT;
    for i in 0..LUT_ENTRIES {
        let j = i ^ center;
        if j < i {
            continue;
        }
        let (a, b) = (entries[i], entries[j]);
        if a == -b {
            continue;
        }
        let oracle_i = lut_entry_oracle(i as u32) as f32;
        let oracle_j = lut_entry_oracle(j as u32) as f32;
        let i_bad = entries[i] != oracle_i;
        let j_bad = entries[j] != oracle_j;
        return match (i_bad, j_bad) {
            (true, false) => format!("entry {i} is corrupt"),
            (false, true) => format!("entry {j} is corrupt"),
            _ => format!("entries {i} and {j} both disagree with recomputation"),
        };
    }
    "no entry violates antisymmetry; header or checksum bytes are corrupt".to_string()
}

/// Loads a cache file into a usable lookup table, checking the structure,
/// the checksum, and (when given) the connectivity tag.
pub fn load_cache(path: &Path, expected: Option<ConnectivityPair>) -> CliResult<Arc<CurveLengthLut>> {
    let (entries, pair) = read_checked(path)?;
    if let Some(want) = expected {
        if pair != want {
            return Err(CliError::data(
                path,
                format!(
                    "cache was built under connectivity {}-{}, run uses {}-{}",
                    tagname(pair).0,
                    tagname(pair).1,
                    tagname(want).0,
                    tagname(want).1
                ),
            ));
        }
    }
    let lut = CurveLengthLut::from_entries(entries).map_err(CliError::from_core)?;
    Ok(Arc::new(lut))
}

fn tagname(pair: ConnectivityPair) -> (u8, u8) {
    if pair == ConnectivityPair::FOUR_EIGHT {
        (4, 8)
    } else {
        (8, 4)
    }
}

/// Loads the cache at `path`, rebuilding and rewriting it when the file is
/// missing or fails its checks — the "checksum mismatch → rebuild" policy
/// for runs that just want a valid table.
pub fn ensure_cache(path: &Path, pair: ConnectivityPair) -> CliResult<Arc<CurveLengthLut>> {
    if path.exists() {
        match load_cache(path, Some(pair)) {
            Ok(lut) => return Ok(lut),
            Err(err) => {
                eprintln!("rebuilding flip-delta cache: {err}");
            }
        }
    }
    let entries = build_entries();
    write_cache(path, &entries, pair)?;
    let lut = CurveLengthLut::from_entries(entries).map_err(CliError::from_core)?;
    Ok(Arc::new(lut))
}

/// Outcome of a successful verification.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct VerifyReport {
    /// Entries recomputed against the oracle.
    pub spot_checks: usize,
    /// Connectivity recorded in the file.
    pub connectivity: ConnectivityPair,
}

/// Verifies a cache file: structural checks and checksum, then
/// `spot_checks` seeded-random entries recomputed against the oracle.
/// Any mismatch names the entry index.
pub fn verify_cache(path: &Path, spot_checks: usize, seed: u64) -> CliResult<VerifyReport> {
    let (entries, pair) = read_checked(path)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..spot_checks {
        let idx = rng.random_range(0..LUT_ENTRIES);
        let expected = lut_entry_oracle(idx as u32) as f32;
        if entries[idx] != expected {
            return Err(CliError::data(
                path,
                format!(
                    "entry {idx} is {}, oracle recomputation gives {expected}",
                    entries[idx]
                ),
            ));
        }
    }
    Ok(VerifyReport {
        spot_checks,
        connectivity: pair,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    /// Synthetic entries satisfying the exact antisymmetry invariant
    /// without the cost of a real build.
    fn synthetic_entries() -> Vec<f32> {
        let center = 1usize << LUT_CENTER_BIT;
        let mut out = vec![0.0f32; LUT_ENTRIES];
        for (i, slot) in out.iter_mut().enumerate() {
            let base = (i & !center) as f32 * 1e-6 + 1.0;
            *slot = if i & center != 0 { -base } else { base };
        }
        out
    }

    #[test]
    fn cache_round_trips_and_is_deterministic() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("curve.clut");
        let entries = synthetic_entries();
        write_cache(&path, &entries, ConnectivityPair::FOUR_EIGHT).unwrap();
        let first = fs::read(&path).unwrap();
        assert_eq!(first.len(), FILE_LEN);

        let lut = load_cache(&path, Some(ConnectivityPair::FOUR_EIGHT)).unwrap();
        assert_eq!(lut.entries(), &entries[..]);

        write_cache(&path, &entries, ConnectivityPair::FOUR_EIGHT).unwrap();
        assert_eq!(fs::read(&path).unwrap(), first);
    }

    #[test]
    fn connectivity_tag_is_enforced_on_load() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("curve.clut");
        write_cache(&path, &synthetic_entries(), ConnectivityPair::EIGHT_FOUR).unwrap();
        assert!(load_cache(&path, Some(ConnectivityPair::EIGHT_FOUR)).is_ok());
        let err = load_cache(&path, Some(ConnectivityPair::FOUR_EIGHT)).unwrap_err();
        assert!(err.to_string().contains("connectivity"), "{err}");
    }

    #[test]
    fn corrupted_entry_byte_is_named_by_index() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("curve.clut");
        write_cache(&path, &synthetic_entries(), ConnectivityPair::FOUR_EIGHT).unwrap();

        let corrupt_index = 123_456usize;
        let mut bytes = fs::read(&path).unwrap();
        bytes[HEADER_LEN + corrupt_index * 4 + 1] ^= 0x40;
        fs::write(&path, &bytes).unwrap();

        let err = verify_cache(&path, 10, 1).unwrap_err().to_string();
        assert!(err.contains("checksum mismatch"), "{err}");
        // Synthetic entries both fail oracle recomputation, so the violated
        // antisymmetry pair is reported; the corrupted index is in it.
        let partner = corrupt_index ^ (1 << LUT_CENTER_BIT);
        assert!(
            err.contains(&corrupt_index.to_string()) || err.contains(&partner.to_string()),
            "{err}"
        );
    }

    #[test]
    fn truncation_and_bad_magic_are_structural_errors() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("curve.clut");
        write_cache(&path, &synthetic_entries(), ConnectivityPair::FOUR_EIGHT).unwrap();

        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 9]).unwrap();
        let err = load_cache(&path, None).unwrap_err().to_string();
        assert!(err.contains("truncated"), "{err}");

        let mut bad = bytes.clone();
        bad[0] = b'X';
        fs::write(&path, &bad).unwrap();
        let err = load_cache(&path, None).unwrap_err().to_string();
        assert!(err.contains("magic"), "{err}");

        let mut wrong_version = bytes;
        wrong_version[4] = 9;
        fs::write(&path, &wrong_version).unwrap();
        let err = load_cache(&path, None).unwrap_err().to_string();
        assert!(err.contains("version"), "{err}");
    }

    #[test]
    fn spot_checks_use_the_real_oracle() {
        // A cache whose first entries are real oracle values passes a
        // verifier seeded to sample among them only if they are honest.
        let dir = tempdir().unwrap();
        let path = dir.path().join("curve.clut");
        let mut entries = synthetic_entries();
        let center = 1usize << LUT_CENTER_BIT;
        // Patch a handful of pairs with genuine oracle values, keeping
        // antisymmetry intact.
        let real = build_curve_lut_range(0, 8);
        for (i, &v) in real.iter().enumerate() {
            entries[i] = v;
            entries[i ^ center] = -v;
        }
        write_cache(&path, &entries, ConnectivityPair::FOUR_EIGHT).unwrap();

        // Zero spot checks: structure and checksum only — passes.
        let report = verify_cache(&path, 0, 7).unwrap();
        assert_eq!(report.connectivity, ConnectivityPair::FOUR_EIGHT);

        // Non-zero spot checks on the mostly-synthetic table must fail and
        // name an entry.
        let err = verify_cache(&path, 50, 7).unwrap_err().to_string();
        assert!(err.contains("entry"), "{err}");
        assert!(err.contains("oracle"), "{err}");
    }
}
