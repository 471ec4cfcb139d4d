//! On-disk formats for sequence corpora.
//!
//! A corpus is a flat binary file of little-endian `f64` cells, day-major,
//! then slot-major, then feature order (LAT, LON, SOG, COG), with no header.
//! Its sidecar CSV has the header `record_index,mmsi,day` and one row per
//! day in the same order.

use std::io::{BufWriter, Write};
use std::path::Path;

use chrono::NaiveDate;
use sha2::{Digest, Sha256};

use crate::ingest::Mmsi;
use crate::sequence::{SequenceId, SequenceSet};
use crate::{Error, Result, NUM_FEATURES, SLOTS_PER_DAY};

const CELLS_PER_DAY: usize = SLOTS_PER_DAY * NUM_FEATURES;

pub fn write_corpus(set: &SequenceSet, tensor_path: &Path, sidecar_path: &Path) -> Result<()> {
    let f = std::fs::File::create(tensor_path).map_err(|e| Error::io_at(tensor_path, e))?;
    let mut w = BufWriter::new(f);
    for v in set.data() {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;

    let mut sc = csv::Writer::from_path(sidecar_path)?;
    sc.write_record(["record_index", "mmsi", "day"])?;
    for (i, id) in set.ids().iter().enumerate() {
        sc.write_record([i.to_string(), id.mmsi.to_string(), id.day.to_string()])?;
    }
    sc.flush()?;
    Ok(())
}

pub fn read_corpus(tensor_path: &Path, sidecar_path: &Path) -> Result<SequenceSet> {
    let bytes = std::fs::read(tensor_path).map_err(|e| Error::io_at(tensor_path, e))?;
    if bytes.len() % (8 * CELLS_PER_DAY) != 0 {
        return Err(Error::Data(format!(
            "{}: size {} is not a whole number of 48x4 days",
            tensor_path.display(),
            bytes.len()
        )));
    }
    let data: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();

    let mut ids = Vec::new();
    let mut rdr = csv::Reader::from_path(sidecar_path)?;
    for (i, row) in rdr.records().enumerate() {
        let row = row?;
        let bad = || Error::Data(format!("{}: bad sidecar row {}", sidecar_path.display(), i + 1));
        let idx: usize = row.get(0).and_then(|s| s.parse().ok()).ok_or_else(bad)?;
        if idx != i {
            return Err(bad());
        }
        let mmsi = row.get(1).and_then(Mmsi::parse).ok_or_else(bad)?;
        let day: NaiveDate = row.get(2).and_then(|s| s.parse().ok()).ok_or_else(bad)?;
        ids.push(SequenceId { mmsi, day });
    }
    SequenceSet::from_parts(data, ids)
}

/// Hex SHA-256 of a file's bytes.
pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io_at(path, e))?;
    Ok(sha256_hex(&bytes))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}
