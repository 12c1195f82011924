//! Survival data files.
//!
//! CSV with header `time,event,covariate` and an optional `center` column.
//! Without a center column, records are dealt to centers by a seeded shuffle
//! followed by round-robin assignment, which gives equal-sized shards.

use std::io::Read;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::SurvivalRecord;
use crate::rng::{Purpose, StreamKey, Streams};

#[derive(Debug, Deserialize, Serialize)]
struct Row {
    time: f64,
    event: u8,
    covariate: f64,
    #[serde(default)]
    center: Option<usize>,
}

/// Records grouped by center.
pub type Shards = Vec<Vec<SurvivalRecord>>;

/// Parse survival CSV text into `centers` shards.
///
/// `b_x` bounds |covariate|. Errors carry the 1-based file line (the header
/// is line 1).
pub fn parse_survival_csv<Rd: Read>(reader: Rd, centers: usize, b_x: f64, seed: u64) -> Result<Shards> {
    if centers == 0 {
        return Err(Error::Config("need at least one center".into()));
    }
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().map_err(|e| Error::Parse { line: 1, msg: e.to_string() })?.clone();
    for need in ["time", "event", "covariate"] {
        if !headers.iter().any(|h| h == need) {
            return Err(Error::Parse { line: 1, msg: format!("missing column `{need}`") });
        }
    }
    let has_center = headers.iter().any(|h| h == "center");

    let mut rows = Vec::new();
    for (k, rec) in rdr.deserialize::<Row>().enumerate() {
        let line = k + 2;
        let row = rec.map_err(|e| Error::Parse { line, msg: e.to_string() })?;
        if !row.time.is_finite() || row.time < 0.0 {
            return Err(Error::Parse { line, msg: format!("time must be nonnegative, got {}", row.time) });
        }
        if row.event > 1 {
            return Err(Error::Parse { line, msg: format!("event must be 0 or 1, got {}", row.event) });
        }
        if !row.covariate.is_finite() || row.covariate.abs() > b_x {
            return Err(Error::Parse { line, msg: format!("covariate {} outside [-{b_x}, {b_x}]", row.covariate) });
        }
        if let Some(c) = row.center {
            if c >= centers {
                return Err(Error::Parse { line, msg: format!("center {c} but only {centers} centers") });
            }
        }
        rows.push((line, row));
    }
    if rows.is_empty() {
        return Err(Error::Parse { line: 2, msg: "no records".into() });
    }

    let record = |r: &Row| SurvivalRecord { time: r.time, event: r.event, covariate: r.covariate };
    if has_center {
        let mut shards = vec![Vec::new(); centers];
        for (line, r) in &rows {
            let c = r.center.ok_or_else(|| Error::Parse { line: *line, msg: "missing center".into() })?;
            shards[c].push(record(r));
        }
        return Ok(shards);
    }
    let records: Vec<SurvivalRecord> = rows.iter().map(|(_, r)| record(r)).collect();
    Ok(random_equal_split(records, centers, seed))
}

/// Read a survival CSV file; see [`parse_survival_csv`].
pub fn load_survival_csv(path: &Path, centers: usize, b_x: f64, seed: u64) -> Result<Shards> {
    let file = std::fs::File::open(path)
        .map_err(|e| Error::Config(format!("cannot open {}: {e}", path.display())))?;
    parse_survival_csv(std::io::BufReader::new(file), centers, b_x, seed)
}

/// Shuffle with the split stream of `seed`, then deal round-robin.
pub fn random_equal_split(mut records: Vec<SurvivalRecord>, centers: usize, seed: u64) -> Shards {
    let mut rng = Streams::new(seed).rng(Purpose::Split, StreamKey::default());
    records.shuffle(&mut rng);
    let mut shards = vec![Vec::new(); centers];
    for (k, r) in records.into_iter().enumerate() {
        shards[k % centers].push(r);
    }
    shards
}

/// Write shards as CSV with a center column.
pub fn write_survival_csv<W: std::io::Write>(writer: W, shards: &[Vec<SurvivalRecord>]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for (c, shard) in shards.iter().enumerate() {
        for r in shard {
            w.serialize(Row { time: r.time, event: r.event, covariate: r.covariate, center: Some(c) })
                .map_err(|e| Error::Io(std::io::Error::other(e)))?;
        }
    }
    w.flush()?;
    Ok(())
}
