//! Line-delimited dataset files.
//!
//! The first line is a header object carrying the schema version; every
//! following line holds one run segment tagged with its split.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Dataset, RunSegment};
use crate::error::{Error, Result};

pub const DATASET_SCHEMA: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    schema: u32,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    config_hash: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum Split {
    Train,
    Test,
}

#[derive(Serialize)]
struct RecordRef<'a> {
    split: Split,
    segment: &'a RunSegment,
}

#[derive(Deserialize)]
struct Record {
    split: Split,
    segment: RunSegment,
}

pub fn write_dataset<W: Write>(ds: &Dataset, mut w: W) -> Result<()> {
    let header = Header {
        schema: DATASET_SCHEMA,
        seed: ds.seed,
        config_hash: ds.config_hash.clone(),
    };
    let io = |e| Error::io("<dataset stream>", e);
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n").map_err(io)?;
    let records = ds
        .train
        .iter()
        .map(|s| (Split::Train, s))
        .chain(ds.test.iter().map(|s| (Split::Test, s)));
    for (split, segment) in records {
        serde_json::to_writer(&mut w, &RecordRef { split, segment })?;
        w.write_all(b"\n").map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn read_dataset<R: Read>(r: R) -> Result<Dataset> {
    let mut lines = BufReader::new(r).lines();
    let header_line = match lines.next() {
        Some(l) => l.map_err(|e| Error::io("<dataset stream>", e))?,
        None => {
            return Err(Error::Malformed {
                line: 1,
                msg: "missing header".into(),
            })
        }
    };
    let raw: serde_json::Value = serde_json::from_str(&header_line).map_err(|e| Error::Malformed {
        line: 1,
        msg: e.to_string(),
    })?;
    match raw.get("schema").and_then(serde_json::Value::as_u64) {
        Some(v) if v == DATASET_SCHEMA as u64 => {}
        other => {
            return Err(Error::UnsupportedSchema(format!(
                "dataset schema {other:?}, expected {DATASET_SCHEMA}"
            )))
        }
    }
    let header: Header = serde_json::from_value(raw).map_err(|e| Error::Malformed {
        line: 1,
        msg: e.to_string(),
    })?;
    let mut ds = Dataset {
        seed: header.seed,
        config_hash: header.config_hash,
        ..Dataset::default()
    };
    for (i, line) in lines.enumerate() {
        let lineno = i + 2;
        let line = line.map_err(|e| Error::Malformed {
            line: lineno,
            msg: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(&line).map_err(|e| Error::Malformed {
            line: lineno,
            msg: e.to_string(),
        })?;
        match rec.split {
            Split::Train => ds.train.push(rec.segment),
            Split::Test => ds.test.push(rec.segment),
        }
    }
    Ok(ds)
}

pub fn save_dataset(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    write_dataset(ds, BufWriter::new(f))
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_dataset(f)
}
