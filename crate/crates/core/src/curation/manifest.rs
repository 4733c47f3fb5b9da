//! One record per line: `key=value` fields separated by tabs, in the order
//! id, path, width, height, channels, source_tag, phash, status.

use std::fmt;
use std::io::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::imaging::PerceptualHash;

const FIELDS: [&str; 8] = ["id", "path", "width", "height", "channels", "source_tag", "phash", "status"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RecordStatus {
    Kept,
    DuplicateOf(String),
    Review,
    Excluded(String),
}

impl fmt::Display for RecordStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RecordStatus::Kept => f.write_str("kept"),
            RecordStatus::DuplicateOf(id) => write!(f, "duplicate_of {id}"),
            RecordStatus::Review => f.write_str("review"),
            RecordStatus::Excluded(reason) if reason.is_empty() => f.write_str("excluded"),
            RecordStatus::Excluded(reason) => write!(f, "excluded {reason}"),
        }
    }
}

impl FromStr for RecordStatus {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (head, rest) = s.split_once(' ').unwrap_or((s, ""));
        match (head, rest) {
            ("kept", "") => Ok(RecordStatus::Kept),
            ("review", "") => Ok(RecordStatus::Review),
            ("duplicate_of", id) if !id.is_empty() => Ok(RecordStatus::DuplicateOf(id.to_string())),
            ("excluded", reason) => Ok(RecordStatus::Excluded(reason.to_string())),
            _ => Err(Error::Parse { offset: 0, message: format!("unknown status {s:?}") }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestRecord {
    pub id: String,
    pub path: String,
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub source_tag: String,
    pub phash: PerceptualHash,
    pub status: RecordStatus,
}

fn check_text(field: &str, v: &str) -> Result<()> {
    if v.contains(['\t', '\n', '\r']) {
        return Err(Error::Contract(format!("{field} {v:?} contains a tab or newline")));
    }
    Ok(())
}

pub fn format_record(r: &ManifestRecord) -> Result<String> {
    let values = [
        r.id.clone(),
        r.path.clone(),
        r.width.to_string(),
        r.height.to_string(),
        r.channels.to_string(),
        r.source_tag.clone(),
        r.phash.to_string(),
        r.status.to_string(),
    ];
    let mut fields = Vec::with_capacity(FIELDS.len());
    for (k, v) in FIELDS.iter().zip(&values) {
        check_text(k, v)?;
        fields.push(format!("{k}={v}"));
    }
    Ok(fields.join("\t"))
}

/// Parses one line; `offset` is the line's byte offset for error reports.
pub fn parse_record(line: &str, offset: usize) -> Result<ManifestRecord> {
    let mut values: Vec<&str> = Vec::with_capacity(FIELDS.len());
    let mut pos = offset;
    for (i, part) in line.split('\t').enumerate() {
        let err = |message: String| Error::Parse { offset: pos, message };
        let expected = FIELDS.get(i).ok_or_else(|| err("too many fields".into()))?;
        let (k, v) = part.split_once('=').ok_or_else(|| err(format!("field {part:?} has no '='")))?;
        if k != *expected {
            return Err(err(format!("expected field {expected}, found {k}")));
        }
        values.push(v);
        pos += part.len() + 1;
    }
    if values.len() != FIELDS.len() {
        return Err(Error::Parse {
            offset,
            message: format!("expected {} fields, found {}", FIELDS.len(), values.len()),
        });
    }
    let num = |i: usize| {
        values[i].parse::<usize>().map_err(|_| Error::Parse {
            offset,
            message: format!("{} {:?} is not a count", FIELDS[i], values[i]),
        })
    };
    Ok(ManifestRecord {
        id: values[0].to_string(),
        path: values[1].to_string(),
        width: num(2)?,
        height: num(3)?,
        channels: num(4)?,
        source_tag: values[5].to_string(),
        phash: values[6].parse().map_err(|e| match e {
            Error::Parse { message, .. } => Error::Parse { offset, message },
            other => other,
        })?,
        status: values[7].parse().map_err(|e| match e {
            Error::Parse { message, .. } => Error::Parse { offset, message },
            other => other,
        })?,
    })
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        let body = line.trim_end_matches(['\n', '\r']);
        if !body.is_empty() {
            out.push(parse_record(body, offset)?);
        }
        offset += line.len();
    }
    Ok(out)
}

pub fn write_manifest(path: &Path, records: &[ManifestRecord]) -> Result<()> {
    let mut buf = Vec::new();
    for r in records {
        writeln!(buf, "{}", format_record(r)?).expect("write to memory");
    }
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}
