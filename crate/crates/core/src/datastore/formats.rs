//! Embedding file formats.
//!
//! JSON-lines: a header line `{"format":"layoutspace-jsonl","version":1,
//! "dataset_id":…,"dim":D,"count":N}` followed by one record per line,
//! `{"id":…,"vec":[…],"label":…,"split":…,"meta":{…}}`, sorted by id.
//! Vector components are written in shortest round-trip form and parsed as
//! `f32` directly, so values survive bit-exactly.
//!
//! Packed: `b"IDEM"`, version `u32` LE, count `u64` LE, dim `u32` LE, then
//! `count` ids as `u16` LE length + UTF-8 bytes, then `count * dim` `f32` LE
//! values in id-table order. Labels, splits and metadata are not carried.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;

use super::dataset::{validate_record, Dataset};
use crate::embedding::{EmbeddingRecord, SplitTag};
use crate::error::{Error, Result};

pub const JSONL_FORMAT: &str = "layoutspace-jsonl";
pub const PACKED_MAGIC: &[u8; 4] = b"IDEM";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Jsonl,
    Packed,
}

impl std::str::FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "jsonl" => Ok(Format::Jsonl),
            "packed" => Ok(Format::Packed),
            other => Err(Error::InvalidArgument(format!("unknown format `{other}`"))),
        }
    }
}

impl Format {
    /// `.jsonl` means JSON-lines, `.idem` / `.packed` mean packed.
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()? {
            "jsonl" => Some(Format::Jsonl),
            "idem" | "packed" => Some(Format::Packed),
            _ => None,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    dataset_id: String,
    dim: usize,
    #[serde(default)]
    count: Option<usize>,
}

#[derive(Serialize)]
struct RecordOut<'a> {
    id: &'a str,
    vec: Box<RawValue>,
    #[serde(skip_serializing_if = "Option::is_none")]
    label: Option<&'a str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    split: Option<SplitTag>,
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    meta: &'a BTreeMap<String, String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RecordIn {
    id: String,
    vec: Box<RawValue>,
    #[serde(default)]
    label: Option<String>,
    #[serde(default)]
    split: Option<SplitTag>,
    #[serde(default)]
    meta: BTreeMap<String, String>,
}

fn vector_text(v: &[f32]) -> String {
    let mut s = String::with_capacity(v.len() * 12 + 2);
    s.push('[');
    for (i, x) in v.iter().enumerate() {
        if i > 0 {
            s.push(',');
        }
        s.push_str(&x.to_string());
    }
    s.push(']');
    s
}

fn parse_vector(raw: &str, row: usize) -> Result<Vec<f32>> {
    let err = |message: String| Error::Parse { row, message };
    let inner = raw
        .trim()
        .strip_prefix('[')
        .and_then(|s| s.strip_suffix(']'))
        .ok_or_else(|| err("`vec` must be an array of numbers".into()))?;
    if inner.trim().is_empty() {
        return Ok(Vec::new());
    }
    inner
        .split(',')
        .enumerate()
        .map(|(k, tok)| {
            let tok = tok.trim();
            let x: f32 = tok
                .parse()
                .map_err(|_| err(format!("component {k}: `{tok}` is not a number")))?;
            if !x.is_finite() {
                return Err(err(format!("component {k} is not finite")));
            }
            Ok(x)
        })
        .collect()
}

pub fn write_jsonl<W: Write>(ds: &Dataset, out: W) -> Result<()> {
    let mut out = BufWriter::new(out);
    let fail = |e: std::io::Error| Error::io("<output>", e);
    let header = Header {
        format: JSONL_FORMAT.into(),
        version: FORMAT_VERSION,
        dataset_id: ds.dataset_id.clone(),
        dim: ds.dimension,
        count: Some(ds.len()),
    };
    serde_json::to_writer(&mut out, &header).map_err(|e| fail(e.into()))?;
    out.write_all(b"\n").map_err(fail)?;
    let mut sorted: Vec<&EmbeddingRecord> = ds.records().iter().collect();
    sorted.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
    for r in sorted {
        let rec = RecordOut {
            id: &r.sample_id,
            vec: RawValue::from_string(vector_text(&r.vector)).map_err(|e| fail(e.into()))?,
            label: r.layout_label.as_deref(),
            split: r.split_tag,
            meta: &r.metadata,
        };
        serde_json::to_writer(&mut out, &rec).map_err(|e| fail(e.into()))?;
        out.write_all(b"\n").map_err(fail)?;
    }
    out.flush().map_err(fail)
}

/// Parses a whole JSON-lines stream; any bad line aborts with its 1-based
/// line number.
pub fn read_jsonl<R: Read>(input: R) -> Result<Dataset> {
    let mut lines = BufReader::new(input).lines().enumerate();
    let mut header: Option<Header> = None;
    for (i, line) in lines.by_ref() {
        let line = line.map_err(|e| Error::io("<input>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let h: Header = serde_json::from_str(&line).map_err(|_| Error::MissingHeader)?;
        if h.format != JSONL_FORMAT {
            return Err(Error::MissingHeader);
        }
        if h.version != FORMAT_VERSION {
            return Err(Error::Parse {
                row: i + 1,
                message: format!("unsupported version {}", h.version),
            });
        }
        header = Some(h);
        break;
    }
    let header = header.ok_or(Error::MissingHeader)?;
    let mut records = Vec::new();
    let mut rows = Vec::new();
    for (i, line) in lines {
        let row = i + 1;
        let line = line.map_err(|e| Error::io("<input>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let r: RecordIn = serde_json::from_str(&line).map_err(|e| Error::Parse {
            row,
            message: e.to_string(),
        })?;
        let rec = EmbeddingRecord {
            vector: parse_vector(r.vec.get(), row)?,
            sample_id: r.id,
            layout_label: r.label,
            split_tag: r.split,
            metadata: r.meta,
        };
        validate_record(&rec, header.dim, row)?;
        records.push(rec);
        rows.push(row);
    }
    if let Some(n) = header.count {
        if n != records.len() {
            return Err(Error::Parse {
                row: 1,
                message: format!("header declares {n} records, found {}", records.len()),
            });
        }
    }
    let mut seen = std::collections::HashSet::new();
    for (r, &row) in records.iter().zip(&rows) {
        if !seen.insert(r.sample_id.as_str()) {
            return Err(Error::DuplicateId {
                row,
                id: r.sample_id.clone(),
            });
        }
    }
    let mut ds = Dataset::from_records(header.dataset_id, records)?;
    ds.dimension = header.dim;
    Ok(ds)
}

pub fn write_packed<W: Write>(ds: &Dataset, out: W) -> Result<()> {
    let mut out = BufWriter::new(out);
    let fail = |e: std::io::Error| Error::io("<output>", e);
    let dim = u32::try_from(ds.dimension).map_err(|_| Error::InvalidArgument("dimension exceeds u32".into()))?;
    out.write_all(PACKED_MAGIC).map_err(fail)?;
    out.write_all(&FORMAT_VERSION.to_le_bytes()).map_err(fail)?;
    out.write_all(&(ds.len() as u64).to_le_bytes()).map_err(fail)?;
    out.write_all(&dim.to_le_bytes()).map_err(fail)?;
    for r in ds.records() {
        let len = u16::try_from(r.sample_id.len())
            .map_err(|_| Error::InvalidArgument(format!("sample id `{}` longer than 65535 bytes", r.sample_id)))?;
        out.write_all(&len.to_le_bytes()).map_err(fail)?;
        out.write_all(r.sample_id.as_bytes()).map_err(fail)?;
    }
    for r in ds.records() {
        for x in &r.vector {
            out.write_all(&x.to_le_bytes()).map_err(fail)?;
        }
    }
    out.flush().map_err(fail)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, row: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| Error::Parse {
            row,
            message: format!("truncated file while reading {what}"),
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }
}

/// Rows are numbered from 1 in id-table order; the file header is row 0.
pub fn read_packed(bytes: &[u8], dataset_id: &str) -> Result<Dataset> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(4, 0, "magic")? != PACKED_MAGIC {
        return Err(Error::Parse {
            row: 0,
            message: "bad magic, expected IDEM".into(),
        });
    }
    let version = u32::from_le_bytes(c.take(4, 0, "version")?.try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(Error::Parse {
            row: 0,
            message: format!("unsupported version {version}"),
        });
    }
    let count = u64::from_le_bytes(c.take(8, 0, "count")?.try_into().expect("8 bytes")) as usize;
    let dim = u32::from_le_bytes(c.take(4, 0, "dim")?.try_into().expect("4 bytes")) as usize;
    // every id needs at least its length prefix
    if count > bytes.len() / 2 {
        return Err(Error::Parse {
            row: 0,
            message: format!("count {count} does not fit the file"),
        });
    }
    let mut ids = Vec::with_capacity(count);
    for row in 1..=count {
        let len = u16::from_le_bytes(c.take(2, row, "id length")?.try_into().expect("2 bytes")) as usize;
        let raw = c.take(len, row, "id")?;
        let id = std::str::from_utf8(raw).map_err(|e| Error::Parse {
            row,
            message: format!("id is not UTF-8: {e}"),
        })?;
        ids.push(id.to_string());
    }
    let mut records = Vec::with_capacity(count);
    for (i, id) in ids.into_iter().enumerate() {
        let raw = c.take(4 * dim, i + 1, "vector")?;
        let vector = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
            .collect();
        records.push(EmbeddingRecord::new(id, vector));
    }
    if c.pos != bytes.len() {
        return Err(Error::Parse {
            row: count,
            message: format!("{} trailing bytes", bytes.len() - c.pos),
        });
    }
    let mut ds = Dataset::from_records(dataset_id, records)?;
    ds.dimension = dim;
    Ok(ds)
}

/// Dataset id used for packed files: the file stem.
pub fn default_dataset_id(path: &Path) -> String {
    path.file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("dataset")
        .to_string()
}

pub fn import_embeddings(path: &Path, format: Format) -> Result<Dataset> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let ds = match format {
        Format::Jsonl => read_jsonl(file),
        Format::Packed => {
            let mut bytes = Vec::new();
            BufReader::new(file).read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;
            read_packed(&bytes, &default_dataset_id(path))
        }
    };
    ds.map(|d| d.with_provenance(format!("imported from {}", path.display())))
}

/// Writes to a sibling temporary file and renames it into place.
pub fn export_embeddings(ds: &Dataset, path: &Path, format: Format) -> Result<()> {
    if ds.is_empty() {
        return Err(Error::EmptySet);
    }
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let tmp = dir.join(format!(
        ".{}.tmp",
        path.file_name().and_then(|s| s.to_str()).unwrap_or("export")
    ));
    let file = File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    let written = match format {
        Format::Jsonl => write_jsonl(ds, file),
        Format::Packed => write_packed(ds, file),
    };
    if let Err(e) = written {
        let _ = std::fs::remove_file(&tmp);
        return Err(match e {
            Error::Io { source, .. } => Error::io(path, source),
            other => other,
        });
    }
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Dataset {
        let mut meta = BTreeMap::new();
        meta.insert("source".to_string(), "scan \"7\"".to_string());
        let mut a = EmbeddingRecord::new("b-2", vec![0.1, -0.0, 1e-40, f32::MAX])
            .with_label("ON-DL")
            .with_split(SplitTag::Val);
        a.metadata = meta;
        let b = EmbeddingRecord::new("a-1", vec![3.0, f32::MIN_POSITIVE, -7.25, 1.0 / 3.0]);
        Dataset::from_records("demo", vec![a, b]).unwrap()
    }

    #[test]
    fn jsonl_round_trip_is_bit_exact() {
        let ds = sample();
        let mut buf = Vec::new();
        write_jsonl(&ds, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert!(lines[0].contains("\"dim\":4"));
        assert!(lines[1].starts_with("{\"id\":\"a-1\""));
        let back = read_jsonl(buf.as_slice()).unwrap();
        assert_eq!(back.records().len(), 2);
        for (x, y) in back.records().iter().zip(ds.records()) {
            assert_eq!(x.sample_id, y.sample_id);
            assert_eq!(x.layout_label, y.layout_label);
            assert_eq!(x.split_tag, y.split_tag);
            assert_eq!(x.metadata, y.metadata);
            let bits = |v: &[f32]| v.iter().map(|f| f.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&x.vector), bits(&y.vector));
        }
        let mut again = Vec::new();
        write_jsonl(&back, &mut again).unwrap();
        assert_eq!(again, buf);
    }

    #[test]
    fn jsonl_errors_name_rows() {
        assert!(matches!(read_jsonl("".as_bytes()), Err(Error::MissingHeader)));
        assert!(matches!(
            read_jsonl("{\"id\":\"a\",\"vec\":[1]}\n".as_bytes()),
            Err(Error::MissingHeader)
        ));
        let head = "{\"format\":\"layoutspace-jsonl\",\"version\":1,\"dataset_id\":\"x\",\"dim\":2}\n";
        let empty = read_jsonl(head.as_bytes()).unwrap();
        assert!(empty.is_empty());
        assert_eq!(empty.dimension, 2);
        let nan = format!("{head}{{\"id\":\"a\",\"vec\":[1,2]}}\n{{\"id\":\"b\",\"vec\":[NaN,1]}}\n");
        assert!(matches!(read_jsonl(nan.as_bytes()), Err(Error::Parse { row: 3, .. })));
        let inf = format!("{head}{{\"id\":\"a\",\"vec\":[1e39,2]}}\n");
        assert!(matches!(read_jsonl(inf.as_bytes()), Err(Error::Parse { row: 2, .. })));
        let dim = format!("{head}{{\"id\":\"a\",\"vec\":[1]}}\n");
        assert!(matches!(
            read_jsonl(dim.as_bytes()),
            Err(Error::RowDimensionMismatch { row: 2, .. })
        ));
        let dup = format!("{head}{{\"id\":\"a\",\"vec\":[1,2]}}\n{{\"id\":\"a\",\"vec\":[1,3]}}\n");
        assert!(matches!(read_jsonl(dup.as_bytes()), Err(Error::DuplicateId { row: 3, .. })));
    }

    #[test]
    fn packed_layout_and_round_trip() {
        let ds = sample();
        let mut buf = Vec::new();
        write_packed(&ds, &mut buf).unwrap();
        assert_eq!(&buf[..4], b"IDEM");
        assert_eq!(u32::from_le_bytes(buf[4..8].try_into().unwrap()), 1);
        assert_eq!(u64::from_le_bytes(buf[8..16].try_into().unwrap()), 2);
        assert_eq!(u32::from_le_bytes(buf[16..20].try_into().unwrap()), 4);
        assert_eq!(u16::from_le_bytes(buf[20..22].try_into().unwrap()), 3);
        assert_eq!(&buf[22..25], b"a-1");
        assert_eq!(buf.len(), 20 + 2 * 2 + 6 + 2 * 4 * 4);
        let back = read_packed(&buf, "demo").unwrap();
        for (x, y) in back.records().iter().zip(ds.records()) {
            assert_eq!(x.sample_id, y.sample_id);
            assert_eq!(
                x.vector.iter().map(|f| f.to_bits()).collect::<Vec<_>>(),
                y.vector.iter().map(|f| f.to_bits()).collect::<Vec<_>>()
            );
        }
        assert!(read_packed(&buf[..buf.len() - 1], "demo").is_err());
        let mut extra = buf.clone();
        extra.push(0);
        assert!(read_packed(&extra, "demo").is_err());
    }

    #[test]
    fn file_exports_are_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let ds = sample();
        for fmt in [Format::Jsonl, Format::Packed] {
            let (p1, p2) = (dir.path().join("one"), dir.path().join("two"));
            export_embeddings(&ds, &p1, fmt).unwrap();
            export_embeddings(&ds, &p2, fmt).unwrap();
            assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
            let back = import_embeddings(&p1, fmt).unwrap();
            assert_eq!(back.len(), 2);
        }
        assert!(matches!(
            export_embeddings(&Dataset::empty("e", 2), &dir.path().join("e"), Format::Packed),
            Err(Error::EmptySet)
        ));
    }
}
