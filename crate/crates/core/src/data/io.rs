//! Feature and label files.
//!
//! Text features: comma-separated with a header row, first column the sample
//! id, remaining columns one value per feature. Frame-level files hold one
//! frame per row; consecutive rows with the same id form one sequence.
//!
//! Labels: comma-separated with header `id,arousal,valence,dominance,split`.
//! Unlabeled rows leave the three values empty.
//!
//! Binary features, all integers and floats little-endian:
//!
//! ```text
//! b"LSERFEAT" | u32 version | u8 kind | u32 d | u64 n
//! n × ( u32 id_len | id bytes (UTF-8) | u32 T | d·T × f64, row-major d × T )
//! 32-byte SHA-256 of everything above
//! ```

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::{DataSet, FeatureKind, Split};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"LSERFEAT";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureFormat {
    Text,
    Binary,
}

impl FeatureFormat {
    /// `.bin` is binary, anything else text.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("bin") => FeatureFormat::Binary,
            _ => FeatureFormat::Text,
        }
    }
}

/// Loads features only. Every sample starts out unlabeled.
pub fn load_features(path: &Path, format: FeatureFormat, kind: FeatureKind, expected_dim: Option<usize>) -> Result<DataSet> {
    let ds = match format {
        FeatureFormat::Text => read_text(path, kind)?,
        FeatureFormat::Binary => read_binary(path, kind)?,
    };
    if let Some(d) = expected_dim {
        if ds.dim != d {
            return Err(Error::dim(
                "load_features",
                format!("{} declares {} features, expected {d}", path.display(), ds.dim),
            ));
        }
    }
    Ok(ds)
}

fn parse_value(s: &str, line: u64, col: usize) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| Error::Data(format!("line {line}, column {col}: cannot parse '{s}' as a number")))
}

fn read_text(path: &Path, kind: FeatureKind) -> Result<DataSet> {
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .from_path(path)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let headers = reader.headers().map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    if headers.is_empty() {
        return Err(Error::Data(format!("{}: missing header row", path.display())));
    }
    let d = headers.len() - 1;
    let mut ds = DataSet::empty(kind, d);
    // Frame-level rows accumulate frame-major, then get transposed to d × T.
    let mut pending: Option<(String, Vec<f64>)> = None;
    let finish = |ds: &mut DataSet, id: String, frames: Vec<f64>| -> Result<()> {
        let t = frames.len() / d.max(1);
        let mut block = vec![0.0; frames.len()];
        for f in 0..t {
            for j in 0..d {
                block[j * t + f] = frames[f * d + j];
            }
        }
        ds.push(id, block, t, None, Split::Unlabeled)
    };
    for record in reader.records() {
        let record = record.map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() != d + 1 {
            return Err(Error::dim(
                "load_features",
                format!("line {line}: expected {d} feature values, found {}", record.len().saturating_sub(1)),
            ));
        }
        let id = record[0].trim().to_string();
        let values = (1..=d).map(|c| parse_value(&record[c], line, c)).collect::<Result<Vec<_>>>()?;
        match kind {
            FeatureKind::Sentence => {
                ds.push(id, values, 1, None, Split::Unlabeled)?;
            }
            FeatureKind::Frame => match &mut pending {
                Some((cur, frames)) if *cur == id => frames.extend(values),
                _ => {
                    if let Some((prev, frames)) = pending.take() {
                        finish(&mut ds, prev, frames)?;
                    }
                    pending = Some((id, values));
                }
            },
        }
    }
    if let Some((prev, frames)) = pending.take() {
        finish(&mut ds, prev, frames)?;
    }
    check_unique(&ds)?;
    Ok(ds)
}

fn check_unique(ds: &DataSet) -> Result<()> {
    let mut seen = HashSet::with_capacity(ds.len());
    match ds.ids.iter().find(|id| !seen.insert(id.as_str())) {
        Some(id) => Err(Error::Data(format!("duplicate sample id '{id}'"))),
        None => Ok(()),
    }
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Truncated(format!("needed {n} bytes at offset {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

/// Splits off and checks a trailing SHA-256 digest.
pub(crate) fn verify_digest(bytes: &[u8]) -> Result<&[u8]> {
    if bytes.len() < 32 {
        return Err(Error::Truncated("file shorter than its digest".into()));
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != digest {
        return Err(Error::DigestMismatch);
    }
    Ok(body)
}

fn read_binary(path: &Path, kind: FeatureKind) -> Result<DataSet> {
    let bytes = fs::read(path)?;
    let body = verify_digest(&bytes)?;
    let mut c = Cursor { buf: body, pos: 0 };
    if c.take(8)? != MAGIC {
        return Err(Error::Format(format!("{}: not a feature file", path.display())));
    }
    let version = c.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!("feature file version {version}, expected {VERSION}")));
    }
    let file_kind = FeatureKind::from_code(c.take(1)?[0])?;
    if file_kind != kind {
        return Err(Error::Data(format!("{}: holds {file_kind:?} features, expected {kind:?}", path.display())));
    }
    let d = c.u32()? as usize;
    let n = c.u64()? as usize;
    let mut ds = DataSet::empty(kind, d);
    for _ in 0..n {
        let len = c.u32()? as usize;
        let id = String::from_utf8(c.take(len)?.to_vec()).map_err(|_| Error::Format("sample id is not UTF-8".into()))?;
        let t = c.u32()? as usize;
        let raw = c.take(d * t * 8)?;
        let values = raw.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes"))).collect();
        ds.push(id, values, t, None, Split::Unlabeled)?;
    }
    if c.pos != body.len() {
        return Err(Error::Format("trailing bytes after the last sample".into()));
    }
    check_unique(&ds)?;
    Ok(ds)
}

pub fn write_features(ds: &DataSet, path: &Path, format: FeatureFormat) -> Result<()> {
    match format {
        FeatureFormat::Text => {
            let mut w = csv::Writer::from_path(path).map_err(|e| Error::Data(e.to_string()))?;
            let mut header = vec!["id".to_string()];
            header.extend((0..ds.dim).map(|j| format!("f{j}")));
            w.write_record(&header).map_err(|e| Error::Data(e.to_string()))?;
            for i in 0..ds.len() {
                let t = ds.frames[i];
                for f in 0..t {
                    let mut row = vec![ds.ids[i].clone()];
                    row.extend((0..ds.dim).map(|j| format!("{:?}", ds.features[i][j * t + f])));
                    w.write_record(&row).map_err(|e| Error::Data(e.to_string()))?;
                }
            }
            w.flush()?;
        }
        FeatureFormat::Binary => {
            let mut buf = Vec::new();
            buf.extend_from_slice(MAGIC);
            buf.extend_from_slice(&VERSION.to_le_bytes());
            buf.push(ds.kind.code());
            buf.extend_from_slice(&(ds.dim as u32).to_le_bytes());
            buf.extend_from_slice(&(ds.len() as u64).to_le_bytes());
            for i in 0..ds.len() {
                buf.extend_from_slice(&(ds.ids[i].len() as u32).to_le_bytes());
                buf.extend_from_slice(ds.ids[i].as_bytes());
                buf.extend_from_slice(&(ds.frames[i] as u32).to_le_bytes());
                for v in &ds.features[i] {
                    buf.extend_from_slice(&v.to_le_bytes());
                }
            }
            let digest = Sha256::digest(&buf);
            buf.extend_from_slice(&digest);
            fs::write(path, buf)?;
        }
    }
    Ok(())
}

pub fn write_labels(ds: &DataSet, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Data(e.to_string()))?;
    w.write_record(["id", "arousal", "valence", "dominance", "split"])
        .map_err(|e| Error::Data(e.to_string()))?;
    for i in 0..ds.len() {
        let vals: [String; 3] = match ds.labels[i] {
            Some(l) => l.map(|v| format!("{v:?}")),
            None => Default::default(),
        };
        w.write_record([ds.ids[i].as_str(), &vals[0], &vals[1], &vals[2], ds.splits[i].name()])
            .map_err(|e| Error::Data(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a label file into `id → (labels, split)`.
pub fn load_labels(path: &Path) -> Result<HashMap<String, (Option<[f64; 3]>, Split)>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let mut out = HashMap::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() != 5 {
            return Err(Error::dim("load_labels", format!("line {line}: expected 5 columns, found {}", record.len())));
        }
        let split: Split = record[4].parse()?;
        let empty = (1..4).all(|c| record[c].trim().is_empty());
        let labels = if empty {
            None
        } else {
            let mut l = [0.0; 3];
            for c in 0..3 {
                l[c] = parse_value(&record[c + 1], line, c + 1)?;
            }
            Some(l)
        };
        let id = record[0].trim().to_string();
        if out.insert(id.clone(), (labels, split)).is_some() {
            return Err(Error::Data(format!("line {line}: duplicate label id '{id}'")));
        }
    }
    Ok(out)
}

/// Features plus labels. Samples absent from the label file are unlabeled;
/// label rows without features are an error.
pub fn load_dataset(
    features: &Path,
    labels: &Path,
    kind: FeatureKind,
    expected_dim: Option<usize>,
) -> Result<DataSet> {
    let mut ds = load_features(features, FeatureFormat::from_path(features), kind, expected_dim)?;
    let mut table = load_labels(labels)?;
    for i in 0..ds.len() {
        if let Some((l, s)) = table.remove(&ds.ids[i]) {
            ds.labels[i] = l;
            ds.splits[i] = s;
        }
    }
    if let Some(id) = table.keys().next() {
        return Err(Error::Data(format!("label row '{id}' has no features")));
    }
    ds.validate()?;
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::RngStream;

    fn sample(kind: FeatureKind) -> DataSet {
        let mut rng = RngStream::new(3);
        let mut ds = DataSet::empty(kind, 3);
        for i in 0..5 {
            let t = if kind == FeatureKind::Frame { 1 + i } else { 1 };
            let f = (0..3 * t).map(|_| rng.standard_normal() * 1e3).collect();
            let (l, s) = if i == 4 { (None, Split::Unlabeled) } else { (Some([1.5, 2.25 + i as f64, -0.1]), Split::Train) };
            ds.push(format!("id{i}"), f, t, l, s).unwrap();
        }
        ds
    }

    #[test]
    fn text_and_binary_round_trip_identically() {
        let dir = tempfile::tempdir().unwrap();
        for kind in [FeatureKind::Sentence, FeatureKind::Frame] {
            let ds = sample(kind);
            let (tp, bp, lp) = (dir.path().join("f.csv"), dir.path().join("f.bin"), dir.path().join("l.csv"));
            write_features(&ds, &tp, FeatureFormat::Text).unwrap();
            write_features(&ds, &bp, FeatureFormat::Binary).unwrap();
            write_labels(&ds, &lp).unwrap();
            let a = load_dataset(&tp, &lp, kind, Some(3)).unwrap();
            let b = load_dataset(&bp, &lp, kind, Some(3)).unwrap();
            assert_eq!(a, b);
            assert_eq!(a, ds);
        }
    }

    #[test]
    fn empty_file_with_header_is_empty() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.csv");
        fs::write(&p, "id,a,b\n").unwrap();
        let ds = load_features(&p, FeatureFormat::Text, FeatureKind::Sentence, None).unwrap();
        assert!(ds.is_empty());
        assert_eq!(ds.dim, 2);
    }

    #[test]
    fn short_row_names_the_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.csv");
        fs::write(&p, "id,a,b,c\nx,1,2,3\ny,1,2\n").unwrap();
        let err = load_features(&p, FeatureFormat::Text, FeatureKind::Sentence, None).unwrap_err();
        assert!(matches!(&err, Error::Dimension { .. }));
        assert!(err.to_string().contains("line 3"), "{err}");
    }

    #[test]
    fn duplicate_ids_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        fs::write(&p, "id,a\nx,1\ny,2\nx,3\n").unwrap();
        assert!(load_features(&p, FeatureFormat::Text, FeatureKind::Sentence, None).is_err());
        assert!(load_features(&p, FeatureFormat::Text, FeatureKind::Frame, None).is_err());
    }

    #[test]
    fn corrupted_binary_detected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.bin");
        write_features(&sample(FeatureKind::Sentence), &p, FeatureFormat::Binary).unwrap();
        let mut bytes = fs::read(&p).unwrap();
        bytes[30] ^= 1;
        fs::write(&p, &bytes).unwrap();
        assert!(matches!(
            load_features(&p, FeatureFormat::Binary, FeatureKind::Sentence, None),
            Err(Error::DigestMismatch)
        ));
    }
}
