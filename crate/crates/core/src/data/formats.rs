//! On-disk formats.
//!
//! Text (CSV, header row first):
//! - embeddings: `id,v0,...,v{D-1}`
//! - attributes: `id,style,comp_bits` where `style` is an integer or empty
//!   and `comp_bits` is a string of `0`/`1` characters or empty
//! - scores: `id,c1,...,cB` raw vote counts, normalized on load
//! - splits: `id,split` with `split` one of `train`, `val`, `test`
//!
//! Binary embeddings: magic `MLSP`, version `u32`, record count `u64`,
//! dim `u32`, then per record an id length `u16`, the UTF-8 id bytes and
//! `dim` little-endian `f32` values.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{AttributeLabels, EmbeddingVector, ScoreDistribution, SplitSpec};
use crate::error::{Error, Result};

pub const EMBEDDING_MAGIC: &[u8; 4] = b"MLSP";
pub const EMBEDDING_VERSION: u32 = 1;

struct Table {
    header: Vec<String>,
    rows: Vec<(usize, Vec<String>)>,
}

fn read_table(path: &Path) -> Result<Table> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(BufReader::new(file));
    let mut header = None;
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
            Error::format(path.display(), line, e.to_string())
        })?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        let fields: Vec<String> = rec.iter().map(|f| f.trim().to_string()).collect();
        if fields.len() == 1 && fields[0].is_empty() {
            continue;
        }
        if header.is_none() {
            header = Some(fields);
        } else {
            rows.push((line, fields));
        }
    }
    Ok(Table {
        header: header.unwrap_or_default(),
        rows,
    })
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn check_id(id: &str) -> Result<()> {
    if id.is_empty() || id.contains([',', '\n', '\r', '"']) {
        return Err(Error::Invalid(format!("unsupported image id {id:?}")));
    }
    Ok(())
}

fn parse_f64(path: &Path, line: usize, s: &str) -> Result<f64> {
    let v: f64 = s
        .parse()
        .map_err(|_| Error::format(path.display(), line, format!("not a number: {s:?}")))?;
    if !v.is_finite() {
        return Err(Error::format(path.display(), line, format!("non-finite value {s}")));
    }
    Ok(v)
}

fn check_unique<'a>(path: &Path, ids: impl Iterator<Item = (usize, &'a str)>) -> Result<()> {
    let mut seen = HashSet::new();
    for (line, id) in ids {
        if !seen.insert(id) {
            return Err(Error::format(path.display(), line, format!("duplicate id {id:?}")));
        }
    }
    Ok(())
}

fn is_binary(path: &Path) -> bool {
    path.extension().and_then(|e| e.to_str()) == Some("bin")
}

/// Reads embeddings, binary when the extension is `.bin`, CSV otherwise.
pub fn load_embeddings(path: impl AsRef<Path>) -> Result<Vec<EmbeddingVector>> {
    let path = path.as_ref();
    if is_binary(path) {
        load_embeddings_bin(path)
    } else {
        load_embeddings_csv(path)
    }
}

/// Writes embeddings, binary when the extension is `.bin`, CSV otherwise.
pub fn store_embeddings(list: &[EmbeddingVector], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if is_binary(path) {
        store_embeddings_bin(list, path)
    } else {
        store_embeddings_csv(list, path)
    }
}

fn common_dim(list: &[EmbeddingVector]) -> Result<usize> {
    let dim = list.first().map(|e| e.values.len()).unwrap_or(0);
    for e in list {
        check_id(&e.id)?;
        if e.values.len() != dim {
            return Err(Error::Invalid(format!(
                "embedding {} has dim {}, expected {dim}",
                e.id,
                e.values.len()
            )));
        }
    }
    Ok(dim)
}

pub fn store_embeddings_csv(list: &[EmbeddingVector], path: &Path) -> Result<()> {
    let dim = common_dim(list)?;
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    if !list.is_empty() {
        write!(w, "id").map_err(io)?;
        for i in 0..dim {
            write!(w, ",v{i}").map_err(io)?;
        }
        writeln!(w).map_err(io)?;
    }
    for e in list {
        write!(w, "{}", e.id).map_err(io)?;
        for v in &e.values {
            write!(w, ",{v}").map_err(io)?;
        }
        writeln!(w).map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn load_embeddings_csv(path: &Path) -> Result<Vec<EmbeddingVector>> {
    let t = read_table(path)?;
    if t.header.is_empty() {
        return Ok(Vec::new());
    }
    if t.header[0] != "id" || t.header.len() < 2 {
        return Err(Error::format(path.display(), 1, "header must be id,v0,...,v{D-1}"));
    }
    for (i, h) in t.header[1..].iter().enumerate() {
        if *h != format!("v{i}") {
            return Err(Error::format(path.display(), 1, format!("unexpected column {h:?}")));
        }
    }
    let dim = t.header.len() - 1;
    let mut out = Vec::with_capacity(t.rows.len());
    for (line, fields) in &t.rows {
        if fields.len() != dim + 1 {
            return Err(Error::format(
                path.display(),
                *line,
                format!("expected {} fields, found {}", dim + 1, fields.len()),
            ));
        }
        let values = fields[1..]
            .iter()
            .map(|s| parse_f64(path, *line, s))
            .collect::<Result<Vec<_>>>()?;
        out.push(EmbeddingVector {
            id: fields[0].clone(),
            values,
        });
    }
    check_unique(path, t.rows.iter().map(|(l, f)| (*l, f[0].as_str())))?;
    Ok(out)
}

pub fn store_embeddings_bin(list: &[EmbeddingVector], path: &Path) -> Result<()> {
    let dim = common_dim(list)?;
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    w.write_all(EMBEDDING_MAGIC).map_err(io)?;
    w.write_all(&EMBEDDING_VERSION.to_le_bytes()).map_err(io)?;
    w.write_all(&(list.len() as u64).to_le_bytes()).map_err(io)?;
    w.write_all(&(dim as u32).to_le_bytes()).map_err(io)?;
    for e in list {
        let id = e.id.as_bytes();
        let len =
            u16::try_from(id.len()).map_err(|_| Error::Invalid(format!("id longer than 65535 bytes: {}", e.id)))?;
        w.write_all(&len.to_le_bytes()).map_err(io)?;
        w.write_all(id).map_err(io)?;
        for v in &e.values {
            w.write_all(&(*v as f32).to_le_bytes()).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

pub fn load_embeddings_bin(path: &Path) -> Result<Vec<EmbeddingVector>> {
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    if bytes.is_empty() {
        return Ok(Vec::new());
    }
    let mut r = ByteReader::new(&bytes, path);
    if r.take(4)? != EMBEDDING_MAGIC {
        return Err(r.error("bad magic, expected MLSP"));
    }
    let version = r.u32()?;
    if version != EMBEDDING_VERSION {
        return Err(r.error(&format!("unsupported version {version}")));
    }
    let count = r.u64()? as usize;
    let dim = r.u32()? as usize;
    let mut out = Vec::with_capacity(count.min(1 << 20));
    let mut seen = HashSet::new();
    for i in 0..count {
        let len = r.u16()? as usize;
        let id = std::str::from_utf8(r.take(len)?)
            .map_err(|_| r.error(&format!("record {i}: id is not UTF-8")))?
            .to_string();
        if !seen.insert(id.clone()) {
            return Err(r.error(&format!("duplicate id {id:?}")));
        }
        let mut values = Vec::with_capacity(dim);
        for _ in 0..dim {
            let v = f32::from_le_bytes(r.take(4)?.try_into().unwrap());
            if !v.is_finite() {
                return Err(r.error(&format!("record {i}: non-finite value")));
            }
            values.push(f64::from(v));
        }
        out.push(EmbeddingVector { id, values });
    }
    if !r.is_done() {
        return Err(r.error("trailing bytes after last record"));
    }
    Ok(out)
}

/// Little-endian cursor shared by the binary readers.
pub(crate) struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> ByteReader<'a> {
    pub(crate) fn new(bytes: &'a [u8], path: &'a Path) -> Self {
        ByteReader { bytes, pos: 0, path }
    }

    pub(crate) fn error(&self, msg: &str) -> Error {
        Error::format(self.path.display(), 0, format!("byte {}: {msg}", self.pos))
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(self.error("unexpected end of file"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn f32s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(4 * n)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())))
            .collect())
    }

    pub(crate) fn is_done(&self) -> bool {
        self.pos == self.bytes.len()
    }
}

pub fn store_attributes(list: &[AttributeLabels], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    writeln!(w, "id,style,comp_bits").map_err(io)?;
    for a in list {
        check_id(&a.id)?;
        let style = a.style.map(|s| s.to_string()).unwrap_or_default();
        let bits: String = a
            .composition
            .as_ref()
            .map(|c| c.iter().map(|&b| if b { '1' } else { '0' }).collect())
            .unwrap_or_default();
        writeln!(w, "{},{style},{bits}", a.id).map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Loads attribute labels; every non-empty `comp_bits` must have the same
/// length.
pub fn load_attributes(path: impl AsRef<Path>) -> Result<Vec<AttributeLabels>> {
    let path = path.as_ref();
    let t = read_table(path)?;
    if t.header.is_empty() {
        return Ok(Vec::new());
    }
    if t.header != ["id", "style", "comp_bits"] {
        return Err(Error::format(path.display(), 1, "header must be id,style,comp_bits"));
    }
    let mut out = Vec::with_capacity(t.rows.len());
    let mut comp_len = None;
    for (line, f) in &t.rows {
        let fmt = |msg: String| Error::format(path.display(), *line, msg);
        if f.len() != 3 {
            return Err(fmt(format!("expected 3 fields, found {}", f.len())));
        }
        let style = if f[1].is_empty() {
            None
        } else {
            Some(
                f[1].parse::<usize>()
                    .map_err(|_| fmt(format!("bad style index {:?}", f[1])))?,
            )
        };
        let composition = if f[2].is_empty() {
            None
        } else {
            let bits = f[2]
                .chars()
                .map(|c| match c {
                    '0' => Ok(false),
                    '1' => Ok(true),
                    _ => Err(fmt(format!("bad composition bit {c:?}"))),
                })
                .collect::<Result<Vec<bool>>>()?;
            match comp_len {
                None => comp_len = Some(bits.len()),
                Some(n) if n != bits.len() => {
                    return Err(fmt(format!("{} composition bits, expected {n}", bits.len())))
                }
                _ => {}
            }
            Some(bits)
        };
        if style.is_none() && composition.is_none() {
            return Err(fmt(format!("{} has neither style nor composition", f[0])));
        }
        out.push(AttributeLabels {
            id: f[0].clone(),
            style,
            composition,
        });
    }
    check_unique(path, t.rows.iter().map(|(l, f)| (*l, f[0].as_str())))?;
    Ok(out)
}

/// Writes distributions as `id,c1,...,cB` using the probabilities as counts.
pub fn store_scores(list: &[ScoreDistribution], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let b = list.first().map(|d| d.buckets()).unwrap_or(0);
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    if !list.is_empty() {
        write!(w, "id").map_err(io)?;
        for i in 1..=b {
            write!(w, ",c{i}").map_err(io)?;
        }
        writeln!(w).map_err(io)?;
    }
    for d in list {
        check_id(&d.id)?;
        if d.buckets() != b {
            return Err(Error::Invalid(format!(
                "{} has {} buckets, expected {b}",
                d.id,
                d.buckets()
            )));
        }
        write!(w, "{}", d.id).map_err(io)?;
        for p in &d.probs {
            write!(w, ",{p}").map_err(io)?;
        }
        writeln!(w).map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Loads vote counts and normalizes each row.
pub fn load_scores(path: impl AsRef<Path>) -> Result<Vec<ScoreDistribution>> {
    let path = path.as_ref();
    let t = read_table(path)?;
    if t.header.is_empty() {
        return Ok(Vec::new());
    }
    if t.header[0] != "id" || t.header.len() < 3 {
        return Err(Error::format(
            path.display(),
            1,
            "header must be id,c1,...,cB with B >= 2",
        ));
    }
    let b = t.header.len() - 1;
    let mut out = Vec::with_capacity(t.rows.len());
    for (line, f) in &t.rows {
        if f.len() != b + 1 {
            return Err(Error::format(
                path.display(),
                *line,
                format!("expected {} fields, found {}", b + 1, f.len()),
            ));
        }
        let counts = f[1..]
            .iter()
            .map(|s| parse_f64(path, *line, s))
            .collect::<Result<Vec<_>>>()?;
        let d = ScoreDistribution::from_counts(f[0].clone(), &counts)
            .map_err(|e| Error::format(path.display(), *line, e.to_string()))?;
        out.push(d);
    }
    check_unique(path, t.rows.iter().map(|(l, f)| (*l, f[0].as_str())))?;
    Ok(out)
}

pub fn store_split(split: &SplitSpec, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    writeln!(w, "id,split").map_err(io)?;
    for (name, ids) in [("train", &split.train), ("val", &split.val), ("test", &split.test)] {
        for id in ids {
            writeln!(w, "{id},{name}").map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

pub fn load_split(path: impl AsRef<Path>) -> Result<SplitSpec> {
    let path = path.as_ref();
    let t = read_table(path)?;
    if t.header != ["id", "split"] {
        return Err(Error::format(path.display(), 1, "header must be id,split"));
    }
    let mut s = SplitSpec::default();
    for (line, f) in &t.rows {
        if f.len() != 2 {
            return Err(Error::format(path.display(), *line, "expected 2 fields"));
        }
        let bucket = match f[1].as_str() {
            "train" => &mut s.train,
            "val" => &mut s.val,
            "test" => &mut s.test,
            other => return Err(Error::format(path.display(), *line, format!("unknown split {other:?}"))),
        };
        bucket.push(f[0].clone());
    }
    check_unique(path, t.rows.iter().map(|(l, f)| (*l, f[0].as_str())))?;
    Ok(s)
}
