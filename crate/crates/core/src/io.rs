//! Dataset ingestion and the model file format.
//!
//! Model files start with the magic `DSKC1`, then a little-endian `u64`
//! header length and a canonical JSON header (bandwidths as hex bit
//! patterns, so its length is independent of the data), then one length-prefixed
//! section per model (left before right for paired tasks). A section is the
//! list of blocks, each an 8-byte little-endian block index followed by the
//! coefficients as little-endian `f64`, row-major `rows x k`. Frequencies
//! are never written; they regenerate from the run seed.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{FeatureForm, KernelFamily, KernelSpec};
use crate::model::{Block, CoefficientModel, PairedModel};
use crate::solvers::{Fitted, Task};

pub const MAGIC: &[u8; 5] = b"DSKC1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataFormat {
    Csv,
    F64Le,
}

impl FromStr for DataFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(DataFormat::Csv),
            "f64le" => Ok(DataFormat::F64Le),
            other => Err(Error::InvalidArgument(format!("unknown data format '{other}'"))),
        }
    }
}

/// Rows of finite values, optionally with a second view over the same rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: DMatrix<f64>,
    pub y: Option<DMatrix<f64>>,
}

impl Dataset {
    pub fn new(x: DMatrix<f64>, y: Option<DMatrix<f64>>) -> Result<Self> {
        if x.nrows() == 0 || x.ncols() == 0 {
            return Err(Error::EmptyData);
        }
        if let Some(y) = &y {
            if y.nrows() != x.nrows() {
                return Err(Error::DimensionMismatch { expected: x.nrows(), got: y.nrows() });
            }
            if y.ncols() == 0 {
                return Err(Error::EmptyData);
            }
        }
        for m in std::iter::once(&x).chain(y.as_ref()) {
            if m.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("dataset".into()));
            }
        }
        Ok(Self { x, y })
    }

    pub fn rows(&self) -> usize {
        self.x.nrows()
    }
}

pub fn load_dataset(path: &Path, format: DataFormat, skip_header: bool) -> Result<DMatrix<f64>> {
    let bytes = fs::read(path)
        .map_err(|e| std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))?;
    match format {
        DataFormat::Csv => parse_csv(&bytes, skip_header),
        DataFormat::F64Le => parse_f64le(&bytes),
    }
}

/// Comma-separated rows. Errors name the 1-based line and column.
pub fn parse_csv(bytes: &[u8], skip_header: bool) -> Result<DMatrix<f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(skip_header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(bytes);
    let mut values = Vec::new();
    let mut width = None;
    let mut rows = 0;
    for (i, rec) in reader.records().enumerate() {
        let line = i + 1 + usize::from(skip_header);
        let rec = rec.map_err(|e| Error::Parse { row: line, col: 0, msg: e.to_string() })?;
        if rec.len() == 1 && rec[0].is_empty() {
            continue;
        }
        match width {
            None => width = Some(rec.len()),
            Some(w) if w != rec.len() => {
                return Err(Error::Parse {
                    row: line,
                    col: rec.len().min(w) + 1,
                    msg: format!("expected {w} columns, found {}", rec.len()),
                })
            }
            _ => {}
        }
        for (j, cell) in rec.iter().enumerate() {
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                row: line,
                col: j + 1,
                msg: format!("'{cell}' is not a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse { row: line, col: j + 1, msg: format!("non-finite value '{cell}'") });
            }
            values.push(v);
        }
        rows += 1;
    }
    let width = width.ok_or(Error::EmptyData)?;
    Ok(DMatrix::from_row_slice(rows, width, &values))
}

/// 16-byte header (`n`, `d` as little-endian `u64`) then row-major `f64`.
pub fn parse_f64le(bytes: &[u8]) -> Result<DMatrix<f64>> {
    if bytes.len() < 16 {
        return Err(Error::Format("f64le file shorter than its 16-byte header".into()));
    }
    let n = u64::from_le_bytes(bytes[0..8].try_into().unwrap()) as usize;
    let d = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let expected = n.checked_mul(d).and_then(|c| c.checked_mul(8)).and_then(|c| c.checked_add(16));
    if expected != Some(bytes.len()) {
        return Err(Error::Format(format!("f64le header says {n}x{d} but the file has {} bytes", bytes.len())));
    }
    if n == 0 || d == 0 {
        return Err(Error::EmptyData);
    }
    let values: Vec<f64> =
        bytes[16..].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::Parse { row: i / d + 1, col: i % d + 1, msg: "non-finite value".into() });
    }
    Ok(DMatrix::from_row_slice(n, d, &values))
}

pub fn f64le_bytes(m: &DMatrix<f64>) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 8 * m.len());
    out.extend_from_slice(&(m.nrows() as u64).to_le_bytes());
    out.extend_from_slice(&(m.ncols() as u64).to_le_bytes());
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            out.extend_from_slice(&m[(r, c)].to_le_bytes());
        }
    }
    out
}

/// Shortest round-trip decimal representation, one row per line.
pub fn write_csv<W: Write>(m: &DMatrix<f64>, w: W) -> Result<()> {
    let mut w = BufWriter::new(w);
    for r in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|c| m[(r, c)].to_string()).collect();
        writeln!(w, "{}", row.join(","))?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_matrix(path: &Path, m: &DMatrix<f64>, format: DataFormat) -> Result<()> {
    match format {
        DataFormat::Csv => write_csv(m, fs::File::create(path)?),
        DataFormat::F64Le => Ok(fs::write(path, f64le_bytes(m))?),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format_version: u32,
    task: Task,
    k: usize,
    kernels: Vec<HeaderKernel>,
    run_seed: u64,
    total_features: usize,
    feature_batch: usize,
    block_count: Vec<usize>,
    block_rows: Vec<Vec<usize>>,
    store_frequencies: bool,
}

/// Kernel description with the bandwidth as its 16 hex digit bit pattern,
/// so the header length never depends on a data-derived bandwidth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HeaderKernel {
    family: KernelFamily,
    bandwidth_bits: String,
    dim: usize,
    feature_form: FeatureForm,
}

impl From<&KernelSpec> for HeaderKernel {
    fn from(s: &KernelSpec) -> Self {
        Self {
            family: s.family,
            bandwidth_bits: format!("{:016x}", s.bandwidth.to_bits()),
            dim: s.dim,
            feature_form: s.feature_form,
        }
    }
}

impl HeaderKernel {
    fn spec(&self) -> Result<KernelSpec> {
        let bits = match self.bandwidth_bits.len() {
            16 => u64::from_str_radix(&self.bandwidth_bits, 16).ok(),
            _ => None,
        }
        .ok_or_else(|| Error::Format(format!("bad bandwidth bits '{}'", self.bandwidth_bits)))?;
        let bandwidth = f64::from_bits(bits);
        let spec = if self.family.is_fourier() {
            KernelSpec::new(self.family, bandwidth, self.dim)?
        } else {
            KernelSpec { bandwidth, ..KernelSpec::linear(self.dim) }
        };
        Ok(spec.with_feature_form(self.feature_form))
    }
}

/// A fitted model together with the training budget it was fitted under.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelFile {
    pub task: Task,
    pub total_features: usize,
    pub feature_batch: usize,
    pub model: Fitted,
}

impl ModelFile {
    pub fn new(task: Task, model: Fitted, total_features: usize, feature_batch: usize) -> Result<Self> {
        if task.is_paired() != matches!(model, Fitted::Paired(_)) {
            return Err(Error::InvalidArgument(format!("task {task} does not match the model shape")));
        }
        Ok(Self { task, total_features, feature_batch, model })
    }

    fn sides(&self) -> Vec<&CoefficientModel> {
        match &self.model {
            Fitted::Single(m) => vec![m],
            Fitted::Paired(p) => vec![&p.left, &p.right],
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let sides = self.sides();
        let first = sides[0];
        let header = Header {
            format_version: FORMAT_VERSION,
            task: self.task,
            k: first.k(),
            kernels: sides.iter().map(|m| HeaderKernel::from(m.spec())).collect(),
            run_seed: first.run_seed(),
            total_features: self.total_features,
            feature_batch: self.feature_batch,
            block_count: sides.iter().map(|m| m.block_count()).collect(),
            block_rows: sides.iter().map(|m| m.blocks().iter().map(|b| b.alpha.nrows()).collect()).collect(),
            store_frequencies: first.store_frequencies(),
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for m in sides {
            let mut section = Vec::new();
            for b in m.blocks() {
                section.extend_from_slice(&b.index.to_le_bytes());
                for r in 0..b.alpha.nrows() {
                    for c in 0..b.alpha.ncols() {
                        section.extend_from_slice(&b.alpha[(r, c)].to_le_bytes());
                    }
                }
            }
            out.extend_from_slice(&(section.len() as u64).to_le_bytes());
            out.extend_from_slice(&section);
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor { bytes, pos: 0 };
        if cur.take(MAGIC.len())? != MAGIC {
            return Err(Error::Format("missing DSKC1 magic".into()));
        }
        let len = cur.u64()? as usize;
        let json = cur.take(len)?;
        let header: Header = serde_json::from_slice(json)?;
        if serde_json::to_vec(&header)? != json {
            return Err(Error::Format("header is not in canonical form".into()));
        }
        if header.format_version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported format version {}", header.format_version)));
        }
        let n_sides = if header.task.is_paired() { 2 } else { 1 };
        if header.kernels.len() != n_sides
            || header.block_count.len() != n_sides
            || header.block_rows.len() != n_sides
        {
            return Err(Error::Format("header section counts do not match the task".into()));
        }
        let mut models = Vec::with_capacity(n_sides);
        for s in 0..n_sides {
            let rows = &header.block_rows[s];
            if rows.len() != header.block_count[s] {
                return Err(Error::Format("block_rows disagrees with block_count".into()));
            }
            let section_len = cur.u64()? as usize;
            let mut sec = Cursor { bytes: cur.take(section_len)?, pos: 0 };
            let mut blocks = Vec::with_capacity(rows.len());
            for &r in rows {
                let index = sec.u64()?;
                let mut alpha = DMatrix::zeros(r, header.k);
                for i in 0..r {
                    for j in 0..header.k {
                        alpha[(i, j)] = sec.f64()?;
                    }
                }
                blocks.push(Block { index, alpha });
            }
            if sec.pos != sec.bytes.len() {
                return Err(Error::Format("trailing bytes in section".into()));
            }
            models.push(CoefficientModel::from_parts(
                header.k,
                header.kernels[s].spec()?,
                header.run_seed,
                blocks,
                header.store_frequencies,
            )?);
        }
        if cur.pos != bytes.len() {
            return Err(Error::Format("trailing bytes after the last section".into()));
        }
        let model = if n_sides == 2 {
            let right = models.pop().unwrap();
            let left = models.pop().unwrap();
            Fitted::Paired(PairedModel::new(left, right)?)
        } else {
            Fitted::Single(models.pop().unwrap())
        };
        Ok(Self {
            task: header.task,
            total_features: header.total_features,
            feature_batch: header.feature_batch,
            model,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        Ok(fs::write(path, self.to_bytes()?)?)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path)
            .map_err(|e| std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))?;
        Self::from_bytes(&bytes)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Format("unexpected end of model file".into()))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_model;

    #[test]
    fn csv_examples() {
        let m = parse_csv(b"1,2\n3,4", false).unwrap();
        assert_eq!(m, DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]));
        let h = parse_csv(b"a,b\n1, 2\n", true).unwrap();
        assert_eq!(h, DMatrix::from_row_slice(1, 2, &[1.0, 2.0]));
    }

    #[test]
    fn csv_errors_name_the_cell() {
        match parse_csv(b"abc,1\n", false) {
            Err(Error::Parse { row: 1, col: 1, .. }) => {}
            other => panic!("{other:?}"),
        }
        match parse_csv(b"1,2\n3,x\n", false) {
            Err(Error::Parse { row: 2, col: 2, .. }) => {}
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse_csv(b"1,2\n3\n", false), Err(Error::Parse { row: 2, .. })));
        assert!(matches!(parse_csv(b"1,NaN\n", false), Err(Error::Parse { row: 1, col: 2, .. })));
        assert!(matches!(parse_csv(b"", false), Err(Error::EmptyData)));
    }

    #[test]
    fn f64le_round_trip_is_bit_exact() {
        let m = DMatrix::from_fn(10, 3, |r, c| ((r * 7 + c) as f64).sin() * 1e3 + 1e-300);
        let back = parse_f64le(&f64le_bytes(&m)).unwrap();
        assert!(m.iter().zip(back.iter()).all(|(a, b)| a.to_bits() == b.to_bits()));
        let mut bad = f64le_bytes(&m);
        bad.pop();
        assert!(parse_f64le(&bad).is_err());
    }

    #[test]
    fn csv_writer_round_trips() {
        let m = DMatrix::from_fn(4, 2, |r, c| 1.0 / (r as f64 + 3.0) - c as f64 * 1e-17);
        let mut buf = Vec::new();
        write_csv(&m, &mut buf).unwrap();
        assert_eq!(parse_csv(&buf, false).unwrap(), m);
    }

    #[test]
    fn model_file_round_trip() {
        let spec = KernelSpec::gaussian(0.7, 2).unwrap();
        let mut m = init_model(&spec, 3, 8, 5).unwrap();
        let b = m.next_block(6).unwrap();
        m.append_block(&b, DMatrix::from_fn(6, 3, |r, c| (r + 2 * c) as f64 * 0.1)).unwrap();
        let file = ModelFile::new(Task::Gha, Fitted::Single(m.clone()), 6, 6).unwrap();
        let bytes = file.to_bytes().unwrap();
        assert_eq!(&bytes[..5], b"DSKC1");
        let back = ModelFile::from_bytes(&bytes).unwrap();
        assert_eq!(back, file);
        assert_eq!(back.to_bytes().unwrap(), bytes);
        let x = DMatrix::from_fn(5, 2, |r, c| r as f64 - c as f64);
        let (a, b) = (m.evaluate(&x).unwrap(), back.model.single().unwrap().evaluate(&x).unwrap());
        assert!(a.iter().zip(b.iter()).all(|(p, q)| p.to_bits() == q.to_bits()));

        let pair = PairedModel::init(&spec, &KernelSpec::linear(4), 2, 8, 4, 1).unwrap();
        let file = ModelFile::new(Task::Kcca, Fitted::Paired(pair), 8, 8).unwrap();
        let bytes = file.to_bytes().unwrap();
        assert_eq!(ModelFile::from_bytes(&bytes).unwrap().to_bytes().unwrap(), bytes);
        assert!(ModelFile::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        assert!(ModelFile::new(Task::Kpca, file.model.clone(), 8, 8).is_err());
    }
}
