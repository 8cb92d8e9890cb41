//! Readers and writers for fields, measures and pipeline outputs.
//!
//! Every float is written in shortest round-trip form, so reading a file back
//! reproduces the in-memory value bit for bit.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::boxgrid::{BoxGrid, BoxSet};
use crate::error::{Error, Result};
use crate::flowfield::{GriddedField, GriddedManifest};
use crate::ftle::FtleField;
use crate::partition::{CoherentPartition, SearchEnd};
use crate::sparse::Csr;
use crate::spectral::{CoherenceVectors, LeadingPairReport};
use crate::ulam::TransitionSystem;

pub const MANIFEST: &str = "manifest.json";
pub const METADATA: &str = "metadata.json";
pub const MATRIX: &str = "matrix.txt";
pub const COUNTS: &str = "counts.txt";
pub const P_FILE: &str = "p.txt";
pub const Q_FILE: &str = "q.txt";
pub const X_FILE: &str = "x.csv";
pub const Y_FILE: &str = "y.csv";
pub const PARTITION_X: &str = "partition_x.csv";
pub const PARTITION_Y: &str = "partition_y.csv";

/// Version of the output layout and of [`RunMetadata`].
pub const FORMAT_VERSION: u32 = 1;

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| Error::io(path, e))
}

fn finish(mut w: BufWriter<File>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

/// Name of snapshot `k` inside a gridded-field directory.
pub fn snapshot_name(k: usize) -> String {
    format!("t{k:05}.f64")
}

/// Load `manifest.json` and the little-endian snapshot files beside it.
pub fn read_gridded_field<const D: usize>(dir: &Path) -> Result<GriddedField<D>> {
    let mpath = dir.join(MANIFEST);
    let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let manifest: GriddedManifest =
        serde_json::from_str(&text).map_err(|e| Error::ManifestInvalid(format!("{}: {e}", mpath.display())))?;
    let per_snapshot = manifest.axes.iter().map(Vec::len).product::<usize>() * manifest.components;
    let mut snapshots = Vec::with_capacity(manifest.times.len());
    for k in 0..manifest.times.len() {
        let path = dir.join(snapshot_name(k));
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        if bytes.len() != per_snapshot * 8 {
            return Err(Error::SizeMismatch { path, expected: per_snapshot, found: bytes.len() / 8 });
        }
        snapshots.push(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect());
    }
    GriddedField::new(manifest, snapshots)
}

pub fn write_gridded_field<const D: usize>(dir: &Path, field: &GriddedField<D>) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_json(&dir.join(MANIFEST), field.manifest())?;
    for (k, snap) in field.snapshots().iter().enumerate() {
        let path = dir.join(snapshot_name(k));
        let mut w = create(&path)?;
        for v in snap {
            w.write_all(&v.to_le_bytes()).map_err(|e| Error::io(&path, e))?;
        }
        finish(w, &path)?;
    }
    Ok(())
}

/// One nonnegative weight per line; blank lines and `#` comments are skipped.
pub fn read_weights(path: &Path) -> Result<Vec<f64>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| l.parse::<f64>().map_err(|e| Error::parse(path, format!("{l:?}: {e}"))))
        .collect()
}

pub fn write_weights(path: &Path, w: &[f64]) -> Result<()> {
    let mut out = create(path)?;
    for v in w {
        writeln!(out, "{v:?}").map_err(|e| Error::io(path, e))?;
    }
    finish(out, path)
}

/// Sparse matrix as a `# nrows ncols nnz` header and `i j value` lines.
pub fn write_triplets<T: Copy + std::fmt::Debug>(path: &Path, a: &Csr<T>) -> Result<()> {
    let mut out = create(path)?;
    let io = |e| Error::io(path, e);
    writeln!(out, "# {} {} {}", a.nrows(), a.ncols(), a.nnz()).map_err(io)?;
    for (i, j, v) in a.triplets() {
        writeln!(out, "{i} {j} {v:?}").map_err(io)?;
    }
    finish(out, path)
}

pub fn read_triplets<T: Copy + std::str::FromStr>(path: &Path) -> Result<Csr<T>>
where
    T::Err: std::fmt::Display,
{
    let mut lines = open(path)?.lines();
    let header = lines.next().ok_or_else(|| Error::parse(path, "empty file"))?.map_err(|e| Error::io(path, e))?;
    let dims: Vec<usize> = header
        .trim_start_matches('#')
        .split_whitespace()
        .map(|s| s.parse().map_err(|e| Error::parse(path, format!("header: {e}"))))
        .collect::<Result<_>>()?;
    let [nrows, ncols, nnz] = dims[..] else {
        return Err(Error::parse(path, "header must be `# nrows ncols nnz`"));
    };
    let mut rows: Vec<Vec<(usize, T)>> = vec![Vec::new(); nrows];
    let mut seen = 0;
    for (ln, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |m: String| Error::parse(path, format!("line {}: {m}", ln + 2));
        let mut it = line.split_whitespace();
        let (Some(i), Some(j), Some(v), None) = (it.next(), it.next(), it.next(), it.next()) else {
            return Err(bad("expected `i j value`".into()));
        };
        let i: usize = i.parse().map_err(|e| bad(format!("{e}")))?;
        let j: usize = j.parse().map_err(|e| bad(format!("{e}")))?;
        let v: T = v.parse().map_err(|e: T::Err| bad(e.to_string()))?;
        if i >= nrows {
            return Err(bad(format!("row {i} out of range")));
        }
        rows[i].push((j, v));
        seen += 1;
    }
    if seen != nnz {
        return Err(Error::SizeMismatch { path: path.to_path_buf(), expected: nnz, found: seen });
    }
    Csr::from_rows(ncols, rows)
}

/// Box indices and centres for the rows or columns of a transition system.
fn box_rows(grid: Option<(&BoxGrid, Option<&[usize]>)>, len: usize) -> Vec<(usize, Vec<f64>)> {
    match grid {
        Some((g, map)) => (0..len)
            .map(|k| {
                let idx = map.map_or(k, |m| m[k]);
                (idx, g.center(idx))
            })
            .collect(),
        None => (0..len).map(|k| (k, Vec::new())).collect(),
    }
}

/// `box_index, center_0.., value` per row.
pub fn write_vector_csv(path: &Path, rows: &[(usize, Vec<f64>)], values: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    let dim = rows.first().map_or(0, |r| r.1.len());
    let mut header = vec!["box_index".to_string()];
    header.extend((0..dim).map(|a| format!("center_{a}")));
    header.push("value".into());
    w.write_record(&header).map_err(|e| csv_err(path, e))?;
    for ((idx, c), v) in rows.iter().zip(values) {
        let mut rec = vec![idx.to_string()];
        rec.extend(c.iter().map(|x| format!("{x:?}")));
        rec.push(format!("{v:?}"));
        w.write_record(&rec).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Box indices and the last column of a vector CSV.
pub fn read_vector_csv(path: &Path) -> Result<(Vec<usize>, Vec<f64>)> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut idx = Vec::new();
    let mut vals = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let first = rec.get(0).ok_or_else(|| Error::parse(path, "empty record"))?;
        let last = rec.get(rec.len() - 1).unwrap();
        idx.push(first.parse().map_err(|e| Error::parse(path, format!("{first:?}: {e}")))?);
        vals.push(last.parse().map_err(|e| Error::parse(path, format!("{last:?}: {e}")))?);
    }
    Ok((idx, vals))
}

/// `box_index, label` with label 1 for members of `set` and 2 otherwise.
pub fn write_partition_csv(path: &Path, indices: &[usize], set: &BoxSet) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(["box_index", "label"]).map_err(|e| csv_err(path, e))?;
    for (k, idx) in indices.iter().enumerate() {
        let label = if set.contains(k) { "1" } else { "2" };
        w.write_record([idx.to_string().as_str(), label]).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Labels read back as the set of rows labelled 1.
pub fn read_partition_csv(path: &Path) -> Result<BoxSet> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut mask = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        match rec.get(1) {
            Some("1") => mask.push(true),
            Some("2") => mask.push(false),
            other => return Err(Error::parse(path, format!("bad label {other:?}"))),
        }
    }
    Ok(BoxSet::from_mask(&mask))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::parse(path, format!("{other:?}")),
    }
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| Error::parse(path, e))?;
    writeln!(w).map_err(|e| Error::io(path, e))?;
    finish(w, path)
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::parse(path, e))
}

/// Thresholds may be infinite, which JSON numbers cannot hold.
mod extended_float {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            Repr::Num(*v)
        } else if v.is_nan() {
            Repr::Text("nan".into())
        } else if *v > 0.0 {
            Repr::Text("inf".into())
        } else {
            Repr::Text("-inf".into())
        }
        .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) => match t.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                _ => Err(serde::de::Error::custom(format!("unexpected float {t:?}"))),
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartitionSummary {
    #[serde(with = "extended_float")]
    pub b_star: f64,
    #[serde(with = "extended_float")]
    pub c_star: f64,
    pub rho1: f64,
    pub rho2: f64,
    pub mass_x1: f64,
    pub mass_y1: f64,
    pub search_end: SearchEnd,
    /// Fresh-advection estimates of the two ratios, when computed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho1_pointwise: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho2_pointwise: Option<f64>,
}

impl PartitionSummary {
    pub fn new(part: &CoherentPartition) -> Self {
        Self {
            b_star: part.b_star,
            c_star: part.c_star,
            rho1: part.rho1,
            rho2: part.rho2,
            mass_x1: part.mass_x1,
            mass_y1: part.mass_y1,
            search_end: part.search_end,
            rho1_pointwise: None,
            rho2_pointwise: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub format_version: u32,
    /// The configuration that produced the run, sufficient to replay it.
    pub config: serde_json::Value,
    pub m: usize,
    pub n: usize,
    pub nnz: usize,
    pub samples_per_box: usize,
    pub lost_mass: f64,
    pub pruned_mass: f64,
    pub sigma2: f64,
    pub residual: f64,
    pub iterations: usize,
    pub components: usize,
    /// Source boxes (the rows) and image covering (the columns).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_grid: Option<BoxGrid>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_grid: Option<BoxGrid>,
    pub leading_pair: LeadingPairReport,
    pub partition: PartitionSummary,
    /// Wall-clock seconds per stage.
    pub timings: BTreeMap<String, f64>,
    /// Files written alongside this one.
    pub files: Vec<String>,
}

/// Everything a run writes.
pub struct RunOutputs<'a> {
    pub ts: &'a TransitionSystem,
    pub cv: &'a CoherenceVectors,
    pub partition: &'a CoherentPartition,
    pub metadata: RunMetadata,
    pub write_counts: bool,
}

/// Write a run directory. Returns the paths written.
pub fn write_outputs(dir: &Path, out: RunOutputs<'_>) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let RunOutputs { ts, cv, partition, mut metadata, write_counts } = out;
    let mut written = Vec::new();
    let mut push = |name: &str| {
        let p = dir.join(name);
        written.push(p.clone());
        p
    };
    write_triplets(&push(MATRIX), &ts.matrix)?;
    if write_counts {
        if let Some(c) = &ts.counts {
            write_triplets(&push(COUNTS), c)?;
        }
    }
    write_weights(&push(P_FILE), &ts.p)?;
    write_weights(&push(Q_FILE), &ts.q)?;
    let geom = ts.geometry.as_ref();
    let xrows = box_rows(geom.map(|g| (&g.source, Some(g.source_boxes.as_slice()))), ts.m());
    let yrows = box_rows(geom.map(|g| (&g.image, None)), ts.n());
    write_vector_csv(&push(X_FILE), &xrows, &cv.x)?;
    write_vector_csv(&push(Y_FILE), &yrows, &cv.y)?;
    let xi: Vec<usize> = xrows.iter().map(|r| r.0).collect();
    let yi: Vec<usize> = yrows.iter().map(|r| r.0).collect();
    write_partition_csv(&push(PARTITION_X), &xi, &partition.x1)?;
    write_partition_csv(&push(PARTITION_Y), &yi, &partition.y1)?;
    let meta_path = push(METADATA);
    metadata.files = written.iter().filter_map(|p| p.file_name()).map(|s| s.to_string_lossy().into_owned()).collect();
    write_json(&meta_path, &metadata)?;
    Ok(written)
}

/// `coord_0.., ftle` per lattice point; failed points hold `nan`.
pub fn write_ftle_csv(path: &Path, field: &FtleField) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    let dim = field.lattice.counts.len();
    let names = ["x", "y", "z"];
    let mut header: Vec<&str> = names[..dim.min(3)].to_vec();
    header.push("ftle");
    w.write_record(&header).map_err(|e| csv_err(path, e))?;
    for (k, v) in field.values.iter().enumerate() {
        let mut rec: Vec<String> = field.lattice.point(k).iter().map(|c| format!("{c:?}")).collect();
        rec.push(v.map_or("nan".into(), |v| format!("{v:?}")));
        w.write_record(&rec).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// 8-bit binary PGM of a 2-D field, north up. Finite values map onto
/// `1..=255` over their range; failed points are 0.
pub fn write_ftle_pgm(path: &Path, field: &FtleField) -> Result<()> {
    let counts = &field.lattice.counts;
    if counts.len() != 2 {
        return Err(Error::Config(format!("raster output needs a 2-D lattice, got {}-D", counts.len())));
    }
    let (w, h) = (counts[0], counts[1]);
    let (lo, hi) = field.range().unwrap_or((0.0, 0.0));
    let scale = if hi > lo { 254.0 / (hi - lo) } else { 0.0 };
    let mut bytes = Vec::with_capacity(w * h);
    for row in (0..h).rev() {
        for col in 0..w {
            bytes.push(match field.values[row * w + col] {
                Some(v) => 1 + ((v - lo) * scale).round() as u8,
                None => 0,
            });
        }
    }
    let mut out = create(path)?;
    write!(out, "P5\n{w} {h}\n255\n").map_err(|e| Error::io(path, e))?;
    out.write_all(&bytes).map_err(|e| Error::io(path, e))?;
    finish(out, path)
}
