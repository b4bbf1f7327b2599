//! Point cloud data model and its CSV / binary file formats.
//!
//! CSV: header `x,y,z,f0,..,f{D-1}[,label]`, one point per row, `.` decimal
//! separator. Binary (`FPTC`): little-endian; magic, version `u32`, `N u64`,
//! `D u32`, `has_labels u8`, then all coordinates (`3N` f64, row-major), all
//! features (`N*D` f64, row-major) and, when present, `N` u32 labels.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const CLOUD_MAGIC: &[u8; 4] = b"FPTC";
pub const CLOUD_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub points: Vec<[f64; 3]>,
    /// Row-major `len() x feature_dim`.
    pub features: Vec<f64>,
    pub feature_dim: usize,
    pub labels: Option<Vec<u32>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CloudFormat {
    Csv,
    Binary,
}

impl CloudFormat {
    /// `.csv` maps to CSV, anything else to the binary format.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => CloudFormat::Csv,
            _ => CloudFormat::Binary,
        }
    }
}

impl PointCloud {
    pub fn new(
        points: Vec<[f64; 3]>,
        features: Vec<f64>,
        feature_dim: usize,
        labels: Option<Vec<u32>>,
    ) -> Result<Self> {
        let cloud = Self { points, features, feature_dim, labels };
        cloud.validate()?;
        Ok(cloud)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn feature(&self, n: usize) -> &[f64] {
        &self.features[n * self.feature_dim..(n + 1) * self.feature_dim]
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.points.len();
        if self.features.len() != n * self.feature_dim {
            return Err(Error::Format(format!(
                "{} feature values for {} points of width {}",
                self.features.len(),
                n,
                self.feature_dim
            )));
        }
        if let Some(labels) = &self.labels {
            if labels.len() != n {
                return Err(Error::Format(format!("{} labels for {} points", labels.len(), n)));
            }
        }
        if let Some(i) = self.points.iter().position(|p| p.iter().any(|c| !c.is_finite())) {
            return Err(Error::Format(format!("non-finite coordinate at point {i}")));
        }
        if let Some(i) = self.features.iter().position(|f| !f.is_finite()) {
            return Err(Error::Format(format!("non-finite feature at point {}", i / self.feature_dim.max(1))));
        }
        Ok(())
    }

    /// Axis-aligned bounding box `(min, max)`; `None` for an empty cloud.
    pub fn bounds(&self) -> Option<([f64; 3], [f64; 3])> {
        let first = *self.points.first()?;
        let mut lo = first;
        let mut hi = first;
        for p in &self.points[1..] {
            for a in 0..3 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        Some((lo, hi))
    }
}

pub fn load_cloud(path: &Path, format: CloudFormat) -> Result<PointCloud> {
    let file = File::open(path)?;
    let cloud = match format {
        CloudFormat::Csv => read_csv(BufReader::new(file))?,
        CloudFormat::Binary => read_binary(BufReader::new(file))?,
    };
    cloud.validate()?;
    Ok(cloud)
}

pub fn save_cloud(cloud: &PointCloud, path: &Path, format: CloudFormat) -> Result<()> {
    cloud.validate()?;
    let mut w = BufWriter::new(File::create(path)?);
    match format {
        CloudFormat::Csv => write_csv(cloud, &mut w)?,
        CloudFormat::Binary => write_binary(cloud, &mut w)?,
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(e) => Error::Io(e),
        other => Error::Format(format!("{other:?}")),
    }
}

fn write_csv<W: Write>(cloud: &PointCloud, w: &mut W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut header: Vec<String> = ["x", "y", "z"].map(String::from).to_vec();
    header.extend((0..cloud.feature_dim).map(|d| format!("f{d}")));
    if cloud.labels.is_some() {
        header.push("label".into());
    }
    out.write_record(&header).map_err(csv_err)?;
    let mut row = Vec::with_capacity(header.len());
    for n in 0..cloud.len() {
        row.clear();
        row.extend(cloud.points[n].iter().chain(cloud.feature(n)).map(f64::to_string));
        if let Some(labels) = &cloud.labels {
            row.push(labels[n].to_string());
        }
        out.write_record(&row).map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

fn read_csv<R: Read>(r: R) -> Result<PointCloud> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
    let cols: Vec<String> = reader.headers().map_err(csv_err)?.iter().map(String::from).collect();
    if cols.len() < 3 || cols[..3] != ["x", "y", "z"] {
        return Err(Error::Format(format!("header must start with x,y,z: {cols:?}")));
    }
    let has_labels = cols.last().map(String::as_str) == Some("label");
    let feature_dim = cols.len() - 3 - usize::from(has_labels);
    for (d, name) in cols[3..3 + feature_dim].iter().enumerate() {
        if *name != format!("f{d}") {
            return Err(Error::Format(format!("unexpected column {name:?}, expected f{d}")));
        }
    }

    let mut points = Vec::new();
    let mut features = Vec::new();
    let mut labels = has_labels.then(Vec::new);
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(csv_err)?;
        let parse = |s: &str| -> Result<f64> {
            let v: f64 = s
                .parse()
                .map_err(|_| Error::Format(format!("row {}: bad number {s:?}", row + 1)))?;
            if !v.is_finite() {
                return Err(Error::Format(format!("row {}: non-finite value {s:?}", row + 1)));
            }
            Ok(v)
        };
        points.push([parse(&record[0])?, parse(&record[1])?, parse(&record[2])?]);
        for f in record.iter().skip(3).take(feature_dim) {
            features.push(parse(f)?);
        }
        if let Some(labels) = labels.as_mut() {
            let s = &record[cols.len() - 1];
            let label: u32 = s
                .parse()
                .map_err(|_| Error::Format(format!("row {}: bad label {s:?}", row + 1)))?;
            labels.push(label);
        }
    }
    Ok(PointCloud { points, features, feature_dim, labels })
}

fn write_binary<W: Write>(cloud: &PointCloud, w: &mut W) -> Result<()> {
    w.write_all(CLOUD_MAGIC)?;
    w.write_all(&CLOUD_VERSION.to_le_bytes())?;
    w.write_all(&(cloud.len() as u64).to_le_bytes())?;
    w.write_all(&(cloud.feature_dim as u32).to_le_bytes())?;
    w.write_all(&[u8::from(cloud.labels.is_some())])?;
    for p in &cloud.points {
        for c in p {
            w.write_all(&c.to_le_bytes())?;
        }
    }
    for f in &cloud.features {
        w.write_all(&f.to_le_bytes())?;
    }
    if let Some(labels) = &cloud.labels {
        for l in labels {
            w.write_all(&l.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_exact_array<const N: usize, R: Read>(r: &mut R) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::Format("truncated file".into()),
        _ => Error::Io(e),
    })?;
    Ok(buf)
}

fn read_binary<R: Read>(mut r: R) -> Result<PointCloud> {
    let magic: [u8; 4] = read_exact_array(&mut r)?;
    if &magic != CLOUD_MAGIC {
        return Err(Error::Format(format!("bad magic {magic:?}")));
    }
    let version = u32::from_le_bytes(read_exact_array(&mut r)?);
    if version != CLOUD_VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let n = u64::from_le_bytes(read_exact_array(&mut r)?) as usize;
    let feature_dim = u32::from_le_bytes(read_exact_array(&mut r)?) as usize;
    let has_labels = match read_exact_array::<1, _>(&mut r)?[0] {
        0 => false,
        1 => true,
        other => return Err(Error::Format(format!("bad label flag {other}"))),
    };
    let read_f64 = |r: &mut R| -> Result<f64> { Ok(f64::from_le_bytes(read_exact_array(r)?)) };
    let mut points = Vec::with_capacity(n);
    for _ in 0..n {
        points.push([read_f64(&mut r)?, read_f64(&mut r)?, read_f64(&mut r)?]);
    }
    let mut features = Vec::with_capacity(n * feature_dim);
    for _ in 0..n * feature_dim {
        features.push(read_f64(&mut r)?);
    }
    let labels = if has_labels {
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            labels.push(u32::from_le_bytes(read_exact_array(&mut r)?));
        }
        Some(labels)
    } else {
        None
    };
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(Error::Format("trailing bytes after payload".into()));
    }
    Ok(PointCloud { points, features, feature_dim, labels })
}
