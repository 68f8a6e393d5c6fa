//! Dataset ingestion (fvecs, CSV), synthetic Gaussian clusters and the
//! intra-cluster sketch variance metric.

use std::fs;
use std::io::Read;
use std::path::Path;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::code::BinaryCode;
use crate::error::{HqhError, Result};
use crate::matrix::DataMatrix;
use crate::seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterSpec {
    pub n_clusters: usize,
    pub points_per_cluster: usize,
    pub d: usize,
    pub centroid_scale: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl ClusterSpec {
    /// Six clusters of 1000 points in 960 dimensions.
    pub fn standard(seed: u64) -> Self {
        ClusterSpec {
            n_clusters: 6,
            points_per_cluster: 1000,
            d: 960,
            centroid_scale: 10.0,
            noise_sigma: 1.0,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n_clusters == 0 || self.points_per_cluster == 0 || self.d == 0 {
            return Err(HqhError::invalid("cluster counts and dimension must be positive"));
        }
        if !(self.centroid_scale > 0.0 && self.centroid_scale.is_finite()) {
            return Err(HqhError::invalid("centroid_scale must be positive"));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(HqhError::invalid("noise_sigma must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset {
    pub data: DataMatrix,
    pub labels: Vec<usize>,
    pub centroids: DMatrix<f64>,
}

impl LabeledDataset {
    pub fn select(&self, indices: &[usize]) -> LabeledDataset {
        LabeledDataset {
            data: self.data.select(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            centroids: self.centroids.clone(),
        }
    }
}

/// Centroids uniform in `[−s, s]^d`, then exactly `points_per_cluster`
/// isotropic Gaussian points around each, cluster by cluster.
pub fn generate_clusters(spec: &ClusterSpec) -> Result<LabeledDataset> {
    spec.validate()?;
    let (c, m, d) = (spec.n_clusters, spec.points_per_cluster, spec.d);
    let mut rng = seed::derive_rng(spec.seed, "cluster-centroids", 0);
    let centroids = DMatrix::from_fn(d, c, |_, _| rng.random_range(-spec.centroid_scale..=spec.centroid_scale));

    let noise = Normal::new(0.0, spec.noise_sigma).map_err(|e| HqhError::invalid(e.to_string()))?;
    let mut values = Vec::with_capacity(d * c * m);
    let mut labels = Vec::with_capacity(c * m);
    for k in 0..c {
        let mut rng = seed::derive_rng(spec.seed, "cluster-points", k as u64);
        let centroid = centroids.column(k);
        for _ in 0..m {
            values.extend(centroid.iter().map(|&mu| mu + noise.sample(&mut rng)));
            labels.push(k);
        }
    }
    Ok(LabeledDataset {
        data: DataMatrix::from_column_major(d, c * m, values)?,
        labels,
        centroids,
    })
}

/// Per cluster and bit, the population variance of the `±1` values
/// (`1 − mean²`); averaged over bits, then over clusters.
pub fn sketch_variance(codes: &[BinaryCode], labels: &[usize]) -> Result<f64> {
    if codes.len() != labels.len() {
        return Err(HqhError::DimensionMismatch {
            context: "sketch variance labels",
            expected: codes.len(),
            found: labels.len(),
        });
    }
    let Some(&max_label) = labels.iter().max() else {
        return Err(HqhError::invalid("sketch variance of an empty code set"));
    };
    let bits = codes[0].len();
    let clusters = max_label + 1;
    let mut sums = vec![vec![0i64; bits]; clusters];
    let mut counts = vec![0usize; clusters];
    for (code, &label) in codes.iter().zip(labels) {
        if code.len() != bits {
            return Err(HqhError::DimensionMismatch {
                context: "sketch variance code length",
                expected: bits,
                found: code.len(),
            });
        }
        counts[label] += 1;
        for (k, s) in sums[label].iter_mut().enumerate() {
            *s += code.sign(k) as i64;
        }
    }
    if let Some(empty) = counts.iter().position(|&n| n == 0) {
        return Err(HqhError::invalid(format!("cluster {empty} has no points")));
    }
    let total: f64 = sums
        .iter()
        .zip(&counts)
        .map(|(s, &n)| {
            s.iter()
                .map(|&v| {
                    let mean = v as f64 / n as f64;
                    1.0 - mean * mean
                })
                .sum::<f64>()
                / bits as f64
        })
        .sum();
    Ok(total / clusters as f64)
}

/// Parses TexMex `.fvecs`: per record a little-endian `i32` dimension then
/// that many `f32` values.
pub fn fvecs_from_bytes(bytes: &[u8]) -> Result<DataMatrix> {
    let mut pos = 0usize;
    let mut dim: Option<usize> = None;
    let mut values = Vec::new();
    let mut n = 0usize;
    while pos < bytes.len() {
        let truncated = |offset: usize| HqhError::Truncated {
            section: "fvecs record",
            offset: offset as u64,
        };
        let header = bytes.get(pos..pos + 4).ok_or_else(|| truncated(pos))?;
        let raw = i32::from_le_bytes(header.try_into().unwrap());
        if raw <= 0 {
            return Err(HqhError::Parse {
                format: "fvecs",
                location: format!("record {n}, byte {pos}"),
                message: format!("non-positive dimension {raw}"),
            });
        }
        let d = raw as usize;
        match dim {
            None => dim = Some(d),
            Some(expected) if expected != d => {
                return Err(HqhError::Parse {
                    format: "fvecs",
                    location: format!("record {n}, byte {pos}"),
                    message: format!("dimension {d} differs from {expected}"),
                })
            }
            _ => {}
        }
        let body = bytes.get(pos + 4..pos + 4 + 4 * d).ok_or_else(|| truncated(pos))?;
        values.extend(body.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64));
        pos += 4 + 4 * d;
        n += 1;
    }
    match dim {
        None => Ok(DataMatrix::empty()),
        Some(d) => DataMatrix::from_column_major(d, n, values),
    }
}

/// Inverse of [`fvecs_from_bytes`]; values are stored as `f32`.
pub fn fvecs_to_bytes(x: &DataMatrix) -> Vec<u8> {
    let d = x.dim();
    let mut out = Vec::with_capacity(x.len() * (4 + 4 * d));
    for point in x.points() {
        out.extend((d as i32).to_le_bytes());
        for &v in point {
            out.extend((v as f32).to_le_bytes());
        }
    }
    out
}

pub fn load_fvecs(path: impl AsRef<Path>) -> Result<DataMatrix> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| HqhError::io(path, e))?;
    fvecs_from_bytes(&bytes)
}

pub fn write_fvecs(path: impl AsRef<Path>, x: &DataMatrix) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, fvecs_to_bytes(x)).map_err(|e| HqhError::io(path, e))
}

/// One point per row, numeric cells only.
pub fn read_csv<R: Read>(input: R, has_header: bool) -> Result<DataMatrix> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(input);
    let mut values = Vec::new();
    let mut d = None;
    let mut n = 0;
    for record in reader.records() {
        let record = record.map_err(|e| HqhError::Parse {
            format: "csv",
            location: e
                .position()
                .map_or_else(|| "unknown line".into(), |p| format!("line {}", p.line())),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if *d.get_or_insert(record.len()) != record.len() {
            return Err(HqhError::Parse {
                format: "csv",
                location: format!("line {line}"),
                message: format!("expected {} fields, found {}", d.unwrap(), record.len()),
            });
        }
        for (col, cell) in record.iter().enumerate() {
            let v: f64 = cell.parse().map_err(|_| HqhError::Parse {
                format: "csv",
                location: format!("line {line}, column {}", col + 1),
                message: format!("`{cell}` is not a number"),
            })?;
            values.push(v);
        }
        n += 1;
    }
    match d {
        None => Ok(DataMatrix::empty()),
        Some(d) => DataMatrix::from_column_major(d, n, values),
    }
}

pub fn load_csv(path: impl AsRef<Path>, has_header: bool) -> Result<DataMatrix> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| HqhError::io(path, e))?;
    read_csv(std::io::BufReader::new(file), has_header)
}

/// One point per row; `comment`, if given, becomes a leading `# ` line.
/// Values are written in shortest round-trip form.
pub fn csv_to_string(x: &DataMatrix, comment: Option<&str>) -> String {
    let mut out = String::new();
    if let Some(c) = comment {
        out.push_str("# ");
        out.push_str(c);
        out.push('\n');
    }
    for p in x.points() {
        let row: Vec<String> = p.iter().map(|v| v.to_string()).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub fn write_csv(path: impl AsRef<Path>, x: &DataMatrix, comment: Option<&str>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, csv_to_string(x, comment)).map_err(|e| HqhError::io(path, e))
}

/// Writes by extension, mirroring [`load_dataset`]. Only CSV carries the comment.
pub fn write_dataset(path: impl AsRef<Path>, x: &DataMatrix, comment: Option<&str>) -> Result<()> {
    let path = path.as_ref();
    match path.extension().and_then(|e| e.to_str()) {
        Some("fvecs") => write_fvecs(path, x),
        _ => write_csv(path, x, comment),
    }
}

/// Loads by extension: `.fvecs` as TexMex, anything else as headerless CSV.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<DataMatrix> {
    let path = path.as_ref();
    match path.extension().and_then(|e| e.to_str()) {
        Some("fvecs") => load_fvecs(path),
        _ => load_csv(path, false),
    }
}

/// One label per line, after an optional `# ` comment line.
pub fn write_labels(path: impl AsRef<Path>, labels: &[usize], comment: Option<&str>) -> Result<()> {
    let path = path.as_ref();
    let mut text = comment.map(|c| format!("# {c}\n")).unwrap_or_default();
    text.extend(labels.iter().map(|l| format!("{l}\n")));
    fs::write(path, text).map_err(|e| HqhError::io(path, e))
}

pub fn read_labels(path: impl AsRef<Path>) -> Result<Vec<usize>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| HqhError::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'))
        .map(|(i, l)| {
            l.trim().parse().map_err(|_| HqhError::Parse {
                format: "labels",
                location: format!("line {}", i + 1),
                message: format!("`{l}` is not a cluster index"),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_writer_round_trips() {
        let x = DataMatrix::from_points(&[vec![0.1, -2.5e-7], vec![3.0, 1.0 / 3.0]]).unwrap();
        let text = csv_to_string(&x, Some("config: {}"));
        assert!(text.starts_with("# config: {}\n"));
        assert_eq!(read_csv(text.as_bytes(), false).unwrap(), x);
    }

    fn small_spec(seed: u64) -> ClusterSpec {
        ClusterSpec {
            n_clusters: 3,
            points_per_cluster: 400,
            d: 5,
            centroid_scale: 10.0,
            noise_sigma: 0.5,
            seed,
        }
    }

    #[test]
    fn clusters_are_seeded_and_balanced() {
        let a = generate_clusters(&small_spec(1)).unwrap();
        assert_eq!(a, generate_clusters(&small_spec(1)).unwrap());
        assert_ne!(a.data, generate_clusters(&small_spec(2)).unwrap().data);
        assert_eq!(a.data.len(), 1200);
        for k in 0..3 {
            assert_eq!(a.labels.iter().filter(|&&l| l == k).count(), 400);
        }
        assert!(a.centroids.iter().all(|v| v.abs() <= 10.0));
    }

    #[test]
    fn cluster_means_sit_near_centroids() {
        let spec = small_spec(3);
        let ds = generate_clusters(&spec).unwrap();
        let limit = 4.0 * spec.noise_sigma / (spec.points_per_cluster as f64).sqrt();
        for k in 0..3 {
            let idx: Vec<usize> = (0..ds.labels.len()).filter(|&t| ds.labels[t] == k).collect();
            let mean = ds.data.select(&idx).mean();
            for i in 0..spec.d {
                assert!((mean[i] - ds.centroids[(i, k)]).abs() <= limit);
            }
        }
    }

    #[test]
    fn zero_noise_collapses_clusters() {
        let spec = ClusterSpec { noise_sigma: 0.0, ..small_spec(4) };
        let ds = generate_clusters(&spec).unwrap();
        for (t, point) in ds.data.points().enumerate() {
            assert_eq!(point, ds.centroids.column(ds.labels[t]).as_slice());
        }
    }

    #[test]
    fn standard_spec_matches_the_visual_experiment() {
        let s = ClusterSpec::standard(0);
        assert_eq!((s.n_clusters, s.points_per_cluster, s.d), (6, 1000, 960));
    }

    #[test]
    fn sketch_variance_cases() {
        let plus = BinaryCode::from_signs(&[1, 1]);
        let minus = BinaryCode::from_signs(&[-1, 1]);
        assert_eq!(sketch_variance(&[plus.clone(), plus.clone()], &[0, 0]).unwrap(), 0.0);
        // bit 0 balanced: variance 1; bit 1 constant: 0
        assert_eq!(sketch_variance(&[plus.clone(), minus.clone()], &[0, 0]).unwrap(), 0.5);
        assert_eq!(sketch_variance(&[plus.clone(), minus.clone()], &[0, 1]).unwrap(), 0.0);
        assert!(sketch_variance(&[plus.clone(), minus.clone()], &[0, 2]).is_err());
        assert!(sketch_variance(&[plus], &[]).is_err());
    }

    #[test]
    fn sketch_variance_ignores_global_bit_flips() {
        let codes: Vec<BinaryCode> = (0..30u64)
            .map(|k| BinaryCode::from_words(5, vec![(k * 7 + k / 3) & 0x1f]).unwrap())
            .collect();
        let labels: Vec<usize> = (0..30).map(|k| k % 4).collect();
        let base = sketch_variance(&codes, &labels).unwrap();
        let flipped: Vec<BinaryCode> = codes
            .iter()
            .map(|c| {
                let mut c = c.clone();
                c.set(2, c.sign(2) < 0);
                c
            })
            .collect();
        assert!((sketch_variance(&flipped, &labels).unwrap() - base).abs() < 1e-15);
    }

    #[test]
    fn fvecs_hand_record() {
        let mut bytes = 2i32.to_le_bytes().to_vec();
        bytes.extend(1.0f32.to_le_bytes());
        bytes.extend((-1.0f32).to_le_bytes());
        assert_eq!(bytes.len(), 12);
        let x = fvecs_from_bytes(&bytes).unwrap();
        assert_eq!((x.dim(), x.len()), (2, 1));
        assert_eq!(x.point(0), &[1.0, -1.0]);
        assert_eq!(fvecs_to_bytes(&x), bytes);
    }

    #[test]
    fn fvecs_errors() {
        assert!(fvecs_from_bytes(&[]).unwrap().is_empty());
        let mut bytes = 3i32.to_le_bytes().to_vec();
        bytes.extend([0u8; 8]);
        match fvecs_from_bytes(&bytes) {
            Err(HqhError::Truncated { offset, .. }) => assert_eq!(offset, 0),
            other => panic!("{other:?}"),
        }
        assert!(fvecs_from_bytes(&0i32.to_le_bytes()).is_err());
        let mut mixed = 1i32.to_le_bytes().to_vec();
        mixed.extend(0.5f32.to_le_bytes());
        mixed.extend(2i32.to_le_bytes());
        mixed.extend([0u8; 8]);
        assert!(matches!(fvecs_from_bytes(&mixed), Err(HqhError::Parse { .. })));
    }

    #[test]
    fn fvecs_round_trip_is_byte_exact() {
        let mut bytes = Vec::new();
        for t in 0..17u32 {
            bytes.extend(4i32.to_le_bytes());
            for i in 0..4u32 {
                bytes.extend(f32::from_bits(0x3f80_0000 ^ (t * 977 + i * 131)).to_le_bytes());
            }
        }
        assert_eq!(fvecs_to_bytes(&fvecs_from_bytes(&bytes).unwrap()), bytes);
    }

    #[test]
    fn csv_rows_are_points() {
        let x = read_csv("1.0,2.0\n3.0,4.0\n".as_bytes(), false).unwrap();
        assert_eq!((x.dim(), x.len()), (2, 2));
        assert_eq!(x.point(0), &[1.0, 2.0]);
        assert_eq!(x.point(1), &[3.0, 4.0]);
        let x = read_csv("a,b\n1,2\n".as_bytes(), true).unwrap();
        assert_eq!(x.len(), 1);
    }

    #[test]
    fn csv_errors_name_the_line() {
        let err = read_csv("1,2\n3\n".as_bytes(), false).unwrap_err().to_string();
        assert!(err.contains("line 2"), "{err}");
        let err = read_csv("1,2\n3,x\n".as_bytes(), false).unwrap_err().to_string();
        assert!(err.contains("line 2, column 2"), "{err}");
    }

    #[test]
    fn file_helpers_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let ds = generate_clusters(&ClusterSpec { points_per_cluster: 5, ..small_spec(5) }).unwrap();
        let data_path = dir.path().join("x.fvecs");
        write_fvecs(&data_path, &ds.data).unwrap();
        let back = load_dataset(&data_path).unwrap();
        assert_eq!(back.len(), ds.data.len());
        let label_path = dir.path().join("y.txt");
        write_labels(&label_path, &ds.labels, Some("labels")).unwrap();
        assert_eq!(read_labels(&label_path).unwrap(), ds.labels);
        assert!(load_fvecs(dir.path().join("nope.fvecs")).is_err());
    }
}
