//! Binary model and code files.
//!
//! Model layout (little-endian): magic `HQH1`, then the sections centering,
//! basis, transform, covariance and meta. Each section is a `u64` payload
//! length, the payload, and the CRC32C of the payload. The meta payload is
//! UTF-8 JSON or empty.
//!
//! Codes layout: magic `HQC1`, `u64` count, `u32` bit length, then each code
//! in the packed core serialization.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::code::BinaryCode;
use crate::covariance::CovarianceState;
use crate::error::{HqhError, Result};
use crate::matrix::CenteringState;
use crate::model::{HashModel, OrthogonalTransform, ProjectionBasis, Provenance, STREAM_BASIS_TOL};

const MODEL_MAGIC: &[u8; 4] = b"HQH1";
const CODES_MAGIC: &[u8; 4] = b"HQC1";

const SECTIONS: [&str; 5] = ["centering", "basis", "transform", "covariance", "meta"];

pub fn model_to_bytes(model: &HashModel, meta: Option<&serde_json::Value>) -> Vec<u8> {
    let mut out = MODEL_MAGIC.to_vec();

    let mut p = Vec::new();
    let centering = model.centering();
    p.extend(centering.count().to_le_bytes());
    put_vector(&mut p, centering.mean().as_slice());
    put_section(&mut out, &p);

    let mut p = Vec::new();
    put_matrix(&mut p, model.basis().matrix());
    put_section(&mut out, &p);

    let mut p = vec![model.transform().provenance().tag()];
    put_matrix(&mut p, model.transform().matrix());
    put_section(&mut out, &p);

    let cov = model.covariance();
    let mut p = vec![cov.is_normalized() as u8];
    p.extend(cov.tau().to_le_bytes());
    put_matrix(&mut p, cov.sigma());
    put_section(&mut out, &p);

    let p = meta.map(|m| m.to_string().into_bytes()).unwrap_or_default();
    put_section(&mut out, &p);
    out
}

pub fn model_from_bytes(bytes: &[u8]) -> Result<(HashModel, Option<serde_json::Value>)> {
    check_magic(bytes, MODEL_MAGIC)?;
    let mut r = Reader { bytes, pos: 4 };
    let mut payloads = Vec::with_capacity(SECTIONS.len());
    for name in SECTIONS {
        payloads.push(r.section(name)?);
    }
    if r.pos != bytes.len() {
        return Err(HqhError::Parse {
            format: "model file",
            location: format!("byte {}", r.pos),
            message: "trailing bytes after the last section".into(),
        });
    }

    let mut s = Reader::sub(payloads[0]);
    let count = s.u64("centering")?;
    let mean = s.vector("centering")?;
    s.finish("centering")?;
    let centering = CenteringState::from_parts(DVector::from_vec(mean), count)?;

    let mut s = Reader::sub(payloads[1]);
    let w = s.matrix("basis")?;
    s.finish("basis")?;
    let basis = ProjectionBasis::new(w, STREAM_BASIS_TOL)?;

    let mut s = Reader::sub(payloads[2]);
    let tag = s.u8("transform")?;
    let provenance = Provenance::from_tag(tag)
        .ok_or_else(|| HqhError::invalid(format!("unknown rotation provenance tag {tag}")))?;
    let r_mat = s.matrix("transform")?;
    s.finish("transform")?;
    let transform = OrthogonalTransform::new(r_mat, provenance)?;

    let mut s = Reader::sub(payloads[3]);
    let normalized = s.u8("covariance")? != 0;
    let tau = f64::from_le_bytes(s.take("covariance", 8)?.try_into().unwrap());
    let sigma = s.matrix("covariance")?;
    s.finish("covariance")?;
    let covariance = CovarianceState::from_stored(sigma, tau, normalized)?;

    let meta = if payloads[4].is_empty() {
        None
    } else {
        Some(serde_json::from_slice(payloads[4]).map_err(|e| HqhError::Parse {
            format: "model meta",
            location: "meta section".into(),
            message: e.to_string(),
        })?)
    };
    Ok((HashModel::new(centering, basis, transform, covariance)?, meta))
}

pub fn save_model(path: impl AsRef<Path>, model: &HashModel, meta: Option<&serde_json::Value>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, model_to_bytes(model, meta)).map_err(|e| HqhError::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<HashModel> {
    Ok(load_model_with_meta(path)?.0)
}

pub fn load_model_with_meta(path: impl AsRef<Path>) -> Result<(HashModel, Option<serde_json::Value>)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| HqhError::io(path, e))?;
    model_from_bytes(&bytes)
}

pub fn codes_to_bytes(codes: &[BinaryCode]) -> Result<Vec<u8>> {
    let bits = codes.first().map_or(0, BinaryCode::len);
    if let Some(bad) = codes.iter().find(|c| c.len() != bits) {
        return Err(HqhError::DimensionMismatch {
            context: "codes file bit length",
            expected: bits,
            found: bad.len(),
        });
    }
    let bits = u32::try_from(bits).map_err(|_| HqhError::invalid("code length exceeds u32"))?;
    let mut out = CODES_MAGIC.to_vec();
    out.extend((codes.len() as u64).to_le_bytes());
    out.extend(bits.to_le_bytes());
    for code in codes {
        code.write_to(&mut out);
    }
    Ok(out)
}

pub fn codes_from_bytes(bytes: &[u8]) -> Result<Vec<BinaryCode>> {
    check_magic(bytes, CODES_MAGIC)?;
    let mut r = Reader { bytes, pos: 4 };
    let n = r.u64("header")?;
    let bits = r.u32("header")? as usize;
    let mut codes = Vec::with_capacity(n.min(1 << 20) as usize);
    for _ in 0..n {
        let (code, used) = BinaryCode::read_from(&bytes[r.pos..]).map_err(|_| HqhError::Truncated {
            section: "codes",
            offset: r.pos as u64,
        })?;
        if code.len() != bits {
            return Err(HqhError::DimensionMismatch {
                context: "codes file entry",
                expected: bits,
                found: code.len(),
            });
        }
        r.pos += used;
        codes.push(code);
    }
    if r.pos != bytes.len() {
        return Err(HqhError::Parse {
            format: "codes file",
            location: format!("byte {}", r.pos),
            message: "trailing bytes after the last code".into(),
        });
    }
    Ok(codes)
}

pub fn write_codes(path: impl AsRef<Path>, codes: &[BinaryCode]) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, codes_to_bytes(codes)?).map_err(|e| HqhError::io(path, e))
}

pub fn read_codes(path: impl AsRef<Path>) -> Result<Vec<BinaryCode>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| HqhError::io(path, e))?;
    codes_from_bytes(&bytes)
}

fn check_magic(bytes: &[u8], magic: &[u8; 4]) -> Result<()> {
    let found = &bytes[..bytes.len().min(4)];
    if found != magic {
        return Err(HqhError::VersionMismatch {
            expected: String::from_utf8_lossy(magic).into_owned(),
            found: String::from_utf8_lossy(found).into_owned(),
        });
    }
    Ok(())
}

fn put_section(out: &mut Vec<u8>, payload: &[u8]) {
    out.extend((payload.len() as u64).to_le_bytes());
    out.extend(payload);
    out.extend(crc32c::crc32c(payload).to_le_bytes());
}

fn put_vector(out: &mut Vec<u8>, v: &[f64]) {
    out.extend((v.len() as u32).to_le_bytes());
    for x in v {
        out.extend(x.to_le_bytes());
    }
}

/// Row-major with `u32` row and column counts.
fn put_matrix(out: &mut Vec<u8>, m: &DMatrix<f64>) {
    out.extend((m.nrows() as u32).to_le_bytes());
    out.extend((m.ncols() as u32).to_le_bytes());
    for i in 0..m.nrows() {
        for x in m.row(i).iter() {
            out.extend(x.to_le_bytes());
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn sub(bytes: &'a [u8]) -> Self {
        Reader { bytes, pos: 0 }
    }

    fn take(&mut self, section: &'static str, len: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(len).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let out = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(out)
            }
            None => Err(HqhError::Truncated {
                section,
                offset: self.pos as u64,
            }),
        }
    }

    fn u8(&mut self, section: &'static str) -> Result<u8> {
        Ok(self.take(section, 1)?[0])
    }

    fn u32(&mut self, section: &'static str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(section, 4)?.try_into().unwrap()))
    }

    fn u64(&mut self, section: &'static str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(section, 8)?.try_into().unwrap()))
    }

    fn f64s(&mut self, section: &'static str, count: usize) -> Result<Vec<f64>> {
        let len = count.checked_mul(8).ok_or(HqhError::Truncated {
            section,
            offset: self.pos as u64,
        })?;
        Ok(self
            .take(section, len)?
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect())
    }

    fn vector(&mut self, section: &'static str) -> Result<Vec<f64>> {
        let n = self.u32(section)? as usize;
        self.f64s(section, n)
    }

    fn matrix(&mut self, section: &'static str) -> Result<DMatrix<f64>> {
        let rows = self.u32(section)? as usize;
        let cols = self.u32(section)? as usize;
        let values = self.f64s(section, rows.saturating_mul(cols))?;
        Ok(DMatrix::from_row_slice(rows, cols, &values))
    }

    fn finish(&self, section: &'static str) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(HqhError::Parse {
                format: "model file",
                location: format!("section {section}"),
                message: "unexpected bytes at the end of the section".into(),
            });
        }
        Ok(())
    }

    /// Length-prefixed, checksummed section payload.
    fn section(&mut self, section: &'static str) -> Result<&'a [u8]> {
        let len = self.u64(section)?;
        let len = usize::try_from(len).map_err(|_| HqhError::Truncated {
            section,
            offset: self.pos as u64,
        })?;
        let payload = self.take(section, len)?;
        let stored = self.u32(section)?;
        if crc32c::crc32c(payload) != stored {
            return Err(HqhError::Checksum { section });
        }
        Ok(payload)
    }
}
