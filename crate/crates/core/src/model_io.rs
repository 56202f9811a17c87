//! Portable binary model files.
//!
//! Layout, all little-endian:
//!
//! ```text
//! magic   8 bytes  "VIGPMDL\0"
//! u32     version (1)
//! u32     kernel family (0 = squared exponential, 1 = Matérn)
//! u32     d, u32 m, u32 has_normalization (0/1)
//! f64 × 5 log σ², log l, log ν, log noise (may be -inf), log jitter
//! f64 × m·d   Z, row-major
//! f64 × m     μ
//! f64 × m(m+1)/2  lower Cholesky factor of Σ, packed row by row
//! f64 × 2d    feature means then stds (only if has_normalization = 1)
//! ```

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::inducing::InducingSet;
use crate::kernels::{KernelFamily, KernelHyperparams};
use crate::moments::VariationalState;
use crate::trainers::FittedModel;

pub const MAGIC: &[u8; 8] = b"VIGPMDL\0";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct SavedModel {
    pub model: FittedModel,
    /// Training-set feature means and stds applied before prediction.
    pub normalization: Option<(DVector<f64>, DVector<f64>)>,
}

fn put_u32<W: Write>(w: &mut W, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn put_f64s<W: Write>(w: &mut W, vals: impl IntoIterator<Item = f64>) -> Result<()> {
    for v in vals {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn get_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(u32::from_le_bytes(b))
}

fn get_f64s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(n);
    let mut b = [0u8; 8];
    for _ in 0..n {
        r.read_exact(&mut b).map_err(truncated)?;
        out.push(f64::from_le_bytes(b));
    }
    Ok(out)
}

fn truncated(e: std::io::Error) -> Error {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        Error::ModelFormat("file is truncated".into())
    } else {
        Error::Io(e)
    }
}

pub fn write_model<W: Write>(saved: &SavedModel, mut w: W) -> Result<()> {
    let FittedModel { theta, z, state } = &saved.model;
    let (m, d) = z.z.shape();
    let chol = state.cholesky()?.l();
    w.write_all(MAGIC)?;
    put_u32(&mut w, VERSION)?;
    put_u32(&mut w, match theta.family {
        KernelFamily::SquaredExponential => 0,
        KernelFamily::Matern => 1,
    })?;
    put_u32(&mut w, d as u32)?;
    put_u32(&mut w, m as u32)?;
    put_u32(&mut w, saved.normalization.is_some() as u32)?;
    put_f64s(&mut w, [
        theta.variance.ln(),
        theta.length_scale.ln(),
        theta.smoothness.ln(),
        theta.noise_variance.ln(),
        theta.jitter.ln(),
    ])?;
    put_f64s(&mut w, (0..m).flat_map(|i| (0..d).map(move |j| (i, j))).map(|(i, j)| z.z[(i, j)]))?;
    put_f64s(&mut w, state.mu.iter().copied())?;
    put_f64s(&mut w, (0..m).flat_map(|i| (0..=i).map(move |j| (i, j))).map(|(i, j)| chol[(i, j)]))?;
    if let Some((means, stds)) = &saved.normalization {
        if means.len() != d || stds.len() != d {
            return Err(Error::ModelFormat("normalization statistics do not match the feature dimension".into()));
        }
        put_f64s(&mut w, means.iter().chain(stds.iter()).copied())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_model<R: Read>(mut r: R) -> Result<SavedModel> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(truncated)?;
    if &magic != MAGIC {
        return Err(Error::ModelFormat("not a model file (bad magic)".into()));
    }
    let version = get_u32(&mut r)?;
    if version != VERSION {
        return Err(Error::ModelFormat(format!("unsupported version {version}")));
    }
    let family = match get_u32(&mut r)? {
        0 => KernelFamily::SquaredExponential,
        1 => KernelFamily::Matern,
        other => return Err(Error::ModelFormat(format!("unknown kernel family {other}"))),
    };
    let d = get_u32(&mut r)? as usize;
    let m = get_u32(&mut r)? as usize;
    let has_norm = match get_u32(&mut r)? {
        0 => false,
        1 => true,
        other => return Err(Error::ModelFormat(format!("bad normalization flag {other}"))),
    };
    if m == 0 {
        return Err(Error::ModelFormat("model has no inducing points".into()));
    }
    let p = get_f64s(&mut r, 5)?;
    let theta = KernelHyperparams {
        family,
        variance: p[0].exp(),
        length_scale: p[1].exp(),
        smoothness: p[2].exp(),
        noise_variance: p[3].exp(),
        jitter: p[4].exp(),
    };
    theta.validate().map_err(|e| Error::ModelFormat(format!("invalid hyperparameters: {e}")))?;
    let z = DMatrix::from_row_slice(m, d, &get_f64s(&mut r, m * d)?);
    let mu = DVector::from_vec(get_f64s(&mut r, m)?);
    let packed = get_f64s(&mut r, m * (m + 1) / 2)?;
    let mut l = DMatrix::zeros(m, m);
    let mut k = 0;
    for i in 0..m {
        for j in 0..=i {
            l[(i, j)] = packed[k];
            k += 1;
        }
    }
    let normalization = if has_norm {
        let v = get_f64s(&mut r, 2 * d)?;
        Some((DVector::from_column_slice(&v[..d]), DVector::from_column_slice(&v[d..])))
    } else {
        None
    };
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(Error::ModelFormat("trailing bytes after model payload".into()));
    }
    let sigma = &l * l.transpose();
    let model = FittedModel { theta, z: InducingSet::new(z)?, state: VariationalState { mu, sigma } };
    Ok(SavedModel { model, normalization })
}

pub fn save_model(saved: &SavedModel, path: &std::path::Path) -> Result<()> {
    let f = std::fs::File::create(path)?;
    write_model(saved, std::io::BufWriter::new(f))
}

pub fn load_model(path: &std::path::Path) -> Result<SavedModel> {
    let f = std::fs::File::open(path)?;
    read_model(std::io::BufReader::new(f))
}
