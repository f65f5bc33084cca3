//! Binary parameter checkpoints.
//!
//! Layout, all integers little-endian `u64` and all reals little-endian
//! IEEE-754 `f64`:
//!
//! ```text
//! network := n_sizes size*  value*            (weights row-major, then bias, per layer)
//! policy  := head_tag network [dim log_std*]  (head_tag 0 = categorical, 1 = Gaussian)
//! ```
//!
//! Round trips are bit-exact.

use std::io::{Read, Write};

use ndarray::Array1;

use crate::error::{Error, Result};
use crate::nn::mlp::MlpParams;
use crate::nn::policy::{PolicyHead, PolicyParams};

const MAX_LAYERS: u64 = 64;
const MAX_WIDTH: u64 = 1 << 20;

fn err(e: std::io::Error) -> Error {
    Error::Checkpoint(e.to_string())
}

pub fn write_u64<W: Write>(w: &mut W, x: u64) -> Result<()> {
    w.write_all(&x.to_le_bytes()).map_err(err)
}

pub fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf).map_err(err)?;
    Ok(u64::from_le_bytes(buf))
}

pub fn write_f64s<W: Write>(w: &mut W, xs: &[f64]) -> Result<()> {
    for x in xs {
        w.write_all(&x.to_bits().to_le_bytes()).map_err(err)?;
    }
    Ok(())
}

pub fn read_f64s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    (0..n)
        .map(|_| read_u64(r).map(f64::from_bits))
        .collect()
}

fn read_size<R: Read>(r: &mut R, max: u64, what: &str) -> Result<usize> {
    let x = read_u64(r)?;
    if x == 0 || x > max {
        return Err(Error::Checkpoint(format!("implausible {what}: {x}")));
    }
    Ok(x as usize)
}

pub fn write_mlp<W: Write>(w: &mut W, params: &MlpParams) -> Result<()> {
    write_u64(w, params.sizes().len() as u64)?;
    for &s in params.sizes() {
        write_u64(w, s as u64)?;
    }
    write_f64s(w, &params.flatten())
}

pub fn read_mlp<R: Read>(r: &mut R) -> Result<MlpParams> {
    let n = read_size(r, MAX_LAYERS, "layer count")?;
    let sizes = (0..n)
        .map(|_| read_size(r, MAX_WIDTH, "layer width"))
        .collect::<Result<Vec<_>>>()?;
    let mut params = MlpParams::zeros(&sizes)
        .map_err(|e| Error::Checkpoint(e.to_string()))?;
    let flat = read_f64s(r, params.n_params())?;
    params.assign(&flat)?;
    if flat.iter().any(|x| !x.is_finite()) {
        return Err(Error::Checkpoint("non-finite parameter".into()));
    }
    Ok(params)
}

pub fn write_policy<W: Write>(w: &mut W, policy: &PolicyParams) -> Result<()> {
    match &policy.head {
        PolicyHead::Categorical { .. } => {
            write_u64(w, 0)?;
            write_mlp(w, &policy.body)
        }
        PolicyHead::Gaussian { dim, log_std } => {
            write_u64(w, 1)?;
            write_mlp(w, &policy.body)?;
            write_u64(w, *dim as u64)?;
            write_f64s(w, log_std.as_slice().expect("contiguous"))
        }
    }
}

pub fn read_policy<R: Read>(r: &mut R) -> Result<PolicyParams> {
    match read_u64(r)? {
        0 => Ok(PolicyParams::categorical(read_mlp(r)?)),
        1 => {
            let body = read_mlp(r)?;
            let dim = read_size(r, MAX_WIDTH, "action dimension")?;
            if dim != body.output_dim() {
                return Err(Error::Checkpoint(format!(
                    "log_std length {dim} does not match network output {}",
                    body.output_dim()
                )));
            }
            let log_std = Array1::from(read_f64s(r, dim)?);
            Ok(PolicyParams {
                body,
                head: PolicyHead::Gaussian { dim, log_std },
            })
        }
        tag => Err(Error::Checkpoint(format!("unknown head tag {tag}"))),
    }
}
