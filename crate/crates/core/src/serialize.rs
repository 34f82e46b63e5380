use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::nn::{ModelParams, ModelSpec, ParamTensor};
use crate::tensor::Tensor;

/// Parameter snapshot format: the 4-byte magic "FGP1", then per tensor a u32
/// rank, u32 dims, and f64 data, all little-endian. Tensors appear in
/// parameter order (layer by layer, weight before bias) until end of stream.
const MAGIC: &[u8; 4] = b"FGP1";

pub fn write_params<W: Write>(params: &ModelParams, mut w: W) -> Result<()> {
    w.write_all(MAGIC)?;
    for entry in params.entries() {
        let shape = entry.tensor.shape();
        w.write_all(&(shape.len() as u32).to_le_bytes())?;
        for &dim in shape {
            w.write_all(&(dim as u32).to_le_bytes())?;
        }
        for &v in entry.tensor.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn params_to_bytes(params: &ModelParams) -> Vec<u8> {
    let mut out = Vec::new();
    write_params(params, &mut out).expect("writing to a Vec cannot fail");
    out
}

/// Reads raw tensors back from a snapshot. Layer/role assignment needs the
/// model spec; see `read_params`.
pub fn read_tensors<R: Read>(mut r: R) -> Result<Vec<Tensor>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| Error::format("snapshot shorter than its magic".to_string()))?;
    if &magic != MAGIC {
        return Err(Error::format(format!(
            "bad snapshot magic {magic:?}, expected {MAGIC:?}"
        )));
    }
    let mut tensors = Vec::new();
    loop {
        let mut rank_buf = [0u8; 4];
        match r.read(&mut rank_buf)? {
            0 => break,
            4 => {}
            n => {
                r.read_exact(&mut rank_buf[n..])
                    .map_err(|_| Error::format("truncated tensor rank".to_string()))?;
            }
        }
        let rank = u32::from_le_bytes(rank_buf) as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            let mut dim = [0u8; 4];
            r.read_exact(&mut dim)
                .map_err(|_| Error::format("truncated tensor dims".to_string()))?;
            shape.push(u32::from_le_bytes(dim) as usize);
        }
        let len: usize = shape.iter().product();
        let mut data = Vec::with_capacity(len);
        let mut buf = [0u8; 8];
        for _ in 0..len {
            r.read_exact(&mut buf).map_err(|_| {
                Error::format(format!(
                    "truncated tensor payload: expected {len} f64 values"
                ))
            })?;
            data.push(f64::from_le_bytes(buf));
        }
        tensors.push(Tensor::new(shape, data)?);
    }
    Ok(tensors)
}

/// Reads a snapshot and reattaches layer/role metadata from the model spec.
pub fn read_params<R: Read>(r: R, spec: &ModelSpec) -> Result<ModelParams> {
    let tensors = read_tensors(r)?;
    let expected = spec.param_shapes()?;
    if tensors.len() != expected.len() {
        return Err(Error::format(format!(
            "snapshot holds {} tensors, model expects {}",
            tensors.len(),
            expected.len()
        )));
    }
    let entries = expected
        .into_iter()
        .zip(tensors)
        .map(|((layer, role, shape), tensor)| {
            if tensor.shape() != shape {
                return Err(Error::format(format!(
                    "snapshot tensor for layer {layer} {role:?} has shape {:?}, expected {shape:?}",
                    tensor.shape()
                )));
            }
            Ok(ParamTensor {
                layer,
                role,
                tensor,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ModelParams::from_entries(entries))
}
