//! Binary parameter snapshots.
//!
//! Layout: 8-byte magic, u32 format version, u64 hash of the canonical
//! network-spec JSON, then the five parameter vectors (values, buffers, adam
//! first/second moments as little-endian f64, plus the adam step counter).
//! Loading refuses files whose spec hash does not match the reader's network,
//! so a snapshot can never be poured into a mismatched architecture.

use std::io::{Read, Write};

use crate::net::NetworkSpec;
use crate::params::ParamSet;
use crate::{fnv1a64, NnError};

const MAGIC: &[u8; 8] = b"NAVPARM1";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Hash of the canonical JSON encoding of a network spec.
pub fn spec_hash(spec: &NetworkSpec) -> u64 {
    let json = serde_json::to_string(spec).expect("network spec serializes");
    fnv1a64(json.as_bytes())
}

fn write_u32(w: &mut impl Write, v: u32) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn write_u64(w: &mut impl Write, v: u64) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn write_vec(w: &mut impl Write, v: &[f64]) -> std::io::Result<()> {
    write_u64(w, v.len() as u64)?;
    for x in v {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

fn read_u32(r: &mut impl Read) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> std::io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_vec(r: &mut impl Read, limit: u64) -> Result<Vec<f64>, NnError> {
    let len = read_u64(r)?;
    if len > limit {
        return Err(NnError::BadCheckpoint(format!(
            "vector length {len} exceeds limit {limit}"
        )));
    }
    let mut out = Vec::with_capacity(len as usize);
    let mut b = [0u8; 8];
    for _ in 0..len {
        r.read_exact(&mut b)?;
        out.push(f64::from_le_bytes(b));
    }
    Ok(out)
}

/// Serializes one parameter set, prefixed with the owning network's spec hash.
pub fn write_paramset(
    w: &mut impl Write,
    spec: &NetworkSpec,
    params: &ParamSet,
) -> Result<(), NnError> {
    w.write_all(MAGIC)?;
    write_u32(w, CHECKPOINT_VERSION)?;
    write_u64(w, spec_hash(spec))?;
    write_vec(w, &params.values)?;
    write_vec(w, &params.buffers)?;
    write_vec(w, &params.adam_m)?;
    write_vec(w, &params.adam_v)?;
    write_u64(w, params.adam_t)?;
    Ok(())
}

/// Reads one parameter set, verifying magic, version, and spec hash.
pub fn read_paramset(r: &mut impl Read, spec: &NetworkSpec) -> Result<ParamSet, NnError> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(NnError::BadCheckpoint("bad magic".into()));
    }
    let version = read_u32(r)?;
    if version != CHECKPOINT_VERSION {
        return Err(NnError::BadCheckpoint(format!(
            "unsupported version {version}"
        )));
    }
    let found = read_u64(r)?;
    let expected = spec_hash(spec);
    if found != expected {
        return Err(NnError::SpecHashMismatch { found, expected });
    }
    const LIMIT: u64 = 1 << 32;
    let values = read_vec(r, LIMIT)?;
    let buffers = read_vec(r, LIMIT)?;
    let adam_m = read_vec(r, LIMIT)?;
    let adam_v = read_vec(r, LIMIT)?;
    let adam_t = read_u64(r)?;
    if adam_m.len() != values.len() || adam_v.len() != values.len() {
        return Err(NnError::BadCheckpoint(
            "moment vectors do not match values".into(),
        ));
    }
    Ok(ParamSet {
        values,
        buffers,
        adam_m,
        adam_v,
        adam_t,
    })
}

/// Writes a parameter set to a file.
pub fn save_params(
    path: &std::path::Path,
    spec: &NetworkSpec,
    params: &ParamSet,
) -> Result<(), NnError> {
    let mut buf = Vec::new();
    write_paramset(&mut buf, spec, params)?;
    std::fs::write(path, buf)?;
    Ok(())
}

/// Reads a parameter set from a file.
pub fn load_params(path: &std::path::Path, spec: &NetworkSpec) -> Result<ParamSet, NnError> {
    let bytes = std::fs::read(path)?;
    let mut cursor = std::io::Cursor::new(bytes);
    read_paramset(&mut cursor, spec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layer::LayerSpec;
    use crate::net::Network;

    fn tiny_spec() -> NetworkSpec {
        NetworkSpec {
            input: (1, 4, 4),
            trunk: vec![
                LayerSpec::Conv2d { kernel: 3, out_channels: 2, stride: 1 },
                LayerSpec::BatchNorm,
                LayerSpec::Relu,
                LayerSpec::GlobalAvgPool,
            ],
            aux_dim: 3,
            head: vec![LayerSpec::FullyConnected { out: 2 }],
        }
    }

    #[test]
    fn roundtrip_preserves_every_field() {
        let net = Network::new(tiny_spec()).unwrap();
        let mut p = net.init_params(11);
        p.adam_m[0] = 0.5;
        p.adam_v[1] = 0.25;
        p.adam_t = 42;
        let mut buf = Vec::new();
        write_paramset(&mut buf, net.spec(), &p).unwrap();
        let q = read_paramset(&mut std::io::Cursor::new(&buf), net.spec()).unwrap();
        assert_eq!(p.values, q.values);
        assert_eq!(p.buffers, q.buffers);
        assert_eq!(p.adam_m, q.adam_m);
        assert_eq!(p.adam_v, q.adam_v);
        assert_eq!(p.adam_t, q.adam_t);
    }

    #[test]
    fn serialization_is_byte_deterministic() {
        let net = Network::new(tiny_spec()).unwrap();
        let p = net.init_params(11);
        let mut a = Vec::new();
        let mut b = Vec::new();
        write_paramset(&mut a, net.spec(), &p).unwrap();
        write_paramset(&mut b, net.spec(), &p).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn mismatched_spec_is_refused() {
        let net = Network::new(tiny_spec()).unwrap();
        let p = net.init_params(11);
        let mut buf = Vec::new();
        write_paramset(&mut buf, net.spec(), &p).unwrap();

        let mut other = tiny_spec();
        other.aux_dim = 4;
        let err = read_paramset(&mut std::io::Cursor::new(&buf), &other);
        assert!(matches!(err, Err(NnError::SpecHashMismatch { .. })));
    }

    #[test]
    fn truncated_file_is_an_error() {
        let net = Network::new(tiny_spec()).unwrap();
        let p = net.init_params(11);
        let mut buf = Vec::new();
        write_paramset(&mut buf, net.spec(), &p).unwrap();
        buf.truncate(buf.len() - 3);
        let err = read_paramset(&mut std::io::Cursor::new(&buf), net.spec());
        assert!(err.is_err());
    }
}
