//! `.vvc` checkpoint files.
//!
//! All integers and floats are little-endian.
//!
//! ```text
//! magic        4 bytes  "VVCK"
//! version      u8       1
//! config       u32 input_channels, input_h, input_w
//!              u32 stage count, then u32 filters per stage
//!              u32 kernel, stride, padding, pool_kernel, pool_stride, num_classes
//!              f32 batch-norm eps, f32 batch-norm momentum
//! provenance   u32 byte length, UTF-8 text
//! manifest     u32 layer count; per layer:
//!                u8 kind, u8 tensor count; per tensor:
//!                  u8 role, u8 rank, rank x u32 dims
//! blob         u64 byte length, then f32 values of every manifest tensor in order
//! ```
//!
//! The blob holds `4 * (parameters + running statistics)` bytes and nothing
//! may follow it.

use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{ArchitectureConfig, LayerKind, LayerNode, ModelGraph, TensorRole};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"VVCK";
pub const CHECKPOINT_VERSION: u8 = 1;

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: usize) {
        self.0.extend_from_slice(&(v as u32).to_le_bytes());
    }
    fn f32(&mut self, v: f32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, section: &'static str) -> Result<&'a [u8]> {
        let available = self.bytes.len() - self.pos;
        if n > available {
            return Err(Error::Truncated {
                section,
                needed: n,
                available,
            });
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }
    fn u8(&mut self, section: &'static str) -> Result<u8> {
        Ok(self.take(1, section)?[0])
    }
    fn u32(&mut self, section: &'static str) -> Result<usize> {
        let b = self.take(4, section)?;
        Ok(u32::from_le_bytes(b.try_into().unwrap()) as usize)
    }
    fn u64(&mut self, section: &'static str) -> Result<u64> {
        let b = self.take(8, section)?;
        Ok(u64::from_le_bytes(b.try_into().unwrap()))
    }
    fn f32(&mut self, section: &'static str) -> Result<f32> {
        let b = self.take(4, section)?;
        Ok(f32::from_le_bytes(b.try_into().unwrap()))
    }
}

type Manifest = Vec<(u8, Vec<(u8, Vec<usize>)>)>;

fn manifest_of(m: &ModelGraph) -> Manifest {
    m.layers()
        .iter()
        .map(|l| {
            (
                l.kind() as u8,
                l.tensor_shapes()
                    .into_iter()
                    .map(|(role, dims)| (role as u8, dims))
                    .collect(),
            )
        })
        .collect()
}

fn batchnorm_hparams(m: &ModelGraph) -> (f32, f32) {
    m.layers()
        .iter()
        .find_map(|l| match l {
            LayerNode::BatchNorm(b) => Some((b.eps, b.momentum)),
            _ => None,
        })
        .expect("graph has batch norm layers")
}

pub fn encode_checkpoint(m: &ModelGraph) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(&CHECKPOINT_MAGIC);
    w.u8(CHECKPOINT_VERSION);

    let c = m.config();
    w.u32(c.input_channels);
    w.u32(c.input_h);
    w.u32(c.input_w);
    w.u32(c.conv_filters.len());
    for &f in &c.conv_filters {
        w.u32(f);
    }
    for v in [
        c.kernel,
        c.stride,
        c.padding,
        c.pool_kernel,
        c.pool_stride,
        c.num_classes,
    ] {
        w.u32(v);
    }
    let (eps, momentum) = batchnorm_hparams(m);
    w.f32(eps);
    w.f32(momentum);

    w.u32(m.provenance().len());
    w.0.extend_from_slice(m.provenance().as_bytes());

    let manifest = manifest_of(m);
    w.u32(manifest.len());
    for (kind, tensors) in &manifest {
        w.u8(*kind);
        w.u8(tensors.len() as u8);
        for (role, dims) in tensors {
            w.u8(*role);
            w.u8(dims.len() as u8);
            for &d in dims {
                w.u32(d);
            }
        }
    }

    let values: usize = m.tensors().iter().map(|t| t.len()).sum();
    w.0.extend_from_slice(&(4 * values as u64).to_le_bytes());
    w.0.reserve(4 * values);
    for t in m.tensors() {
        for &v in t {
            w.f32(v);
        }
    }
    w.0
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<ModelGraph> {
    let mut r = Reader { bytes, pos: 0 };
    if bytes.len() < 4 || bytes[..4] != CHECKPOINT_MAGIC {
        return Err(Error::BadMagic);
    }
    r.pos = 4;
    let version = r.u8("header")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }

    let input_channels = r.u32("config")?;
    let input_h = r.u32("config")?;
    let input_w = r.u32("config")?;
    let stages = r.u32("config")?;
    if stages > 64 {
        return Err(Error::Checkpoint(format!("implausible stage count {stages}")));
    }
    let conv_filters = (0..stages)
        .map(|_| r.u32("config"))
        .collect::<Result<Vec<_>>>()?;
    let config = ArchitectureConfig {
        input_channels,
        input_h,
        input_w,
        conv_filters,
        kernel: r.u32("config")?,
        stride: r.u32("config")?,
        padding: r.u32("config")?,
        pool_kernel: r.u32("config")?,
        pool_stride: r.u32("config")?,
        num_classes: r.u32("config")?,
    };
    let eps = r.f32("config")?;
    let momentum = r.f32("config")?;

    let prov_len = r.u32("provenance")?;
    let provenance = std::str::from_utf8(r.take(prov_len, "provenance")?)
        .map_err(|_| Error::Checkpoint("provenance is not valid UTF-8".into()))?
        .to_owned();

    let layer_count = r.u32("manifest")?;
    let mut manifest: Manifest = Vec::with_capacity(layer_count.min(1024));
    for _ in 0..layer_count {
        let kind = r.u8("manifest")?;
        if LayerKind::from_code(kind).is_none() {
            return Err(Error::Checkpoint(format!("unknown layer kind code {kind}")));
        }
        let count = r.u8("manifest")?;
        let mut tensors = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let role = r.u8("manifest")?;
            if TensorRole::from_code(role).is_none() {
                return Err(Error::Checkpoint(format!("unknown tensor role code {role}")));
            }
            let rank = r.u8("manifest")?;
            let dims = (0..rank)
                .map(|_| r.u32("manifest"))
                .collect::<Result<Vec<_>>>()?;
            tensors.push((role, dims));
        }
        manifest.push((kind, tensors));
    }

    let mut graph = ModelGraph::<f32>::zeroed(config)
        .map_err(|e| Error::Checkpoint(format!("invalid architecture: {e}")))?;
    if manifest != manifest_of(&graph) {
        return Err(Error::Checkpoint(
            "layer manifest does not match the stored architecture".into(),
        ));
    }
    let manifest_values: usize = manifest
        .iter()
        .flat_map(|(_, t)| t)
        .map(|(_, dims)| dims.iter().product::<usize>())
        .sum();

    let blob_len = r.u64("blob header")? as usize;
    if blob_len != 4 * manifest_values {
        return Err(Error::ManifestMismatch {
            manifest: manifest_values,
            blob: blob_len / 4,
        });
    }
    let blob = r.take(blob_len, "blob")?;
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes after blob",
            bytes.len() - r.pos
        )));
    }

    let mut values = blob
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()));
    for t in graph.tensors_mut() {
        for v in t.iter_mut() {
            *v = values.next().expect("blob length checked against manifest");
        }
    }
    for layer in graph.layers_mut() {
        if let LayerNode::BatchNorm(b) = layer {
            b.eps = eps;
            b.momentum = momentum;
        }
    }
    graph.set_provenance(provenance);
    Ok(graph)
}

/// Size in bytes of what [`save_checkpoint`] writes.
pub fn save_checkpoint(m: &ModelGraph, path: impl AsRef<Path>) -> Result<usize> {
    let path = path.as_ref();
    let bytes = encode_checkpoint(m);
    std::fs::write(path, &bytes).map_err(|e| Error::io(path, e))?;
    Ok(bytes.len())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ModelGraph> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::build_voltavision;
    use crate::tensor::Tensor;

    #[test]
    fn round_trip_is_bit_exact() {
        let mut m = build_voltavision(3, 5).unwrap();
        m.set_provenance("source=unit-test epochs=0 seed=5");
        m.forward_train(&Tensor::new_filled((2, 3, 32, 32), 0.4)).unwrap();
        let bytes = encode_checkpoint(&m);
        let back = decode_checkpoint(&bytes).unwrap();
        assert_eq!(encode_checkpoint(&back), bytes);
        assert_eq!(back.provenance(), m.provenance());
        let x = Tensor::new_filled((1, 3, 32, 32), 0.25);
        let a = m.forward_eval(&x).unwrap();
        let b = back.forward_eval(&x).unwrap();
        let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn blob_length_matches_counts() {
        let m = build_voltavision(10, 0).unwrap();
        let bytes = encode_checkpoint(&m);
        let with_stats = m.count_parameters().with_stats;
        assert!(bytes.len() > 4 * with_stats);
        let header = bytes.len() - 4 * with_stats;
        let blob_len = u64::from_le_bytes(bytes[header - 8..header].try_into().unwrap());
        assert_eq!(blob_len as usize, 4 * with_stats);
    }

    #[test]
    fn load_errors_are_distinct() {
        let m = build_voltavision(3, 1).unwrap();
        let bytes = encode_checkpoint(&m);

        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_checkpoint(&bad), Err(Error::BadMagic)));

        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(matches!(
            decode_checkpoint(&bad),
            Err(Error::VersionMismatch { found: 9, .. })
        ));

        let truncated = &bytes[..bytes.len() - 1];
        assert!(matches!(
            decode_checkpoint(truncated),
            Err(Error::Truncated { section: "blob", .. })
        ));

        let with_stats = m.count_parameters().with_stats;
        let header = bytes.len() - 4 * with_stats;
        let mut bad = bytes.clone();
        bad[header - 8..header].copy_from_slice(&(4 * with_stats as u64 + 4).to_le_bytes());
        assert!(matches!(
            decode_checkpoint(&bad),
            Err(Error::ManifestMismatch { .. })
        ));

        let mut bad = bytes.clone();
        bad.push(0);
        assert!(matches!(decode_checkpoint(&bad), Err(Error::Checkpoint(_))));
    }
}
