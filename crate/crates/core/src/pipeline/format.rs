//! Binary tensor and layer-artifact files. All integers and floats are
//! little-endian.
//!
//! Tensor: 12-byte magic, `u32` version, `u32` rank, `rank × u64` dims,
//! then `Π dims` `f32` values.
//!
//! Artifact: 12-byte magic, `u32` version, `u32` section count, then
//! sections of `[4-byte tag][u64 length][payload]`:
//!
//! | tag    | payload                                                      |
//! |--------|--------------------------------------------------------------|
//! | `DIMS` | `u64 n, m, n1, n2, k`, `u8` axis, `u8` word bits (64)        |
//! | `SIGN` | `⌈n·m/8⌉` bytes, row-major, bit `t` of byte `b` = entry `8b+t`|
//! | `SCAL` | `f32` alpha then `f32` beta, one per channel of the axis     |
//! | `SHFT` | `n × f32` row shift                                          |
//! | `ROT1` | `n1² × f32`, row-major                                       |
//! | `ROT2` | `n2² × f32`, row-major                                       |
//! | `RESA` | `n·k × f32`                                                  |
//! | `RESB` | `k·m × f32`                                                  |
//! | `CONF` | UTF-8 TOML of the producing configuration                    |

use std::path::Path;

use crate::binarize::{Axis, BinarizedWeights, PackedSigns};
use crate::error::{BwlaError, Result};
use crate::kernel::{FrameWeights, PackedLayer};
use crate::kronecker::{KroneckerDims, KroneckerRotation};
use crate::numerics::Matrix;
use crate::psp::LowRankResidual;

pub const TENSOR_MAGIC: [u8; 12] = *b"BWLA-TENSOR\0";
pub const TENSOR_VERSION: u32 = 1;
pub const ARTIFACT_MAGIC: [u8; 12] = *b"BWLA-LAYER\0\0";
pub const ARTIFACT_VERSION: u32 = 1;
const MAX_RANK: usize = 8;
/// Rotation factors are stored in `f32`, so loaded factors are only
/// orthogonal to single precision.
const LOADED_ORTHOGONALITY_TOL: f64 = 1e-5;

/// Dense `f32` tensor of any rank up to 8.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn from_matrix(m: &Matrix) -> Tensor {
        Tensor {
            dims: vec![m.rows(), m.cols()],
            data: m.data().iter().map(|&v| v as f32).collect(),
        }
    }

    pub fn from_vec(v: &[f64]) -> Tensor {
        Tensor {
            dims: vec![v.len()],
            data: v.iter().map(|&x| x as f32).collect(),
        }
    }

    /// Rank 1 becomes a single row; rank 2 maps directly.
    pub fn to_matrix(&self) -> Result<Matrix> {
        let (r, c) = match self.dims.as_slice() {
            [c] => (1, *c),
            [r, c] => (*r, *c),
            _ => {
                return Err(BwlaError::InvalidArgument(format!(
                    "expected a rank-1 or rank-2 tensor, got rank {}",
                    self.dims.len()
                )))
            }
        };
        Matrix::new(r, c, self.data.iter().map(|&v| v as f64).collect())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(20 + 8 * self.dims.len() + 4 * self.data.len());
        out.extend_from_slice(&TENSOR_MAGIC);
        out.extend_from_slice(&TENSOR_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.dims.len() as u32).to_le_bytes());
        for &d in &self.dims {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        put_f32s(&mut out, &self.data);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Tensor> {
        let mut r = Reader::new(bytes, "tensor");
        check_header(&mut r, &TENSOR_MAGIC, TENSOR_VERSION)?;
        let rank = r.u32()? as usize;
        if rank > MAX_RANK {
            return Err(r.err(format!("rank {rank} exceeds {MAX_RANK}")));
        }
        let mut dims = Vec::with_capacity(rank);
        let mut count: usize = 1;
        for _ in 0..rank {
            let d = r.len_u64()?;
            count = count
                .checked_mul(d)
                .ok_or_else(|| r.err("element count overflows".into()))?;
            dims.push(d);
        }
        let data = r.f32s(count)?;
        r.finish()?;
        Ok(Tensor { dims, data })
    }

    pub fn read(path: &Path) -> Result<Tensor> {
        Tensor::from_bytes(&std::fs::read(path)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }
}

/// A layer as stored on disk, with the configuration that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct Artifact {
    pub layer: PackedLayer,
    pub config_toml: String,
}

impl Artifact {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let layer = &self.layer;
        let bw = layer.binary().ok_or_else(|| {
            BwlaError::InvalidArgument("only binarized layers can be saved".into())
        })?;
        let (n, m) = (bw.rows(), bw.cols());
        let dims = layer.rotation.dims();
        let res = &layer.residual;

        let mut sections: Vec<([u8; 4], Vec<u8>)> = Vec::new();
        let mut d = Vec::new();
        for v in [n, m, dims.n1, dims.n2, res.k()] {
            d.extend_from_slice(&(v as u64).to_le_bytes());
        }
        d.push(bw.axis.code());
        d.push(64);
        sections.push((*b"DIMS", d));
        sections.push((*b"SIGN", bw.signs.to_bitstream()));
        let mut scal = Vec::new();
        put_f64s_as_f32(&mut scal, &bw.alpha);
        put_f64s_as_f32(&mut scal, &bw.beta);
        sections.push((*b"SCAL", scal));
        let mut f = |tag: [u8; 4], v: &[f64]| {
            let mut buf = Vec::new();
            put_f64s_as_f32(&mut buf, v);
            sections.push((tag, buf));
        };
        f(*b"SHFT", &layer.row_shift);
        f(*b"ROT1", layer.rotation.r1().data());
        f(*b"ROT2", layer.rotation.r2().data());
        f(*b"RESA", res.a().data());
        f(*b"RESB", res.b().data());
        sections.push((*b"CONF", self.config_toml.as_bytes().to_vec()));

        let mut out = Vec::new();
        out.extend_from_slice(&ARTIFACT_MAGIC);
        out.extend_from_slice(&ARTIFACT_VERSION.to_le_bytes());
        out.extend_from_slice(&(sections.len() as u32).to_le_bytes());
        for (tag, payload) in sections {
            out.extend_from_slice(&tag);
            out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
            out.extend_from_slice(&payload);
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Artifact> {
        let mut r = Reader::new(bytes, "artifact");
        check_header(&mut r, &ARTIFACT_MAGIC, ARTIFACT_VERSION)?;
        let count = r.u32()? as usize;
        const TAGS: [&[u8; 4]; 9] = [
            b"DIMS", b"SIGN", b"SCAL", b"SHFT", b"ROT1", b"ROT2", b"RESA", b"RESB", b"CONF",
        ];
        let mut found: [Option<&[u8]>; 9] = [None; 9];
        for _ in 0..count {
            let tag = r.take(4)?;
            let len = r.len_u64()?;
            let payload = r.take(len)?;
            let slot = TAGS
                .iter()
                .position(|t| t.as_slice() == tag)
                .ok_or_else(|| r.err(format!("unknown section {:?}", String::from_utf8_lossy(tag))))?;
            if found[slot].replace(payload).is_some() {
                return Err(r.err(format!("duplicate section {:?}", String::from_utf8_lossy(tag))));
            }
        }
        r.finish()?;
        let section = |i: usize| {
            found[i].ok_or_else(|| {
                BwlaError::format(
                    "artifact",
                    format!("missing section {}", String::from_utf8_lossy(TAGS[i])),
                )
            })
        };

        let mut d = Reader::new(section(0)?, "artifact DIMS section");
        let (n, m, n1, n2, k) = (d.len_u64()?, d.len_u64()?, d.len_u64()?, d.len_u64()?, d.len_u64()?);
        let axis_code = d.u8()?;
        let word_bits = d.u8()?;
        d.finish()?;
        let axis = Axis::from_code(axis_code)
            .ok_or_else(|| d.err(format!("unknown axis code {axis_code}")))?;
        if word_bits != 64 {
            return Err(d.err(format!("unsupported word size {word_bits}")));
        }
        if n == 0 || m == 0 {
            return Err(d.err("empty layer".into()));
        }
        let dims = KroneckerDims::new(n1, n2).map_err(|e| d.err(e.to_string()))?;
        if n1.checked_mul(n2) != Some(m) {
            return Err(d.err(format!("factor dims {n1}x{n2} do not match width {m}")));
        }
        if k == 0 || k > n.min(m) {
            return Err(d.err(format!("residual rank {k} outside 1..={}", n.min(m))));
        }
        let sign_bytes = section(1)?;
        if n.checked_mul(m).map(|nm| nm.div_ceil(8)) != Some(sign_bytes.len()) {
            return Err(BwlaError::format(
                "artifact",
                format!("SIGN section size does not match {n}x{m}"),
            ));
        }

        let signs = PackedSigns::from_bitstream(n, m, sign_bytes)?;
        let channels = match axis {
            Axis::Row => n,
            Axis::Column => m,
        };
        let scal = floats(section(2)?, 2 * channels, "SCAL")?;
        let (alpha, beta) = scal.split_at(channels);
        let row_shift = floats(section(3)?, n, "SHFT")?;
        let r1 = Matrix::new(n1, n1, floats(section(4)?, n1 * n1, "ROT1")?)?;
        let r2 = Matrix::new(n2, n2, floats(section(5)?, n2 * n2, "ROT2")?)?;
        let a = Matrix::new(n, k, floats(section(6)?, n * k, "RESA")?)?;
        let b = Matrix::new(k, m, floats(section(7)?, k * m, "RESB")?)?;
        let config_toml = std::str::from_utf8(section(8)?)
            .map_err(|_| BwlaError::format("artifact", "CONF section is not UTF-8"))?
            .to_string();

        let rotation = KroneckerRotation::from_factors_unchecked(r1, r2)?;
        debug_assert_eq!(rotation.dims(), dims);
        if !(rotation.orthogonality_drift() <= LOADED_ORTHOGONALITY_TOL) {
            return Err(BwlaError::format("artifact", "rotation factors are not orthogonal"));
        }
        let bw = BinarizedWeights {
            signs,
            alpha: alpha.to_vec(),
            beta: beta.to_vec(),
            axis,
        };
        bw.validate()?;
        Ok(Artifact {
            layer: PackedLayer {
                weights: FrameWeights::Binary(bw),
                row_shift,
                rotation,
                residual: LowRankResidual::from_factors(a, b)?,
            },
            config_toml,
        })
    }
}

pub fn save_layer(path: &Path, artifact: &Artifact) -> Result<()> {
    std::fs::write(path, artifact.to_bytes()?)?;
    Ok(())
}

pub fn load_layer(path: &Path) -> Result<Artifact> {
    Artifact::from_bytes(&std::fs::read(path)?)
}

/// Rounds every value through `f32`, the on-disk precision.
pub fn round_to_f32(values: &[f64]) -> Vec<f64> {
    values.iter().map(|&v| v as f32 as f64).collect()
}

fn put_f32s(out: &mut Vec<u8>, values: &[f32]) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn put_f64s_as_f32(out: &mut Vec<u8>, values: &[f64]) {
    for &v in values {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

fn floats(payload: &[u8], count: usize, tag: &str) -> Result<Vec<f64>> {
    if Some(payload.len()) != count.checked_mul(4) {
        return Err(BwlaError::format(
            "artifact",
            format!("{tag} section holds {} bytes, expected {count} f32 values", payload.len()),
        ));
    }
    let values: Vec<f64> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(BwlaError::format("artifact", format!("{tag} section holds non-finite values")));
    }
    Ok(values)
}

fn check_header(r: &mut Reader<'_>, magic: &[u8; 12], supported: u32) -> Result<()> {
    if r.take(12)? != magic {
        return Err(r.err("bad magic".into()));
    }
    let found = r.u32()?;
    if found != supported {
        return Err(BwlaError::Version {
            what: r.what,
            found,
            supported,
        });
    }
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    what: &'static str,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8], what: &'static str) -> Self {
        Reader { bytes, pos: 0, what }
    }

    fn err(&self, reason: String) -> BwlaError {
        BwlaError::format(self.what, reason)
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| self.err(format!("truncated at byte {}", self.pos)))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn len_u64(&mut self) -> Result<usize> {
        let v = u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes"));
        usize::try_from(v).map_err(|_| self.err(format!("length {v} does not fit in memory")))
    }

    fn f32s(&mut self, count: usize) -> Result<Vec<f32>> {
        let bytes = count
            .checked_mul(4)
            .ok_or_else(|| self.err("payload size overflows".into()))?;
        Ok(self
            .take(bytes)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(self.err(format!(
                "{} trailing bytes",
                self.bytes.len() - self.pos
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::binarize::binarize;
    use crate::kronecker::factor_dims;

    fn sample_artifact() -> Artifact {
        let w = Matrix::from_fn(3, 6, |i, j| ((i * 6 + j) as f64 * 0.9).sin());
        Artifact {
            layer: PackedLayer {
                weights: FrameWeights::Binary(binarize(&w, Axis::Row)),
                row_shift: vec![0.0; 3],
                rotation: KroneckerRotation::identity(factor_dims(6)),
                residual: LowRankResidual::zeros(3, 6, 1),
            },
            config_toml: "seed = 1\n".into(),
        }
    }

    #[test]
    fn tensor_round_trip() {
        let t = Tensor {
            dims: vec![2, 3],
            data: vec![1.0, -2.5, 0.0, 3.25, 1e-3, -7.0],
        };
        let bytes = t.to_bytes();
        assert_eq!(bytes.len(), 16 + 4 + 16 + 24);
        assert_eq!(Tensor::from_bytes(&bytes).unwrap(), t);
        assert_eq!(t.to_matrix().unwrap().shape(), (2, 3));

        let mut bad = bytes.clone();
        bad[0] ^= 1;
        assert!(matches!(Tensor::from_bytes(&bad), Err(BwlaError::Format { .. })));
        let mut ver = bytes.clone();
        ver[12] = 2;
        assert!(matches!(Tensor::from_bytes(&ver), Err(BwlaError::Version { found: 2, .. })));
        assert!(Tensor::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut long = bytes;
        long.push(0);
        assert!(Tensor::from_bytes(&long).is_err());
    }

    #[test]
    fn artifact_round_trip_is_byte_identical() {
        let bytes = sample_artifact().to_bytes().unwrap();
        let loaded = Artifact::from_bytes(&bytes).unwrap();
        assert_eq!(loaded.to_bytes().unwrap(), bytes);
        assert_eq!(loaded.config_toml, "seed = 1\n");
    }

    #[test]
    fn artifact_rejects_corruption() {
        let bytes = sample_artifact().to_bytes().unwrap();
        let mut magic = bytes.clone();
        magic[3] = b'x';
        let err = Artifact::from_bytes(&magic).unwrap_err();
        assert!(err.to_string().contains("bad magic"), "{err}");

        let mut ver = bytes.clone();
        ver[12..16].copy_from_slice(&7u32.to_le_bytes());
        assert!(matches!(Artifact::from_bytes(&ver), Err(BwlaError::Version { found: 7, .. })));

        for cut in [0, 10, 20, bytes.len() / 2, bytes.len() - 1] {
            assert!(Artifact::from_bytes(&bytes[..cut]).is_err());
        }
    }

    #[test]
    fn dense_layers_cannot_be_saved() {
        let mut a = sample_artifact();
        a.layer.weights = FrameWeights::Dense(Matrix::zeros(3, 6));
        assert!(a.to_bytes().is_err());
    }
}
