//! Single-file model container.
//!
//! ```text
//! magic       8 bytes  "AXMODEL\0"
//! version     u32 LE
//! header_len  u32 LE
//! header      JSON: name, input shape, layer kinds, topology hash, metadata
//! n_params    u64 LE
//! params      n_params × f64 LE, layer order, weights then bias
//! has_qp      u8 (0 or 1)
//! qparams     if has_qp: input_scale f64, n u32, n × activation scale f64,
//!             n × (u8 flag, f64 weight scale)
//! crc32       u32 LE over every preceding byte
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::nnengine::{LayerKind, ModelSpec, Shape};
use crate::quant::QuantParams;

pub const CONTAINER_MAGIC: [u8; 8] = *b"AXMODEL\0";
pub const CONTAINER_VERSION: u32 = 1;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainMeta {
    pub seed: u64,
    pub epochs: usize,
    /// Float top-1 accuracy on the test split, if measured.
    pub final_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelContainer {
    pub model: ModelSpec,
    pub qparams: Option<QuantParams>,
    pub meta: TrainMeta,
}

#[derive(Serialize, Deserialize)]
struct Header {
    name: String,
    input: Shape,
    layers: Vec<LayerKind>,
    topology_hash: String,
    meta: TrainMeta,
}

/// SHA-256 (hex) of the weight-free topology.
pub fn topology_hash(model: &ModelSpec) -> String {
    let canon = serde_json::to_vec(&(model.input, model.kinds())).expect("topology serializes");
    Sha256::digest(&canon).iter().map(|b| format!("{b:02x}")).collect()
}

impl ModelContainer {
    pub fn new(model: ModelSpec, meta: TrainMeta) -> Self {
        ModelContainer {
            model,
            qparams: None,
            meta,
        }
    }

    /// The quantization parameters, or `NotCalibrated`.
    pub fn require_qparams(&self) -> Result<&QuantParams> {
        self.qparams.as_ref().ok_or(Error::NotCalibrated)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            name: self.model.name.clone(),
            input: self.model.input,
            layers: self.model.kinds(),
            topology_hash: topology_hash(&self.model),
            meta: self.meta.clone(),
        };
        let header = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::new();
        out.extend_from_slice(&CONTAINER_MAGIC);
        out.extend_from_slice(&CONTAINER_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);

        let params: Vec<f64> = self
            .model
            .layers
            .iter()
            .filter_map(|l| Some(l.weights()?.iter().chain(l.bias()?)))
            .flatten()
            .copied()
            .collect();
        out.extend_from_slice(&(params.len() as u64).to_le_bytes());
        for p in params {
            out.extend_from_slice(&p.to_le_bytes());
        }

        match &self.qparams {
            None => out.push(0),
            Some(qp) => {
                out.push(1);
                out.extend_from_slice(&qp.input_scale.to_le_bytes());
                out.extend_from_slice(&(qp.activation_scales.len() as u32).to_le_bytes());
                for s in &qp.activation_scales {
                    out.extend_from_slice(&s.to_le_bytes());
                }
                for w in &qp.weight_scales {
                    out.push(w.is_some() as u8);
                    out.extend_from_slice(&w.unwrap_or(0.0).to_le_bytes());
                }
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: String| Error::Container(m);
        if bytes.len() < 8 + 4 + 4 + 4 {
            return Err(bad(format!("file too short ({} bytes)", bytes.len())));
        }
        if bytes[..8] != CONTAINER_MAGIC {
            return Err(bad("bad magic".into()));
        }
        let mut r = Reader { bytes, pos: 8 };
        let version = r.u32()?;
        if version != CONTAINER_VERSION {
            return Err(bad(format!(
                "unsupported version {version} (expected {CONTAINER_VERSION})"
            )));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().unwrap());
        let actual = crc32fast::hash(body);
        if stored != actual {
            return Err(bad(format!(
                "checksum mismatch: stored {stored:#010x}, computed {actual:#010x}"
            )));
        }
        r.bytes = body;

        let header_len = r.u32()? as usize;
        let header: Header =
            serde_json::from_slice(r.take(header_len)?).map_err(|e| bad(format!("header: {e}")))?;
        let mut model = ModelSpec::from_kinds(header.name, header.input, &header.layers)?;
        let hash = topology_hash(&model);
        if hash != header.topology_hash {
            return Err(bad(format!(
                "topology hash mismatch: header says {}, topology gives {hash}",
                header.topology_hash
            )));
        }

        let n_params = r.u64()? as usize;
        if n_params != model.param_count() {
            return Err(bad(format!(
                "{n_params} parameters stored, topology needs {}",
                model.param_count()
            )));
        }
        for layer in &mut model.layers {
            if let Some((w, b)) = layer.params_mut() {
                for p in w.iter_mut().chain(b.iter_mut()) {
                    *p = r.f64()?;
                }
            }
        }

        let qparams = match r.u8()? {
            0 => None,
            1 => {
                let input_scale = r.f64()?;
                let n = r.u32()? as usize;
                let activation_scales = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
                let mut weight_scales = Vec::with_capacity(n);
                for _ in 0..n {
                    let flag = r.u8()?;
                    let s = r.f64()?;
                    weight_scales.push((flag == 1).then_some(s));
                }
                let qp = QuantParams {
                    input_scale,
                    activation_scales,
                    weight_scales,
                };
                qp.validate_for(&model)?;
                Some(qp)
            }
            f => return Err(bad(format!("invalid quantization flag {f}"))),
        };
        if r.pos != body.len() {
            return Err(bad(format!("{} unexpected trailing bytes", body.len() - r.pos)));
        }
        Ok(ModelContainer {
            model,
            qparams,
            meta: header.meta,
        })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(Error::Container(format!("truncated at byte {}", self.pos)));
        };
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn save_model(container: &ModelContainer, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, container.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<ModelContainer> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    ModelContainer::from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(with_qp: bool) -> ModelContainer {
        let mut model = ModelSpec::lenet5();
        model.init_params(3);
        let mut c = ModelContainer::new(
            model,
            TrainMeta {
                seed: 3,
                epochs: 2,
                final_accuracy: Some(0.5),
            },
        );
        if with_qp {
            let x = vec![0.5; 784];
            c.qparams = Some(crate::quant::calibrate(&c.model, [x.as_slice()]).unwrap());
        }
        c
    }

    #[test]
    fn round_trip_is_bit_exact() {
        for qp in [false, true] {
            let c = sample(qp);
            let back = ModelContainer::from_bytes(&c.to_bytes()).unwrap();
            assert_eq!(back, c);
            assert_eq!(back.qparams.is_some(), qp);
        }
    }

    #[test]
    fn missing_qparams_needs_calibration() {
        let back = ModelContainer::from_bytes(&sample(false).to_bytes()).unwrap();
        assert!(matches!(back.require_qparams(), Err(Error::NotCalibrated)));
    }

    fn reseal(bytes: &mut Vec<u8>) {
        bytes.truncate(bytes.len() - 4);
        let crc = crc32fast::hash(bytes);
        bytes.extend_from_slice(&crc.to_le_bytes());
    }

    #[test]
    fn tampered_hash_is_rejected() {
        let mut bytes = sample(false).to_bytes();
        let at = bytes
            .windows(16)
            .position(|w| w == b"topology_hash\":\"")
            .unwrap()
            + 16;
        bytes[at] = if bytes[at] == b'0' { b'1' } else { b'0' };
        reseal(&mut bytes);
        let e = ModelContainer::from_bytes(&bytes).unwrap_err().to_string();
        assert!(e.contains("topology hash mismatch"), "{e}");
    }

    #[test]
    fn corruption_and_version_are_rejected() {
        let good = sample(true).to_bytes();
        let mut flipped = good.clone();
        flipped[200] ^= 0x40;
        let e = ModelContainer::from_bytes(&flipped).unwrap_err().to_string();
        assert!(e.contains("checksum"), "{e}");

        let mut v2 = good.clone();
        v2[8] = 2;
        reseal(&mut v2);
        let e = ModelContainer::from_bytes(&v2).unwrap_err().to_string();
        assert!(e.contains("version"), "{e}");

        assert!(ModelContainer::from_bytes(&good[..10]).is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.axm");
        let c = sample(true);
        save_model(&c, &p).unwrap();
        assert_eq!(load_model(&p).unwrap(), c);
    }
}
