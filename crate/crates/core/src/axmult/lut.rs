use std::fs;
use std::io::Write;
use std::path::Path;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use super::{MultiplierSpec, ScaleTrim, MAX_PRODUCT};
use crate::error::{Error, Result};

pub const LUT_DIM: usize = 256;
pub const LUT_MAGIC: &[u8; 8] = b"AXLUT1\0\0";

const HEADER_LEN: usize = 8 + 4 + 4;
const PAYLOAD_LEN: usize = LUT_DIM * LUT_DIM * 4;
const FILE_LEN: usize = HEADER_LEN + PAYLOAD_LEN + 4;

/// 256×256 table of signed products, row-major with `a` as the row.
#[derive(Debug, Clone)]
pub struct ProductLut {
    spec: MultiplierSpec,
    entries: Vec<i32>,
}

impl ProductLut {
    /// Wraps raw entries after checking the table invariants.
    pub fn from_entries(spec: MultiplierSpec, entries: Vec<i32>) -> Result<Self> {
        if entries.len() != LUT_DIM * LUT_DIM {
            return Err(Error::LutFormat(format!(
                "expected {} entries, got {}",
                LUT_DIM * LUT_DIM,
                entries.len()
            )));
        }
        let lut = ProductLut { spec, entries };
        lut.check_invariants()?;
        Ok(lut)
    }

    fn check_invariants(&self) -> Result<()> {
        for a in 0..LUT_DIM {
            if self.entries[a] != 0 || self.entries[a * LUT_DIM] != 0 {
                return Err(Error::LutFormat(format!("nonzero product with zero operand at {a}")));
            }
            for b in 0..LUT_DIM {
                let v = self.entries[a * LUT_DIM + b];
                if v.abs() > MAX_PRODUCT {
                    return Err(Error::LutFormat(format!(
                        "entry [{a}][{b}] = {v} exceeds {MAX_PRODUCT}"
                    )));
                }
                if v != self.entries[b * LUT_DIM + a] {
                    return Err(Error::LutFormat(format!("table not symmetric at [{a}][{b}]")));
                }
            }
        }
        Ok(())
    }

    pub fn spec(&self) -> &MultiplierSpec {
        &self.spec
    }

    #[inline]
    pub fn get(&self, a: u8, b: u8) -> i32 {
        self.entries[(a as usize) << 8 | b as usize]
    }

    /// Row `a` of the table, indexed by `b`.
    #[inline]
    pub fn row(&self, a: u8) -> &[i32] {
        let start = (a as usize) * LUT_DIM;
        &self.entries[start..start + LUT_DIM]
    }

    pub fn entries(&self) -> &[i32] {
        &self.entries
    }
}

fn tabulate(kernel: impl Fn(u8, u8) -> u32 + Sync) -> Vec<i32> {
    let row = |a: usize| -> Vec<i32> {
        (0..LUT_DIM)
            .map(|b| kernel(a as u8, b as u8) as i32)
            .collect()
    };
    #[cfg(feature = "parallel")]
    let rows: Vec<Vec<i32>> = (0..LUT_DIM).into_par_iter().map(row).collect();
    #[cfg(not(feature = "parallel"))]
    let rows: Vec<Vec<i32>> = (0..LUT_DIM).map(row).collect();
    rows.concat()
}

/// Compiles a multiplier into its product table.
pub fn build_lut(spec: &MultiplierSpec) -> Result<ProductLut> {
    spec.validate()?;
    let entries = match *spec {
        MultiplierSpec::Exact => tabulate(|a, b| a as u32 * b as u32),
        MultiplierSpec::Drum { k } => {
            let k = k as u32;
            tabulate(move |a, b| super::drum_scalar(a, b, k).expect("validated width"))
        }
        MultiplierSpec::ScaleTrim { t, c } => {
            let kernel = ScaleTrim::new(t as u32, c as u32)?;
            tabulate(move |a, b| kernel.multiply(a, b))
        }
        MultiplierSpec::FromFile { ref path } => return load_lut(path),
    };
    ProductLut::from_entries(spec.clone(), entries)
}

fn encode(lut: &ProductLut) -> Vec<u8> {
    let mut out = Vec::with_capacity(FILE_LEN);
    out.extend_from_slice(LUT_MAGIC);
    out.extend_from_slice(&(LUT_DIM as u32).to_le_bytes());
    out.extend_from_slice(&(LUT_DIM as u32).to_le_bytes());
    for v in &lut.entries {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let crc = crc32fast::hash(&out[HEADER_LEN..]);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

pub(crate) fn decode(bytes: &[u8], spec: MultiplierSpec) -> Result<ProductLut> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::LutFormat(format!("file too short ({} bytes)", bytes.len())));
    }
    if &bytes[..8] != LUT_MAGIC {
        return Err(Error::LutFormat("bad magic".to_string()));
    }
    let rows = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    let cols = u32::from_le_bytes(bytes[12..16].try_into().unwrap());
    if rows as usize != LUT_DIM || cols as usize != LUT_DIM {
        return Err(Error::LutFormat(format!("dimensions {rows}x{cols}, expected 256x256")));
    }
    if bytes.len() != FILE_LEN {
        return Err(Error::LutFormat(format!(
            "truncated or oversized payload: {} bytes, expected {FILE_LEN}",
            bytes.len()
        )));
    }
    let payload = &bytes[HEADER_LEN..HEADER_LEN + PAYLOAD_LEN];
    let stored = u32::from_le_bytes(bytes[HEADER_LEN + PAYLOAD_LEN..].try_into().unwrap());
    let actual = crc32fast::hash(payload);
    if stored != actual {
        return Err(Error::LutFormat(format!(
            "checksum mismatch: stored {stored:08x}, computed {actual:08x}"
        )));
    }
    let entries = payload
        .chunks_exact(4)
        .map(|c| i32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    ProductLut::from_entries(spec, entries)
}

pub fn save_lut(lut: &ProductLut, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&encode(lut)).map_err(|e| Error::io(path, e))
}

pub fn load_lut(path: impl AsRef<Path>) -> Result<ProductLut> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(
        &bytes,
        MultiplierSpec::FromFile {
            path: path.to_path_buf(),
        },
    )
}

impl ProductLut {
    /// Serialized LUT file contents.
    pub fn to_bytes(&self) -> Vec<u8> {
        encode(self)
    }

    pub fn from_bytes(bytes: &[u8], spec: MultiplierSpec) -> Result<Self> {
        decode(bytes, spec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_corner() {
        let lut = build_lut(&MultiplierSpec::Exact).unwrap();
        assert_eq!(lut.get(255, 255), 65025);
        assert_eq!(lut.get(0, 255), 0);
        assert_eq!(lut.get(13, 11), 143);
    }

    #[test]
    fn drum3_entry() {
        let lut = build_lut(&MultiplierSpec::Drum { k: 3 }).unwrap();
        assert_eq!(lut.get(109, 23), 2240);
        assert_eq!(lut.row(109)[23], 2240);
    }

    #[test]
    fn layout_is_little_endian_row_major() {
        let lut = build_lut(&MultiplierSpec::Exact).unwrap();
        let bytes = lut.to_bytes();
        assert_eq!(bytes.len(), FILE_LEN);
        assert_eq!(&bytes[..8], b"AXLUT1\0\0");
        assert_eq!(&bytes[8..16], &[0, 1, 0, 0, 0, 1, 0, 0]);
        // entry [1][2] sits at index 258
        let off = HEADER_LEN + 258 * 4;
        assert_eq!(&bytes[off..off + 4], &2i32.to_le_bytes());
    }

    #[test]
    fn round_trip_through_file() {
        let dir = tempfile::tempdir().unwrap();
        for spec in [MultiplierSpec::Exact, MultiplierSpec::Drum { k: 3 }] {
            let lut = build_lut(&spec).unwrap();
            let path = dir.path().join(format!("{spec}.axlut"));
            save_lut(&lut, &path).unwrap();
            let back = load_lut(&path).unwrap();
            assert_eq!(back.entries(), lut.entries());
            assert!(matches!(back.spec(), MultiplierSpec::FromFile { .. }));
        }
        let back = load_lut(dir.path().join("drum3.axlut")).unwrap();
        assert_eq!(back.get(109, 23), 2240);
    }

    #[test]
    fn malformed_files_rejected() {
        let lut = build_lut(&MultiplierSpec::Exact).unwrap();
        let bytes = lut.to_bytes();
        let spec = MultiplierSpec::Exact;

        let truncated = &bytes[..bytes.len() - 100];
        assert!(matches!(decode(truncated, spec.clone()), Err(Error::LutFormat(_))));

        let mut magic = bytes.clone();
        magic[0] = b'X';
        assert!(decode(&magic, spec.clone()).unwrap_err().to_string().contains("magic"));

        let mut dims = bytes.clone();
        dims[8] = 1;
        assert!(decode(&dims, spec.clone()).unwrap_err().to_string().contains("dimensions"));

        let mut flipped = bytes.clone();
        flipped[HEADER_LEN + 1000] ^= 0x40;
        assert!(decode(&flipped, spec.clone()).unwrap_err().to_string().contains("checksum"));
    }

    #[test]
    fn asymmetric_tables_rejected() {
        let mut entries = build_lut(&MultiplierSpec::Exact).unwrap().entries().to_vec();
        entries[3 * 256 + 5] += 1;
        assert!(ProductLut::from_entries(MultiplierSpec::Exact, entries).is_err());
    }
}
