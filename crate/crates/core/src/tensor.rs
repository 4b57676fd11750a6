//! Binary tensor interchange format.
//!
//! Layout (little-endian):
//! - magic: `b"PXT1"`
//! - version: u32 (= 1)
//! - dtype: u32 (1 = f32, 2 = u16)
//! - rank: u32 (1..=3)
//! - extents: rank * u32
//! - data: row-major payload, `product(extents)` elements

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"PXT1";
pub const VERSION: u32 = 1;
pub const MAX_RANK: usize = 3;

/// Size of the fixed part of the header (magic, version, dtype, rank).
pub const HEADER_LEN: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    F32,
    U16,
}

impl DType {
    pub fn code(self) -> u32 {
        match self {
            DType::F32 => 1,
            DType::U16 => 2,
        }
    }

    pub fn from_code(code: u32) -> Option<Self> {
        match code {
            1 => Some(DType::F32),
            2 => Some(DType::U16),
            _ => None,
        }
    }

    pub fn size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::U16 => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    U16(Vec<u16>),
}

impl TensorData {
    pub fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::U16(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dtype(&self) -> DType {
        match self {
            TensorData::F32(_) => DType::F32,
            TensorData::U16(_) => DType::U16,
        }
    }
}

/// A dense row-major tensor of rank 1 to 3.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: TensorData,
}

fn check_shape(shape: &[usize], len: usize) -> Result<()> {
    if shape.is_empty() || shape.len() > MAX_RANK {
        return Err(Error::Shape(format!(
            "rank must be between 1 and {MAX_RANK}, got {}",
            shape.len()
        )));
    }
    if let Some(pos) = shape.iter().position(|&e| e == 0) {
        return Err(Error::Shape(format!("extent {pos} is zero in {shape:?}")));
    }
    if shape.iter().any(|&e| e > u32::MAX as usize) {
        return Err(Error::Shape(format!("extent exceeds u32 in {shape:?}")));
    }
    let expected: usize = shape.iter().product();
    if expected != len {
        return Err(Error::Shape(format!(
            "shape {shape:?} implies {expected} elements, payload has {len}"
        )));
    }
    Ok(())
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: TensorData) -> Result<Self> {
        check_shape(&shape, data.len())?;
        Ok(Self { shape, data })
    }

    pub fn from_f32(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        Self::new(shape, TensorData::F32(data))
    }

    pub fn from_u16(shape: Vec<usize>, data: Vec<u16>) -> Result<Self> {
        Self::new(shape, TensorData::U16(data))
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn dtype(&self) -> DType {
        self.data.dtype()
    }

    pub fn data(&self) -> &TensorData {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_f32(&self) -> Option<&[f32]> {
        match &self.data {
            TensorData::F32(v) => Some(v),
            TensorData::U16(_) => None,
        }
    }

    pub fn as_u16(&self) -> Option<&[u16]> {
        match &self.data {
            TensorData::U16(v) => Some(v),
            TensorData::F32(_) => None,
        }
    }

    pub fn into_f32(self) -> Option<(Vec<usize>, Vec<f32>)> {
        match self.data {
            TensorData::F32(v) => Some((self.shape, v)),
            TensorData::U16(_) => None,
        }
    }

    pub fn into_u16(self) -> Option<(Vec<usize>, Vec<u16>)> {
        match self.data {
            TensorData::U16(v) => Some((self.shape, v)),
            TensorData::F32(_) => None,
        }
    }

    /// Serializes the tensor into the interchange byte layout.
    pub fn to_bytes(&self) -> Vec<u8> {
        let payload = self.len() * self.dtype().size();
        let mut out = Vec::with_capacity(HEADER_LEN + 4 * self.rank() + payload);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&self.dtype().code().to_le_bytes());
        out.extend_from_slice(&(self.rank() as u32).to_le_bytes());
        for &e in &self.shape {
            out.extend_from_slice(&(e as u32).to_le_bytes());
        }
        match &self.data {
            TensorData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            TensorData::U16(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        }
        out
    }

    /// Parses the interchange byte layout. `path` is only used in error messages.
    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let fail = |offset: usize, message: String| Error::Format {
            path: path.to_path_buf(),
            offset: offset as u64,
            message,
        };
        let read_u32 = |offset: usize| -> Result<u32> {
            bytes
                .get(offset..offset + 4)
                .map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .ok_or_else(|| fail(offset, format!("header truncated ({} bytes)", bytes.len())))
        };

        if bytes.len() < 4 || &bytes[..4] != MAGIC {
            let found = &bytes[..bytes.len().min(4)];
            return Err(fail(0, format!("bad magic {found:?}, expected \"PXT1\"")));
        }
        let version = read_u32(4)?;
        if version != VERSION {
            return Err(fail(4, format!("unsupported version {version}")));
        }
        let code = read_u32(8)?;
        let dtype = DType::from_code(code).ok_or_else(|| fail(8, format!("unknown dtype code {code}")))?;
        let rank = read_u32(12)? as usize;
        if rank == 0 || rank > MAX_RANK {
            return Err(fail(12, format!("rank {rank} outside 1..={MAX_RANK}")));
        }
        let mut shape = Vec::with_capacity(rank);
        for i in 0..rank {
            let offset = HEADER_LEN + 4 * i;
            let extent = read_u32(offset)? as usize;
            if extent == 0 {
                return Err(fail(offset, format!("extent {i} is zero")));
            }
            shape.push(extent);
        }

        let start = HEADER_LEN + 4 * rank;
        let count = shape
            .iter()
            .try_fold(1usize, |acc, &e| acc.checked_mul(e))
            .ok_or_else(|| fail(HEADER_LEN, "element count overflows".into()))?;
        let expected = count
            .checked_mul(dtype.size())
            .ok_or_else(|| fail(HEADER_LEN, "payload size overflows".into()))?;
        let actual = bytes.len() - start;
        if actual != expected {
            return Err(fail(
                start,
                format!("payload length mismatch: expected {expected} bytes, found {actual}"),
            ));
        }
        let payload = &bytes[start..];
        let data = match dtype {
            DType::F32 => TensorData::F32(
                payload
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                    .collect(),
            ),
            DType::U16 => TensorData::U16(
                payload
                    .chunks_exact(2)
                    .map(|c| u16::from_le_bytes([c[0], c[1]]))
                    .collect(),
            ),
        };
        Ok(Self { shape, data })
    }
}

pub fn save_tensor(tensor: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut writer = BufWriter::new(file);
    writer
        .write_all(&tensor.to_bytes())
        .and_then(|_| writer.flush())
        .map_err(|e| Error::io(path, e))
}

pub fn load_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Tensor::from_bytes(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn p() -> &'static Path {
        Path::new("mem")
    }

    #[test]
    fn two_by_two_layout() {
        let t = Tensor::from_f32(vec![2, 2], vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let bytes = t.to_bytes();
        // 16 header bytes, 8 extent bytes, 16 payload bytes
        assert_eq!(bytes.len(), HEADER_LEN + 8 + 16);
        assert_eq!(&bytes[..4], b"PXT1");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()), 2);
        assert_eq!(&bytes[28..32], &1.0f32.to_le_bytes());
        assert_eq!(Tensor::from_bytes(&bytes, p()).unwrap(), t);
    }

    #[test]
    fn rank3_header() {
        let t = Tensor::from_f32(vec![3, 4, 5], vec![0.5; 60]).unwrap();
        let bytes = t.to_bytes();
        assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()), 3);
        let extents: Vec<u32> = bytes[16..28]
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        assert_eq!(extents, vec![3, 4, 5]);
    }

    #[test]
    fn u16_ignore_survives() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.pxt");
        let t = Tensor::from_u16(vec![1, 3], vec![0, 65535, 2]).unwrap();
        save_tensor(&t, &path).unwrap();
        let back = load_tensor(&path).unwrap();
        assert_eq!(back.dtype(), DType::U16);
        assert_eq!(back.as_u16().unwrap()[1], 65535);
    }

    #[test]
    fn bad_magic() {
        let mut bytes = Tensor::from_f32(vec![1], vec![1.0]).unwrap().to_bytes();
        bytes[..4].copy_from_slice(b"XXXX");
        match Tensor::from_bytes(&bytes, p()) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 0),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_dtype() {
        let mut bytes = Tensor::from_f32(vec![1], vec![1.0]).unwrap().to_bytes();
        bytes[8..12].copy_from_slice(&7u32.to_le_bytes());
        match Tensor::from_bytes(&bytes, p()) {
            Err(Error::Format { offset, message, .. }) => {
                assert_eq!(offset, 8);
                assert!(message.contains("dtype"));
            }
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn truncated_payload_names_lengths() {
        let mut bytes = Tensor::from_f32(vec![2, 2], vec![0.0; 4]).unwrap().to_bytes();
        bytes.truncate(bytes.len() - 3);
        let err = Tensor::from_bytes(&bytes, p()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("expected 16"), "{msg}");
        assert!(msg.contains("found 13"), "{msg}");
    }

    #[test]
    fn truncated_header() {
        let bytes = Tensor::from_f32(vec![2, 2], vec![0.0; 4]).unwrap().to_bytes();
        assert!(matches!(
            Tensor::from_bytes(&bytes[..18], p()),
            Err(Error::Format { .. })
        ));
    }

    #[test]
    fn constructor_rejects_bad_shapes() {
        assert!(Tensor::from_f32(vec![], vec![]).is_err());
        assert!(Tensor::from_f32(vec![1, 1, 1, 1], vec![0.0]).is_err());
        assert!(Tensor::from_f32(vec![2, 0], vec![]).is_err());
        assert!(Tensor::from_f32(vec![2, 2], vec![0.0; 3]).is_err());
    }

    fn arb_tensor() -> impl Strategy<Value = Tensor> {
        prop::collection::vec(1usize..6, 1..=3).prop_flat_map(|shape| {
            let n: usize = shape.iter().product();
            prop_oneof![
                prop::collection::vec(any::<f32>(), n)
                    .prop_map({
                        let shape = shape.clone();
                        move |v| Tensor::from_f32(shape.clone(), v).unwrap()
                    }),
                prop::collection::vec(any::<u16>(), n)
                    .prop_map(move |v| Tensor::from_u16(shape.clone(), v).unwrap()),
            ]
        })
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(t in arb_tensor()) {
            let back = Tensor::from_bytes(&t.to_bytes(), p()).unwrap();
            prop_assert_eq!(back.shape(), t.shape());
            prop_assert_eq!(back.to_bytes(), t.to_bytes());
        }
    }
}
