use thiserror::Error;

use crate::gradcam::TensorStack;
use crate::mask::{BinaryMask, LogitMap};

pub const MAP_MAGIC: &[u8; 4] = b"MSK1";
pub const TENSOR_MAGIC: &[u8; 4] = b"TNS1";
pub const MAP_HEADER_LEN: usize = 8;
pub const TENSOR_HEADER_LEN: usize = 11;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FormatError {
    #[error("bad magic {0:?}")]
    BadMagic([u8; 4]),
    #[error("truncated: expected {expected} bytes, found {actual}")]
    Truncated { expected: usize, actual: usize },
    #[error("{0} unexpected trailing bytes")]
    TrailingBytes(usize),
    #[error("zero dimension in header")]
    ZeroDimension,
    #[error("dimension {0} does not fit in 16 bits")]
    DimensionOverflow(usize),
    #[error("value {value} at index {index} is outside [0, 1]")]
    OutOfRange { index: usize, value: f32 },
    #[error("value {value} at index {index} is not a mask value (0 or 1)")]
    NotBinary { index: usize, value: f32 },
    #[error("non-finite value at index {0}")]
    NonFinite(usize),
    #[error("derivative order {0} is not in 0..=3")]
    BadOrder(u8),
}

fn dim16(n: usize) -> Result<[u8; 2], FormatError> {
    u16::try_from(n)
        .map(u16::to_le_bytes)
        .map_err(|_| FormatError::DimensionOverflow(n))
}

fn read_u16(bytes: &[u8], at: usize) -> usize {
    u16::from_le_bytes([bytes[at], bytes[at + 1]]) as usize
}

fn check_magic(bytes: &[u8], magic: &[u8; 4], header_len: usize) -> Result<(), FormatError> {
    if bytes.len() < 4 {
        return Err(FormatError::Truncated {
            expected: header_len,
            actual: bytes.len(),
        });
    }
    if &bytes[..4] != magic {
        return Err(FormatError::BadMagic([bytes[0], bytes[1], bytes[2], bytes[3]]));
    }
    if bytes.len() < header_len {
        return Err(FormatError::Truncated {
            expected: header_len,
            actual: bytes.len(),
        });
    }
    Ok(())
}

fn read_payload(bytes: &[u8], header_len: usize, count: usize) -> Result<Vec<f32>, FormatError> {
    let expected = header_len + count * 4;
    if bytes.len() < expected {
        return Err(FormatError::Truncated {
            expected,
            actual: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(FormatError::TrailingBytes(bytes.len() - expected));
    }
    Ok(bytes[header_len..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

fn encode_planar(height: usize, width: usize, values: impl Iterator<Item = f32>) -> Result<Vec<u8>, FormatError> {
    let mut out = Vec::with_capacity(MAP_HEADER_LEN + height * width * 4);
    out.extend_from_slice(MAP_MAGIC);
    out.extend_from_slice(&dim16(height)?);
    out.extend_from_slice(&dim16(width)?);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

fn decode_planar(bytes: &[u8]) -> Result<(usize, usize, Vec<f32>), FormatError> {
    check_magic(bytes, MAP_MAGIC, MAP_HEADER_LEN)?;
    let (h, w) = (read_u16(bytes, 4), read_u16(bytes, 6));
    if h == 0 || w == 0 {
        return Err(FormatError::ZeroDimension);
    }
    let values = read_payload(bytes, MAP_HEADER_LEN, h * w)?;
    Ok((h, w, values))
}

pub fn encode_map(map: &LogitMap) -> Result<Vec<u8>, FormatError> {
    encode_planar(map.height(), map.width(), map.values().iter().copied())
}

pub fn decode_map(bytes: &[u8]) -> Result<LogitMap, FormatError> {
    let (h, w, values) = decode_planar(bytes)?;
    if let Some(index) = values.iter().position(|v| !v.is_finite()) {
        return Err(FormatError::NonFinite(index));
    }
    if let Some((index, &value)) = values.iter().enumerate().find(|(_, v)| !(0.0..=1.0).contains(*v)) {
        return Err(FormatError::OutOfRange { index, value });
    }
    Ok(LogitMap::new(h, w, values).expect("validated above"))
}

pub fn encode_mask(mask: &BinaryMask) -> Result<Vec<u8>, FormatError> {
    encode_planar(
        mask.height(),
        mask.width(),
        mask.values().iter().map(|&b| if b { 1.0 } else { 0.0 }),
    )
}

pub fn decode_mask(bytes: &[u8]) -> Result<BinaryMask, FormatError> {
    let (h, w, values) = decode_planar(bytes)?;
    let mut bits = Vec::with_capacity(values.len());
    for (index, &value) in values.iter().enumerate() {
        if value == 1.0 {
            bits.push(true);
        } else if value == 0.0 {
            bits.push(false);
        } else {
            return Err(FormatError::NotBinary { index, value });
        }
    }
    Ok(BinaryMask::new(h, w, bits).expect("dimensions come from the header"))
}

pub fn encode_tensor(stack: &TensorStack) -> Result<Vec<u8>, FormatError> {
    let mut out = Vec::with_capacity(TENSOR_HEADER_LEN + stack.data().len() * 4);
    out.extend_from_slice(TENSOR_MAGIC);
    out.push(stack.order());
    out.extend_from_slice(&dim16(stack.k())?);
    out.extend_from_slice(&dim16(stack.u())?);
    out.extend_from_slice(&dim16(stack.v())?);
    for v in stack.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_tensor(bytes: &[u8]) -> Result<TensorStack, FormatError> {
    check_magic(bytes, TENSOR_MAGIC, TENSOR_HEADER_LEN)?;
    let order = bytes[4];
    if order > 3 {
        return Err(FormatError::BadOrder(order));
    }
    let (k, u, v) = (read_u16(bytes, 5), read_u16(bytes, 7), read_u16(bytes, 9));
    if k == 0 || u == 0 || v == 0 {
        return Err(FormatError::ZeroDimension);
    }
    // At most 2^48 values; only reachable if the payload is actually present.
    let count = k * u * v;
    let data = read_payload(bytes, TENSOR_HEADER_LEN, count)?;
    if let Some(i) = data.iter().position(|x| !x.is_finite()) {
        return Err(FormatError::NonFinite(i));
    }
    Ok(TensorStack::new(order, k, u, v, data).expect("validated above"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn two_by_two_map_layout() {
        let map = LogitMap::new(2, 2, vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        let bytes = encode_map(&map).unwrap();
        let mut expected = b"MSK1".to_vec();
        expected.extend([2, 0, 2, 0]);
        expected.extend(1.0f32.to_le_bytes());
        expected.extend([0u8; 12]);
        assert_eq!(bytes, expected);
        assert_eq!(bytes.len(), MAP_HEADER_LEN + 16);
        assert_eq!(decode_map(&bytes).unwrap(), map);
    }

    #[test]
    fn tensor_layout() {
        let stack = TensorStack::new(2, 1, 1, 2, vec![0.5, -3.0]).unwrap();
        let bytes = encode_tensor(&stack).unwrap();
        let mut expected = b"TNS1".to_vec();
        expected.extend([2, 1, 0, 1, 0, 2, 0]);
        expected.extend(0.5f32.to_le_bytes());
        expected.extend((-3.0f32).to_le_bytes());
        assert_eq!(bytes, expected);
        assert_eq!(decode_tensor(&bytes).unwrap(), stack);
    }

    fn map_bytes(h: u16, w: u16, vals: &[f32]) -> Vec<u8> {
        let mut b = b"MSK1".to_vec();
        b.extend(h.to_le_bytes());
        b.extend(w.to_le_bytes());
        for v in vals {
            b.extend(v.to_le_bytes());
        }
        b
    }

    #[test]
    fn malformed_maps_are_rejected() {
        let mut bad = map_bytes(1, 1, &[0.5]);
        bad[..4].copy_from_slice(b"XXXX");
        assert_eq!(decode_map(&bad), Err(FormatError::BadMagic(*b"XXXX")));
        assert!(matches!(decode_map(b"MS"), Err(FormatError::Truncated { .. })));
        assert!(matches!(decode_map(b"MSK1\x01\x00"), Err(FormatError::Truncated { .. })));
        assert!(matches!(
            decode_map(&map_bytes(2, 2, &[0.0; 3])),
            Err(FormatError::Truncated { expected: 24, actual: 20 })
        ));
        assert_eq!(decode_map(&map_bytes(1, 1, &[0.0, 0.0])), Err(FormatError::TrailingBytes(4)));
        assert_eq!(decode_map(&map_bytes(0, 1, &[])), Err(FormatError::ZeroDimension));
        assert!(matches!(
            decode_map(&map_bytes(1, 2, &[0.5, 1.5])),
            Err(FormatError::OutOfRange { index: 1, .. })
        ));
        assert_eq!(decode_map(&map_bytes(1, 1, &[f32::NAN])), Err(FormatError::NonFinite(0)));
        assert!(matches!(
            decode_mask(&map_bytes(1, 2, &[1.0, 0.5])),
            Err(FormatError::NotBinary { index: 1, .. })
        ));
        // Declared dimensions far larger than the payload.
        assert!(matches!(
            decode_map(&map_bytes(u16::MAX, u16::MAX, &[0.0])),
            Err(FormatError::Truncated { .. })
        ));
    }

    #[test]
    fn malformed_tensors_are_rejected() {
        let good = encode_tensor(&TensorStack::new(1, 1, 1, 1, vec![1.0]).unwrap()).unwrap();
        let mut bad = good.clone();
        bad[4] = 4;
        assert_eq!(decode_tensor(&bad), Err(FormatError::BadOrder(4)));
        let mut bad = good.clone();
        bad[5] = 0;
        assert_eq!(decode_tensor(&bad), Err(FormatError::ZeroDimension));
        assert!(matches!(decode_tensor(&good[..13]), Err(FormatError::Truncated { .. })));
        assert!(matches!(decode_tensor(&good[..6]), Err(FormatError::Truncated { .. })));
        assert_eq!(decode_tensor(&encode_map(&LogitMap::zeros(1, 1).unwrap()).unwrap()),
            Err(FormatError::BadMagic(*b"MSK1")));
        let mut bad = good;
        bad[11..15].copy_from_slice(&f32::INFINITY.to_le_bytes());
        assert_eq!(decode_tensor(&bad), Err(FormatError::NonFinite(0)));
    }

    #[test]
    fn oversized_maps_cannot_be_encoded() {
        let map = LogitMap::zeros(1, 70_000).unwrap();
        assert_eq!(encode_map(&map), Err(FormatError::DimensionOverflow(70_000)));
    }

    proptest! {
        #[test]
        fn map_round_trip_is_bit_exact(h in 1usize..10, w in 1usize..10, seed in proptest::collection::vec(0.0f32..=1.0, 100)) {
            let map = LogitMap::new(h, w, seed[..h * w].to_vec()).unwrap();
            let back = decode_map(&encode_map(&map).unwrap()).unwrap();
            prop_assert!(back.values().iter().zip(map.values()).all(|(a, b)| a.to_bits() == b.to_bits()));
        }

        #[test]
        fn decoders_never_panic(bytes in proptest::collection::vec(any::<u8>(), 0..64)) {
            let _ = decode_map(&bytes);
            let _ = decode_mask(&bytes);
            let _ = decode_tensor(&bytes);
        }
    }
}
