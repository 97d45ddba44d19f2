//! Wire encodings for the coordinator broadcast and the prediction upload.
//! Both are little-endian: a `u64` shape header followed by `f64` values.

use nalgebra::{DMatrix, DVector};

use crate::{Error, Result};

fn read_u64(bytes: &[u8], word: usize) -> u64 {
    u64::from_le_bytes(bytes[8 * word..8 * word + 8].try_into().unwrap())
}

fn read_f64s(body: &[u8]) -> impl Iterator<Item = f64> + '_ {
    body.chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
}

/// `rows, cols` then column-major values.
pub fn encode_matrix(m: &DMatrix<f64>) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 * (2 + m.len()));
    out.extend_from_slice(&(m.nrows() as u64).to_le_bytes());
    out.extend_from_slice(&(m.ncols() as u64).to_le_bytes());
    for v in m.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_matrix(bytes: &[u8]) -> Result<DMatrix<f64>> {
    if bytes.len() < 16 {
        return Err(Error::Payload("matrix payload shorter than its header".into()));
    }
    let (rows, cols) = (read_u64(bytes, 0) as usize, read_u64(bytes, 1) as usize);
    let body = &bytes[16..];
    if body.len() != 8 * rows * cols {
        return Err(Error::Payload(format!(
            "matrix header {rows}x{cols} does not match {} payload bytes",
            body.len()
        )));
    }
    Ok(DMatrix::from_iterator(rows, cols, read_f64s(body)))
}

/// `len` then values.
pub fn encode_vector(v: &DVector<f64>) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 * (1 + v.len()));
    out.extend_from_slice(&(v.len() as u64).to_le_bytes());
    for x in v.iter() {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

pub fn decode_vector(bytes: &[u8]) -> Result<DVector<f64>> {
    if bytes.len() < 8 {
        return Err(Error::Payload("vector payload shorter than its header".into()));
    }
    let len = read_u64(bytes, 0) as usize;
    let body = &bytes[8..];
    if body.len() != 8 * len {
        return Err(Error::Payload(format!(
            "vector header {len} does not match {} payload bytes",
            body.len()
        )));
    }
    Ok(DVector::from_iterator(len, read_f64s(body)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn matrix_and_vector_round_trip(
            rows in 0usize..6,
            cols in 0usize..6,
            values in proptest::collection::vec(-1e6f64..1e6, 36),
        ) {
            let m = DMatrix::from_fn(rows, cols, |i, j| values[i * 6 + j]);
            prop_assert_eq!(decode_matrix(&encode_matrix(&m)).unwrap(), m);
            let v = DVector::from_fn(rows * cols, |i, _| values[i]);
            prop_assert_eq!(decode_vector(&encode_vector(&v)).unwrap(), v);
        }
    }

    #[test]
    fn truncated_payloads_are_rejected() {
        let bytes = encode_matrix(&DMatrix::from_element(2, 2, 1.0));
        assert!(decode_matrix(&bytes[..bytes.len() - 1]).is_err());
        assert!(decode_matrix(&bytes[..8]).is_err());
        let bytes = encode_vector(&DVector::from_element(3, 1.0));
        assert!(decode_vector(&bytes[..16]).is_err());
    }
}
