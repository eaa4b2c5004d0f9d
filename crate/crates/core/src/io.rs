//! Matrix files: the binary MATX container and plain CSV.
//!
//! MATX layout (all integers little-endian):
//!
//! | bytes  | content                              |
//! |--------|--------------------------------------|
//! | 0..4   | magic `MATX` (`4D 41 54 58`)         |
//! | 4      | version, always 1                    |
//! | 5      | dtype: 1 = f32, 2 = f64              |
//! | 6..8   | reserved, zero                       |
//! | 8..16  | rows (u64)                           |
//! | 16..24 | cols (u64)                           |
//! | 24..   | row-major payload                    |

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::{Dtype, Real};

pub const MAGIC: [u8; 4] = *b"MATX";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 24;
pub const CSV_MAX_ENTRIES: usize = 1_000_000;

pub fn encode_matx<T: Real>(m: &Matrix<T>, dtype: Dtype) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + m.as_slice().len() * dtype.size());
    out.extend_from_slice(&MAGIC);
    out.push(VERSION);
    out.push(dtype.code());
    out.extend_from_slice(&[0, 0]);
    out.extend_from_slice(&(m.rows() as u64).to_le_bytes());
    out.extend_from_slice(&(m.cols() as u64).to_le_bytes());
    for &x in m.as_slice() {
        match dtype {
            Dtype::F32 => out.extend_from_slice(&(x.as_f64() as f32).to_le_bytes()),
            Dtype::F64 => out.extend_from_slice(&x.as_f64().to_le_bytes()),
        }
    }
    out
}

pub fn decode_matx<T: Real>(bytes: &[u8], path: &Path) -> Result<(Matrix<T>, Dtype)> {
    let bad = |msg: String| Error::format(path, msg);
    if bytes.len() < HEADER_LEN {
        return Err(bad(format!("truncated header ({} bytes)", bytes.len())));
    }
    if bytes[0..4] != MAGIC {
        return Err(bad("bad magic, expected MATX".into()));
    }
    if bytes[4] != VERSION {
        return Err(bad(format!("unsupported version {}", bytes[4])));
    }
    let dtype = Dtype::from_code(bytes[5]).ok_or_else(|| bad(format!("unknown dtype code {}", bytes[5])))?;
    if bytes[6] != 0 || bytes[7] != 0 {
        return Err(bad("reserved header bytes must be zero".into()));
    }
    let rows = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let cols = u64::from_le_bytes(bytes[16..24].try_into().unwrap());
    let count = rows
        .checked_mul(cols)
        .and_then(|n| usize::try_from(n).ok())
        .ok_or_else(|| bad(format!("dimensions {rows}x{cols} overflow")))?;
    let expected = count
        .checked_mul(dtype.size())
        .and_then(|n| n.checked_add(HEADER_LEN))
        .ok_or_else(|| bad(format!("dimensions {rows}x{cols} overflow")))?;
    if bytes.len() != expected {
        return Err(bad(format!(
            "payload size mismatch: {rows}x{cols} {dtype:?} needs {expected} bytes, file has {}",
            bytes.len()
        )));
    }
    let payload = &bytes[HEADER_LEN..];
    let data: Vec<T> = match dtype {
        Dtype::F32 => {
            payload.chunks_exact(4).map(|c| T::lit(f32::from_le_bytes(c.try_into().unwrap()) as f64)).collect()
        }
        Dtype::F64 => payload.chunks_exact(8).map(|c| T::lit(f64::from_le_bytes(c.try_into().unwrap()))).collect(),
    };
    let m = Matrix::new(rows as usize, cols as usize, data).map_err(|e| bad(e.to_string()))?;
    Ok((m, dtype))
}

pub fn write_matx<T: Real>(m: &Matrix<T>, path: impl AsRef<Path>, dtype: Dtype) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_matx(m, dtype)).map_err(|e| Error::io(path, e))
}

pub fn read_matx<T: Real>(path: impl AsRef<Path>) -> Result<Matrix<T>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(decode_matx(&bytes, path)?.0)
}

pub fn parse_csv<T: Real>(text: &str, path: &Path) -> Result<Matrix<T>> {
    let mut reader =
        csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).flexible(true).from_reader(text.as_bytes());
    let mut data = Vec::new();
    let mut cols = None;
    let mut rows = 0usize;
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::format(path, e.to_string()))?;
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        match cols {
            None => cols = Some(record.len()),
            Some(c) if c != record.len() => {
                return Err(Error::format(
                    path,
                    format!("line {}: expected {c} fields, found {}", line + 1, record.len()),
                ))
            }
            _ => {}
        }
        for field in record.iter() {
            let v: f64 = field
                .parse()
                .map_err(|_| Error::format(path, format!("line {}: not a number: {field:?}", line + 1)))?;
            data.push(T::lit(v));
        }
        rows += 1;
        if data.len() > CSV_MAX_ENTRIES {
            return Err(Error::format(path, format!("CSV matrices are limited to {CSV_MAX_ENTRIES} entries")));
        }
    }
    let cols = cols.ok_or_else(|| Error::format(path, "empty CSV"))?;
    Matrix::new(rows, cols, data).map_err(|e| Error::format(path, e.to_string()))
}

pub fn format_csv<T: Real>(m: &Matrix<T>) -> String {
    let mut out = String::new();
    for i in 0..m.rows() {
        let line: Vec<String> = m.row(i).iter().map(|x| x.as_f64().to_string()).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

/// Read a matrix, choosing the format from the extension (`.csv` or MATX).
pub fn read_matrix<T: Real>(path: impl AsRef<Path>) -> Result<Matrix<T>> {
    let path = path.as_ref();
    if is_csv(path) {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        parse_csv(&text, path)
    } else {
        read_matx(path)
    }
}

pub fn write_matrix<T: Real>(m: &Matrix<T>, path: impl AsRef<Path>, dtype: Dtype) -> Result<()> {
    let path = path.as_ref();
    if is_csv(path) {
        fs::write(path, format_csv(m)).map_err(|e| Error::io(path, e))
    } else {
        write_matx(m, path, dtype)
    }
}

fn is_csv(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_bytes_are_exact() {
        let m = Matrix::new(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let bytes = encode_matx(&m, Dtype::F64);
        assert_eq!(&bytes[0..8], &[0x4D, 0x41, 0x54, 0x58, 1, 2, 0, 0]);
        assert_eq!(&bytes[8..16], &2u64.to_le_bytes());
        assert_eq!(&bytes[16..24], &3u64.to_le_bytes());
        assert_eq!(&bytes[24..32], &1.0f64.to_le_bytes());
        assert_eq!(bytes.len(), 24 + 6 * 8);
        assert_eq!(encode_matx(&m, Dtype::F32).len(), 24 + 6 * 4);
    }

    #[test]
    fn rejects_corrupt_files() {
        let p = Path::new("x.matx");
        let m = Matrix::new(1, 2, vec![1.0, 2.0]).unwrap();
        let good = encode_matx(&m, Dtype::F64);
        let mut bad = good.clone();
        bad[0] = b'N';
        assert!(decode_matx::<f64>(&bad, p).is_err());
        let mut bad = good.clone();
        bad[5] = 9;
        assert!(decode_matx::<f64>(&bad, p).is_err());
        let mut bad = good.clone();
        bad[6] = 1;
        assert!(decode_matx::<f64>(&bad, p).is_err());
        assert!(decode_matx::<f64>(&good[..good.len() - 1], p).is_err());
        let mut bad = good.clone();
        bad.extend_from_slice(&[0; 8]);
        assert!(decode_matx::<f64>(&bad, p).is_err());
        let mut bad = good;
        bad[24..32].copy_from_slice(&f64::NAN.to_le_bytes());
        assert!(decode_matx::<f64>(&bad, p).is_err());
    }

    #[test]
    fn csv_parsing() {
        let p = Path::new("m.csv");
        let m: Matrix = parse_csv("1, 2.5,-3\n4,5e-1,6\n", p).unwrap();
        assert_eq!(m.shape(), (2, 3));
        assert_eq!(m.get(1, 1), 0.5);
        assert!(parse_csv::<f64>("1,2\n3\n", p).is_err());
        assert!(parse_csv::<f64>("1,x\n", p).is_err());
        assert!(parse_csv::<f64>("", p).is_err());
    }

    proptest! {
        #[test]
        fn matx_and_csv_roundtrip(rows in 1usize..6, cols in 1usize..6, seed in any::<u64>()) {
            use rand::SeedableRng;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let m: Matrix = Matrix::random_normal(rows, cols, &mut rng);
            let p = Path::new("m");
            let (back, dtype) = decode_matx::<f64>(&encode_matx(&m, Dtype::F64), p).unwrap();
            prop_assert_eq!(dtype, Dtype::F64);
            prop_assert_eq!(&back, &m);
            let back: Matrix = parse_csv(&format_csv(&m), p).unwrap();
            prop_assert_eq!(&back, &m);
            let (narrow, _) = decode_matx::<f64>(&encode_matx(&m, Dtype::F32), p).unwrap();
            prop_assert!(narrow.max_abs_diff(&m).unwrap() <= 1e-6 * (1.0 + m.max_abs()));
        }
    }
}
