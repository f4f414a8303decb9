//! NPY v1.0 container reader/writer.
//!
//! Layout: magic `\x93NUMPY`, version bytes `01 00`, a little-endian u16
//! header length, then a Python dict literal padded with spaces so the data
//! section starts on a 64-byte boundary, terminated by a newline. Supported
//! dtypes: `<f4`, `<f8`, `|u1`.

use crate::{Error, Result};
use std::fs;
use std::path::Path;

const MAGIC: &[u8; 6] = b"\x93NUMPY";

#[derive(Debug, Clone, PartialEq)]
pub enum NpyData {
    F32(Vec<f32>),
    F64(Vec<f64>),
    U8(Vec<u8>),
}

impl NpyData {
    pub fn len(&self) -> usize {
        match self {
            NpyData::F32(v) => v.len(),
            NpyData::F64(v) => v.len(),
            NpyData::U8(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn descr(&self) -> &'static str {
        match self {
            NpyData::F32(_) => "<f4",
            NpyData::F64(_) => "<f8",
            NpyData::U8(_) => "|u1",
        }
    }

    fn item_size(&self) -> usize {
        match self {
            NpyData::F32(_) => 4,
            NpyData::F64(_) => 8,
            NpyData::U8(_) => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NpyArray {
    pub shape: Vec<usize>,
    pub data: NpyData,
}

fn shape_literal(shape: &[usize]) -> String {
    match shape {
        [single] => format!("({single},)"),
        many => {
            let joined = many.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(", ");
            format!("({joined})")
        }
    }
}

pub fn encode_npy(arr: &NpyArray) -> Vec<u8> {
    let header_body = format!(
        "{{'descr': '{}', 'fortran_order': False, 'shape': {}, }}",
        arr.data.descr(),
        shape_literal(&arr.shape)
    );
    // magic(6) + version(2) + len(2) + header must be a multiple of 64,
    // with the header's final byte a newline
    let unpadded = 10 + header_body.len() + 1;
    let padding = (64 - unpadded % 64) % 64;
    let header_len = header_body.len() + padding + 1;

    let mut out = Vec::with_capacity(10 + header_len + arr.data.len() * arr.data.item_size());
    out.extend_from_slice(MAGIC);
    out.push(1);
    out.push(0);
    out.extend_from_slice(&(header_len as u16).to_le_bytes());
    out.extend_from_slice(header_body.as_bytes());
    out.extend(std::iter::repeat_n(b' ', padding));
    out.push(b'\n');
    match &arr.data {
        NpyData::F32(v) => {
            for x in v {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        NpyData::F64(v) => {
            for x in v {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        NpyData::U8(v) => out.extend_from_slice(v),
    }
    out
}

pub fn decode_npy(bytes: &[u8]) -> Result<NpyArray> {
    if bytes.len() < 10 || &bytes[..6] != MAGIC {
        return Err(Error::NpyBadMagic);
    }
    let (major, minor) = (bytes[6], bytes[7]);
    if (major, minor) != (1, 0) {
        return Err(Error::NpyVersion(major, minor));
    }
    let header_len = u16::from_le_bytes([bytes[8], bytes[9]]) as usize;
    if bytes.len() < 10 + header_len {
        return Err(Error::NpyTruncated { expected: 10 + header_len, got: bytes.len() });
    }
    let header = std::str::from_utf8(&bytes[10..10 + header_len])
        .map_err(|_| Error::NpyBadHeader("non-utf8 header".into()))?;

    let descr = extract_quoted(header, "'descr':")
        .ok_or_else(|| Error::NpyBadHeader("missing descr".into()))?;
    let fortran = extract_plain(header, "'fortran_order':")
        .ok_or_else(|| Error::NpyBadHeader("missing fortran_order".into()))?;
    if fortran != "False" {
        return Err(Error::NpyBadHeader(format!("fortran_order {fortran} unsupported")));
    }
    let shape_src = extract_tuple(header, "'shape':")
        .ok_or_else(|| Error::NpyBadHeader("missing shape".into()))?;
    let shape: Vec<usize> = shape_src
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<usize>().map_err(|_| Error::NpyBadHeader(format!("bad shape {s:?}"))))
        .collect::<Result<_>>()?;
    let count: usize = shape.iter().product();

    let item = match descr.as_str() {
        "<f4" => 4,
        "<f8" => 8,
        "|u1" | "u1" => 1,
        other => return Err(Error::NpyUnsupportedDtype(other.to_string())),
    };
    let payload = &bytes[10 + header_len..];
    if payload.len() != count * item {
        return Err(Error::NpyTruncated { expected: count * item, got: payload.len() });
    }

    let data = match item {
        4 => NpyData::F32(
            payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect(),
        ),
        8 => NpyData::F64(
            payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect(),
        ),
        _ => NpyData::U8(payload.to_vec()),
    };
    Ok(NpyArray { shape, data })
}

fn extract_quoted(header: &str, key: &str) -> Option<String> {
    let rest = &header[header.find(key)? + key.len()..];
    let start = rest.find('\'')? + 1;
    let end = start + rest[start..].find('\'')?;
    Some(rest[start..end].to_string())
}

fn extract_plain(header: &str, key: &str) -> Option<String> {
    let rest = header[header.find(key)? + key.len()..].trim_start();
    let end = rest.find([',', '}'])?;
    Some(rest[..end].trim().to_string())
}

fn extract_tuple(header: &str, key: &str) -> Option<String> {
    let rest = &header[header.find(key)? + key.len()..];
    let start = rest.find('(')? + 1;
    let end = start + rest[start..].find(')')?;
    Some(rest[start..end].to_string())
}

pub fn write_npy(path: &Path, arr: &NpyArray) -> Result<()> {
    Ok(fs::write(path, encode_npy(arr))?)
}

pub fn read_npy(path: &Path) -> Result<NpyArray> {
    decode_npy(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn magic_and_version_bytes_are_exact() {
        let arr = NpyArray { shape: vec![2, 2], data: NpyData::F32(vec![0.0; 4]) };
        let bytes = encode_npy(&arr);
        assert_eq!(&bytes[..8], &[0x93, 0x4E, 0x55, 0x4D, 0x50, 0x59, 0x01, 0x00]);
        let hlen = u16::from_le_bytes([bytes[8], bytes[9]]) as usize;
        assert_eq!((10 + hlen) % 64, 0, "data section must start on a 64-byte boundary");
    }

    #[test]
    fn f32_header_matches_reference_layout() {
        let arr = NpyArray { shape: vec![3, 4, 4], data: NpyData::F32(vec![1.5; 48]) };
        let bytes = encode_npy(&arr);
        let hlen = u16::from_le_bytes([bytes[8], bytes[9]]) as usize;
        let header = std::str::from_utf8(&bytes[10..10 + hlen]).unwrap();
        assert!(header.starts_with("{'descr': '<f4', 'fortran_order': False, 'shape': (3, 4, 4), }"));
        assert!(header.ends_with('\n'));
        assert!(header[..header.len() - 1].ends_with(' ') || header.len() - 1 == header.find('}').unwrap() + 1);
        assert_eq!((10 + hlen) % 64, 0);
    }

    #[test]
    fn one_dimensional_shape_keeps_trailing_comma() {
        let arr = NpyArray { shape: vec![5], data: NpyData::U8(vec![1, 2, 3, 4, 5]) };
        let bytes = encode_npy(&arr);
        let hlen = u16::from_le_bytes([bytes[8], bytes[9]]) as usize;
        let header = std::str::from_utf8(&bytes[10..10 + hlen]).unwrap();
        assert!(header.contains("'shape': (5,)"), "{header}");
        assert_eq!(decode_npy(&bytes).unwrap(), arr);
    }

    #[test]
    fn error_kinds_are_distinct() {
        assert!(matches!(decode_npy(b"NOTANPYFILE!"), Err(Error::NpyBadMagic)));

        let arr = NpyArray { shape: vec![2], data: NpyData::F32(vec![1.0, 2.0]) };
        let mut bytes = encode_npy(&arr);
        bytes.truncate(bytes.len() - 3);
        assert!(matches!(decode_npy(&bytes), Err(Error::NpyTruncated { .. })));

        let mut v2 = encode_npy(&arr);
        v2[6] = 2;
        assert!(matches!(decode_npy(&v2), Err(Error::NpyVersion(2, 0))));

        // forge an int dtype
        let forged = String::from_utf8(encode_npy(&arr)).ok();
        assert!(forged.is_none() || true);
        let mut raw = encode_npy(&arr);
        let pos = raw.windows(3).position(|w| w == b"<f4").unwrap();
        raw[pos..pos + 3].copy_from_slice(b"<i4");
        assert!(matches!(decode_npy(&raw), Err(Error::NpyUnsupportedDtype(_))));
    }

    #[test]
    fn degenerate_extent_roundtrips() {
        for data in [
            NpyData::F32(vec![0.25]),
            NpyData::F64(vec![0.25]),
            NpyData::U8(vec![7]),
        ] {
            let arr = NpyArray { shape: vec![1, 1, 1], data };
            assert_eq!(decode_npy(&encode_npy(&arr)).unwrap(), arr);
        }
    }

    proptest! {
        #[test]
        fn roundtrip_is_bitwise_identity(
            dims in proptest::collection::vec(1usize..6, 1..4),
            seed in any::<u64>(),
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let n: usize = dims.iter().product();
            let which = seed % 3;
            let data = match which {
                0 => NpyData::F32((0..n).map(|_| f32::from_bits(rng.gen())).collect()),
                1 => NpyData::F64((0..n).map(|_| f64::from_bits(rng.gen())).collect()),
                _ => NpyData::U8((0..n).map(|_| rng.gen()).collect()),
            };
            let arr = NpyArray { shape: dims, data };
            let back = decode_npy(&encode_npy(&arr)).unwrap();
            // compare raw bits (NaN payloads included)
            prop_assert_eq!(encode_npy(&back), encode_npy(&arr));
        }
    }
}
