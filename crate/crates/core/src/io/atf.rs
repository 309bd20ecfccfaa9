//! Activation Tensor File (ATF) reader and writer.
//!
//! Layout, all integers little-endian:
//!
//! | offset      | size         | field                              |
//! |-------------|--------------|------------------------------------|
//! | 0           | 4            | magic `b"ATF1"`                    |
//! | 4           | 1            | dtype: 1 = f32, 2 = f64            |
//! | 5           | 1            | ndim, 1..=8                        |
//! | 6           | 4 · ndim     | dims as u32, each >= 1             |
//! | 6 + 4·ndim  | elem · Πdims | row-major little-endian payload    |
//!
//! The file ends exactly at the end of the payload.

use std::fs::File;
use std::io::{BufReader, BufWriter, ErrorKind, Read, Write};
use std::path::Path;

use crate::cloud::{checked_product, Tensor, TensorData};
use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"ATF1";
pub const MAX_NDIM: usize = 8;
const PAYLOAD_CHUNK: usize = 1 << 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    pub fn code(self) -> u8 {
        match self {
            Dtype::F32 => 1,
            Dtype::F64 => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            1 => Some(Dtype::F32),
            2 => Some(Dtype::F64),
            _ => None,
        }
    }

    pub fn size(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }

    fn of(data: &TensorData) -> Self {
        match data {
            TensorData::F32(_) => Dtype::F32,
            TensorData::F64(_) => Dtype::F64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AtfHeader {
    pub dtype: Dtype,
    pub dims: Vec<usize>,
}

impl AtfHeader {
    pub fn header_len(&self) -> usize {
        6 + 4 * self.dims.len()
    }

    pub fn element_count(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn payload_len(&self) -> usize {
        self.element_count() * self.dtype.size()
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let ndim = self.dims.len();
        if ndim == 0 || ndim > MAX_NDIM {
            return Err(Error::format(5, format!("ndim must be in 1..={MAX_NDIM}, got {ndim}")));
        }
        let mut out = Vec::with_capacity(self.header_len());
        out.extend_from_slice(&MAGIC);
        out.push(self.dtype.code());
        out.push(ndim as u8);
        for (i, &d) in self.dims.iter().enumerate() {
            let offset = (6 + 4 * i) as u64;
            if d == 0 {
                return Err(Error::format(offset, format!("dim {i} is zero")));
            }
            let d = u32::try_from(d)
                .map_err(|_| Error::format(offset, format!("dim {i} = {d} exceeds u32")))?;
            out.extend_from_slice(&d.to_le_bytes());
        }
        Ok(out)
    }

    /// Parses and validates the header at the start of `reader`.
    pub fn read_from(reader: &mut impl Read) -> Result<Self> {
        let mut fixed = [0u8; 6];
        read_exact_at(reader, &mut fixed, 0)?;
        if fixed[..4] != MAGIC {
            return Err(Error::format(0, format!("bad magic {:?}", &fixed[..4])));
        }
        let dtype = Dtype::from_code(fixed[4])
            .ok_or_else(|| Error::format(4, format!("unknown dtype code {}", fixed[4])))?;
        let ndim = fixed[5] as usize;
        if ndim == 0 || ndim > MAX_NDIM {
            return Err(Error::format(5, format!("ndim must be in 1..={MAX_NDIM}, got {ndim}")));
        }
        let mut raw = vec![0u8; 4 * ndim];
        read_exact_at(reader, &mut raw, 6)?;
        let mut dims = Vec::with_capacity(ndim);
        for (i, b) in raw.chunks_exact(4).enumerate() {
            let d = u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize;
            if d == 0 {
                return Err(Error::format((6 + 4 * i) as u64, format!("dim {i} is zero")));
            }
            dims.push(d);
        }
        if checked_product(&dims)
            .and_then(|n| n.checked_mul(dtype.size()))
            .is_none()
        {
            return Err(Error::format(6, format!("shape {dims:?} is too large")));
        }
        Ok(AtfHeader { dtype, dims })
    }
}

fn read_exact_at(reader: &mut impl Read, buf: &mut [u8], offset: u64) -> Result<()> {
    let mut filled = 0;
    while filled < buf.len() {
        match reader.read(&mut buf[filled..]) {
            Ok(0) => {
                return Err(Error::format(
                    offset + filled as u64,
                    format!("truncated: expected {} more byte(s)", buf.len() - filled),
                ))
            }
            Ok(n) => filled += n,
            Err(e) if e.kind() == ErrorKind::Interrupted => {}
            Err(e) => return Err(Error::format(offset + filled as u64, format!("read failed: {e}"))),
        }
    }
    Ok(())
}

/// What to do with NaN or infinite payload values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NonFinitePolicy {
    #[default]
    Reject,
    /// Drop every axis-0 row containing a non-finite value.
    DropRows,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AtfContents {
    pub tensor: Tensor,
    /// Axis-0 rows removed under [`NonFinitePolicy::DropRows`].
    pub dropped_rows: Vec<usize>,
}

fn decode_payload<T: Copy, const N: usize>(
    reader: &mut impl Read,
    header: &AtfHeader,
    from_le: fn([u8; N]) -> T,
    is_finite: fn(T) -> bool,
    policy: NonFinitePolicy,
) -> Result<(Vec<T>, Vec<usize>)> {
    let count = header.element_count();
    let row_len = count / header.dims[0];
    let base = header.header_len() as u64;
    let mut values = Vec::with_capacity(count);
    let mut bad_rows = Vec::new();
    let mut buf = vec![0u8; PAYLOAD_CHUNK * N];
    let mut done = 0usize;
    while done < count {
        let take = (count - done).min(PAYLOAD_CHUNK);
        let bytes = &mut buf[..take * N];
        read_exact_at(reader, bytes, base + (done * N) as u64)?;
        for (j, b) in bytes.chunks_exact(N).enumerate() {
            let v = from_le(b.try_into().expect("chunk size"));
            if !is_finite(v) {
                let index = done + j;
                match policy {
                    NonFinitePolicy::Reject => {
                        return Err(Error::format(
                            base + (index * N) as u64,
                            format!("non-finite value at element {index}"),
                        ))
                    }
                    NonFinitePolicy::DropRows => {
                        let row = index / row_len;
                        if bad_rows.last() != Some(&row) {
                            bad_rows.push(row);
                        }
                    }
                }
            }
            values.push(v);
        }
        done += take;
    }
    let mut probe = [0u8; 1];
    loop {
        match reader.read(&mut probe) {
            Ok(0) => break,
            Ok(_) => {
                return Err(Error::format(
                    base + (count * N) as u64,
                    "trailing bytes after payload",
                ))
            }
            Err(e) if e.kind() == ErrorKind::Interrupted => {}
            Err(e) => return Err(Error::format(base + (count * N) as u64, format!("read failed: {e}"))),
        }
    }
    if !bad_rows.is_empty() {
        let mut keep = Vec::with_capacity(values.len() - bad_rows.len() * row_len);
        let mut bad = bad_rows.iter().peekable();
        for (r, row) in values.chunks_exact(row_len).enumerate() {
            if bad.peek() == Some(&&r) {
                bad.next();
            } else {
                keep.extend_from_slice(row);
            }
        }
        values = keep;
    }
    Ok((values, bad_rows))
}

/// Decodes a complete ATF stream.
pub fn read_atf_from(mut reader: impl Read, policy: NonFinitePolicy) -> Result<AtfContents> {
    let header = AtfHeader::read_from(&mut reader)?;
    let (data, dropped_rows) = match header.dtype {
        Dtype::F32 => {
            let (v, d) = decode_payload(&mut reader, &header, f32::from_le_bytes, f32::is_finite, policy)?;
            (TensorData::F32(v), d)
        }
        Dtype::F64 => {
            let (v, d) = decode_payload(&mut reader, &header, f64::from_le_bytes, f64::is_finite, policy)?;
            (TensorData::F64(v), d)
        }
    };
    let mut dims = header.dims;
    dims[0] -= dropped_rows.len();
    if dims[0] == 0 {
        return Err(Error::input("every row contains a non-finite value"));
    }
    Ok(AtfContents {
        tensor: Tensor::new(dims, data)?,
        dropped_rows,
    })
}

pub fn read_atf_with(path: impl AsRef<Path>, policy: NonFinitePolicy) -> Result<AtfContents> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_atf_from(BufReader::new(file), policy).map_err(|e| match e {
        Error::Format { offset, message } => Error::Format {
            offset,
            message: format!("{}: {message}", path.display()),
        },
        other => other,
    })
}

/// Reads an ATF file, rejecting non-finite values.
pub fn read_atf(path: impl AsRef<Path>) -> Result<Tensor> {
    read_atf_with(path, NonFinitePolicy::Reject).map(|c| c.tensor)
}

/// Reads only the header; cheap shape validation before loading payloads.
pub fn read_atf_header(path: impl AsRef<Path>) -> Result<AtfHeader> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    AtfHeader::read_from(&mut BufReader::new(file))
}

pub fn write_atf_to(tensor: &Tensor, mut writer: impl Write) -> Result<()> {
    if let Some(i) = tensor.data().first_non_finite() {
        return Err(Error::input(format!("refusing to write non-finite element {i}")));
    }
    let header = AtfHeader {
        dtype: Dtype::of(tensor.data()),
        dims: tensor.shape().to_vec(),
    }
    .encode()?;
    let io = |e| Error::io("<atf stream>", e);
    writer.write_all(&header).map_err(io)?;
    match tensor.data() {
        TensorData::F32(v) => {
            for chunk in v.chunks(PAYLOAD_CHUNK) {
                let bytes: Vec<u8> = chunk.iter().flat_map(|x| x.to_le_bytes()).collect();
                writer.write_all(&bytes).map_err(io)?;
            }
        }
        TensorData::F64(v) => {
            for chunk in v.chunks(PAYLOAD_CHUNK) {
                let bytes: Vec<u8> = chunk.iter().flat_map(|x| x.to_le_bytes()).collect();
                writer.write_all(&bytes).map_err(io)?;
            }
        }
    }
    writer.flush().map_err(io)
}

/// Encodes a tensor to an in-memory ATF buffer.
pub fn encode_atf(tensor: &Tensor) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(6 + 4 * tensor.shape().len() + tensor.len() * 8);
    write_atf_to(tensor, &mut out)?;
    Ok(out)
}

pub fn write_atf(tensor: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_atf_to(tensor, BufWriter::new(file)).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn decode(bytes: &[u8]) -> Result<Tensor> {
        read_atf_from(bytes, NonFinitePolicy::Reject).map(|c| c.tensor)
    }

    #[test]
    fn scalar_file_is_fourteen_bytes() {
        let t = Tensor::from_f32(vec![1], vec![42.0]).unwrap();
        let bytes = encode_atf(&t).unwrap();
        assert_eq!(bytes.len(), 14);
        assert_eq!(bytes, [b'A', b'T', b'F', b'1', 1, 1, 1, 0, 0, 0, 0x00, 0x00, 0x28, 0x42]);
        assert_eq!(decode(&bytes).unwrap(), t);
    }

    #[test]
    fn hand_written_f64_fixture() {
        // 2×1 f64 tensor [1.0, -2.5]
        let bytes = [
            b'A', b'T', b'F', b'1', 2, 2, 2, 0, 0, 0, 1, 0, 0, 0,
            0, 0, 0, 0, 0, 0, 0xf0, 0x3f,
            0, 0, 0, 0, 0, 0, 0x04, 0xc0,
        ];
        let t = decode(&bytes).unwrap();
        assert_eq!(t, Tensor::from_f64(vec![2, 1], vec![1.0, -2.5]).unwrap());
        assert_eq!(encode_atf(&t).unwrap(), bytes);
    }

    #[test]
    fn latent_payload_length() {
        let header = AtfHeader { dtype: Dtype::F32, dims: vec![4, 64, 64] };
        let mut bytes = header.encode().unwrap();
        bytes.extend(std::iter::repeat_n(0u8, 65_536));
        assert_eq!(decode(&bytes).unwrap().len(), 16_384);
        bytes.pop();
        match decode(&bytes) {
            Err(Error::Format { offset, message }) => {
                assert_eq!(offset, 18 + 65_535);
                assert!(message.contains("truncated"), "{message}");
            }
            other => panic!("expected truncation, got {other:?}"),
        }
    }

    #[test]
    fn header_errors_carry_offsets() {
        let good = encode_atf(&Tensor::from_f32(vec![2, 3], (0..6).map(|x| x as f32).collect()).unwrap()).unwrap();
        let offset_of = |bytes: &[u8]| match decode(bytes) {
            Err(Error::Format { offset, .. }) => offset,
            other => panic!("expected format error, got {other:?}"),
        };
        let mut bad_magic = good.clone();
        bad_magic[3] = b'2';
        assert_eq!(offset_of(&bad_magic), 0);
        let mut bad_dtype = good.clone();
        bad_dtype[4] = 3;
        assert_eq!(offset_of(&bad_dtype), 4);
        let mut zero_ndim = good.clone();
        zero_ndim[5] = 0;
        assert_eq!(offset_of(&zero_ndim), 5);
        let mut zero_dim = good.clone();
        zero_dim[10] = 0;
        assert_eq!(offset_of(&zero_dim), 10);
        let mut trailing = good.clone();
        trailing.push(0);
        assert_eq!(offset_of(&trailing), good.len() as u64);
        assert_eq!(offset_of(&good[..3]), 3);
    }

    #[test]
    fn empty_dims_rejected_on_write() {
        let header = AtfHeader { dtype: Dtype::F32, dims: vec![] };
        assert!(matches!(header.encode(), Err(Error::Format { offset: 5, .. })));
        let zero = Tensor::from_f32(vec![0], vec![]).unwrap();
        assert!(matches!(encode_atf(&zero), Err(Error::Format { .. })));
    }

    #[test]
    fn non_finite_policies() {
        let t = Tensor::from_f32(vec![3, 2], vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        let mut bytes = encode_atf(&t).unwrap();
        let nan = f32::NAN.to_le_bytes();
        let at = 14 + 4 * 3;
        bytes[at..at + 4].copy_from_slice(&nan);
        match decode(&bytes) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, at as u64),
            other => panic!("{other:?}"),
        }
        let contents = read_atf_from(&bytes[..], NonFinitePolicy::DropRows).unwrap();
        assert_eq!(contents.dropped_rows, vec![1]);
        assert_eq!(contents.tensor, Tensor::from_f32(vec![2, 2], vec![0.0, 1.0, 4.0, 5.0]).unwrap());
        assert!(encode_atf(&Tensor::from_f32(vec![1], vec![f32::INFINITY]).unwrap()).is_err());
    }
}
