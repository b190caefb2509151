//! NPY v1.0 array files. Decoding goes through `npyz`; encoding writes the
//! same bytes `numpy.save` produces.
//!
//! Payloads on disk are little-endian `<f8` (attribution data), `<i8`
//! (label grids) and, on the oracle wire, `<f4`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use npyz::NpyFile;

use crate::error::{Error, Result};

/// A dense C-order array read from NPY, widened to f64.
#[derive(Debug, Clone, PartialEq)]
pub struct NpyArray {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Decodes an NPY stream of any real or integer dtype into f64.
pub fn decode(reader: impl Read, origin: &Path) -> Result<NpyArray> {
    let npy = NpyFile::new(reader).map_err(|e| Error::parse(origin, format!("bad NPY header: {e}")))?;
    if npy.order() != npyz::Order::C {
        return Err(Error::parse(origin, "Fortran-order arrays are not supported"));
    }
    let shape: Vec<usize> = npy.shape().iter().map(|&d| d as usize).collect();
    let bad_data = |e: std::io::Error| Error::parse(origin, format!("bad NPY payload: {e}"));
    let data: Vec<f64> = match npy.try_data::<f64>() {
        Ok(r) => r.into_iter().collect::<std::io::Result<_>>().map_err(bad_data)?,
        Err(npy) => match npy.try_data::<f32>() {
            Ok(r) => r
                .into_iter()
                .map(|v| v.map(f64::from))
                .collect::<std::io::Result<_>>()
                .map_err(bad_data)?,
            Err(npy) => match npy.try_data::<i64>() {
                Ok(r) => r
                    .into_iter()
                    .map(|v| v.map(|x| x as f64))
                    .collect::<std::io::Result<_>>()
                    .map_err(bad_data)?,
                Err(npy) => match npy.try_data::<i32>() {
                    Ok(r) => r
                        .into_iter()
                        .map(|v| v.map(f64::from))
                        .collect::<std::io::Result<_>>()
                        .map_err(bad_data)?,
                    Err(npy) => {
                        return Err(Error::parse(
                            origin,
                            format!("unsupported dtype {:?}", npy.dtype().descr()),
                        ))
                    }
                },
            },
        },
    };
    let expected: usize = shape.iter().product();
    if data.len() != expected {
        return Err(Error::parse(
            origin,
            format!("shape {shape:?} needs {expected} values, found {}", data.len()),
        ));
    }
    Ok(NpyArray { shape, data })
}

pub fn read(path: &Path) -> Result<NpyArray> {
    let file = File::open(path).map_err(|e| Error::io("cannot open array", path, e))?;
    decode(BufReader::new(file), path)
}

/// numpy's `repr` of a shape tuple.
fn shape_repr(shape: &[usize]) -> String {
    match shape {
        [] => "()".to_string(),
        [d] => format!("({d},)"),
        dims => format!(
            "({})",
            dims.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(", ")
        ),
    }
}

/// Version 1.0 preamble laid out byte for byte as `numpy.save` writes it:
/// dict header padded with spaces and a newline to a 64-byte boundary.
fn header_bytes(descr: &str, shape: &[usize]) -> Vec<u8> {
    let dict = format!(
        "{{'descr': '{descr}', 'fortran_order': False, 'shape': {}, }}",
        shape_repr(shape)
    );
    let unpadded = 10 + dict.len() + 1;
    let padding = (64 - unpadded % 64) % 64;
    let header_len = dict.len() + padding + 1;
    let mut out = Vec::with_capacity(10 + header_len);
    out.extend_from_slice(b"\x93NUMPY\x01\x00");
    out.extend_from_slice(&(header_len as u16).to_le_bytes());
    out.extend_from_slice(dict.as_bytes());
    out.extend(std::iter::repeat(b' ').take(padding));
    out.push(b'\n');
    out
}

fn encode<T: Copy, const N: usize>(
    mut writer: impl Write,
    descr: &str,
    shape: &[usize],
    data: &[T],
    to_le: impl Fn(T) -> [u8; N],
) -> std::io::Result<()> {
    writer.write_all(&header_bytes(descr, shape))?;
    for &v in data {
        writer.write_all(&to_le(v))?;
    }
    Ok(())
}

fn check_len(shape: &[usize], len: usize) -> Result<()> {
    let expected: usize = shape.iter().product();
    if expected != len {
        return Err(Error::validation(format!(
            "shape {shape:?} needs {expected} values, got {len}"
        )));
    }
    Ok(())
}

pub fn write_f64(path: &Path, shape: &[usize], data: &[f64]) -> Result<()> {
    check_len(shape, data.len())?;
    let file = File::create(path).map_err(|e| Error::io("cannot create array", path, e))?;
    let mut w = BufWriter::new(file);
    encode(&mut w, "<f8", shape, data, f64::to_le_bytes).map_err(|e| Error::io("cannot write array", path, e))?;
    w.flush().map_err(|e| Error::io("cannot write array", path, e))
}

pub fn write_i64(path: &Path, shape: &[usize], data: &[i64]) -> Result<()> {
    check_len(shape, data.len())?;
    let file = File::create(path).map_err(|e| Error::io("cannot create array", path, e))?;
    let mut w = BufWriter::new(file);
    encode(&mut w, "<i8", shape, data, i64::to_le_bytes).map_err(|e| Error::io("cannot write array", path, e))?;
    w.flush().map_err(|e| Error::io("cannot write array", path, e))
}

/// In-memory `<f4` encoding used for oracle requests.
pub fn to_bytes_f32(shape: &[usize], data: &[f32]) -> Result<Vec<u8>> {
    check_len(shape, data.len())?;
    let mut buf = Vec::new();
    encode(&mut buf, "<f4", shape, data, f32::to_le_bytes).map_err(|e| Error::io("cannot encode array", "<memory>", e))?;
    Ok(buf)
}
