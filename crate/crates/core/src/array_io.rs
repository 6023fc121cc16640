//! NPY (version 1.0 layout) array containers.
//!
//! Files carry the `\x93NUMPY` magic, a header dict with `descr`,
//! `fortran_order: False` and `shape`, then a raw little-endian row-major
//! payload. Complex values are interleaved `(re, im)` pairs.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read};
use std::path::Path;

use ndarray::{Array, ArrayBase, ArrayD, Data, Dimension, IxDyn};
use num_complex::{Complex32, Complex64};
use npyz::{AutoSerialize, Deserialize, WriterBuilder};

use crate::error::{Error, Result};

const MAGIC: &[u8; 6] = b"\x93NUMPY";

/// Element types supported by the container.
pub trait Element: AutoSerialize + Deserialize + Clone + 'static {
    /// NumPy type string, e.g. `<c16`.
    const DESCR: &'static str;
}

impl Element for Complex32 {
    const DESCR: &'static str = "<c8";
}
impl Element for Complex64 {
    const DESCR: &'static str = "<c16";
}
impl Element for f32 {
    const DESCR: &'static str = "<f4";
}
impl Element for f64 {
    const DESCR: &'static str = "<f8";
}
impl Element for i64 {
    const DESCR: &'static str = "<i8";
}

/// An array read without knowing its dtype in advance.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyArray {
    Complex64(ArrayD<Complex32>),
    Complex128(ArrayD<Complex64>),
    Float32(ArrayD<f32>),
    Float64(ArrayD<f64>),
    Int64(ArrayD<i64>),
}

impl AnyArray {
    pub fn descr(&self) -> &'static str {
        match self {
            AnyArray::Complex64(_) => Complex32::DESCR,
            AnyArray::Complex128(_) => Complex64::DESCR,
            AnyArray::Float32(_) => f32::DESCR,
            AnyArray::Float64(_) => f64::DESCR,
            AnyArray::Int64(_) => i64::DESCR,
        }
    }

    pub fn shape(&self) -> &[usize] {
        match self {
            AnyArray::Complex64(a) => a.shape(),
            AnyArray::Complex128(a) => a.shape(),
            AnyArray::Float32(a) => a.shape(),
            AnyArray::Float64(a) => a.shape(),
            AnyArray::Int64(a) => a.shape(),
        }
    }
}

pub fn write<T, S, D>(path: impl AsRef<Path>, array: &ArrayBase<S, D>) -> Result<()>
where
    T: Element,
    S: Data<Elem = T>,
    D: Dimension,
{
    let path = path.as_ref();
    let io = |e| Error::io(path, e);
    let file = BufWriter::new(File::create(path).map_err(io)?);
    let shape: Vec<u64> = array.shape().iter().map(|&n| n as u64).collect();
    let mut writer = npyz::WriteOptions::new().default_dtype().shape(&shape).writer(file).begin_nd().map_err(io)?;
    // `iter()` walks logical row-major order regardless of memory layout
    writer.extend(array.iter().cloned()).map_err(io)?;
    writer.finish().map_err(io)
}

pub fn write_any(path: impl AsRef<Path>, array: &AnyArray) -> Result<()> {
    match array {
        AnyArray::Complex64(a) => write(path, a),
        AnyArray::Complex128(a) => write(path, a),
        AnyArray::Float32(a) => write(path, a),
        AnyArray::Float64(a) => write(path, a),
        AnyArray::Int64(a) => write(path, a),
    }
}

fn open_npy(path: &Path) -> Result<npyz::NpyFile<BufReader<File>>> {
    let mut file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut magic = [0u8; 6];
    file.read_exact(&mut magic).map_err(|_| Error::MalformedHeader("file shorter than magic string".into()))?;
    if &magic != MAGIC {
        return Err(Error::MalformedHeader(format!("bad magic bytes {magic:02x?}")));
    }
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let npy = npyz::NpyFile::new(BufReader::new(file)).map_err(|e| Error::MalformedHeader(e.to_string()))?;
    if npy.order() != npyz::Order::C {
        return Err(Error::MalformedHeader("fortran_order arrays are not supported".into()));
    }
    Ok(npy)
}

fn descr_of(npy: &npyz::NpyFile<BufReader<File>>) -> String {
    match npy.dtype() {
        npyz::DType::Plain(ts) => ts.to_string(),
        other => format!("{other:?}"),
    }
}

fn load<T: Element>(npy: npyz::NpyFile<BufReader<File>>) -> Result<ArrayD<T>> {
    let shape: Vec<usize> = npy.shape().iter().map(|&n| n as usize).collect();
    let expected = npy.len();
    let data: Vec<T> = npy.into_vec().map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::Truncated { expected },
        _ => Error::MalformedHeader(e.to_string()),
    })?;
    Array::from_shape_vec(IxDyn(&shape), data).map_err(|e| Error::Shape(e.to_string()))
}

/// Reads an array of a known element type and dimensionality.
pub fn read<T: Element, D: Dimension>(path: impl AsRef<Path>) -> Result<Array<T, D>> {
    let path = path.as_ref();
    let npy = open_npy(path)?;
    let found = descr_of(&npy);
    if found != T::DESCR {
        return Err(Error::DtypeMismatch { expected: T::DESCR.into(), found });
    }
    let arr = load::<T>(npy)?;
    let ndim = arr.ndim();
    arr.into_dimensionality::<D>()
        .map_err(|_| Error::Shape(format!("{}: expected {:?}-d array, found {ndim}-d", path.display(), D::NDIM)))
}

/// Reads any supported array, dispatching on the stored dtype.
pub fn read_any(path: impl AsRef<Path>) -> Result<AnyArray> {
    let npy = open_npy(path.as_ref())?;
    let descr = descr_of(&npy);
    Ok(match descr.as_str() {
        "<c8" => AnyArray::Complex64(load(npy)?),
        "<c16" => AnyArray::Complex128(load(npy)?),
        "<f4" => AnyArray::Float32(load(npy)?),
        "<f8" => AnyArray::Float64(load(npy)?),
        "<i8" => AnyArray::Int64(load(npy)?),
        _ => return Err(Error::DtypeMismatch { expected: "one of <c8 <c16 <f4 <f8 <i8".into(), found: descr }),
    })
}
