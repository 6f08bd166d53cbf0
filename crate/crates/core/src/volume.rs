//! Volumetric data model and on-disk formats.
//!
//! Voxels are stored x-fastest: `index = x + nx * (y + ny * z)`. Supported
//! inputs are uncompressed single-file NIfTI-1 (`.nii`), raw little-endian
//! float32 with a JSON sidecar (`.f32raw` + `.json`), and CSV coordinate
//! lists for masks.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const NIFTI_HEADER_SIZE: usize = 348;
const NIFTI_VOX_OFFSET: usize = 352;

/// Grid dimensions in voxels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dims {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
}

impl Dims {
    pub fn new(nx: usize, ny: usize, nz: usize) -> Self {
        Dims { nx, ny, nz }
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.nx * (y + self.ny * z)
    }

    #[inline]
    pub fn coords(&self, index: usize) -> (usize, usize, usize) {
        let x = index % self.nx;
        let rest = index / self.nx;
        (x, rest % self.ny, rest / self.ny)
    }

    pub fn as_tuple(&self) -> (usize, usize, usize) {
        (self.nx, self.ny, self.nz)
    }

    pub(crate) fn ensure_eq(&self, other: &Dims) -> Result<()> {
        if self != other {
            return Err(Error::DimMismatch {
                expected: self.as_tuple(),
                found: other.as_tuple(),
            });
        }
        Ok(())
    }
}

/// Encoding the voxel values were read from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Datatype {
    Uint8,
    Int16,
    Int32,
    Float32,
    Float64,
}

impl Datatype {
    pub fn from_nifti_code(code: i16) -> Result<Self> {
        match code {
            2 => Ok(Datatype::Uint8),
            4 => Ok(Datatype::Int16),
            8 => Ok(Datatype::Int32),
            16 => Ok(Datatype::Float32),
            64 => Ok(Datatype::Float64),
            other => Err(Error::UnsupportedDatatype(other)),
        }
    }

    pub fn nifti_code(self) -> i16 {
        match self {
            Datatype::Uint8 => 2,
            Datatype::Int16 => 4,
            Datatype::Int32 => 8,
            Datatype::Float32 => 16,
            Datatype::Float64 => 64,
        }
    }

    pub fn byte_size(self) -> usize {
        match self {
            Datatype::Uint8 => 1,
            Datatype::Int16 => 2,
            Datatype::Int32 | Datatype::Float32 => 4,
            Datatype::Float64 => 8,
        }
    }
}

/// A 3D scalar grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    dims: Dims,
    voxel_size: [f64; 3],
    data: Vec<f64>,
    datatype_origin: Datatype,
}

impl Volume {
    /// Builds an in-memory volume with unit voxel size.
    pub fn new(dims: Dims, data: Vec<f64>) -> Result<Self> {
        Self::with_metadata(dims, [1.0; 3], data, Datatype::Float64)
    }

    pub fn with_metadata(
        dims: Dims,
        voxel_size: [f64; 3],
        data: Vec<f64>,
        datatype_origin: Datatype,
    ) -> Result<Self> {
        if dims.nx == 0 || dims.ny == 0 || dims.nz == 0 {
            return Err(Error::InvalidArgument(format!(
                "dimensions must be positive, got {:?}",
                dims.as_tuple()
            )));
        }
        if data.len() != dims.len() {
            return Err(Error::InvalidArgument(format!(
                "data length {} does not match dims {:?} ({} voxels)",
                data.len(),
                dims.as_tuple(),
                dims.len()
            )));
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteVoxel { index });
        }
        Ok(Volume {
            dims,
            voxel_size,
            data,
            datatype_origin,
        })
    }

    pub fn filled(dims: Dims, value: f64) -> Result<Self> {
        Self::new(dims, vec![value; dims.len()])
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn voxel_size(&self) -> [f64; 3] {
        self.voxel_size
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn datatype_origin(&self) -> Datatype {
        self.datatype_origin
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> f64 {
        self.data[self.dims.index(x, y, z)]
    }
}

/// Binary analysis mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    dims: Dims,
    inside: Vec<bool>,
    count: usize,
}

impl Mask {
    pub fn new(dims: Dims, inside: Vec<bool>) -> Result<Self> {
        if inside.len() != dims.len() {
            return Err(Error::InvalidArgument(format!(
                "mask length {} does not match dims {:?}",
                inside.len(),
                dims.as_tuple()
            )));
        }
        let count = inside.iter().filter(|&&b| b).count();
        if count == 0 {
            return Err(Error::EmptyMask);
        }
        Ok(Mask {
            dims,
            inside,
            count,
        })
    }

    /// Every voxel inside.
    pub fn full(dims: Dims) -> Self {
        Mask {
            dims,
            inside: vec![true; dims.len()],
            count: dims.len(),
        }
    }

    /// Voxels with value strictly greater than `threshold` are inside.
    pub fn from_volume(volume: &Volume, threshold: f64) -> Result<Self> {
        let inside = volume.data().iter().map(|&v| v > threshold).collect();
        Self::new(volume.dims(), inside)
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn inside(&self) -> &[bool] {
        &self.inside
    }

    #[inline]
    pub fn contains(&self, index: usize) -> bool {
        self.inside[index]
    }

    pub fn count(&self) -> usize {
        self.count
    }

    /// Linear indices of inside voxels in ascending order.
    pub fn indices(&self) -> Vec<usize> {
        self.inside
            .iter()
            .enumerate()
            .filter_map(|(i, &b)| b.then_some(i))
            .collect()
    }
}

/// Group data for a one-sample test: N aligned subject maps and a mask.
#[derive(Debug, Clone)]
pub struct SubjectStack {
    subjects: Vec<Volume>,
    mask: Mask,
}

impl SubjectStack {
    pub fn new(subjects: Vec<Volume>, mask: Mask) -> Result<Self> {
        if subjects.len() < 2 {
            return Err(Error::TooFewSubjects(subjects.len()));
        }
        let dims = mask.dims();
        for s in &subjects {
            dims.ensure_eq(&s.dims())?;
        }
        Ok(SubjectStack { subjects, mask })
    }

    pub fn subjects(&self) -> &[Volume] {
        &self.subjects
    }

    pub fn mask(&self) -> &Mask {
        &self.mask
    }

    pub fn len(&self) -> usize {
        self.subjects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subjects.is_empty()
    }

    pub fn dims(&self) -> Dims {
        self.mask.dims()
    }

    /// Copy with every subject map negated, for negative-tail analysis.
    pub fn negated(&self) -> Self {
        let subjects = self
            .subjects
            .iter()
            .map(|v| Volume {
                data: v.data.iter().map(|x| -x).collect(),
                ..v.clone()
            })
            .collect();
        SubjectStack {
            subjects,
            mask: self.mask.clone(),
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum Endian {
    Little,
    Big,
}

struct ByteReader<'a> {
    bytes: &'a [u8],
    endian: Endian,
}

impl ByteReader<'_> {
    fn i16_at(&self, off: usize) -> i16 {
        let b = [self.bytes[off], self.bytes[off + 1]];
        match self.endian {
            Endian::Little => i16::from_le_bytes(b),
            Endian::Big => i16::from_be_bytes(b),
        }
    }

    fn arr4(&self, off: usize) -> [u8; 4] {
        self.bytes[off..off + 4].try_into().unwrap()
    }

    fn f32_at(&self, off: usize) -> f32 {
        match self.endian {
            Endian::Little => f32::from_le_bytes(self.arr4(off)),
            Endian::Big => f32::from_be_bytes(self.arr4(off)),
        }
    }

    fn value(&self, datatype: Datatype, off: usize) -> f64 {
        let b = self.bytes;
        match (datatype, self.endian) {
            (Datatype::Uint8, _) => b[off] as f64,
            (Datatype::Int16, _) => self.i16_at(off) as f64,
            (Datatype::Int32, Endian::Little) => i32::from_le_bytes(self.arr4(off)) as f64,
            (Datatype::Int32, Endian::Big) => i32::from_be_bytes(self.arr4(off)) as f64,
            (Datatype::Float32, _) => self.f32_at(off) as f64,
            (Datatype::Float64, e) => {
                let a: [u8; 8] = b[off..off + 8].try_into().unwrap();
                match e {
                    Endian::Little => f64::from_le_bytes(a),
                    Endian::Big => f64::from_be_bytes(a),
                }
            }
        }
    }
}

/// Parses a single-file NIfTI-1 image held in memory.
pub fn parse_nifti(bytes: &[u8]) -> Result<Volume> {
    if bytes.len() < NIFTI_HEADER_SIZE {
        return Err(Error::MalformedHeader(format!(
            "file is {} bytes, shorter than the 348-byte header",
            bytes.len()
        )));
    }
    let raw: [u8; 4] = bytes[0..4].try_into().unwrap();
    let endian = if i32::from_le_bytes(raw) == 348 {
        Endian::Little
    } else if i32::from_be_bytes(raw) == 348 {
        Endian::Big
    } else {
        return Err(Error::MalformedHeader(format!(
            "sizeof_hdr is {} (expected 348 in either byte order)",
            i32::from_le_bytes(raw)
        )));
    };
    let r = ByteReader { bytes, endian };

    let magic = &bytes[344..348];
    if magic != b"n+1\0" && magic != b"ni1\0" {
        return Err(Error::MalformedHeader(format!(
            "bad magic {:?}",
            String::from_utf8_lossy(magic)
        )));
    }

    let dim: Vec<i16> = (0..8).map(|i| r.i16_at(40 + 2 * i)).collect();
    let ndim = dim[0];
    if !(1..=7).contains(&ndim) {
        return Err(Error::MalformedHeader(format!(
            "dim[0] = {ndim} is out of range"
        )));
    }
    let extent = |k: usize| -> Result<usize> {
        if k as i16 > ndim {
            return Ok(1);
        }
        if dim[k] < 1 {
            return Err(Error::MalformedHeader(format!(
                "dim[{k}] = {} is not positive",
                dim[k]
            )));
        }
        Ok(dim[k] as usize)
    };
    let dims = Dims::new(extent(1)?, extent(2)?, extent(3)?);
    #[allow(clippy::needless_range_loop)]
    for k in 4..=7 {
        if extent(k)? > 1 {
            return Err(Error::MalformedHeader(format!(
                "dim[{k}] = {}: only single 3D volumes are supported",
                dim[k]
            )));
        }
    }

    let datatype = Datatype::from_nifti_code(r.i16_at(70))?;
    let pixdim: Vec<f64> = (0..4).map(|i| r.f32_at(76 + 4 * i) as f64).collect();
    let voxel_size = [pixdim[1].abs(), pixdim[2].abs(), pixdim[3].abs()];
    let vox_offset = r.f32_at(108);
    if !vox_offset.is_finite() || vox_offset < 0.0 {
        return Err(Error::MalformedHeader(format!("vox_offset = {vox_offset}")));
    }
    let offset = (vox_offset as usize).max(NIFTI_HEADER_SIZE);
    let slope = r.f32_at(112) as f64;
    let inter = r.f32_at(116) as f64;
    let scale = slope != 0.0 && slope.is_finite();

    let width = datatype.byte_size();
    let expected = dims.len() * width;
    let found = bytes.len().saturating_sub(offset);
    if found < expected {
        return Err(Error::TruncatedData { expected, found });
    }

    let mut data = Vec::with_capacity(dims.len());
    for i in 0..dims.len() {
        let v = r.value(datatype, offset + i * width);
        let v = if scale { v * slope + inter } else { v };
        if !v.is_finite() {
            return Err(Error::NonFiniteVoxel { index: i });
        }
        data.push(v);
    }
    Volume::with_metadata(dims, voxel_size, data, datatype)
}

pub fn load_nifti(path: impl AsRef<Path>) -> Result<Volume> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_nifti(&bytes)
}

/// Serializes a volume as float32 single-file NIfTI-1 in native byte order.
pub fn encode_nifti(volume: &Volume) -> Vec<u8> {
    let mut out = vec![0u8; NIFTI_VOX_OFFSET];
    let put = |out: &mut Vec<u8>, off: usize, b: &[u8]| out[off..off + b.len()].copy_from_slice(b);
    let d = volume.dims();
    put(&mut out, 0, &348i32.to_ne_bytes());
    let dim: [i16; 8] = [3, d.nx as i16, d.ny as i16, d.nz as i16, 1, 1, 1, 1];
    for (i, v) in dim.iter().enumerate() {
        put(&mut out, 40 + 2 * i, &v.to_ne_bytes());
    }
    put(&mut out, 70, &Datatype::Float32.nifti_code().to_ne_bytes());
    put(&mut out, 72, &32i16.to_ne_bytes());
    let vs = volume.voxel_size();
    let pixdim: [f32; 8] = [
        1.0,
        vs[0] as f32,
        vs[1] as f32,
        vs[2] as f32,
        1.0,
        1.0,
        1.0,
        1.0,
    ];
    for (i, v) in pixdim.iter().enumerate() {
        put(&mut out, 76 + 4 * i, &v.to_ne_bytes());
    }
    put(&mut out, 108, &(NIFTI_VOX_OFFSET as f32).to_ne_bytes());
    put(&mut out, 112, &1.0f32.to_ne_bytes());
    put(&mut out, 116, &0.0f32.to_ne_bytes());
    put(&mut out, 344, b"n+1\0");
    out.reserve(volume.data().len() * 4);
    for &v in volume.data() {
        out.extend_from_slice(&(v as f32).to_ne_bytes());
    }
    out
}

pub fn write_nifti(volume: &Volume, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_nifti(volume)).map_err(|e| Error::io(path, e))
}

#[derive(Serialize, Deserialize)]
struct RawSidecar {
    dims: [usize; 3],
    voxel_size: [f64; 3],
}

fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

/// Loads `<name>.f32raw` (little-endian float32, x-fastest) with its
/// `<name>.json` sidecar.
pub fn load_raw(path: impl AsRef<Path>) -> Result<Volume> {
    let path = path.as_ref();
    let side = sidecar_path(path);
    let text = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
    let meta: RawSidecar = serde_json::from_str(&text).map_err(|e| Error::Json {
        path: side.clone(),
        source: e,
    })?;
    let dims = Dims::new(meta.dims[0], meta.dims[1], meta.dims[2]);
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let expected = dims.len() * 4;
    if bytes.len() < expected {
        return Err(Error::TruncatedData {
            expected,
            found: bytes.len(),
        });
    }
    let data = bytes[..expected]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Volume::with_metadata(dims, meta.voxel_size, data, Datatype::Float32)
}

pub fn write_raw(volume: &Volume, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let d = volume.dims();
    let meta = RawSidecar {
        dims: [d.nx, d.ny, d.nz],
        voxel_size: volume.voxel_size(),
    };
    let side = sidecar_path(path);
    let json = serde_json::to_string(&meta).expect("sidecar serializes");
    fs::write(&side, json).map_err(|e| Error::io(&side, e))?;
    let bytes: Vec<u8> = volume
        .data()
        .iter()
        .flat_map(|&v| (v as f32).to_le_bytes())
        .collect();
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// True if the path names a volume file this module can read.
pub fn is_volume_path(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()),
        Some("nii") | Some("f32raw")
    )
}

/// Loads a volume, choosing the reader from the file extension.
pub fn load_volume(path: impl AsRef<Path>) -> Result<Volume> {
    let path = path.as_ref();
    match path.extension().and_then(|e| e.to_str()) {
        Some("f32raw") => load_raw(path),
        _ => load_nifti(path),
    }
}

pub fn load_mask(path: impl AsRef<Path>, threshold: f64) -> Result<Mask> {
    Mask::from_volume(&load_volume(path)?, threshold)
}

/// Reads a mask given as a CSV list of inside voxel coordinates with a
/// `x,y,z` header. The grid comes from the data being analyzed.
pub fn load_mask_list(path: impl AsRef<Path>, dims: Dims) -> Result<Mask> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let schema = |line: usize, message: String| Error::Schema {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim().replace(' ', "") == "x,y,z" => {}
        _ => return Err(schema(1, "expected header `x,y,z`".into())),
    }
    let mut inside = vec![false; dims.len()];
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').map(str::trim).collect();
        if parts.len() != 3 {
            return Err(schema(
                i + 1,
                format!("expected 3 fields, found {}", parts.len()),
            ));
        }
        let mut c = [0usize; 3];
        for (k, p) in parts.iter().enumerate() {
            c[k] = p
                .parse()
                .map_err(|_| schema(i + 1, format!("`{p}` is not a voxel coordinate")))?;
        }
        if c[0] >= dims.nx || c[1] >= dims.ny || c[2] >= dims.nz {
            return Err(schema(
                i + 1,
                format!("coordinate {c:?} outside grid {:?}", dims.as_tuple()),
            ));
        }
        inside[dims.index(c[0], c[1], c[2])] = true;
    }
    Mask::new(dims, inside)
}
