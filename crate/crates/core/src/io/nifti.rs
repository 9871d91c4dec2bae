//! Minimal single-file NIfTI-1 (`.nii`) reader and writer.
//!
//! Supported: datatypes uint8 (2), int16 (4), int32 (8), float32 (16) and
//! float64 (64), either byte order, no extensions, no compression. Values are
//! scaled by `scl_slope`/`scl_inter` when the slope is nonzero. For 4D images
//! the fourth axis is the subject axis. qform/sform are ignored.

use std::path::Path;

use thiserror::Error;

use crate::error::{Error, Result};
use crate::model::{SubjectContrasts, VolumeGeometry};

const HEADER_SIZE: usize = 348;
/// Header plus the 4-byte extension flag.
const WRITE_OFFSET: usize = 352;

const OFF_DIM: usize = 40;
const OFF_DATATYPE: usize = 70;
const OFF_BITPIX: usize = 72;
const OFF_PIXDIM: usize = 76;
const OFF_VOX_OFFSET: usize = 108;
const OFF_SCL_SLOPE: usize = 112;
const OFF_SCL_INTER: usize = 116;
const OFF_MAGIC: usize = 344;

#[derive(Debug, Error, PartialEq)]
pub enum NiftiError {
    #[error("file is {len} bytes, shorter than the 348-byte header")]
    TooShort { len: usize },
    #[error("byte 0: sizeof_hdr is not 348 in either byte order")]
    BadSizeofHdr,
    #[error("byte 344: unsupported two-file NIfTI (magic \"ni1\")")]
    TwoFile,
    #[error("byte 344: bad magic {0:?}")]
    BadMagic([u8; 4]),
    #[error("byte 70: unsupported datatype {0}")]
    UnsupportedDatatype(i16),
    #[error("byte 72: bitpix {bitpix} does not match datatype {datatype}")]
    BitpixMismatch { datatype: i16, bitpix: i16 },
    #[error("byte {offset}: invalid dimension {value}")]
    BadDim { offset: usize, value: i16 },
    #[error("byte 108: vox_offset {0} is not a whole byte offset past the header")]
    BadVoxOffset(f32),
    #[error("data section truncated: needs {needed} bytes from byte {offset}, file has {available}")]
    Truncated {
        offset: usize,
        needed: usize,
        available: usize,
    },
    #[error("expected a {expected}D image, got {got}D")]
    WrongRank { expected: &'static str, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Endian {
    Little,
    Big,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Datatype {
    U8,
    I16,
    I32,
    F32,
    F64,
}

impl Datatype {
    pub const ALL: [Datatype; 5] = [Datatype::U8, Datatype::I16, Datatype::I32, Datatype::F32, Datatype::F64];

    pub fn code(self) -> i16 {
        match self {
            Datatype::U8 => 2,
            Datatype::I16 => 4,
            Datatype::I32 => 8,
            Datatype::F32 => 16,
            Datatype::F64 => 64,
        }
    }

    pub fn from_code(code: i16) -> Option<Self> {
        Datatype::ALL.into_iter().find(|d| d.code() == code)
    }

    pub fn bytes(self) -> usize {
        match self {
            Datatype::U8 => 1,
            Datatype::I16 => 2,
            Datatype::I32 | Datatype::F32 => 4,
            Datatype::F64 => 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NiftiHeader {
    /// `dim[1..=dim[0]]`.
    pub dims: Vec<usize>,
    pub datatype: Datatype,
    pub vox_offset: usize,
    pub scl_slope: f32,
    pub scl_inter: f32,
    pub endian: Endian,
}

/// A decoded image: header plus scaled values in file order (x fastest).
#[derive(Debug, Clone, PartialEq)]
pub struct NiftiVolume {
    pub header: NiftiHeader,
    pub data: Vec<f64>,
}

struct Reader<'a> {
    bytes: &'a [u8],
    endian: Endian,
}

impl Reader<'_> {
    fn take<const N: usize>(&self, off: usize) -> [u8; N] {
        self.bytes[off..off + N].try_into().unwrap()
    }

    fn i16(&self, off: usize) -> i16 {
        match self.endian {
            Endian::Little => i16::from_le_bytes(self.take(off)),
            Endian::Big => i16::from_be_bytes(self.take(off)),
        }
    }

    fn i32(&self, off: usize) -> i32 {
        match self.endian {
            Endian::Little => i32::from_le_bytes(self.take(off)),
            Endian::Big => i32::from_be_bytes(self.take(off)),
        }
    }

    fn f32(&self, off: usize) -> f32 {
        match self.endian {
            Endian::Little => f32::from_le_bytes(self.take(off)),
            Endian::Big => f32::from_be_bytes(self.take(off)),
        }
    }

    fn f64(&self, off: usize) -> f64 {
        match self.endian {
            Endian::Little => f64::from_le_bytes(self.take(off)),
            Endian::Big => f64::from_be_bytes(self.take(off)),
        }
    }

    fn value(&self, dt: Datatype, off: usize) -> f64 {
        match dt {
            Datatype::U8 => f64::from(self.bytes[off]),
            Datatype::I16 => f64::from(self.i16(off)),
            Datatype::I32 => f64::from(self.i32(off)),
            Datatype::F32 => f64::from(self.f32(off)),
            Datatype::F64 => self.f64(off),
        }
    }
}

pub fn parse_header(bytes: &[u8]) -> Result<NiftiHeader, NiftiError> {
    if bytes.len() < HEADER_SIZE {
        return Err(NiftiError::TooShort { len: bytes.len() });
    }
    let raw: [u8; 4] = bytes[0..4].try_into().unwrap();
    let endian = if i32::from_le_bytes(raw) == HEADER_SIZE as i32 {
        Endian::Little
    } else if i32::from_be_bytes(raw) == HEADER_SIZE as i32 {
        Endian::Big
    } else {
        return Err(NiftiError::BadSizeofHdr);
    };
    let r = Reader { bytes, endian };
    let magic: [u8; 4] = r.take(OFF_MAGIC);
    match &magic {
        b"n+1\0" => {}
        b"ni1\0" => return Err(NiftiError::TwoFile),
        _ => return Err(NiftiError::BadMagic(magic)),
    }
    let rank = r.i16(OFF_DIM);
    if !(1..=7).contains(&rank) {
        return Err(NiftiError::BadDim {
            offset: OFF_DIM,
            value: rank,
        });
    }
    let mut dims = Vec::with_capacity(rank as usize);
    for k in 1..=rank as usize {
        let off = OFF_DIM + 2 * k;
        let d = r.i16(off);
        if d < 1 {
            return Err(NiftiError::BadDim { offset: off, value: d });
        }
        dims.push(d as usize);
    }
    let code = r.i16(OFF_DATATYPE);
    let datatype = Datatype::from_code(code).ok_or(NiftiError::UnsupportedDatatype(code))?;
    let bitpix = r.i16(OFF_BITPIX);
    if bitpix as usize != 8 * datatype.bytes() {
        return Err(NiftiError::BitpixMismatch { datatype: code, bitpix });
    }
    let vox = r.f32(OFF_VOX_OFFSET);
    if !(vox.fract() == 0.0 && vox >= HEADER_SIZE as f32) {
        return Err(NiftiError::BadVoxOffset(vox));
    }
    Ok(NiftiHeader {
        dims,
        datatype,
        vox_offset: vox as usize,
        scl_slope: r.f32(OFF_SCL_SLOPE),
        scl_inter: r.f32(OFF_SCL_INTER),
        endian,
    })
}

pub fn parse_nifti(bytes: &[u8]) -> Result<NiftiVolume, NiftiError> {
    let header = parse_header(bytes)?;
    let n: usize = header.dims.iter().product();
    let size = header.datatype.bytes();
    let needed = n * size;
    let available = bytes.len().saturating_sub(header.vox_offset);
    if available < needed {
        return Err(NiftiError::Truncated {
            offset: header.vox_offset,
            needed,
            available,
        });
    }
    let r = Reader {
        bytes,
        endian: header.endian,
    };
    let (slope, inter) = (f64::from(header.scl_slope), f64::from(header.scl_inter));
    let scale = slope != 0.0 && slope.is_finite();
    let data = (0..n)
        .map(|k| {
            let v = r.value(header.datatype, header.vox_offset + k * size);
            if scale {
                v * slope + inter
            } else {
                v
            }
        })
        .collect();
    Ok(NiftiVolume { header, data })
}

pub fn read_nifti(path: impl AsRef<Path>) -> Result<NiftiVolume> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(parse_nifti(&bytes)?)
}

/// Encodes raw (unscaled) values. Integer datatypes round to nearest and
/// saturate.
pub fn encode_nifti(
    dims: &[usize],
    raw: &[f64],
    datatype: Datatype,
    endian: Endian,
    scl_slope: f32,
    scl_inter: f32,
) -> Result<Vec<u8>> {
    if dims.is_empty() || dims.len() > 7 || dims.iter().any(|&d| d == 0 || d > i16::MAX as usize) {
        return Err(Error::invalid(format!("cannot encode dims {dims:?}")));
    }
    let n: usize = dims.iter().product();
    if raw.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "{} values for dims {dims:?}",
            raw.len()
        )));
    }
    let mut out = vec![0u8; WRITE_OFFSET + n * datatype.bytes()];
    let mut put = |off: usize, b: &[u8]| out[off..off + b.len()].copy_from_slice(b);
    macro_rules! enc {
        ($v:expr) => {
            match endian {
                Endian::Little => $v.to_le_bytes(),
                Endian::Big => $v.to_be_bytes(),
            }
        };
    }
    put(0, &enc!(HEADER_SIZE as i32));
    put(OFF_DIM, &enc!(dims.len() as i16));
    for k in 0..7 {
        let d = dims.get(k).copied().unwrap_or(1) as i16;
        put(OFF_DIM + 2 * (k + 1), &enc!(d));
    }
    put(OFF_DATATYPE, &enc!(datatype.code()));
    put(OFF_BITPIX, &enc!((8 * datatype.bytes()) as i16));
    for k in 0..8 {
        put(OFF_PIXDIM + 4 * k, &enc!(1.0f32));
    }
    put(OFF_VOX_OFFSET, &enc!(WRITE_OFFSET as f32));
    put(OFF_SCL_SLOPE, &enc!(scl_slope));
    put(OFF_SCL_INTER, &enc!(scl_inter));
    put(OFF_MAGIC, b"n+1\0");
    let size = datatype.bytes();
    for (k, &v) in raw.iter().enumerate() {
        let off = WRITE_OFFSET + k * size;
        match datatype {
            Datatype::U8 => put(off, &[v.round().clamp(0.0, 255.0) as u8]),
            Datatype::I16 => put(off, &enc!(v.round() as i16)),
            Datatype::I32 => put(off, &enc!(v.round() as i32)),
            Datatype::F32 => put(off, &enc!(v as f32)),
            Datatype::F64 => put(off, &enc!(v)),
        }
    }
    Ok(out)
}

pub fn write_nifti(
    path: impl AsRef<Path>,
    dims: &[usize],
    raw: &[f64],
    datatype: Datatype,
    endian: Endian,
) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_nifti(dims, raw, datatype, endian, 0.0, 0.0)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn spatial_dims(h: &NiftiHeader, want_4d: bool) -> Result<([usize; 3], usize)> {
    let rank = h.dims.iter().rposition(|&d| d > 1).map_or(1, |k| k + 1);
    let limit = if want_4d { 4 } else { 3 };
    if rank > limit {
        return Err(NiftiError::WrongRank {
            expected: if want_4d { "4" } else { "3" },
            got: rank,
        }
        .into());
    }
    let d = |k: usize| h.dims.get(k).copied().unwrap_or(1);
    Ok(([d(0), d(1), d(2)], d(3)))
}

/// A 3D mask image; nonzero voxels are in the mask.
pub fn read_mask(path: impl AsRef<Path>) -> Result<VolumeGeometry> {
    let vol = read_nifti(path)?;
    let (dims, _) = spatial_dims(&vol.header, false)?;
    VolumeGeometry::new(dims, vol.data.iter().map(|&v| v != 0.0).collect())
}

/// A 3D image restricted to the in-mask voxels of `geometry`.
pub fn read_volume_in_mask(path: impl AsRef<Path>, geometry: &VolumeGeometry) -> Result<Vec<f64>> {
    let vol = read_nifti(path)?;
    let (dims, _) = spatial_dims(&vol.header, false)?;
    if dims != geometry.dims() {
        return Err(Error::DimensionMismatch(format!(
            "image dims {dims:?} differ from mask dims {:?}",
            geometry.dims()
        )));
    }
    Ok((0..geometry.m()).map(|i| vol.data[geometry.linear_of(i)]).collect())
}

/// A 4D image with subjects along the fourth axis. Without a mask every grid
/// voxel is used.
pub fn read_contrasts(path: impl AsRef<Path>, mask: Option<&VolumeGeometry>) -> Result<SubjectContrasts> {
    let vol = read_nifti(path)?;
    let (dims, subjects) = spatial_dims(&vol.header, true)?;
    let geometry = match mask {
        Some(g) if g.dims() != dims => {
            return Err(Error::DimensionMismatch(format!(
                "image dims {dims:?} differ from mask dims {:?}",
                g.dims()
            )))
        }
        Some(g) => g.clone(),
        None => VolumeGeometry::full(dims)?,
    };
    let grid = geometry.grid_len();
    let m = geometry.m();
    let mut data = Vec::with_capacity(subjects * m);
    for j in 0..subjects {
        let frame = &vol.data[j * grid..(j + 1) * grid];
        data.extend((0..m).map(|i| frame[geometry.linear_of(i)]));
    }
    SubjectContrasts::new(data, subjects, m)?.with_geometry(geometry)
}

/// Writes in-mask values as a float32 3D image, zero outside the mask.
pub fn write_volume_f32(path: impl AsRef<Path>, geometry: &VolumeGeometry, values: &[f64]) -> Result<()> {
    let full = geometry.scatter(values, 0.0)?;
    let [nx, ny, nz] = geometry.dims();
    write_nifti(path, &[nx, ny, nz], &full, Datatype::F32, Endian::Little)
}
