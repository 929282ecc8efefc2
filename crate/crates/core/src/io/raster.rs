//! Multi-channel binary rasters.
//!
//! Layout (all integers little-endian):
//!
//! | offset | size | field                                  |
//! |--------|------|----------------------------------------|
//! | 0      | 4    | magic `EVMG`                           |
//! | 4      | 1    | version (1)                            |
//! | 5      | 1    | kind `R`                               |
//! | 6      | 1    | dtype: 1 = f32, 2 = u8, 3 = packed bool |
//! | 7      | 1    | reserved (0)                           |
//! | 8      | 4    | channels                               |
//! | 12     | 4    | width                                  |
//! | 16     | 4    | height                                 |
//!
//! The payload stores channel planes one after another, each row-major.
//! Packed booleans use `ceil(width / 8)` bytes per row, least significant bit
//! first.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::Path;

use crate::error::{Error, FormatError, Result};
use crate::grid::Grid;

pub const MAGIC: [u8; 4] = *b"EVMG";
pub const VERSION: u8 = 1;
pub const RASTER_KIND: u8 = b'R';
pub const RASTER_HEADER_LEN: usize = 20;

/// Header sizes beyond this are rejected before allocating.
const MAX_PAYLOAD: u64 = 1 << 34;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32 = 1,
    U8 = 2,
    Bool = 3,
}

impl Dtype {
    pub fn from_tag(tag: u8) -> Result<Self, FormatError> {
        match tag {
            1 => Ok(Self::F32),
            2 => Ok(Self::U8),
            3 => Ok(Self::Bool),
            other => Err(FormatError::UnknownDtype(other)),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::F32 => "f32",
            Self::U8 => "u8",
            Self::Bool => "bool",
        }
    }

    /// Bytes per channel plane, saturating for absurd dimensions.
    pub fn plane_bytes(&self, width: usize, height: usize) -> u64 {
        let (w, h) = (width as u64, height as u64);
        match self {
            Self::F32 => w.saturating_mul(h).saturating_mul(4),
            Self::U8 => w.saturating_mul(h),
            Self::Bool => w.div_ceil(8).saturating_mul(h),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RasterData {
    F32(Vec<f32>),
    U8(Vec<u8>),
    Bool(Vec<bool>),
}

impl RasterData {
    pub fn dtype(&self) -> Dtype {
        match self {
            Self::F32(_) => Dtype::F32,
            Self::U8(_) => Dtype::U8,
            Self::Bool(_) => Dtype::Bool,
        }
    }

    fn len(&self) -> usize {
        match self {
            Self::F32(v) => v.len(),
            Self::U8(v) => v.len(),
            Self::Bool(v) => v.len(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RasterHeader {
    pub dtype: Dtype,
    pub channels: usize,
    pub width: usize,
    pub height: usize,
}

impl RasterHeader {
    pub fn payload_len(&self) -> u64 {
        (self.channels as u64).saturating_mul(self.dtype.plane_bytes(self.width, self.height))
    }

    pub fn encode(&self) -> [u8; RASTER_HEADER_LEN] {
        let mut h = [0u8; RASTER_HEADER_LEN];
        h[..4].copy_from_slice(&MAGIC);
        h[4] = VERSION;
        h[5] = RASTER_KIND;
        h[6] = self.dtype as u8;
        h[8..12].copy_from_slice(&(self.channels as u32).to_le_bytes());
        h[12..16].copy_from_slice(&(self.width as u32).to_le_bytes());
        h[16..20].copy_from_slice(&(self.height as u32).to_le_bytes());
        h
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, FormatError> {
        if bytes.len() < 4 {
            return Err(FormatError::TruncatedHeader {
                expected: RASTER_HEADER_LEN,
                got: bytes.len(),
            });
        }
        let magic: [u8; 4] = bytes[..4].try_into().expect("length checked");
        if magic != MAGIC {
            return Err(FormatError::BadMagic(magic));
        }
        if bytes.len() < RASTER_HEADER_LEN {
            return Err(FormatError::TruncatedHeader {
                expected: RASTER_HEADER_LEN,
                got: bytes.len(),
            });
        }
        if bytes[4] != VERSION {
            return Err(FormatError::UnsupportedVersion(bytes[4]));
        }
        if bytes[5] != RASTER_KIND {
            return Err(FormatError::WrongKind {
                expected: RASTER_KIND as char,
                found: bytes[5] as char,
            });
        }
        let dtype = Dtype::from_tag(bytes[6])?;
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("length checked")) as usize;
        let header = Self {
            dtype,
            channels: u32_at(8),
            width: u32_at(12),
            height: u32_at(16),
        };
        if header.payload_len() > MAX_PAYLOAD {
            return Err(FormatError::TooLarge(format!(
                "{}x{}x{} {}",
                header.channels,
                header.width,
                header.height,
                dtype.name()
            )));
        }
        Ok(header)
    }
}

/// Typed raster: `channels` planes of `width × height`.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    pub channels: usize,
    pub width: usize,
    pub height: usize,
    pub data: RasterData,
}

impl Raster {
    pub fn new(channels: usize, width: usize, height: usize, data: RasterData) -> Result<Self> {
        if data.len() != channels * width * height {
            return Err(Error::Shape {
                expected: (width, height * channels),
                found: (data.len(), 1),
            });
        }
        Ok(Self {
            channels,
            width,
            height,
            data,
        })
    }

    pub fn header(&self) -> RasterHeader {
        RasterHeader {
            dtype: self.data.dtype(),
            channels: self.channels,
            width: self.width,
            height: self.height,
        }
    }

    pub fn from_f32_planes(planes: &[Grid<f32>]) -> Result<Self> {
        let (w, h) = planes.first().map_or((0, 0), Grid::dims);
        let mut data = Vec::with_capacity(planes.len() * w * h);
        for p in planes {
            p.ensure_dims((w, h))?;
            data.extend_from_slice(p.as_slice());
        }
        Self::new(planes.len(), w, h, RasterData::F32(data))
    }

    pub fn from_u8_planes(planes: &[Grid<u8>]) -> Result<Self> {
        let (w, h) = planes.first().map_or((0, 0), Grid::dims);
        let mut data = Vec::with_capacity(planes.len() * w * h);
        for p in planes {
            p.ensure_dims((w, h))?;
            data.extend_from_slice(p.as_slice());
        }
        Self::new(planes.len(), w, h, RasterData::U8(data))
    }

    pub fn from_bool_planes(planes: &[Grid<bool>]) -> Result<Self> {
        let (w, h) = planes.first().map_or((0, 0), Grid::dims);
        let mut data = Vec::with_capacity(planes.len() * w * h);
        for p in planes {
            p.ensure_dims((w, h))?;
            data.extend_from_slice(p.as_slice());
        }
        Self::new(planes.len(), w, h, RasterData::Bool(data))
    }

    fn plane_range(&self, channel: usize) -> std::ops::Range<usize> {
        let n = self.width * self.height;
        channel * n..(channel + 1) * n
    }

    pub fn f32_plane(&self, channel: usize) -> Result<Grid<f32>> {
        match &self.data {
            RasterData::F32(v) if channel < self.channels => {
                Grid::from_vec(self.width, self.height, v[self.plane_range(channel)].to_vec())
            }
            RasterData::F32(_) => Err(Error::Domain(format!("channel {channel} out of range"))),
            other => Err(dtype_mismatch(Dtype::F32, other.dtype())),
        }
    }

    pub fn u8_plane(&self, channel: usize) -> Result<Grid<u8>> {
        match &self.data {
            RasterData::U8(v) if channel < self.channels => {
                Grid::from_vec(self.width, self.height, v[self.plane_range(channel)].to_vec())
            }
            RasterData::U8(_) => Err(Error::Domain(format!("channel {channel} out of range"))),
            other => Err(dtype_mismatch(Dtype::U8, other.dtype())),
        }
    }

    pub fn bool_plane(&self, channel: usize) -> Result<Grid<bool>> {
        match &self.data {
            RasterData::Bool(v) if channel < self.channels => {
                Grid::from_vec(self.width, self.height, v[self.plane_range(channel)].to_vec())
            }
            RasterData::Bool(_) => Err(Error::Domain(format!("channel {channel} out of range"))),
            other => Err(dtype_mismatch(Dtype::Bool, other.dtype())),
        }
    }
}

fn dtype_mismatch(expected: Dtype, found: Dtype) -> Error {
    FormatError::DtypeMismatch {
        expected: expected.name(),
        found: found.name(),
    }
    .into()
}

fn encode_plane(out: &mut Vec<u8>, data: &RasterData, range: std::ops::Range<usize>, width: usize) {
    match data {
        RasterData::F32(v) => v[range].iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        RasterData::U8(v) => out.extend_from_slice(&v[range]),
        RasterData::Bool(v) => {
            for row in v[range].chunks(width.max(1)) {
                for byte in row.chunks(8) {
                    out.push(byte.iter().enumerate().fold(0u8, |acc, (i, &b)| acc | ((b as u8) << i)));
                }
            }
        }
    }
}

fn decode_plane(bytes: &[u8], header: &RasterHeader, out: &mut RasterData) {
    match out {
        RasterData::F32(v) => v.extend(
            bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("chunk of 4"))),
        ),
        RasterData::U8(v) => v.extend_from_slice(bytes),
        RasterData::Bool(v) => {
            let stride = header.width.div_ceil(8);
            for row in bytes.chunks(stride.max(1)).take(header.height) {
                for col in 0..header.width {
                    v.push(row[col / 8] >> (col % 8) & 1 == 1);
                }
            }
        }
    }
}

/// Serializes a raster to bytes.
pub fn encode_raster(raster: &Raster) -> Vec<u8> {
    let header = raster.header();
    let mut out = Vec::with_capacity(RASTER_HEADER_LEN + header.payload_len() as usize);
    out.extend_from_slice(&header.encode());
    for c in 0..raster.channels {
        encode_plane(&mut out, &raster.data, raster.plane_range(c), raster.width);
    }
    out
}

/// Parses a complete raster file image.
pub fn decode_raster(bytes: &[u8]) -> Result<Raster, FormatError> {
    let header = RasterHeader::decode(bytes)?;
    let expected = header.payload_len();
    let got = (bytes.len() - RASTER_HEADER_LEN) as u64;
    if got < expected {
        return Err(FormatError::TruncatedPayload { expected, got });
    }
    if got > expected {
        return Err(FormatError::TrailingBytes(got - expected));
    }
    let n = header.channels * header.width * header.height;
    let mut data = match header.dtype {
        Dtype::F32 => RasterData::F32(Vec::with_capacity(n)),
        Dtype::U8 => RasterData::U8(Vec::with_capacity(n)),
        Dtype::Bool => RasterData::Bool(Vec::with_capacity(n)),
    };
    let plane = header.dtype.plane_bytes(header.width, header.height) as usize;
    let payload = &bytes[RASTER_HEADER_LEN..];
    for c in 0..header.channels {
        decode_plane(&payload[c * plane..(c + 1) * plane], &header, &mut data);
    }
    Ok(Raster {
        channels: header.channels,
        width: header.width,
        height: header.height,
        data,
    })
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|source| Error::File {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_raster(raster: &Raster, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|source| Error::File {
        path: path.to_path_buf(),
        source,
    })?;
    let mut w = BufWriter::new(file);
    w.write_all(&encode_raster(raster))?;
    w.flush()?;
    Ok(())
}

pub fn read_raster(path: impl AsRef<Path>) -> Result<Raster> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    open(path)?.read_to_end(&mut bytes)?;
    Ok(decode_raster(&bytes)?)
}

/// Reads channel planes one at a time, so long multi-slice files stream in
/// constant memory.
pub struct RasterReader {
    file: BufReader<File>,
    header: RasterHeader,
}

impl RasterReader {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = open(path)?;
        let len = file.metadata()?.len();
        let mut file = BufReader::new(file);
        let mut head = vec![0u8; RASTER_HEADER_LEN.min(len as usize)];
        file.read_exact(&mut head)?;
        let header = RasterHeader::decode(&head)?;
        let got = len - RASTER_HEADER_LEN as u64;
        let expected = header.payload_len();
        if got < expected {
            return Err(FormatError::TruncatedPayload { expected, got }.into());
        }
        if got > expected {
            return Err(FormatError::TrailingBytes(got - expected).into());
        }
        Ok(Self { file, header })
    }

    pub fn header(&self) -> &RasterHeader {
        &self.header
    }

    fn plane_bytes(&mut self, channel: usize) -> Result<Vec<u8>> {
        if channel >= self.header.channels {
            return Err(Error::Domain(format!(
                "channel {channel} out of range ({} channels)",
                self.header.channels
            )));
        }
        let plane = self.header.dtype.plane_bytes(self.header.width, self.header.height);
        self.file
            .seek(SeekFrom::Start(RASTER_HEADER_LEN as u64 + channel as u64 * plane))?;
        let mut buf = vec![0u8; plane as usize];
        self.file.read_exact(&mut buf)?;
        Ok(buf)
    }

    fn expect(&self, dtype: Dtype) -> Result<()> {
        if self.header.dtype != dtype {
            return Err(dtype_mismatch(dtype, self.header.dtype));
        }
        Ok(())
    }

    pub fn read_f32(&mut self, channel: usize) -> Result<Grid<f32>> {
        self.expect(Dtype::F32)?;
        let bytes = self.plane_bytes(channel)?;
        let mut data = RasterData::F32(Vec::new());
        decode_plane(&bytes, &self.header, &mut data);
        let RasterData::F32(v) = data else { unreachable!() };
        Grid::from_vec(self.header.width, self.header.height, v)
    }

    pub fn read_u8(&mut self, channel: usize) -> Result<Grid<u8>> {
        self.expect(Dtype::U8)?;
        let bytes = self.plane_bytes(channel)?;
        Grid::from_vec(self.header.width, self.header.height, bytes)
    }

    pub fn read_bool(&mut self, channel: usize) -> Result<Grid<bool>> {
        self.expect(Dtype::Bool)?;
        let bytes = self.plane_bytes(channel)?;
        let mut data = RasterData::Bool(Vec::new());
        decode_plane(&bytes, &self.header, &mut data);
        let RasterData::Bool(v) = data else { unreachable!() };
        Grid::from_vec(self.header.width, self.header.height, v)
    }
}

/// Writes channel planes as they are produced; the channel count is fixed up front.
pub struct RasterWriter {
    out: BufWriter<File>,
    header: RasterHeader,
    written: usize,
}

impl RasterWriter {
    pub fn create(path: impl AsRef<Path>, header: RasterHeader) -> Result<Self> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|source| Error::File {
            path: path.to_path_buf(),
            source,
        })?;
        let mut out = BufWriter::new(file);
        out.write_all(&header.encode())?;
        Ok(Self {
            out,
            header,
            written: 0,
        })
    }

    fn push(&mut self, data: RasterData) -> Result<()> {
        if data.dtype() != self.header.dtype {
            return Err(dtype_mismatch(self.header.dtype, data.dtype()));
        }
        if self.written >= self.header.channels {
            return Err(Error::Domain("all channels already written".into()));
        }
        let n = self.header.width * self.header.height;
        let mut buf = Vec::new();
        encode_plane(&mut buf, &data, 0..n, self.header.width);
        self.out.write_all(&buf)?;
        self.written += 1;
        Ok(())
    }

    pub fn write_f32(&mut self, plane: &Grid<f32>) -> Result<()> {
        plane.ensure_dims((self.header.width, self.header.height))?;
        self.push(RasterData::F32(plane.as_slice().to_vec()))
    }

    pub fn write_u8(&mut self, plane: &Grid<u8>) -> Result<()> {
        plane.ensure_dims((self.header.width, self.header.height))?;
        self.push(RasterData::U8(plane.as_slice().to_vec()))
    }

    pub fn finish(mut self) -> Result<()> {
        if self.written != self.header.channels {
            return Err(Error::Domain(format!(
                "wrote {} of {} channels",
                self.written, self.header.channels
            )));
        }
        self.out.flush()?;
        Ok(())
    }
}
