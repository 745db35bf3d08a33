//! Two-dimensional scalar rasters in the shared world frame.
//!
//! The world frame puts the ring center at the origin with x to the right
//! and y upward. Pixel `(col, row)` has its center at
//! `origin + (col, row) * pitch`, so row index grows with y.
//!
//! Rasters are stored row-major and serialize to the little-endian PGRID
//! format: magic `PGRD`, `u32` width, `u32` height, `f64` pitch (mm),
//! `f64` origin x and y (mm), then `width * height` `f32` values.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const PGRID_MAGIC: &[u8; 4] = b"PGRD";

/// Shape and placement of a raster without its values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub width: usize,
    pub height: usize,
    /// Pixel pitch in mm.
    pub pitch: f64,
    /// World position (mm) of the center of pixel (0, 0).
    pub origin: [f64; 2],
}

impl GridSpec {
    pub fn new(width: usize, height: usize, pitch: f64, origin: [f64; 2]) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::config("raster dimensions must be at least 1x1"));
        }
        if !(pitch > 0.0) || !pitch.is_finite() {
            return Err(Error::config(format!("pixel pitch must be positive, got {pitch}")));
        }
        if !origin.iter().all(|v| v.is_finite()) {
            return Err(Error::config("raster origin must be finite"));
        }
        Ok(GridSpec {
            width,
            height,
            pitch,
            origin,
        })
    }

    /// A grid whose geometric center coincides with the world origin.
    pub fn centered(width: usize, height: usize, pitch: f64) -> Result<Self> {
        let origin = [
            -0.5 * (width as f64 - 1.0) * pitch,
            -0.5 * (height as f64 - 1.0) * pitch,
        ];
        Self::new(width, height, pitch, origin)
    }

    /// 256x256 pixels at 0.1 mm, centered on the ring.
    pub fn desk_default() -> Self {
        Self::centered(256, 256, 0.1).expect("valid default grid")
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.width * self.height
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, col: usize, row: usize) -> usize {
        row * self.width + col
    }

    #[inline]
    pub fn world(&self, col: usize, row: usize) -> [f64; 2] {
        [
            self.origin[0] + col as f64 * self.pitch,
            self.origin[1] + row as f64 * self.pitch,
        ]
    }

    /// Fractional pixel coordinates `(col, row)` of a world point.
    #[inline]
    pub fn pixel(&self, p: [f64; 2]) -> [f64; 2] {
        [
            (p[0] - self.origin[0]) / self.pitch,
            (p[1] - self.origin[1]) / self.pitch,
        ]
    }

    /// Physical extent (mm) along x and y, measured edge to edge.
    pub fn extent(&self) -> [f64; 2] {
        [self.width as f64 * self.pitch, self.height as f64 * self.pitch]
    }

    /// Bilinear stencil of a world point: up to four `(flat index, weight)`
    /// pairs. Returns `None` when the point is outside the pixel-center hull.
    #[inline]
    pub fn bilinear_stencil(&self, p: [f64; 2]) -> Option<[(usize, f64); 4]> {
        let [fc, fr] = self.pixel(p);
        if fc < 0.0 || fr < 0.0 {
            return None;
        }
        let max_c = (self.width - 1) as f64;
        let max_r = (self.height - 1) as f64;
        if fc > max_c || fr > max_r {
            return None;
        }
        let c0 = (fc.floor() as usize).min(self.width.saturating_sub(2));
        let r0 = (fr.floor() as usize).min(self.height.saturating_sub(2));
        let c1 = (c0 + 1).min(self.width - 1);
        let r1 = (r0 + 1).min(self.height - 1);
        let tx = fc - c0 as f64;
        let ty = fr - r0 as f64;
        Some([
            (self.index(c0, r0), (1.0 - tx) * (1.0 - ty)),
            (self.index(c1, r0), tx * (1.0 - ty)),
            (self.index(c0, r1), (1.0 - tx) * ty),
            (self.index(c1, r1), tx * ty),
        ])
    }

    pub fn same_shape(&self, other: &GridSpec) -> bool {
        self.width == other.width
            && self.height == other.height
            && self.pitch == other.pitch
            && self.origin == other.origin
    }
}

/// A scalar field sampled on a [`GridSpec`].
#[derive(Debug, Clone, PartialEq)]
pub struct RasterGrid {
    pub spec: GridSpec,
    pub values: Vec<f64>,
}

impl RasterGrid {
    pub fn zeros(spec: GridSpec) -> Self {
        Self::filled(spec, 0.0)
    }

    pub fn filled(spec: GridSpec, value: f64) -> Self {
        RasterGrid {
            spec,
            values: vec![value; spec.len()],
        }
    }

    pub fn from_values(spec: GridSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != spec.len() {
            return Err(Error::config(format!(
                "raster needs {} values, got {}",
                spec.len(),
                values.len()
            )));
        }
        Ok(RasterGrid { spec, values })
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.spec.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.spec.height
    }

    #[inline]
    pub fn get(&self, col: usize, row: usize) -> f64 {
        self.values[self.spec.index(col, row)]
    }

    #[inline]
    pub fn set(&mut self, col: usize, row: usize, v: f64) {
        let i = self.spec.index(col, row);
        self.values[i] = v;
    }

    /// Bilinear sample at a world point, `fallback` outside the grid.
    #[inline]
    pub fn sample(&self, p: [f64; 2], fallback: f64) -> f64 {
        match self.spec.bilinear_stencil(p) {
            Some(st) => st.iter().map(|&(i, w)| w * self.values[i]).sum(),
            None => fallback,
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Index of the largest value (first on ties).
    pub fn argmax(&self) -> (usize, usize) {
        let mut best = 0;
        for (i, v) in self.values.iter().enumerate() {
            if *v > self.values[best] {
                best = i;
            }
        }
        (best % self.spec.width, best / self.spec.width)
    }

    pub fn scaled(&self, s: f64) -> Self {
        RasterGrid {
            spec: self.spec,
            values: self.values.iter().map(|v| v * s).collect(),
        }
    }

    /// Copy out a `size x size` block whose lower-left pixel is `(col0, row0)`.
    pub fn crop(&self, col0: usize, row0: usize, size: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(size * size);
        for r in row0..row0 + size {
            let start = self.spec.index(col0, r);
            out.extend_from_slice(&self.values[start..start + size]);
        }
        out
    }

    pub fn write_pgrid<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(PGRID_MAGIC)?;
        w.write_all(&(self.spec.width as u32).to_le_bytes())?;
        w.write_all(&(self.spec.height as u32).to_le_bytes())?;
        w.write_all(&self.spec.pitch.to_le_bytes())?;
        w.write_all(&self.spec.origin[0].to_le_bytes())?;
        w.write_all(&self.spec.origin[1].to_le_bytes())?;
        for v in &self.values {
            w.write_all(&(*v as f32).to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_pgrid<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)
            .map_err(|_| Error::format("PGRID: truncated header"))?;
        if &magic != PGRID_MAGIC {
            return Err(Error::format(format!("PGRID: bad magic {magic:?}")));
        }
        let width = read_u32(&mut r)? as usize;
        let height = read_u32(&mut r)? as usize;
        let pitch = read_f64(&mut r)?;
        let ox = read_f64(&mut r)?;
        let oy = read_f64(&mut r)?;
        let spec = GridSpec::new(width, height, pitch, [ox, oy])
            .map_err(|e| Error::format(format!("PGRID: {e}")))?;
        let mut buf = vec![0u8; spec.len() * 4];
        r.read_exact(&mut buf)
            .map_err(|_| Error::format("PGRID: truncated payload"))?;
        let values: Vec<f64> = buf
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::format("PGRID: non-finite value in payload"));
        }
        Ok(RasterGrid { spec, values })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_pgrid(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_pgrid(BufReader::new(File::open(path)?))
    }
}

pub(crate) fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)
        .map_err(|_| Error::format("truncated header"))?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)
        .map_err(|_| Error::format("truncated header"))?;
    Ok(f64::from_le_bytes(b))
}
