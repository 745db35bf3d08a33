//! Ring-array signal sets and the SIGSET file format.
//!
//! SIGSET layout (little-endian): magic `SIGS`, `u32` transducer count,
//! `u32` samples per channel, `f64` dt (s), `f64` t0 (s), `f64` ring radius
//! (mm), `f64` ring angle offset (rad), `f64` background SOS (m/s), then
//! `N_t * n_samples` `f32` values, transducer-major.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::RingGeometry;
use crate::raster::{read_f64, read_u32};

pub const SIGSET_MAGIC: &[u8; 4] = b"SIGS";

/// Sampled signals `S(t, n)` of every ring transducer.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalSet {
    pub geom: RingGeometry,
    pub n_samples: usize,
    /// Sampling interval, s.
    pub dt: f64,
    /// Time of sample 0, s.
    pub t0: f64,
    /// `data[n * n_samples + i]` is sample `i` of transducer `n`.
    pub data: Vec<f64>,
    /// Background sound speed the acquisition assumes, m/s.
    pub background_sos: f64,
}

impl SignalSet {
    pub fn zeros(geom: RingGeometry, n_samples: usize, dt: f64, t0: f64, background_sos: f64) -> Self {
        SignalSet {
            geom,
            n_samples,
            dt,
            t0,
            data: vec![0.0; geom.n_transducers * n_samples],
            background_sos,
        }
    }

    pub fn channel(&self, n: usize) -> &[f64] {
        &self.data[n * self.n_samples..(n + 1) * self.n_samples]
    }

    pub fn channel_mut(&mut self, n: usize) -> &mut [f64] {
        let ns = self.n_samples;
        &mut self.data[n * ns..(n + 1) * ns]
    }

    pub fn t_end(&self) -> f64 {
        self.t0 + (self.n_samples as f64 - 1.0) * self.dt
    }

    /// Linearly interpolated `S(t, n)`; zero outside the recorded window.
    #[inline]
    pub fn sample(&self, n: usize, t: f64) -> f64 {
        interp_channel(self.channel(n), (t - self.t0) / self.dt)
    }

    fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::format(format!("SIGSET: invalid dt {}", self.dt)));
        }
        if !self.t0.is_finite() || !(self.background_sos > 0.0) || !self.background_sos.is_finite() {
            return Err(Error::format("SIGSET: invalid t0 or background SOS"));
        }
        if self.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::format("SIGSET: non-finite sample"));
        }
        Ok(())
    }

    pub fn write_sigset<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(SIGSET_MAGIC)?;
        w.write_all(&(self.geom.n_transducers as u32).to_le_bytes())?;
        w.write_all(&(self.n_samples as u32).to_le_bytes())?;
        for v in [
            self.dt,
            self.t0,
            self.geom.radius,
            self.geom.angle_offset,
            self.background_sos,
        ] {
            w.write_all(&v.to_le_bytes())?;
        }
        for v in &self.data {
            w.write_all(&(*v as f32).to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_sigset<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)
            .map_err(|_| Error::format("SIGSET: truncated header"))?;
        if &magic != SIGSET_MAGIC {
            return Err(Error::format(format!("SIGSET: bad magic {magic:?}")));
        }
        let n_t = read_u32(&mut r)? as usize;
        let n_samples = read_u32(&mut r)? as usize;
        let dt = read_f64(&mut r)?;
        let t0 = read_f64(&mut r)?;
        let radius = read_f64(&mut r)?;
        let offset = read_f64(&mut r)?;
        let background_sos = read_f64(&mut r)?;
        let geom = RingGeometry::new(n_t, radius, offset)
            .map_err(|e| Error::format(format!("SIGSET: {e}")))?;
        if n_samples == 0 {
            return Err(Error::format("SIGSET: zero samples per channel"));
        }
        let mut buf = vec![0u8; n_t * n_samples * 4];
        r.read_exact(&mut buf)
            .map_err(|_| Error::format("SIGSET: truncated payload"))?;
        let data = buf
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        let s = SignalSet {
            geom,
            n_samples,
            dt,
            t0,
            data,
            background_sos,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_sigset(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_sigset(BufReader::new(File::open(path)?))
    }
}

/// Linear interpolation at fractional index `f`, zero outside `[0, len - 1]`.
#[inline]
pub(crate) fn interp_channel(ch: &[f64], f: f64) -> f64 {
    if !(f >= 0.0) {
        return 0.0;
    }
    let i = f as usize;
    if i + 1 >= ch.len() {
        return if i + 1 == ch.len() && f == i as f64 { ch[i] } else { 0.0 };
    }
    let a = f - i as f64;
    ch[i] * (1.0 - a) + ch[i + 1] * a
}
