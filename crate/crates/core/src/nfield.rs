//! Sinusoidal coordinate network mapping in-mask positions to sound speed.
//!
//! The network is `dims[0] -> dims[1] -> ... -> dims[L]` with `sin(ω0 (W x + b))`
//! on every layer except the last, which is linear. The rendered sound speed
//! is `v0 + out_scale * MLP(c)` where `c` is the position normalized so that
//! the mask disc maps onto the unit disc.
//!
//! SIRN checkpoint layout (little-endian): magic `SIRN`, `u32` dimension
//! count, the dimensions as `u32`, `f64` omega0, `f64` out_scale, `f64` v0,
//! then the parameters as `f32` in layer order (weights row-major by output
//! unit, followed by biases).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::CircularMask;
use crate::raster::{read_f64, read_u32, GridSpec, RasterGrid};

pub const SIRN_MAGIC: &[u8; 4] = b"SIRN";
pub const DEFAULT_OMEGA0: f64 = 30.0;
pub const DEFAULT_OUT_SCALE: f64 = 100.0;

/// Pixels per parallel work item in rendering and backprop.
const CHUNK: usize = 256;

#[derive(Debug, Clone, PartialEq)]
pub struct SirenParams {
    /// Layer widths, input first.
    pub dims: Vec<usize>,
    /// All weights and biases, layer by layer.
    pub flat: Vec<f64>,
    pub omega0: f64,
    /// m/s per unit network output.
    pub out_scale: f64,
    /// Background sound speed, m/s.
    pub v0: f64,
}

pub fn parameter_count(dims: &[usize]) -> usize {
    dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

/// Initialize a network with `layers` sine layers of width `hidden`.
pub fn init_siren(seed: u64, hidden: usize, layers: usize, omega0: f64) -> Result<SirenParams> {
    if hidden == 0 || layers == 0 {
        return Err(Error::config("network needs at least one sine layer with one unit"));
    }
    if !(omega0 > 0.0) || !omega0.is_finite() {
        return Err(Error::config(format!("omega0 must be positive, got {omega0}")));
    }
    let mut dims = vec![2];
    dims.extend(std::iter::repeat_n(hidden, layers));
    dims.push(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut flat = Vec::with_capacity(parameter_count(&dims));
    let n_layers = dims.len() - 1;
    for (l, w) in dims.windows(2).enumerate() {
        let (fan_in, fan_out) = (w[0], w[1]);
        let bound = if l == 0 {
            1.0 / fan_in as f64
        } else {
            (6.0 / fan_in as f64).sqrt() / omega0
        };
        for _ in 0..fan_in * fan_out {
            flat.push(rng.gen_range(-bound..=bound));
        }
        let bias_bound = 1.0 / (fan_in as f64).sqrt();
        for _ in 0..fan_out {
            flat.push(if l + 1 == n_layers {
                0.0
            } else {
                rng.gen_range(-bias_bound..=bias_bound)
            });
        }
    }
    Ok(SirenParams {
        dims,
        flat,
        omega0,
        out_scale: DEFAULT_OUT_SCALE,
        v0: 1500.0,
    })
}

impl SirenParams {
    pub fn n_params(&self) -> usize {
        self.flat.len()
    }

    pub fn n_layers(&self) -> usize {
        self.dims.len() - 1
    }

    fn offset(&self, layer: usize) -> usize {
        parameter_count(&self.dims[..=layer])
    }

    /// Weight matrix (row-major, `out x in`) and bias of one layer.
    pub fn layer(&self, l: usize) -> (&[f64], &[f64]) {
        let (i, o) = (self.dims[l], self.dims[l + 1]);
        let start = self.offset(l);
        let (w, rest) = self.flat[start..].split_at(i * o);
        (w, &rest[..o])
    }

    fn widest(&self) -> usize {
        self.dims.iter().copied().max().unwrap_or(1)
    }

    /// Network output at normalized coordinate `c` (before scaling).
    pub fn eval(&self, c: [f64; 2]) -> f64 {
        let mut x = vec![0.0; self.widest()];
        let mut y = vec![0.0; self.widest()];
        x[..2].copy_from_slice(&c);
        let last = self.n_layers() - 1;
        for l in 0..=last {
            let (w, b) = self.layer(l);
            let (ni, no) = (self.dims[l], self.dims[l + 1]);
            for o in 0..no {
                let row = &w[o * ni..(o + 1) * ni];
                let z = b[o] + dot(row, &x[..ni]);
                y[o] = if l == last { z } else { (self.omega0 * z).sin() };
            }
            std::mem::swap(&mut x, &mut y);
        }
        x[0]
    }

    /// Sound speed at normalized coordinate `c`.
    pub fn sos_at(&self, c: [f64; 2]) -> f64 {
        self.v0 + self.out_scale * self.eval(c)
    }

    /// Gradient of the network output with respect to `c`.
    pub fn coord_gradient(&self, c: [f64; 2]) -> [f64; 2] {
        let mut tape = Tape::new(self);
        tape.forward(self, c);
        let mut gp = vec![0.0; self.n_params()];
        let gc = tape.backward(self, 1.0, &mut gp);
        [gc[0], gc[1]]
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.len() < 2 || self.dims[0] != 2 || *self.dims.last().unwrap() != 1 {
            return Err(Error::format(format!("network dims {:?} must map 2 inputs to 1 output", self.dims)));
        }
        if self.dims.contains(&0) {
            return Err(Error::format("network has a zero-width layer"));
        }
        if self.flat.len() != parameter_count(&self.dims) {
            return Err(Error::format("parameter vector length does not match layer shapes"));
        }
        if !(self.omega0 > 0.0) || !self.omega0.is_finite() {
            return Err(Error::format("omega0 must be positive and finite"));
        }
        if !self.out_scale.is_finite() || !(self.v0 > 0.0) || !self.v0.is_finite() {
            return Err(Error::format("out_scale and v0 must be finite, v0 positive"));
        }
        if self.flat.iter().any(|p| !p.is_finite()) {
            return Err(Error::format("non-finite network parameter"));
        }
        Ok(())
    }

    pub fn write_sirn<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(SIRN_MAGIC)?;
        w.write_all(&(self.dims.len() as u32).to_le_bytes())?;
        for &d in &self.dims {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        for v in [self.omega0, self.out_scale, self.v0] {
            w.write_all(&v.to_le_bytes())?;
        }
        for p in &self.flat {
            w.write_all(&(*p as f32).to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_sirn<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)
            .map_err(|_| Error::format("SIRN: truncated header"))?;
        if &magic != SIRN_MAGIC {
            return Err(Error::format(format!("SIRN: bad magic {magic:?}")));
        }
        let n = read_u32(&mut r)? as usize;
        if !(2..=64).contains(&n) {
            return Err(Error::format(format!("SIRN: implausible layer count {n}")));
        }
        let dims = (0..n)
            .map(|_| read_u32(&mut r).map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        if dims.iter().any(|&d| d == 0 || d > 1 << 16) {
            return Err(Error::format(format!("SIRN: invalid dims {dims:?}")));
        }
        let omega0 = read_f64(&mut r)?;
        let out_scale = read_f64(&mut r)?;
        let v0 = read_f64(&mut r)?;
        let count = parameter_count(&dims);
        let mut buf = vec![0u8; count * 4];
        r.read_exact(&mut buf)
            .map_err(|_| Error::format("SIRN: truncated parameters"))?;
        let flat = buf
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        let p = SirenParams {
            dims,
            flat,
            omega0,
            out_scale,
            v0,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_sirn(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_sirn(BufReader::new(File::open(path)?))
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Activations of one forward pass, reused across pixels.
struct Tape {
    /// `acts[l]` is the input to layer `l`; the last entry is the output.
    acts: Vec<Vec<f64>>,
    /// `ω0 z` of each sine layer, kept for the cosine in the backward pass.
    phases: Vec<Vec<f64>>,
}

impl Tape {
    fn new(p: &SirenParams) -> Self {
        Tape {
            acts: p.dims.iter().map(|&d| vec![0.0; d]).collect(),
            phases: p.dims[1..].iter().map(|&d| vec![0.0; d]).collect(),
        }
    }

    fn forward(&mut self, p: &SirenParams, c: [f64; 2]) -> f64 {
        self.acts[0].copy_from_slice(&c);
        let last = p.n_layers() - 1;
        for l in 0..=last {
            let (w, b) = p.layer(l);
            let ni = p.dims[l];
            let (head, tail) = self.acts.split_at_mut(l + 1);
            let x = &head[l];
            let y = &mut tail[0];
            for (o, yo) in y.iter_mut().enumerate() {
                let z = b[o] + dot(&w[o * ni..(o + 1) * ni], x);
                if l == last {
                    *yo = z;
                } else {
                    let ph = p.omega0 * z;
                    self.phases[l][o] = ph;
                    *yo = ph.sin();
                }
            }
        }
        self.acts[last + 1][0]
    }

    /// Accumulate `g * ∂out/∂θ` into `grad`; returns `g * ∂out/∂c`.
    fn backward(&self, p: &SirenParams, g: f64, grad: &mut [f64]) -> Vec<f64> {
        let last = p.n_layers() - 1;
        let mut delta = vec![g];
        for l in (0..=last).rev() {
            let (ni, no) = (p.dims[l], p.dims[l + 1]);
            let off = p.offset(l);
            let (w, _) = p.layer(l);
            // Gradient with respect to the pre-activation `W x + b`.
            let dz: Vec<f64> = if l == last {
                delta
            } else {
                (0..no)
                    .map(|o| delta[o] * p.omega0 * self.phases[l][o].cos())
                    .collect()
            };
            let x = &self.acts[l];
            for o in 0..no {
                let d = dz[o];
                if d == 0.0 {
                    continue;
                }
                let row = &mut grad[off + o * ni..off + (o + 1) * ni];
                for (gw, xi) in row.iter_mut().zip(x) {
                    *gw += d * xi;
                }
                grad[off + ni * no + o] += d;
            }
            let mut dx = vec![0.0; ni];
            for o in 0..no {
                let d = dz[o];
                if d == 0.0 {
                    continue;
                }
                for (dxi, wi) in dx.iter_mut().zip(&w[o * ni..(o + 1) * ni]) {
                    *dxi += d * wi;
                }
            }
            delta = dx;
        }
        delta
    }
}

/// A network rendered onto the image grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SosField {
    pub raster: RasterGrid,
    pub masked_indices: Vec<usize>,
    /// Normalized coordinate of each masked pixel.
    pub coords: Vec<[f64; 2]>,
}

impl SosField {
    /// Sound speed of the masked pixels, in `masked_indices` order.
    pub fn masked_values(&self) -> Vec<f64> {
        self.masked_indices.iter().map(|&i| self.raster.values[i]).collect()
    }
}

pub fn normalized_coords(grid: &GridSpec, mask: &CircularMask) -> (Vec<usize>, Vec<[f64; 2]>) {
    let idx = mask.pixel_indices(grid);
    let coords = idx
        .iter()
        .map(|&i| {
            let p = grid.world(i % grid.width, i / grid.width);
            [
                (p[0] - mask.center[0]) / mask.radius,
                (p[1] - mask.center[1]) / mask.radius,
            ]
        })
        .collect();
    (idx, coords)
}

pub fn render_sos(params: &SirenParams, grid: GridSpec, mask: &CircularMask) -> SosField {
    let (masked_indices, coords) = normalized_coords(&grid, mask);
    let values: Vec<f64> = coords
        .par_chunks(CHUNK)
        .flat_map_iter(|chunk| {
            let mut tape = Tape::new(params);
            chunk
                .iter()
                .map(|&c| params.v0 + params.out_scale * tape.forward(params, c))
                .collect::<Vec<_>>()
        })
        .collect();
    let mut raster = RasterGrid::filled(grid, params.v0);
    for (&i, v) in masked_indices.iter().zip(values) {
        raster.values[i] = v;
    }
    SosField {
        raster,
        masked_indices,
        coords,
    }
}

/// Gradient of `Σ_p grad_v[p] v(p)` over masked pixels with respect to every
/// network parameter.
///
/// Chunks are reduced in index order, so the result does not depend on the
/// number of worker threads.
pub fn backprop_sos(params: &SirenParams, field: &SosField, grad_v: &[f64]) -> Result<Vec<f64>> {
    if grad_v.len() != field.coords.len() {
        return Err(Error::config(format!(
            "{} SOS gradients for {} masked pixels",
            grad_v.len(),
            field.coords.len()
        )));
    }
    let n = params.n_params();
    let partials: Vec<Vec<f64>> = field
        .coords
        .par_chunks(CHUNK)
        .zip(grad_v.par_chunks(CHUNK))
        .map(|(cs, gs)| {
            let mut tape = Tape::new(params);
            let mut acc = vec![0.0; n];
            for (&c, &g) in cs.iter().zip(gs) {
                if g == 0.0 {
                    continue;
                }
                tape.forward(params, c);
                tape.backward(params, g * params.out_scale, &mut acc);
            }
            acc
        })
        .collect();
    let mut out = vec![0.0; n];
    for part in partials {
        for (o, p) in out.iter_mut().zip(part) {
            *o += p;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn small_field(params: &SirenParams) -> SosField {
        let grid = GridSpec::centered(24, 24, 0.5).unwrap();
        let mask = CircularMask::new([0.3, -0.2], 5.0).unwrap();
        render_sos(params, grid, &mask)
    }

    #[test]
    fn default_parameter_count() {
        let p = init_siren(0, 64, 2, DEFAULT_OMEGA0).unwrap();
        assert_eq!(p.n_params(), 4417);
        assert_eq!(init_siren(0, 16, 2, 30.0).unwrap().n_params(), 337);
    }

    proptest! {
        #[test]
        fn parameter_count_formula(hidden in 1usize..40, layers in 1usize..5) {
            let p = init_siren(1, hidden, layers, 30.0).unwrap();
            let expect = 2 * hidden + hidden + (layers - 1) * (hidden * hidden + hidden) + hidden + 1;
            prop_assert_eq!(p.n_params(), expect);
        }
    }

    #[test]
    fn init_ranges_and_determinism() {
        let a = init_siren(7, 64, 2, 30.0).unwrap();
        assert_eq!(a, init_siren(7, 64, 2, 30.0).unwrap());
        assert_ne!(a.flat, init_siren(8, 64, 2, 30.0).unwrap().flat);
        let (w0, _) = a.layer(0);
        assert!(w0.iter().all(|v| v.abs() <= 0.5));
        let (w1, _) = a.layer(1);
        let bound = (6.0f64 / 64.0).sqrt() / 30.0;
        assert!(w1.iter().all(|v| v.abs() <= bound));
        assert!(w1.iter().any(|v| v.abs() > 0.5 * bound));
        let (_, b2) = a.layer(2);
        assert_eq!(b2, &[0.0]);
        assert!(init_siren(0, 0, 2, 30.0).is_err());
        assert!(init_siren(0, 8, 2, 0.0).is_err());
    }

    #[test]
    fn trivial_fields_render_background() {
        let mut p = init_siren(3, 16, 2, 30.0).unwrap();
        p.v0 = 1499.4;
        let off = p.offset(2);
        for v in &mut p.flat[off..] {
            *v = 0.0;
        }
        let f = small_field(&p);
        assert!(f.raster.values.iter().all(|&v| v == 1499.4));

        let mut q = init_siren(3, 16, 2, 30.0).unwrap();
        q.out_scale = 0.0;
        assert!(small_field(&q).raster.values.iter().all(|&v| v == 1500.0));
    }

    #[test]
    fn outside_mask_is_background() {
        let p = init_siren(0, 16, 2, 30.0).unwrap();
        let f = small_field(&p);
        let mut inside = vec![false; f.raster.values.len()];
        for &i in &f.masked_indices {
            inside[i] = true;
        }
        for (i, &v) in f.raster.values.iter().enumerate() {
            if !inside[i] {
                assert_eq!(v, 1500.0);
            }
        }
        assert!(f.coords.iter().all(|c| c[0].hypot(c[1]) <= 1.0 + 1e-12));
        assert_eq!(f.raster, small_field(&p).raster);
    }

    #[test]
    fn backprop_matches_finite_differences() {
        let p = init_siren(11, 12, 2, 30.0).unwrap();
        let f = small_field(&p);
        let k = f.coords.len() / 3;
        let mut g = vec![0.0; f.coords.len()];
        g[k] = 1.0;
        let grad = backprop_sos(&p, &f, &g).unwrap();
        let c = f.coords[k];
        let h = 1e-4;
        let mut worst = 0.0_f64;
        for i in 0..p.n_params() {
            let mut a = p.clone();
            a.flat[i] += h;
            let mut b = p.clone();
            b.flat[i] -= h;
            let fd = (a.sos_at(c) - b.sos_at(c)) / (2.0 * h);
            let scale = fd.abs().max(grad[i].abs()).max(1e-3);
            worst = worst.max((fd - grad[i]).abs() / scale);
        }
        assert!(worst < 1e-4, "worst relative error {worst}");
    }

    #[test]
    fn backprop_linear_and_zero() {
        let p = init_siren(5, 10, 2, 30.0).unwrap();
        let f = small_field(&p);
        let n = f.coords.len();
        assert!(backprop_sos(&p, &f, &vec![0.0; n]).unwrap().iter().all(|&v| v == 0.0));
        let ga: Vec<f64> = (0..n).map(|i| if i % 3 == 0 { 0.7 } else { 0.0 }).collect();
        let gb: Vec<f64> = (0..n).map(|i| if i % 5 == 1 { -1.3 } else { 0.0 }).collect();
        let gab: Vec<f64> = ga.iter().zip(&gb).map(|(a, b)| a + b).collect();
        let ra = backprop_sos(&p, &f, &ga).unwrap();
        let rb = backprop_sos(&p, &f, &gb).unwrap();
        let rab = backprop_sos(&p, &f, &gab).unwrap();
        for i in 0..ra.len() {
            assert!((ra[i] + rb[i] - rab[i]).abs() <= 1e-9 * (1.0 + rab[i].abs()));
        }
        assert!(backprop_sos(&p, &f, &[1.0]).is_err());
    }

    #[test]
    fn coordinate_gradient_and_continuity() {
        let p = init_siren(0, 64, 2, 30.0).unwrap();
        for c in [[0.1, -0.3], [0.0, 0.0], [-0.6, 0.5]] {
            let g = p.coord_gradient(c);
            let d = 1e-6;
            let fx = (p.eval([c[0] + d, c[1]]) - p.eval([c[0] - d, c[1]])) / (2.0 * d);
            let fy = (p.eval([c[0], c[1] + d]) - p.eval([c[0], c[1] - d])) / (2.0 * d);
            assert!((fx - g[0]).abs() < 1e-6 * (1.0 + g[0].abs()));
            assert!((fy - g[1]).abs() < 1e-6 * (1.0 + g[1].abs()));
            assert!((p.eval([c[0] + d, c[1]]) - p.eval(c)).abs() <= 2.0 * d * (g[0].abs() + 1.0));
        }
    }

    #[test]
    fn rendered_field_is_smooth() {
        let p = init_siren(0, 64, 2, 30.0).unwrap();
        let grid = GridSpec::centered(64, 64, 0.1).unwrap();
        let mask = CircularMask::new([0.0, 0.0], 3.0).unwrap();
        let f = render_sos(&p, grid, &mask);
        let frob = |l: usize| p.layer(l).0.iter().map(|w| w * w).sum::<f64>().sqrt();
        let lipschitz = p.out_scale * p.omega0 * p.omega0 * frob(0) * frob(1) * frob(2) / mask.radius;
        let mut steepest = 0.0_f64;
        for r in 0..64 {
            for c in 0..63 {
                let a = grid.world(c, r);
                let b = grid.world(c + 1, r);
                if !(mask.contains(a) && mask.contains(b)) {
                    continue;
                }
                let fd = (f.raster.get(c + 1, r) - f.raster.get(c, r)) / grid.pitch;
                let scale = |q: [f64; 2]| [q[0] / mask.radius, q[1] / mask.radius];
                let exact = (p.sos_at(scale(b)) - p.sos_at(scale(a))) / grid.pitch;
                assert!((fd - exact).abs() < 1e-9 * (1.0 + exact.abs()));
                steepest = steepest.max(fd.abs());
            }
        }
        assert!(steepest > 0.0 && steepest <= lipschitz, "{steepest} vs bound {lipschitz}");
    }

    #[test]
    fn sirn_roundtrip_and_rejects() {
        let p = init_siren(2, 8, 3, 30.0).unwrap();
        let mut buf = Vec::new();
        p.write_sirn(&mut buf).unwrap();
        assert_eq!(buf.len(), 4 + 4 + 5 * 4 + 24 + p.n_params() * 4);
        let back = SirenParams::read_sirn(&buf[..]).unwrap();
        assert_eq!(back.dims, p.dims);
        for (a, b) in back.flat.iter().zip(&p.flat) {
            assert_eq!(*a, *b as f32 as f64);
        }
        assert!(SirenParams::read_sirn(&buf[..buf.len() - 1]).is_err());
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(SirenParams::read_sirn(&bad[..]).is_err());
    }
}
