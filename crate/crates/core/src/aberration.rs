//! Straight-ray aberration model.
//!
//! Sound speed enters through the wavefront error
//! `w(θ) = ∫ (1 - v0 / v(l)) dl`, integrated from a sample point toward the
//! ring along direction `θ`. The integrand vanishes outside the mask disc,
//! so every ray integral is clipped analytically to that disc and evaluated
//! with the midpoint rule on bilinear SOS samples.
//!
//! Per image patch the delay-`d` DAS point-spread function has the transfer
//! function
//!
//! ```text
//! H(k; d) = ½ ( exp(+i|k|(d - w(∠k))) + exp(-i|k|(d - w(∠k + π))) )
//! ```
//!
//! with the forward FFT kernel `exp(-i k·x)`. Each transducer back-projects a
//! line at signed offset `w(θ) - d` along the ray direction; the two terms
//! are the lines arriving from `∠k` and `∠k + π`.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::fft::{mirror_bin, signed_bin, Fft2};
use crate::geometry::{CircularMask, RingGeometry};
use crate::raster::{GridSpec, RasterGrid};

const MM_TO_M: f64 = 1e-3;

#[inline]
fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (b[0] - a[0]).hypot(b[1] - a[1])
}

/// Visit midpoint samples `(point, Δl)` of the portion of `a -> b` inside `mask`.
#[inline]
fn for_each_masked_sample(
    a: [f64; 2],
    b: [f64; 2],
    mask: &CircularMask,
    step: f64,
    mut f: impl FnMut([f64; 2], f64),
) {
    let len = dist(a, b);
    if len == 0.0 {
        return;
    }
    let Some((t0, t1)) = mask.segment_interval(a, b) else {
        return;
    };
    let inside = (t1 - t0) * len;
    let n = (inside / step).ceil().max(1.0) as usize;
    let dl = inside / n as f64;
    let dt = (t1 - t0) / n as f64;
    let dx = b[0] - a[0];
    let dy = b[1] - a[1];
    for s in 0..n {
        let t = t0 + (s as f64 + 0.5) * dt;
        f([a[0] + t * dx, a[1] + t * dy], dl);
    }
}

/// Straight-ray time of flight in seconds between two world points (mm).
///
/// `‖dst - src‖ / v0` plus the slowness excess `∫ (1/v - 1/v0) dl` over the
/// part of the segment inside `mask`.
pub fn time_of_flight(
    src: [f64; 2],
    dst: [f64; 2],
    sos: &RasterGrid,
    v0: f64,
    mask: &CircularMask,
    step: f64,
) -> f64 {
    let len = dist(src, dst);
    if len == 0.0 {
        return 0.0;
    }
    let mut excess = 0.0;
    for_each_masked_sample(src, dst, mask, step, |p, dl| {
        let v = sos.sample(p, v0);
        excess += dl * (1.0 / v - 1.0 / v0);
    });
    (len / v0 + excess) * MM_TO_M
}

/// Wavefront error sampled on uniform angles around one patch center.
#[derive(Debug, Clone, PartialEq)]
pub struct WavefrontProfile {
    pub patch_center: [f64; 2],
    pub angles: Vec<f64>,
    /// Wavefront error per angle, mm.
    pub w: Vec<f64>,
    /// Per-angle sparse rows of `(masked pixel index, ∂w/∂v)`, sorted by index.
    pub jacobian: Option<Vec<Vec<(u32, f64)>>>,
}

/// Ring, mask and quadrature settings shared by all wavefront computations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RayModel {
    pub geom: RingGeometry,
    pub mask: CircularMask,
    /// Background (assumed) sound speed, m/s.
    pub v0: f64,
    pub n_angles: usize,
    /// Ray quadrature step, mm.
    pub step: f64,
}

impl RayModel {
    pub fn new(
        geom: RingGeometry,
        mask: CircularMask,
        v0: f64,
        n_angles: usize,
        step: f64,
    ) -> Result<Self> {
        if n_angles < 4 {
            return Err(Error::config(format!("need at least 4 wavefront angles, got {n_angles}")));
        }
        if !(step > 0.0) {
            return Err(Error::config(format!("ray step must be positive, got {step}")));
        }
        if !(v0 > 0.0) {
            return Err(Error::domain(format!("background SOS must be positive, got {v0}")));
        }
        Ok(RayModel {
            geom,
            mask,
            v0,
            n_angles,
            step,
        })
    }

    pub fn angles(&self) -> Vec<f64> {
        (0..self.n_angles)
            .map(|m| 2.0 * PI * m as f64 / self.n_angles as f64)
            .collect()
    }

    fn check_center(&self, center: [f64; 2]) -> Result<()> {
        if !self.geom.contains_strictly(center) {
            return Err(Error::config(format!(
                "patch center ({:.3}, {:.3}) mm is not inside the ring",
                center[0], center[1]
            )));
        }
        Ok(())
    }

    /// Wavefront error values only.
    pub fn wavefront(&self, center: [f64; 2], sos: &RasterGrid) -> Vec<f64> {
        let v0 = self.v0;
        (0..self.n_angles)
            .map(|m| {
                let theta = 2.0 * PI * m as f64 / self.n_angles as f64;
                let end = self.geom.ray_exit(center, theta);
                let mut w = 0.0;
                for_each_masked_sample(center, end, &self.mask, self.step, |p, dl| {
                    w += dl * (1.0 - v0 / sos.sample(p, v0));
                });
                w
            })
            .collect()
    }

    pub fn profile(
        &self,
        center: [f64; 2],
        sos: &RasterGrid,
        with_jacobian: bool,
    ) -> Result<WavefrontProfile> {
        self.check_center(center)?;
        let w = self.wavefront(center, sos);
        let jacobian = with_jacobian.then(|| self.jacobian_rows(center, sos));
        Ok(WavefrontProfile {
            patch_center: center,
            angles: self.angles(),
            w,
            jacobian,
        })
    }

    fn jacobian_rows(&self, center: [f64; 2], sos: &RasterGrid) -> Vec<Vec<(u32, f64)>> {
        let grid = &sos.spec;
        let mut lookup = vec![u32::MAX; grid.len()];
        for (k, idx) in self.mask.pixel_indices(grid).into_iter().enumerate() {
            lookup[idx] = k as u32;
        }
        let v0 = self.v0;
        (0..self.n_angles)
            .map(|m| {
                let theta = 2.0 * PI * m as f64 / self.n_angles as f64;
                let end = self.geom.ray_exit(center, theta);
                let mut row: Vec<(u32, f64)> = Vec::new();
                for_each_masked_sample(center, end, &self.mask, self.step, |p, dl| {
                    if let Some(st) = grid.bilinear_stencil(p) {
                        let v: f64 = st.iter().map(|&(i, b)| b * sos.values[i]).sum();
                        let g = dl * v0 / (v * v);
                        for (i, b) in st {
                            let k = lookup[i];
                            if k != u32::MAX && b != 0.0 {
                                row.push((k, g * b));
                            }
                        }
                    }
                });
                row.sort_unstable_by_key(|e| e.0);
                let mut merged: Vec<(u32, f64)> = Vec::with_capacity(row.len());
                for (k, g) in row {
                    match merged.last_mut() {
                        Some(last) if last.0 == k => last.1 += g,
                        _ => merged.push((k, g)),
                    }
                }
                merged
            })
            .collect()
    }

    /// Accumulate `Σ_θ grad_w[θ] ∂w(θ)/∂v` into `out`, indexed like the grid.
    ///
    /// Every grid pixel touched by a bilinear stencil receives a
    /// contribution; callers keep only the masked ones.
    pub fn wavefront_vjp(&self, center: [f64; 2], sos: &RasterGrid, grad_w: &[f64], out: &mut [f64]) {
        assert_eq!(grad_w.len(), self.n_angles);
        assert_eq!(out.len(), sos.spec.len());
        let grid = &sos.spec;
        let v0 = self.v0;
        for (m, &gw) in grad_w.iter().enumerate() {
            if gw == 0.0 {
                continue;
            }
            let theta = 2.0 * PI * m as f64 / self.n_angles as f64;
            let end = self.geom.ray_exit(center, theta);
            for_each_masked_sample(center, end, &self.mask, self.step, |p, dl| {
                if let Some(st) = grid.bilinear_stencil(p) {
                    let v: f64 = st.iter().map(|&(i, b)| b * sos.values[i]).sum();
                    let g = gw * dl * v0 / (v * v);
                    for (i, b) in st {
                        out[i] += g * b;
                    }
                }
            });
        }
    }
}

/// Compute a wavefront profile from individual settings.
#[allow(clippy::too_many_arguments)]
pub fn wavefront_profile(
    patch_center: [f64; 2],
    geom: &RingGeometry,
    sos: &RasterGrid,
    v0: f64,
    mask: &CircularMask,
    n_angles: usize,
    step: f64,
    with_jacobian: bool,
) -> Result<WavefrontProfile> {
    RayModel::new(*geom, *mask, v0, n_angles, step)?.profile(patch_center, sos, with_jacobian)
}

/// Real Fourier series coefficients of a uniformly sampled profile, as
/// `(order, cos coefficient, sin coefficient)`; order 0 carries the mean.
pub fn wavefront_fourier_modes(profile: &WavefrontProfile, max_order: usize) -> Result<Vec<(usize, f64, f64)>> {
    let n = profile.w.len();
    if n < 2 * max_order + 1 {
        return Err(Error::config(format!(
            "{n} angles cannot resolve Fourier order {max_order}"
        )));
    }
    let mean = profile.w.iter().sum::<f64>() / n as f64;
    let mut out = vec![(0, mean, 0.0)];
    for order in 1..=max_order {
        let (mut a, mut b) = (0.0, 0.0);
        for (m, &w) in profile.w.iter().enumerate() {
            let t = 2.0 * PI * (order * m) as f64 / n as f64;
            a += w * t.cos();
            b += w * t.sin();
        }
        out.push((order, 2.0 * a / n as f64, 2.0 * b / n as f64));
    }
    Ok(out)
}

/// One frequency alias contributing to a bin. Bins on the Nyquist row or
/// column average the `±π/pitch` aliases so that the transfer function stays
/// conjugate-symmetric on the discrete grid.
#[derive(Debug, Clone, Copy)]
struct Alias {
    kmag: f64,
    weight: f64,
    a: (usize, usize, f64),
    b: (usize, usize, f64),
}

/// Periodic linear interpolation stencil `(i0, i1, frac)` for angle `theta`
/// on `n` uniform samples of `[0, 2π)`.
#[inline]
fn angle_stencil(theta: f64, n: usize) -> (usize, usize, f64) {
    let pos = theta.rem_euclid(2.0 * PI) / (2.0 * PI) * n as f64;
    let i0 = (pos.floor() as usize) % n;
    let frac = pos - pos.floor();
    (i0, (i0 + 1) % n, frac)
}

#[inline]
fn interp(w: &[f64], st: (usize, usize, f64)) -> f64 {
    (1.0 - st.2) * w[st.0] + st.2 * w[st.1]
}

/// Discrete frequency grid of a `P x P` patch with per-bin |k| (rad/mm) and
/// angle interpolation stencils into an `n_angles` wavefront profile.
#[derive(Debug, Clone)]
pub struct FrequencyGrid {
    pub size: usize,
    pub pitch: f64,
    pub n_angles: usize,
    /// |k| per bin, row-major in FFT order.
    pub kmag: Vec<f64>,
    /// ∠k per bin (radians, `atan2(ky, kx)`), 0 at DC.
    pub kangle: Vec<f64>,
    aliases: Vec<Alias>,
    bin_start: Vec<usize>,
}

impl FrequencyGrid {
    pub fn new(size: usize, pitch: f64, n_angles: usize) -> Self {
        let scale = 2.0 * PI / (size as f64 * pitch);
        let nyquist = size.is_multiple_of(2).then_some(size / 2);
        let mut kmag = Vec::with_capacity(size * size);
        let mut kangle = Vec::with_capacity(size * size);
        let mut aliases = Vec::new();
        let mut bin_start = Vec::with_capacity(size * size + 1);
        for row in 0..size {
            for col in 0..size {
                bin_start.push(aliases.len());
                let fx = signed_bin(col, size) as f64;
                let fy = signed_bin(row, size) as f64;
                let xs: Vec<f64> = if Some(col) == nyquist { vec![fx, -fx] } else { vec![fx] };
                let ys: Vec<f64> = if Some(row) == nyquist { vec![fy, -fy] } else { vec![fy] };
                let weight = 1.0 / (xs.len() * ys.len()) as f64;
                let (kx0, ky0) = (fx * scale, fy * scale);
                kmag.push(kx0.hypot(ky0));
                kangle.push(if kx0 == 0.0 && ky0 == 0.0 { 0.0 } else { ky0.atan2(kx0) });
                for &x in &xs {
                    for &y in &ys {
                        let (kx, ky) = (x * scale, y * scale);
                        let theta = if kx == 0.0 && ky == 0.0 { 0.0 } else { ky.atan2(kx) };
                        aliases.push(Alias {
                            kmag: kx.hypot(ky),
                            weight,
                            a: angle_stencil(theta, n_angles),
                            b: angle_stencil(theta + PI, n_angles),
                        });
                    }
                }
            }
        }
        bin_start.push(aliases.len());
        FrequencyGrid {
            size,
            pitch,
            n_angles,
            kmag,
            kangle,
            aliases,
            bin_start,
        }
    }

    pub fn n_bins(&self) -> usize {
        self.size * self.size
    }
}

/// Transfer functions of one patch for every delay in a stack.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferStack {
    pub patch: usize,
    pub delays: Vec<f64>,
    pub size: usize,
    /// `spectra[j]` is the `P x P` FFT-order transfer function for delay `j`.
    pub spectra: Vec<Vec<Complex64>>,
}

/// A frequency grid together with a fixed delay set; caches `exp(±i|k|d)`.
#[derive(Debug, Clone)]
pub struct TransferModel {
    pub freq: FrequencyGrid,
    pub delays: Vec<f64>,
    /// `exp(+i |k| d_j)` per (delay, alias).
    delay_phase: Vec<Vec<Complex64>>,
}

impl TransferModel {
    pub fn new(freq: FrequencyGrid, delays: &[f64]) -> Self {
        let delay_phase = delays
            .iter()
            .map(|&d| {
                freq.aliases
                    .iter()
                    .map(|al| Complex64::from_polar(1.0, al.kmag * d))
                    .collect()
            })
            .collect();
        TransferModel {
            freq,
            delays: delays.to_vec(),
            delay_phase,
        }
    }

    /// Per-alias wavefront phasors `exp(-i|k| w_a)` and `exp(+i|k| w_b)`.
    fn wave_phasors(&self, w: &[f64]) -> Vec<(Complex64, Complex64)> {
        assert_eq!(w.len(), self.freq.n_angles, "wavefront length");
        self.freq
            .aliases
            .iter()
            .map(|al| {
                let wa = interp(w, al.a);
                let wb = interp(w, al.b);
                (
                    Complex64::from_polar(1.0, -al.kmag * wa),
                    Complex64::from_polar(1.0, al.kmag * wb),
                )
            })
            .collect()
    }

    pub fn stack(&self, patch: usize, w: &[f64]) -> TransferStack {
        let ph = self.wave_phasors(w);
        let nb = self.freq.n_bins();
        let spectra = self
            .delay_phase
            .iter()
            .map(|dp| {
                (0..nb)
                    .map(|bin| {
                        let mut h = Complex64::new(0.0, 0.0);
                        for al in self.freq.bin_start[bin]..self.freq.bin_start[bin + 1] {
                            let (ea, eb) = ph[al];
                            let ed = dp[al];
                            h += self.freq.aliases[al].weight * 0.5 * (ed * ea + ed.conj() * eb);
                        }
                        h
                    })
                    .collect()
            })
            .collect();
        TransferStack {
            patch,
            delays: self.delays.clone(),
            size: self.freq.size,
            spectra,
        }
    }

    /// Pull back a loss gradient on the transfer functions to the wavefront.
    ///
    /// `grad_h[j][bin]` uses the convention `δL = Re(conj(g) δH)`.
    pub fn vjp(&self, w: &[f64], grad_h: &[Vec<Complex64>]) -> Vec<f64> {
        assert_eq!(grad_h.len(), self.delays.len());
        let ph = self.wave_phasors(w);
        let mut gw = vec![0.0; self.freq.n_angles];
        let nb = self.freq.n_bins();
        for bin in 0..nb {
            for al in self.freq.bin_start[bin]..self.freq.bin_start[bin + 1] {
                let alias = &self.freq.aliases[al];
                if alias.kmag == 0.0 {
                    continue;
                }
                // Σ_j conj(g_j) e^{+i k d_j} and Σ_j conj(g_j) e^{-i k d_j}
                let mut sa = Complex64::new(0.0, 0.0);
                let mut sb = Complex64::new(0.0, 0.0);
                for (j, g) in grad_h.iter().enumerate() {
                    let cg = g[bin].conj();
                    let ed = self.delay_phase[j][al];
                    sa += cg * ed;
                    sb += cg * ed.conj();
                }
                let (ea, eb) = ph[al];
                let c = 0.5 * alias.weight * alias.kmag;
                // ∂H/∂w_a = c·(-i)·e^{ikd} e^{-ikw_a}, ∂H/∂w_b = c·(+i)·e^{-ikd} e^{ikw_b}
                let da = (Complex64::new(0.0, -c) * ea * sa).re;
                let db = (Complex64::new(0.0, c) * eb * sb).re;
                let (a0, a1, fa) = alias.a;
                let (b0, b1, fb) = alias.b;
                gw[a0] += (1.0 - fa) * da;
                gw[a1] += fa * da;
                gw[b0] += (1.0 - fb) * db;
                gw[b1] += fb * db;
            }
        }
        gw
    }
}

/// Transfer stack for one profile, building the frequency grid on the fly.
pub fn transfer_stack(
    profile: &WavefrontProfile,
    delays: &[f64],
    patch_pixels: usize,
    pitch: f64,
) -> TransferStack {
    let freq = FrequencyGrid::new(patch_pixels, pitch, profile.w.len());
    TransferModel::new(freq, delays).stack(0, &profile.w)
}

/// Largest `|H(k) - conj(H(-k))|` over the grid.
pub fn conjugate_asymmetry(spectrum: &[Complex64], size: usize) -> f64 {
    let mut worst = 0.0_f64;
    for r in 0..size {
        for c in 0..size {
            let h = spectrum[r * size + c];
            let m = spectrum[mirror_bin(r, size) * size + mirror_bin(c, size)];
            worst = worst.max((h - m.conj()).norm());
        }
    }
    worst
}

/// Real, centered PSF of a conjugate-symmetric transfer function.
///
/// The zero-displacement sample lands at pixel `(P/2, P/2)`, which is placed
/// at the world origin of the returned raster.
pub fn psf_from_transfer(spectrum: &[Complex64], size: usize, pitch: f64) -> Result<RasterGrid> {
    if spectrum.len() != size * size {
        return Err(Error::config("spectrum size does not match patch size"));
    }
    let scale = spectrum.iter().fold(0.0_f64, |m, v| m.max(v.norm())).max(f64::MIN_POSITIVE);
    let asym = conjugate_asymmetry(spectrum, size);
    if asym > 1e-9 * scale {
        return Err(Error::domain(format!(
            "transfer function is not conjugate-symmetric (max asymmetry {asym:.3e})"
        )));
    }
    let mut buf = spectrum.to_vec();
    Fft2::square(size).inverse(&mut buf);
    let half = size / 2;
    let spec = GridSpec::new(size, size, pitch, [-(half as f64) * pitch, -(half as f64) * pitch])?;
    let mut out = RasterGrid::zeros(spec);
    for r in 0..size {
        for c in 0..size {
            let v = buf[r * size + c].re;
            out.set((c + half) % size, (r + half) % size, v);
        }
    }
    Ok(out)
}
