//! Numerical phantoms and the straight-ray signal simulator.
//!
//! Phantoms are described by a [`PhantomSpec`]: elliptical SOS regions
//! painted in order over the background, optional bright rims on region
//! boundaries, explicit point targets, and vessel-like curves that are
//! either listed or drawn at random from the seed.
//!
//! The simulator uses the same time-of-flight kernel as reconstruction, so
//! it is exactly consistent with the straight-ray forward model.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aberration::time_of_flight;
use crate::error::{Error, Result};
use crate::geometry::{water_sos, CircularMask, RingGeometry};
use crate::raster::{GridSpec, RasterGrid};
use crate::signals::SignalSet;

/// Physical SOS window accepted for phantoms and body models, m/s.
pub const SOS_WINDOW: (f64, f64) = (1300.0, 1800.0);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EllipseRegion {
    pub center: [f64; 2],
    pub semi_axes: [f64; 2],
    #[serde(default)]
    pub rotation: f64,
    pub sos: f64,
    /// Peak initial pressure on the region boundary.
    #[serde(default)]
    pub rim_amplitude: f64,
    /// Uniform initial pressure inside the region.
    #[serde(default)]
    pub fill_amplitude: f64,
}

impl EllipseRegion {
    pub fn disc(center: [f64; 2], radius: f64, sos: f64) -> Self {
        EllipseRegion {
            center,
            semi_axes: [radius, radius],
            rotation: 0.0,
            sos,
            rim_amplitude: 0.0,
            fill_amplitude: 0.0,
        }
    }

    /// Normalized radius: < 1 inside, 1 on the boundary.
    fn rho(&self, p: [f64; 2]) -> f64 {
        let (s, c) = self.rotation.sin_cos();
        let dx = p[0] - self.center[0];
        let dy = p[1] - self.center[1];
        let u = (c * dx + s * dy) / self.semi_axes[0];
        let v = (-s * dx + c * dy) / self.semi_axes[1];
        u.hypot(v)
    }

    fn contains(&self, p: [f64; 2]) -> bool {
        self.rho(p) <= 1.0
    }

    /// Approximate signed distance to the boundary along the radial line.
    fn boundary_distance(&self, p: [f64; 2]) -> f64 {
        let r = (p[0] - self.center[0]).hypot(p[1] - self.center[1]);
        let rho = self.rho(p);
        if rho == 0.0 {
            return -self.semi_axes[0].min(self.semi_axes[1]);
        }
        (rho - 1.0) * r / rho
    }

    fn reach(&self) -> f64 {
        self.center[0].hypot(self.center[1]) + self.semi_axes[0].max(self.semi_axes[1])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PointTarget {
    pub position: [f64; 2],
    pub amplitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VesselCurve {
    /// Polyline through the vessel centerline, mm.
    pub points: Vec<[f64; 2]>,
    /// Gaussian cross-section sigma, mm.
    pub width: f64,
    pub amplitude: f64,
}

/// Random vessel generation inside an ellipse.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomVessels {
    pub count: usize,
    /// Region (index into `regions`) whose interior hosts the vessels.
    pub host_region: usize,
    pub length_range: [f64; 2],
    pub width_range: [f64; 2],
    pub amplitude_range: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhantomSpec {
    pub mask_center: [f64; 2],
    pub mask_radius: f64,
    pub background_sos: f64,
    #[serde(default)]
    pub regions: Vec<EllipseRegion>,
    #[serde(default)]
    pub points: Vec<PointTarget>,
    #[serde(default)]
    pub vessels: Vec<VesselCurve>,
    #[serde(default)]
    pub random_vessels: Option<RandomVessels>,
    /// Gaussian sigma of rims and point targets, mm.
    #[serde(default = "default_feature_width")]
    pub feature_width: f64,
}

fn default_feature_width() -> f64 {
    0.08
}

impl PhantomSpec {
    fn water() -> f64 {
        water_sos(26.0).expect("26 °C is in range")
    }

    /// No regions, no sources.
    pub fn empty() -> Self {
        PhantomSpec {
            mask_center: [0.0, 0.0],
            mask_radius: 11.0,
            background_sos: Self::water(),
            regions: vec![],
            points: vec![],
            vessels: vec![],
            random_vessels: None,
            feature_width: default_feature_width(),
        }
    }

    /// A single 1561 m/s body disc in water with rim, points and vessels.
    pub fn two_body() -> Self {
        let mut body = EllipseRegion::disc([0.0, 0.0], 9.0, 1561.0);
        body.rim_amplitude = 0.6;
        PhantomSpec {
            regions: vec![body],
            points: default_points(),
            random_vessels: Some(RandomVessels {
                count: 10,
                host_region: 0,
                length_range: [3.0, 7.0],
                width_range: [0.06, 0.1],
                amplitude_range: [0.5, 1.0],
            }),
            ..Self::empty()
        }
    }

    /// Liver-like body slice: tissue body with liver, kidney, bone-like and
    /// fluid-filled inclusions (1510-1650 m/s), vessels and point targets.
    pub fn liver() -> Self {
        let region = |c: [f64; 2], a: [f64; 2], rot: f64, sos: f64, rim: f64| EllipseRegion {
            center: c,
            semi_axes: a,
            rotation: rot,
            sos,
            rim_amplitude: rim,
            fill_amplitude: 0.0,
        };
        PhantomSpec {
            regions: vec![
                region([0.0, 0.0], [9.5, 8.5], 0.0, 1550.0, 0.6),
                region([-2.5, 1.5], [5.0, 3.2], 0.45, 1600.0, 0.5),
                region([-3.5, -4.6], [2.2, 1.4], -0.3, 1575.0, 0.4),
                region([4.6, -3.8], [1.2, 1.2], 0.0, 1650.0, 0.9),
                region([4.0, 3.8], [1.6, 1.6], 0.0, 1510.0, 0.5),
            ],
            points: default_points(),
            random_vessels: Some(RandomVessels {
                count: 14,
                host_region: 0,
                length_range: [3.0, 8.0],
                width_range: [0.06, 0.1],
                amplitude_range: [0.5, 1.0],
            }),
            ..Self::empty()
        }
    }

    /// Built-in specs by name: `default`/`liver`, `twobody`, `empty`.
    pub fn named(name: &str) -> Option<Self> {
        match name {
            "default" | "liver" => Some(Self::liver()),
            "twobody" => Some(Self::two_body()),
            "empty" => Some(Self::empty()),
            _ => None,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::config(format!("phantom spec: {e}")))
    }

    pub fn mask(&self) -> Result<CircularMask> {
        CircularMask::new(self.mask_center, self.mask_radius)
    }

    fn validate(&self) -> Result<()> {
        let mask = self.mask()?;
        let in_window = |v: f64| (SOS_WINDOW.0..=SOS_WINDOW.1).contains(&v);
        if !in_window(self.background_sos) {
            return Err(Error::config(format!("background SOS {} outside physical window", self.background_sos)));
        }
        let mc = mask.center;
        for (i, r) in self.regions.iter().enumerate() {
            if !in_window(r.sos) {
                return Err(Error::config(format!("region {i} SOS {} outside physical window", r.sos)));
            }
            if !(r.semi_axes[0] > 0.0 && r.semi_axes[1] > 0.0) {
                return Err(Error::config(format!("region {i} has non-positive semi-axes")));
            }
            let shifted = EllipseRegion {
                center: [r.center[0] - mc[0], r.center[1] - mc[1]],
                ..r.clone()
            };
            if shifted.reach() > mask.radius {
                return Err(Error::config(format!("region {i} extends outside the mask")));
            }
        }
        for (i, p) in self.points.iter().enumerate() {
            if !mask.contains(p.position) {
                return Err(Error::config(format!("point target {i} lies outside the mask")));
            }
        }
        for (i, v) in self.vessels.iter().enumerate() {
            if v.points.iter().any(|&p| !mask.contains(p)) {
                return Err(Error::config(format!("vessel {i} leaves the mask")));
            }
        }
        if let Some(rv) = &self.random_vessels {
            if rv.count > 0 && rv.host_region >= self.regions.len() {
                return Err(Error::config("random vessels reference a missing host region"));
            }
        }
        Ok(())
    }
}

fn default_points() -> Vec<PointTarget> {
    [[0.0, 0.0], [-6.5, 0.5], [6.8, 0.8], [0.5, -6.8], [1.2, 6.6], [-4.8, 5.2], [6.0, -6.0]]
        .into_iter()
        .map(|position| PointTarget {
            position,
            amplitude: 1.0,
        })
        .collect()
}

/// Initial pressure and SOS rasters of a numerical sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Phantom {
    pub pressure: RasterGrid,
    pub sos: RasterGrid,
    pub mask: CircularMask,
    pub background_sos: f64,
}

fn random_vessel(rng: &mut ChaCha8Rng, host: &EllipseRegion, rv: &RandomVessels) -> VesselCurve {
    let inner = EllipseRegion {
        semi_axes: [host.semi_axes[0] * 0.9, host.semi_axes[1] * 0.9],
        ..host.clone()
    };
    let start = loop {
        let p = [
            host.center[0] + rng.gen_range(-1.0..1.0) * host.semi_axes[0],
            host.center[1] + rng.gen_range(-1.0..1.0) * host.semi_axes[1],
        ];
        if inner.contains(p) {
            break p;
        }
    };
    let length = rng.gen_range(rv.length_range[0]..=rv.length_range[1]);
    let step = 0.05;
    let mut heading = rng.gen_range(0.0..2.0 * PI);
    let mut curvature = 0.0;
    let mut pts = vec![start];
    let mut p = start;
    for _ in 0..(length / step) as usize {
        curvature = 0.9 * curvature + rng.gen_range(-0.08..0.08);
        heading += curvature;
        let next = [p[0] + step * heading.cos(), p[1] + step * heading.sin()];
        if !inner.contains(next) {
            heading += PI * 0.5 * curvature.signum().max(0.5);
            continue;
        }
        p = next;
        pts.push(p);
    }
    VesselCurve {
        points: pts,
        width: rng.gen_range(rv.width_range[0]..=rv.width_range[1]),
        amplitude: rng.gen_range(rv.amplitude_range[0]..=rv.amplitude_range[1]),
    }
}

fn distance_to_polyline(p: [f64; 2], pts: &[[f64; 2]]) -> f64 {
    if pts.len() == 1 {
        return (p[0] - pts[0][0]).hypot(p[1] - pts[0][1]);
    }
    let mut best = f64::INFINITY;
    for w in pts.windows(2) {
        let (a, b) = (w[0], w[1]);
        let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
        let l2 = dx * dx + dy * dy;
        let t = if l2 > 0.0 {
            (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / l2).clamp(0.0, 1.0)
        } else {
            0.0
        };
        best = best.min((p[0] - a[0] - t * dx).hypot(p[1] - a[1] - t * dy));
    }
    best
}

fn splat_curve(pressure: &mut RasterGrid, v: &VesselCurve) {
    let g = pressure.spec;
    let reach = 4.0 * v.width;
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for p in &v.points {
        for k in 0..2 {
            lo[k] = lo[k].min(p[k] - reach);
            hi[k] = hi[k].max(p[k] + reach);
        }
    }
    let a = g.pixel(lo);
    let b = g.pixel(hi);
    let c0 = a[0].floor().max(0.0) as usize;
    let r0 = a[1].floor().max(0.0) as usize;
    let c1 = (b[0].ceil().max(0.0) as usize).min(g.width - 1);
    let r1 = (b[1].ceil().max(0.0) as usize).min(g.height - 1);
    for row in r0..=r1 {
        for col in c0..=c1 {
            let d = distance_to_polyline(g.world(col, row), &v.points);
            if d <= reach {
                let i = g.index(col, row);
                pressure.values[i] += v.amplitude * (-0.5 * (d / v.width).powi(2)).exp();
            }
        }
    }
}

/// Rasterize a phantom spec on `grid`. Deterministic for a fixed seed.
pub fn generate_phantom(spec: &PhantomSpec, grid: GridSpec, seed: u64) -> Result<Phantom> {
    spec.validate()?;
    let mask = spec.mask()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sos = RasterGrid::filled(grid, spec.background_sos);
    let mut pressure = RasterGrid::zeros(grid);
    let fw = spec.feature_width;
    for row in 0..grid.height {
        for col in 0..grid.width {
            let p = grid.world(col, row);
            let i = grid.index(col, row);
            for r in &spec.regions {
                if r.contains(p) {
                    sos.values[i] = r.sos;
                    pressure.values[i] += r.fill_amplitude;
                }
                if r.rim_amplitude != 0.0 {
                    let d = r.boundary_distance(p);
                    if d.abs() <= 4.0 * fw {
                        pressure.values[i] += r.rim_amplitude * (-0.5 * (d / fw).powi(2)).exp();
                    }
                }
            }
        }
    }
    let mut curves = spec.vessels.clone();
    if let Some(rv) = &spec.random_vessels {
        for _ in 0..rv.count {
            curves.push(random_vessel(&mut rng, &spec.regions[rv.host_region], rv));
        }
    }
    for v in &curves {
        splat_curve(&mut pressure, v);
    }
    for t in &spec.points {
        splat_curve(
            &mut pressure,
            &VesselCurve {
                points: vec![t.position],
                width: fw,
                amplitude: t.amplitude,
            },
        );
    }
    Ok(Phantom {
        pressure,
        sos,
        mask,
        background_sos: spec.background_sos,
    })
}

/// Signal simulation settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    /// Gaussian pulse sigma, s.
    pub pulse_sigma: f64,
    /// Sampling interval, s.
    pub dt: f64,
    /// Apply `1/sqrt(distance)` cylindrical spreading.
    pub spreading: bool,
    /// Ray quadrature step, mm.
    pub ray_step: f64,
    /// Explicit `(t0, n_samples)`; derived from the geometry when `None`.
    pub window: Option<(f64, usize)>,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            pulse_sigma: 100e-9,
            dt: 25e-9,
            spreading: false,
            ray_step: 0.05,
            window: None,
        }
    }
}

/// Half-width of the rendered pulse, in pulse sigmas.
const PULSE_SUPPORT: f64 = 6.0;

/// Detected pulse shape: `-2 d/dt` of the pressure pulse `g'(u)` with
/// `g(u) = exp(-u²/2)` and `u = (t - τ)/σ`, i.e. `2(1 - u²)exp(-u²/2)/σ`.
#[inline]
pub fn detected_pulse(u: f64, sigma: f64) -> f64 {
    2.0 * (1.0 - u * u) * (-0.5 * u * u).exp() / sigma
}

/// Straight-ray simulation of ring signals for a phantom.
pub fn simulate_signals(ph: &Phantom, geom: &RingGeometry, cfg: &SimConfig) -> Result<SignalSet> {
    if !(cfg.dt > 0.0 && cfg.pulse_sigma > 0.0 && cfg.ray_step > 0.0) {
        return Err(Error::config("dt, pulse sigma and ray step must be positive"));
    }
    let v0 = ph.background_sos;
    let grid = ph.pressure.spec;
    let peak = ph.pressure.max_abs();
    let threshold = peak * 1e-4;
    let sources: Vec<([f64; 2], f64)> = (0..grid.len())
        .filter(|&i| ph.pressure.values[i].abs() > threshold && peak > 0.0)
        .map(|i| {
            let p = grid.world(i % grid.width, i / grid.width);
            (p, ph.pressure.values[i] * grid.pitch * grid.pitch)
        })
        .collect();
    for (p, _) in &sources {
        if !geom.contains_strictly(*p) {
            return Err(Error::config(format!(
                "pressure at ({:.2}, {:.2}) mm lies outside the ring",
                p[0], p[1]
            )));
        }
    }

    // Window covering every in-mask source at the extreme SOS values.
    let vmax = ph.sos.max().max(v0);
    let vmin = ph.sos.values.iter().copied().fold(v0, f64::min);
    let reach = ph.mask.center[0].hypot(ph.mask.center[1]) + ph.mask.radius;
    let margin = PULSE_SUPPORT * cfg.pulse_sigma;
    let need_lo = (geom.radius - reach).max(0.0) * 1e-3 / vmax - margin;
    let need_hi = (geom.radius + reach) * 1e-3 / vmin + margin;
    let (t0, n_samples) = match cfg.window {
        Some((t0, n)) => {
            let t_end = t0 + (n as f64 - 1.0) * cfg.dt;
            if t0 > need_lo || t_end < need_hi {
                return Err(Error::config(format!(
                    "time window [{t0:.4e}, {t_end:.4e}] s too short; need at least [{need_lo:.4e}, {need_hi:.4e}] s"
                )));
            }
            (t0, n)
        }
        None => {
            let t0 = (need_lo / cfg.dt).floor() * cfg.dt;
            (t0, ((need_hi - t0) / cfg.dt).ceil() as usize + 1)
        }
    };

    let mut out = SignalSet::zeros(*geom, n_samples, cfg.dt, t0, v0);
    let uniform = ph.sos.values.iter().all(|&v| v == v0);
    let sigma = cfg.pulse_sigma;
    out.data
        .par_chunks_mut(n_samples)
        .enumerate()
        .for_each(|(n, channel)| {
            let r_n = geom.position(n);
            for &(src, amp) in &sources {
                let tau = if uniform {
                    (src[0] - r_n[0]).hypot(src[1] - r_n[1]) * 1e-3 / v0
                } else {
                    time_of_flight(src, r_n, &ph.sos, v0, &ph.mask, cfg.ray_step)
                };
                let a = if cfg.spreading {
                    amp / (src[0] - r_n[0]).hypot(src[1] - r_n[1]).sqrt()
                } else {
                    amp
                };
                let lo = ((tau - margin - t0) / cfg.dt).ceil().max(0.0) as usize;
                let hi = (((tau + margin - t0) / cfg.dt).floor() as usize).min(n_samples - 1);
                for (i, slot) in channel.iter_mut().enumerate().take(hi + 1).skip(lo) {
                    let u = (t0 + i as f64 * cfg.dt - tau) / sigma;
                    *slot += a * detected_pulse(u, sigma);
                }
            }
        });
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_grid() -> GridSpec {
        GridSpec::centered(96, 96, 0.2).unwrap()
    }

    fn point_phantom(grid: GridSpec, at: [f64; 2], sos: Option<(f64, f64)>) -> Phantom {
        let mut pressure = RasterGrid::zeros(grid);
        let [c, r] = grid.pixel(at);
        pressure.set(c.round() as usize, r.round() as usize, 1.0);
        let mut sos_r = RasterGrid::filled(grid, 1500.0);
        if let Some((radius, v)) = sos {
            let disc = CircularMask::new([0.0, 0.0], radius).unwrap();
            for i in disc.pixel_indices(&grid) {
                sos_r.values[i] = v;
            }
        }
        Phantom {
            pressure,
            sos: sos_r,
            mask: CircularMask::new([0.0, 0.0], 9.0).unwrap(),
            background_sos: 1500.0,
        }
    }

    fn peak_time(s: &SignalSet, n: usize) -> f64 {
        let ch = s.channel(n);
        let i = (0..ch.len()).max_by(|&a, &b| ch[a].total_cmp(&ch[b])).unwrap();
        // parabolic refinement
        let (y0, y1, y2) = (ch[i - 1], ch[i], ch[i + 1]);
        let off = 0.5 * (y0 - y2) / (y0 - 2.0 * y1 + y2);
        s.t0 + (i as f64 + off) * s.dt
    }

    #[test]
    fn empty_spec_is_blank() {
        let ph = generate_phantom(&PhantomSpec::empty(), small_grid(), 3).unwrap();
        assert!(ph.pressure.values.iter().all(|&v| v == 0.0));
        assert!(ph.sos.values.iter().all(|&v| v == ph.background_sos));
        let s = simulate_signals(&ph, &RingGeometry::standard(), &SimConfig::default()).unwrap();
        assert!(s.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn two_body_sos_is_two_valued() {
        let ph = generate_phantom(&PhantomSpec::two_body(), GridSpec::desk_default(), 0).unwrap();
        let mut vals: Vec<f64> = ph.sos.values.clone();
        vals.sort_by(f64::total_cmp);
        vals.dedup();
        assert_eq!(vals.len(), 2);
        assert!((vals[0] - 1499.4).abs() < 0.1 && vals[1] == 1561.0);
    }

    #[test]
    fn liver_sos_support() {
        let ph = generate_phantom(&PhantomSpec::liver(), GridSpec::desk_default(), 0).unwrap();
        let lo = ph.sos.values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = ph.sos.max();
        assert!(lo >= ph.background_sos - 1e-9 && hi <= 1650.0);
        assert!(ph.pressure.max() > 0.5);
        let mask = ph.mask;
        for row in 0..256 {
            for col in 0..256 {
                let p = ph.sos.spec.world(col, row);
                if !mask.contains(p) {
                    assert_eq!(ph.sos.get(col, row), ph.background_sos);
                }
            }
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_phantom(&PhantomSpec::liver(), small_grid(), 11).unwrap();
        let b = generate_phantom(&PhantomSpec::liver(), small_grid(), 11).unwrap();
        let c = generate_phantom(&PhantomSpec::liver(), small_grid(), 12).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.pressure, c.pressure);
    }

    #[test]
    fn region_outside_mask_is_rejected() {
        let mut spec = PhantomSpec::empty();
        spec.regions.push(EllipseRegion::disc([8.0, 0.0], 4.0, 1550.0));
        assert!(matches!(generate_phantom(&spec, small_grid(), 0), Err(Error::Config(_))));
        let mut spec = PhantomSpec::empty();
        spec.points.push(PointTarget { position: [20.0, 0.0], amplitude: 1.0 });
        assert!(generate_phantom(&spec, small_grid(), 0).is_err());
    }

    #[test]
    fn spec_toml_roundtrip_and_unknown_keys() {
        let spec = PhantomSpec::liver();
        let text = toml::to_string(&spec).unwrap();
        assert_eq!(PhantomSpec::from_toml(&text).unwrap(), spec);
        let bad = format!("{text}\nbogus = 1\n");
        assert!(PhantomSpec::from_toml(&bad).is_err());
    }

    #[test]
    fn centered_source_hits_all_channels_together() {
        let grid = small_grid();
        let ph = point_phantom(grid, [0.0, 0.0], None);
        let geom = RingGeometry::new(16, 50.0, 0.0).unwrap();
        let s = simulate_signals(&ph, &geom, &SimConfig::default()).unwrap();
        let src = grid.world(48, 48);
        for n in 0..16 {
            let r = geom.position(n);
            let want = (r[0] - src[0]).hypot(r[1] - src[1]) * 1e-3 / 1500.0;
            assert!((peak_time(&s, n) - want).abs() < 0.05 * s.dt);
        }
    }

    #[test]
    fn off_center_source_delays_follow_distance() {
        let grid = small_grid();
        let ph = point_phantom(grid, [5.0, 0.0], None);
        let geom = RingGeometry::new(32, 50.0, 0.0).unwrap();
        let s = simulate_signals(&ph, &geom, &SimConfig::default()).unwrap();
        let [c, r] = grid.pixel([5.0, 0.0]);
        let src = grid.world(c.round() as usize, r.round() as usize);
        for n in 0..32 {
            let rn = geom.position(n);
            let want = (rn[0] - src[0]).hypot(rn[1] - src[1]) * 1e-3 / 1500.0;
            assert!((peak_time(&s, n) - want).abs() < 0.05 * s.dt, "channel {n}");
        }
    }

    #[test]
    fn uniform_shortcut_matches_ray_integration() {
        let grid = small_grid();
        let ph = point_phantom(grid, [3.0, -2.0], None);
        let geom = RingGeometry::new(16, 50.0, 0.3).unwrap();
        let src = grid.world(40, 57);
        for n in 0..16 {
            let rn = geom.position(n);
            let traced = time_of_flight(src, rn, &ph.sos, 1500.0, &ph.mask, 0.05);
            let direct = (src[0] - rn[0]).hypot(src[1] - rn[1]) * 1e-3 / 1500.0;
            assert!((traced - direct).abs() < 1e-12 * direct, "channel {n}: {traced} vs {direct}");
        }
    }

    #[test]
    fn disc_inclusion_advances_every_channel() {
        let grid = GridSpec::centered(240, 240, 0.05).unwrap();
        let uniform = point_phantom(grid, [0.0, 0.0], None);
        let inclusion = point_phantom(grid, [0.0, 0.0], Some((5.0, 1550.0)));
        let geom = RingGeometry::new(12, 50.0, 0.1).unwrap();
        let cfg = SimConfig { ray_step: 0.01, ..SimConfig::default() };
        let a = simulate_signals(&uniform, &geom, &cfg).unwrap();
        let b = simulate_signals(&inclusion, &geom, &cfg).unwrap();
        let want = -(1.0 - 1500.0 / 1550.0) * 5.0e-3 / 1500.0;
        for n in 0..12 {
            let shift = peak_time(&b, n) - peak_time(&a, n);
            assert!((shift - want).abs() < 0.02 * want.abs(), "{shift} vs {want}");
        }
    }

    #[test]
    fn simulation_is_linear_in_pressure() {
        let grid = small_grid();
        let geom = RingGeometry::new(24, 50.0, 0.0).unwrap();
        let a = point_phantom(grid, [2.0, 1.0], Some((4.0, 1540.0)));
        let b = point_phantom(grid, [-3.0, 2.0], Some((4.0, 1540.0)));
        let mut both = a.clone();
        for (x, y) in both.pressure.values.iter_mut().zip(&b.pressure.values) {
            *x += 0.5 * y;
        }
        let cfg = SimConfig {
            spreading: true,
            window: Some((2.5e-5, 1200)),
            ..SimConfig::default()
        };
        let sa = simulate_signals(&a, &geom, &cfg).unwrap();
        let sb = simulate_signals(&b, &geom, &cfg).unwrap();
        let sab = simulate_signals(&both, &geom, &cfg).unwrap();
        let scale = sab.data.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for i in 0..sab.data.len() {
            assert!((sab.data[i] - sa.data[i] - 0.5 * sb.data[i]).abs() < 1e-12 * scale);
        }
    }

    #[test]
    fn short_window_names_requirement() {
        let ph = point_phantom(small_grid(), [0.0, 0.0], None);
        let cfg = SimConfig { window: Some((3.0e-5, 100)), ..SimConfig::default() };
        match simulate_signals(&ph, &RingGeometry::standard(), &cfg) {
            Err(Error::Config(msg)) => assert!(msg.contains("need at least")),
            other => panic!("expected config error, got {other:?}"),
        }
    }
}
