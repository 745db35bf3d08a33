//! Delay-and-sum beamforming.
//!
//! `y(r'; d) = Σ_n S((‖r' - r_n‖ - d) / v0, n)` with linear interpolation in
//! time and zero outside the recorded window. No apodization.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::CircularMask;
use crate::phantom::SOS_WINDOW;
use crate::raster::{GridSpec, RasterGrid};
use crate::signals::{interp_channel, SignalSet};

const MM_TO_M: f64 = 1e-3;

/// DAS images for a strictly increasing list of extra delays (mm).
#[derive(Debug, Clone, PartialEq)]
pub struct DasStack {
    pub delays: Vec<f64>,
    pub images: Vec<RasterGrid>,
    pub v0: f64,
}

impl DasStack {
    pub fn grid(&self) -> GridSpec {
        self.images[0].spec
    }

    pub fn len(&self) -> usize {
        self.delays.len()
    }

    pub fn is_empty(&self) -> bool {
        self.delays.is_empty()
    }

    /// Image whose delay is closest to zero.
    pub fn focal_image(&self) -> &RasterGrid {
        let j = (0..self.delays.len())
            .min_by(|&a, &b| self.delays[a].abs().total_cmp(&self.delays[b].abs()))
            .expect("non-empty stack");
        &self.images[j]
    }

    pub fn scaled(&self, s: f64) -> Self {
        DasStack {
            delays: self.delays.clone(),
            images: self.images.iter().map(|im| im.scaled(s)).collect(),
            v0: self.v0,
        }
    }
}

/// Disc-shaped body of constant SOS for the dual-SOS baseline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BodyModel {
    pub center: [f64; 2],
    pub radius: f64,
    pub body_sos: f64,
}

impl BodyModel {
    pub fn new(center: [f64; 2], radius: f64, body_sos: f64) -> Result<Self> {
        if !(radius > 0.0) {
            return Err(Error::config(format!("body radius must be positive, got {radius}")));
        }
        if !(SOS_WINDOW.0..=SOS_WINDOW.1).contains(&body_sos) {
            return Err(Error::config(format!("body SOS {body_sos} outside physical window")));
        }
        Ok(BodyModel {
            center,
            radius,
            body_sos,
        })
    }

    fn disc(&self) -> CircularMask {
        CircularMask {
            center: self.center,
            radius: self.radius,
        }
    }
}

/// `count` delays evenly spaced over `[min, max]` inclusive.
pub fn delay_range(min: f64, max: f64, count: usize) -> Result<Vec<f64>> {
    match count {
        0 => Err(Error::config("delay count must be at least 1")),
        1 => Ok(vec![min]),
        _ if !(max > min) => Err(Error::config(format!("delay range {min}:{max} is empty"))),
        _ => Ok((0..count)
            .map(|j| min + (max - min) * j as f64 / (count - 1) as f64)
            .collect()),
    }
}

fn check_v0(v0: f64) -> Result<()> {
    if !(v0 > 0.0) || !v0.is_finite() {
        return Err(Error::domain(format!("assumed SOS must be positive, got {v0}")));
    }
    Ok(())
}

/// Row-parallel map producing `planes` images at once; `pixel` fills the
/// per-plane values of one pixel.
fn render_planes<F>(grid: GridSpec, planes: usize, pixel: F) -> Vec<RasterGrid>
where
    F: Fn([f64; 2], &mut [f64]) + Sync,
{
    let w = grid.width;
    let rows: Vec<Vec<f64>> = (0..grid.height)
        .into_par_iter()
        .map(|row| {
            let mut buf = vec![0.0; planes * w];
            let mut acc = vec![0.0; planes];
            for col in 0..w {
                acc.iter_mut().for_each(|v| *v = 0.0);
                pixel(grid.world(col, row), &mut acc);
                for (j, v) in acc.iter().enumerate() {
                    buf[j * w + col] = *v;
                }
            }
            buf
        })
        .collect();
    (0..planes)
        .map(|j| {
            let mut img = RasterGrid::zeros(grid);
            for (row, buf) in rows.iter().enumerate() {
                img.values[row * w..(row + 1) * w].copy_from_slice(&buf[j * w..(j + 1) * w]);
            }
            img
        })
        .collect()
}

/// Single DAS image at assumed SOS `v0` (m/s) and extra delay `d` (mm).
pub fn das(signals: &SignalSet, grid: GridSpec, v0: f64, d: f64) -> Result<RasterGrid> {
    Ok(das_stack(signals, grid, v0, &[d])?.images.remove(0))
}

/// DAS images for every delay, sharing the distance computation per pixel.
pub fn das_stack(signals: &SignalSet, grid: GridSpec, v0: f64, delays: &[f64]) -> Result<DasStack> {
    check_v0(v0)?;
    if delays.is_empty() {
        return Err(Error::config("delay list is empty"));
    }
    if delays.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::config("delays must be strictly increasing"));
    }
    let positions = signals.geom.positions();
    // sample index = (dist - d) * scale - t0 / dt
    let scale = MM_TO_M / (v0 * signals.dt);
    let start = signals.t0 / signals.dt;
    let shifts: Vec<f64> = delays.iter().map(|d| d * scale).collect();
    let images = render_planes(grid, delays.len(), |p, acc| {
        for (n, r) in positions.iter().enumerate() {
            let ch = signals.channel(n);
            let base = (p[0] - r[0]).hypot(p[1] - r[1]) * scale - start;
            for (a, s) in acc.iter_mut().zip(&shifts) {
                *a += interp_channel(ch, base - s);
            }
        }
    });
    Ok(DasStack {
        delays: delays.to_vec(),
        images,
        v0,
    })
}

/// DAS with a two-speed model: rays travel at `body_sos` inside the body disc
/// and at `v0` elsewhere.
pub fn dual_sos_das(signals: &SignalSet, grid: GridSpec, v0: f64, body: &BodyModel) -> Result<RasterGrid> {
    check_v0(v0)?;
    if body.center[0].hypot(body.center[1]) + body.radius >= signals.geom.radius {
        return Err(Error::config("body model must lie inside the ring"));
    }
    let positions = signals.geom.positions();
    let disc = body.disc();
    let inv_dt = 1.0 / signals.dt;
    let (s0, sb) = (MM_TO_M / v0, MM_TO_M / body.body_sos);
    let mut out = render_planes(grid, 1, |p, acc| {
        for (n, r) in positions.iter().enumerate() {
            let len = (p[0] - r[0]).hypot(p[1] - r[1]);
            let inside = disc.chord_length(p, *r);
            let t = (len - inside) * s0 + inside * sb;
            acc[0] += interp_channel(signals.channel(n), (t - signals.t0) * inv_dt);
        }
    });
    Ok(out.remove(0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::RingGeometry;
    use crate::phantom::{simulate_signals, Phantom, SimConfig};
    use proptest::prelude::*;

    fn point_signals(grid: GridSpec, at: (usize, usize), disc: Option<(f64, f64)>) -> SignalSet {
        let mut pressure = RasterGrid::zeros(grid);
        pressure.set(at.0, at.1, 1.0);
        let mut sos = RasterGrid::filled(grid, 1500.0);
        if let Some((radius, v)) = disc {
            let d = CircularMask::new([0.0, 0.0], radius).unwrap();
            for i in d.pixel_indices(&grid) {
                sos.values[i] = v;
            }
        }
        let ph = Phantom {
            pressure,
            sos,
            mask: CircularMask::new([0.0, 0.0], 6.0).unwrap(),
            background_sos: 1500.0,
        };
        simulate_signals(&ph, &RingGeometry::new(128, 50.0, 0.0).unwrap(), &SimConfig::default()).unwrap()
    }

    #[test]
    fn delay_range_spacing() {
        let d = delay_range(-0.8, 0.8, 32).unwrap();
        assert_eq!(d.len(), 32);
        assert!((d[0] + 0.8).abs() < 1e-15 && (d[31] - 0.8).abs() < 1e-15);
        assert_eq!(delay_range(0.0, 0.0, 1).unwrap(), vec![0.0]);
        assert!(delay_range(0.5, 0.1, 4).is_err());
        assert!(delay_range(0.0, 1.0, 0).is_err());
    }

    #[test]
    fn focused_point_source_peaks_at_source() {
        let grid = GridSpec::centered(41, 41, 0.1).unwrap();
        let s = point_signals(grid, (20, 20), None);
        let img = das(&s, grid, 1500.0, 0.0).unwrap();
        assert_eq!(img.argmax(), (20, 20));
        assert!(img.max() > 0.0);
    }

    #[test]
    fn positive_delay_spreads_point_into_ring() {
        let grid = GridSpec::centered(41, 41, 0.1).unwrap();
        let s = point_signals(grid, (20, 20), None);
        let img = das(&s, grid, 1500.0, 0.5).unwrap();
        let mut ring = 0.0f64;
        let mut centre = 0.0f64;
        for row in 0..41 {
            for col in 0..41 {
                let [x, y] = grid.world(col, row);
                let r = x.hypot(y);
                let v = img.get(col, row);
                if (r - 0.5).abs() < 0.08 {
                    ring = ring.max(v);
                } else if r < 0.3 {
                    centre = centre.max(v);
                }
            }
        }
        assert!(ring > 2.0 * centre, "ring {ring} centre {centre}");
        let (c, r) = img.argmax();
        let [x, y] = grid.world(c, r);
        assert!((x.hypot(y) - 0.5).abs() < 0.1);
    }

    #[test]
    fn zero_signals_zero_image() {
        let geom = RingGeometry::new(8, 50.0, 0.0).unwrap();
        let s = SignalSet::zeros(geom, 100, 25e-9, 3e-5, 1500.0);
        let grid = GridSpec::centered(8, 8, 0.1).unwrap();
        assert!(das(&s, grid, 1500.0, 0.0).unwrap().values.iter().all(|&v| v == 0.0));
        assert!(matches!(das(&s, grid, 0.0, 0.0), Err(Error::Domain(_))));
        assert!(matches!(das(&s, grid, -1.0, 0.0), Err(Error::Domain(_))));
    }

    #[test]
    fn stack_matches_single_images() {
        let grid = GridSpec::centered(24, 24, 0.1).unwrap();
        let s = point_signals(grid, (10, 13), None);
        let delays = [-0.3, 0.0, 0.2];
        let st = das_stack(&s, grid, 1500.0, &delays).unwrap();
        assert_eq!(st.len(), 3);
        for (j, &d) in delays.iter().enumerate() {
            assert_eq!(st.images[j], das(&s, grid, 1500.0, d).unwrap());
        }
        assert!(das_stack(&s, grid, 1500.0, &[0.1, 0.1]).is_err());
    }

    #[test]
    fn dual_sos_degenerates_to_das() {
        let grid = GridSpec::centered(24, 24, 0.1).unwrap();
        let s = point_signals(grid, (12, 12), None);
        let body = BodyModel::new([0.3, -0.2], 4.0, 1500.0).unwrap();
        let a = dual_sos_das(&s, grid, 1500.0, &body).unwrap();
        let b = das(&s, grid, 1500.0, 0.0).unwrap();
        let scale = b.max_abs();
        for (x, y) in a.values.iter().zip(&b.values) {
            assert!((x - y).abs() < 1e-9 * scale);
        }
    }

    #[test]
    fn dual_sos_refocuses_disc_body() {
        // the SOS raster must contain the whole disc
        let sim_grid = GridSpec::centered(121, 121, 0.1).unwrap();
        let grid = GridSpec::centered(41, 41, 0.1).unwrap();
        let s = point_signals(sim_grid, (60, 60), Some((5.0, 1560.0)));
        let plain = das(&s, grid, 1500.0, 0.0).unwrap();
        let reference = das(&point_signals(sim_grid, (60, 60), None), grid, 1500.0, 0.0).unwrap();
        let body = BodyModel::new([0.0, 0.0], 5.0, 1560.0).unwrap();
        let fixed = dual_sos_das(&s, grid, 1500.0, &body).unwrap();
        assert_eq!(fixed.argmax(), (20, 20));
        assert!(fixed.max() > plain.max());
        assert!((fixed.max() / reference.max() - 1.0).abs() < 0.05);
    }

    #[test]
    fn one_pixel_delay_shifts_single_channel_arc() {
        // one transducer at +x: its arc moves one pixel toward -x per pitch of delay
        let geom = RingGeometry::new(3, 50.0, 0.0).unwrap();
        let mut s = SignalSet::zeros(geom, 4000, 25e-9, 0.0, 1500.0);
        let t = 50.0e-3 / 1500.0;
        let i = (t / s.dt).round() as usize;
        s.channel_mut(0)[i] = 1.0;
        let grid = GridSpec::centered(21, 1, 0.1).unwrap();
        let row = |d: f64| {
            let img = das(&s, grid, 1500.0, d).unwrap();
            let s_only: Vec<f64> = img.values.clone();
            (0..21).max_by(|&a, &b| s_only[a].total_cmp(&s_only[b])).unwrap()
        };
        let c0 = row(0.0);
        assert_eq!(c0, 10);
        assert_eq!(row(0.1), c0 - 1);
        assert_eq!(row(0.2), c0 - 2);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]
        #[test]
        fn das_is_linear(alpha in -3.0f64..3.0, beta in -3.0f64..3.0, seed in 0u64..1000) {
            let geom = RingGeometry::new(16, 50.0, 0.0).unwrap();
            let mut s1 = SignalSet::zeros(geom, 3000, 25e-9, 1e-5, 1500.0);
            let mut s2 = s1.clone();
            for (i, v) in s1.data.iter_mut().enumerate() {
                *v = (((i as u64).wrapping_mul(6364136223846793005).wrapping_add(seed) >> 33) % 97) as f64 - 48.0;
            }
            for (i, v) in s2.data.iter_mut().enumerate() {
                *v = ((i * 31 + seed as usize) % 13) as f64;
            }
            let mut mix = s1.clone();
            for i in 0..mix.data.len() {
                mix.data[i] = alpha * s1.data[i] + beta * s2.data[i];
            }
            let grid = GridSpec::centered(10, 10, 0.3).unwrap();
            let a = das(&s1, grid, 1500.0, 0.1).unwrap();
            let b = das(&s2, grid, 1500.0, 0.1).unwrap();
            let m = das(&mix, grid, 1500.0, 0.1).unwrap();
            for i in 0..m.values.len() {
                prop_assert!((m.values[i] - alpha * a.values[i] - beta * b.values[i]).abs() < 1e-9);
            }
        }
    }
}
