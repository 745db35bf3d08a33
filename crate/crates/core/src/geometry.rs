//! Ring-array geometry, the circular reconstruction mask and the water
//! sound-speed calibration.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::raster::{GridSpec, RasterGrid};

/// Transducers evenly spaced on a circle centered at the world origin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RingGeometry {
    pub n_transducers: usize,
    /// Ring radius in mm.
    pub radius: f64,
    /// Angle of transducer 0, radians counterclockwise from +x.
    pub angle_offset: f64,
}

impl RingGeometry {
    pub fn new(n_transducers: usize, radius: f64, angle_offset: f64) -> Result<Self> {
        if n_transducers < 3 {
            return Err(Error::config(format!(
                "ring needs at least 3 transducers, got {n_transducers}"
            )));
        }
        if !(radius > 0.0) || !radius.is_finite() {
            return Err(Error::config(format!("ring radius must be positive, got {radius}")));
        }
        if !angle_offset.is_finite() {
            return Err(Error::config("ring angle offset must be finite"));
        }
        Ok(RingGeometry {
            n_transducers,
            radius,
            angle_offset,
        })
    }

    /// 512 elements on a 10 cm diameter ring.
    pub fn standard() -> Self {
        RingGeometry {
            n_transducers: 512,
            radius: 50.0,
            angle_offset: 0.0,
        }
    }

    #[inline]
    pub fn angle(&self, n: usize) -> f64 {
        2.0 * PI * n as f64 / self.n_transducers as f64 + self.angle_offset
    }

    #[inline]
    pub fn position(&self, n: usize) -> [f64; 2] {
        let a = self.angle(n);
        [self.radius * a.cos(), self.radius * a.sin()]
    }

    pub fn positions(&self) -> Vec<[f64; 2]> {
        (0..self.n_transducers).map(|n| self.position(n)).collect()
    }

    /// Point where the ray from `origin` along angle `theta` leaves the ring.
    /// `origin` must lie strictly inside the ring.
    pub fn ray_exit(&self, origin: [f64; 2], theta: f64) -> [f64; 2] {
        let (s, c) = theta.sin_cos();
        let b = origin[0] * c + origin[1] * s;
        let q = origin[0] * origin[0] + origin[1] * origin[1] - self.radius * self.radius;
        let t = -b + (b * b - q).max(0.0).sqrt();
        [origin[0] + t * c, origin[1] + t * s]
    }

    pub fn contains_strictly(&self, p: [f64; 2]) -> bool {
        p[0].hypot(p[1]) < self.radius
    }
}

/// A disc in the world frame. Used for the reconstruction mask and for
/// analytic body models.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CircularMask {
    pub center: [f64; 2],
    pub radius: f64,
}

impl CircularMask {
    pub fn new(center: [f64; 2], radius: f64) -> Result<Self> {
        if !(radius > 0.0) || !radius.is_finite() {
            return Err(Error::config(format!("mask radius must be positive, got {radius}")));
        }
        Ok(CircularMask { center, radius })
    }

    #[inline]
    pub fn contains(&self, p: [f64; 2]) -> bool {
        let dx = p[0] - self.center[0];
        let dy = p[1] - self.center[1];
        dx * dx + dy * dy <= self.radius * self.radius
    }

    /// Parameter interval `[t0, t1] ⊆ [0, 1]` of the segment `a + t (b - a)`
    /// that lies inside the disc, if any.
    pub fn segment_interval(&self, a: [f64; 2], b: [f64; 2]) -> Option<(f64, f64)> {
        let dx = b[0] - a[0];
        let dy = b[1] - a[1];
        let fx = a[0] - self.center[0];
        let fy = a[1] - self.center[1];
        let qa = dx * dx + dy * dy;
        if qa == 0.0 {
            return None;
        }
        let qb = 2.0 * (fx * dx + fy * dy);
        let qc = fx * fx + fy * fy - self.radius * self.radius;
        let disc = qb * qb - 4.0 * qa * qc;
        if disc <= 0.0 {
            return None;
        }
        let sq = disc.sqrt();
        let t0 = ((-qb - sq) / (2.0 * qa)).max(0.0);
        let t1 = ((-qb + sq) / (2.0 * qa)).min(1.0);
        (t1 > t0).then_some((t0, t1))
    }

    /// Length (mm) of the part of segment `a -> b` inside the disc.
    pub fn chord_length(&self, a: [f64; 2], b: [f64; 2]) -> f64 {
        match self.segment_interval(a, b) {
            Some((t0, t1)) => (t1 - t0) * (b[0] - a[0]).hypot(b[1] - a[1]),
            None => 0.0,
        }
    }

    /// Flat indices of grid pixels whose centers fall inside the disc.
    pub fn pixel_indices(&self, grid: &GridSpec) -> Vec<usize> {
        let mut out = Vec::new();
        for row in 0..grid.height {
            for col in 0..grid.width {
                if self.contains(grid.world(col, row)) {
                    out.push(grid.index(col, row));
                }
            }
        }
        out
    }

    /// 0/1 raster of the mask, for the PGRID representation.
    pub fn to_raster(&self, grid: GridSpec) -> RasterGrid {
        let mut r = RasterGrid::zeros(grid);
        for i in self.pixel_indices(&grid) {
            r.values[i] = 1.0;
        }
        r
    }
}

/// Sound speed of pure water (m/s) at atmospheric pressure, from the
/// fifth-order polynomial fit of Marczak (1997), valid on 0..=95 °C.
pub fn water_sos(temperature_celsius: f64) -> Result<f64> {
    if !(0.0..=95.0).contains(&temperature_celsius) {
        return Err(Error::domain(format!(
            "water temperature {temperature_celsius} °C outside [0, 95]"
        )));
    }
    const COEFFS: [f64; 6] = [
        1.402385e3,
        5.038813,
        -5.799136e-2,
        3.287156e-4,
        -1.398845e-6,
        2.787860e-9,
    ];
    Ok(COEFFS
        .iter()
        .rev()
        .fold(0.0, |acc, c| acc * temperature_celsius + c))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn water_sos_reference_values() {
        assert!((water_sos(26.0).unwrap() - 1499.4).abs() < 0.1);
        assert!((water_sos(31.0).unwrap() - 1511.4).abs() < 0.1);
        assert!((water_sos(0.0).unwrap() - 1402.385).abs() < 0.01);
        let at20 = water_sos(20.0).unwrap();
        assert!((1480.0..=1485.0).contains(&at20), "{at20}");
    }

    #[test]
    fn water_sos_domain() {
        assert!(matches!(water_sos(-0.5), Err(Error::Domain(_))));
        assert!(matches!(water_sos(95.5), Err(Error::Domain(_))));
        assert!(water_sos(95.0).is_ok());
    }

    #[test]
    fn water_sos_monotone_below_40() {
        let mut prev = water_sos(0.0).unwrap();
        for i in 1..=400 {
            let v = water_sos(i as f64 * 0.1).unwrap();
            assert!(v > prev);
            prev = v;
        }
    }

    #[test]
    fn four_transducer_ring() {
        let g = RingGeometry::new(4, 50.0, 0.0).unwrap();
        let want = [[50.0, 0.0], [0.0, 50.0], [-50.0, 0.0], [0.0, -50.0]];
        for (p, w) in g.positions().iter().zip(want) {
            assert!((p[0] - w[0]).abs() < 1e-12 && (p[1] - w[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn standard_ring_spacing() {
        let g = RingGeometry::standard();
        let pos = g.positions();
        assert_eq!(pos.len(), 512);
        let gap = 2.0 * PI / 512.0;
        for n in 0..512 {
            let a = pos[n][1].atan2(pos[n][0]);
            let b = pos[(n + 1) % 512][1].atan2(pos[(n + 1) % 512][0]);
            let d = (b - a).rem_euclid(2.0 * PI);
            assert!((d - gap).abs() < 1e-12);
        }
    }

    #[test]
    fn ring_validation() {
        assert!(RingGeometry::new(2, 50.0, 0.0).is_err());
        assert!(RingGeometry::new(8, 0.0, 0.0).is_err());
    }

    #[test]
    fn chord_through_center_is_diameter() {
        let m = CircularMask::new([1.0, -2.0], 5.0).unwrap();
        let l = m.chord_length([-20.0, -2.0], [20.0, -2.0]);
        assert!((l - 10.0).abs() < 1e-12);
        // segment starting at the center
        let l = m.chord_length([1.0, -2.0], [1.0, 30.0]);
        assert!((l - 5.0).abs() < 1e-12);
        assert_eq!(m.chord_length([10.0, 10.0], [20.0, 10.0]), 0.0);
    }

    proptest! {
        #[test]
        fn ring_points_on_circle(n in 3usize..1024, r in 0.1f64..200.0, off in -7.0f64..7.0) {
            let g = RingGeometry::new(n, r, off).unwrap();
            for p in g.positions() {
                prop_assert!((p[0].hypot(p[1]) - r).abs() < 1e-9 * r);
            }
        }

        #[test]
        fn ray_exit_lies_on_ring(x in -30.0f64..30.0, y in -30.0f64..30.0, th in 0.0f64..6.3) {
            let g = RingGeometry::standard();
            let e = g.ray_exit([x, y], th);
            prop_assert!((e[0].hypot(e[1]) - 50.0).abs() < 1e-9);
            let dir = (e[1] - y).atan2(e[0] - x);
            prop_assert!((dir - th).sin().abs() < 1e-9 && (dir - th).cos() > 0.0);
        }
    }
}
