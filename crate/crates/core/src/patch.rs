//! Square patch tiling of a raster with a fixed overlap.

use crate::error::{Error, Result};
use crate::raster::{GridSpec, RasterGrid};

/// Row-major list of square patches covering a grid.
///
/// Patches sit on a regular stride; when the stride does not land exactly
/// on the far edge, one extra patch is clamped flush with that edge so every
/// pixel is covered by real data.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchLayout {
    pub grid: GridSpec,
    pub patch_size: f64,
    pub overlap: f64,
    pub patch_pixels: usize,
    pub stride_pixels: usize,
    /// Lower-left pixel `(col, row)` of each patch.
    pub offsets: Vec<(usize, usize)>,
    pub cols: usize,
    pub rows: usize,
}

fn axis_offsets(len: usize, patch: usize, stride: usize) -> Vec<usize> {
    let mut v: Vec<usize> = (0..=(len - patch) / stride).map(|i| i * stride).collect();
    if *v.last().unwrap() + patch < len {
        v.push(len - patch);
    }
    v
}

impl PatchLayout {
    pub fn new(grid: GridSpec, patch_size: f64, overlap: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&overlap) {
            return Err(Error::config(format!("patch overlap must be in [0, 1), got {overlap}")));
        }
        if !(patch_size > 0.0) {
            return Err(Error::config("patch size must be positive"));
        }
        let patch_pixels = (patch_size / grid.pitch).round() as usize;
        if patch_pixels == 0 {
            return Err(Error::config("patch is smaller than one pixel"));
        }
        if patch_pixels > grid.width || patch_pixels > grid.height {
            return Err(Error::config(format!(
                "patch of {patch_pixels} px does not fit in a {}x{} grid",
                grid.width, grid.height
            )));
        }
        let stride_pixels = ((patch_pixels as f64 * (1.0 - overlap)).round() as usize).max(1);
        let xs = axis_offsets(grid.width, patch_pixels, stride_pixels);
        let ys = axis_offsets(grid.height, patch_pixels, stride_pixels);
        let offsets = ys
            .iter()
            .flat_map(|&r| xs.iter().map(move |&c| (c, r)))
            .collect();
        Ok(PatchLayout {
            grid,
            patch_size,
            overlap,
            patch_pixels,
            stride_pixels,
            offsets,
            cols: xs.len(),
            rows: ys.len(),
        })
    }

    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }

    /// World coordinates of the geometric center of patch `i`.
    pub fn center(&self, i: usize) -> [f64; 2] {
        let (c, r) = self.offsets[i];
        let half = 0.5 * (self.patch_pixels as f64 - 1.0);
        let p = self.grid.pitch;
        [
            self.grid.origin[0] + (c as f64 + half) * p,
            self.grid.origin[1] + (r as f64 + half) * p,
        ]
    }

    pub fn centers(&self) -> Vec<[f64; 2]> {
        (0..self.len()).map(|i| self.center(i)).collect()
    }

    pub fn extract(&self, image: &RasterGrid, i: usize) -> Vec<f64> {
        let (c, r) = self.offsets[i];
        image.crop(c, r, self.patch_pixels)
    }

    /// Number of patches covering each pixel.
    pub fn coverage(&self) -> Vec<u32> {
        let mut cov = vec![0u32; self.grid.len()];
        let p = self.patch_pixels;
        for &(c0, r0) in &self.offsets {
            for r in r0..r0 + p {
                for c in c0..c0 + p {
                    cov[self.grid.index(c, r)] += 1;
                }
            }
        }
        cov
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn desk_layout_counts() {
        let g = GridSpec::desk_default();
        let l = PatchLayout::new(g, 3.2, 0.75).unwrap();
        assert_eq!(l.patch_pixels, 32);
        assert_eq!(l.stride_pixels, 8);
        assert_eq!((l.cols, l.rows), (29, 29));
        assert_eq!(l.len(), 841);
        assert_eq!(l.offsets[1], (8, 0));
        assert_eq!(l.offsets[29], (0, 8));
    }

    #[test]
    fn whole_grid_patch() {
        let g = GridSpec::centered(32, 32, 0.1).unwrap();
        let l = PatchLayout::new(g, 3.2, 0.0).unwrap();
        assert_eq!(l.len(), 1);
        let c = l.center(0);
        assert!(c[0].abs() < 1e-12 && c[1].abs() < 1e-12);
    }

    #[test]
    fn non_overlapping_tiling() {
        let g = GridSpec::desk_default();
        let l = PatchLayout::new(g, 3.2, 0.0).unwrap();
        assert_eq!((l.cols, l.rows), (8, 8));
        assert!(l.coverage().iter().all(|&c| c == 1));
    }

    #[test]
    fn oversize_patch_is_rejected() {
        let g = GridSpec::centered(16, 64, 0.1).unwrap();
        assert!(matches!(PatchLayout::new(g, 3.2, 0.5), Err(Error::Config(_))));
        assert!(PatchLayout::new(g, 1.0, 1.0).is_err());
    }

    #[test]
    fn clamped_edge_patch() {
        let g = GridSpec::centered(50, 40, 0.1).unwrap();
        let l = PatchLayout::new(g, 1.6, 0.5).unwrap();
        // 16 px, stride 8: x offsets 0..=32 step 8 then 34
        assert_eq!(l.cols, 6);
        assert_eq!(l.offsets[l.cols - 1].0, 34);
        assert_eq!(l.rows, 4);
    }

    proptest! {
        #[test]
        fn every_pixel_covered(w in 8usize..120, h in 8usize..120, p in 2usize..8, ov in 0.0f64..0.95) {
            let g = GridSpec::centered(w, h, 0.1).unwrap();
            let l = PatchLayout::new(g, p as f64 * 0.1, ov).unwrap();
            prop_assert!(l.stride_pixels >= 1);
            prop_assert!(l.coverage().iter().all(|&c| c >= 1));
        }

        #[test]
        fn uniform_weight_roundtrip(seed in 0u64..1000) {
            let g = GridSpec::centered(40, 36, 0.1).unwrap();
            let vals: Vec<f64> = (0..g.len()).map(|i| ((i as u64 * 2654435761 + seed) % 1000) as f64).collect();
            let img = RasterGrid::from_values(g, vals).unwrap();
            let l = PatchLayout::new(g, 1.2, 0.75).unwrap();
            let mut acc = vec![0.0; g.len()];
            for i in 0..l.len() {
                let patch = l.extract(&img, i);
                let (c0, r0) = l.offsets[i];
                for r in 0..l.patch_pixels {
                    for c in 0..l.patch_pixels {
                        acc[g.index(c0 + c, r0 + r)] += patch[r * l.patch_pixels + c];
                    }
                }
            }
            let cov = l.coverage();
            for i in 0..g.len() {
                prop_assert!((acc[i] / cov[i] as f64 - img.values[i]).abs() < 1e-9);
            }
        }
    }
}
