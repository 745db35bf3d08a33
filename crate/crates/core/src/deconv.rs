//! Multichannel patch deconvolution and Gaussian-window patch merging.

use num_complex::Complex64;
use rayon::prelude::*;

use crate::aberration::{FrequencyGrid, RayModel, TransferModel, TransferStack};
use crate::beamform::DasStack;
use crate::error::{Error, Result};
use crate::fft::Fft2;
use crate::patch::PatchLayout;
use crate::raster::RasterGrid;

/// FFTs of one patch cut from every image of a DAS stack.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchSpectra {
    pub patch: usize,
    /// Lower-left pixel of the patch in the stack grid.
    pub offset: (usize, usize),
    pub size: usize,
    /// `spectra[j]` is the FFT of the patch from image `j`.
    pub spectra: Vec<Vec<Complex64>>,
}

pub fn extract_patch_spectra(stack: &DasStack, layout: &PatchLayout) -> Result<Vec<PatchSpectra>> {
    if !stack.grid().same_shape(&layout.grid) {
        return Err(Error::config("patch layout grid does not match the DAS stack grid"));
    }
    let p = layout.patch_pixels;
    let fft = Fft2::square(p);
    Ok((0..layout.len())
        .into_par_iter()
        .map(|i| PatchSpectra {
            patch: i,
            offset: layout.offsets[i],
            size: p,
            spectra: stack
                .images
                .iter()
                .map(|img| fft.forward_real(&layout.extract(img, i)))
                .collect(),
        })
        .collect())
}

/// Pseudo-inverse estimate of the clean patch spectrum,
/// `Σ_j conj(H_j) Y_j / (Σ_j |H_j|² + eps·M)`.
pub fn multichannel_deconvolve(y: &[Vec<Complex64>], h: &[Vec<Complex64>], eps: f64) -> Vec<Complex64> {
    assert_eq!(y.len(), h.len(), "channel count mismatch");
    let m = y.len();
    let nb = y[0].len();
    let stab = eps * m as f64;
    (0..nb)
        .map(|bin| {
            let mut num = Complex64::new(0.0, 0.0);
            let mut den = stab;
            for j in 0..m {
                num += h[j][bin].conj() * y[j][bin];
                den += h[j][bin].norm_sqr();
            }
            if den == 0.0 {
                Complex64::new(0.0, 0.0)
            } else {
                num / den
            }
        })
        .collect()
}

/// Deconvolve one patch given its spectra and transfer stack.
pub fn deconvolve_patch(y: &PatchSpectra, h: &TransferStack, eps: f64) -> Vec<Complex64> {
    multichannel_deconvolve(&y.spectra, &h.spectra, eps)
}

/// Gaussian merge window over a `P x P` patch.
#[derive(Debug, Clone, PartialEq)]
pub struct MergeWindow {
    /// Full width at half maximum, mm.
    pub fwhm: f64,
    pub size: usize,
    pub weights: Vec<f64>,
}

impl MergeWindow {
    pub fn new(fwhm: f64, size: usize, pitch: f64) -> Result<Self> {
        if !(fwhm > 0.0) {
            return Err(Error::config(format!("merge window FWHM must be positive, got {fwhm}")));
        }
        let sigma = Self::sigma_pixels(fwhm, pitch);
        let c = 0.5 * (size as f64 - 1.0);
        let weights = (0..size * size)
            .map(|i| {
                let dx = (i % size) as f64 - c;
                let dy = (i / size) as f64 - c;
                (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp()
            })
            .collect();
        Ok(MergeWindow { fwhm, size, weights })
    }

    pub fn sigma_pixels(fwhm: f64, pitch: f64) -> f64 {
        fwhm / (2.0 * (2.0 * std::f64::consts::LN_2).sqrt()) / pitch
    }
}

/// Weight-normalized overlap-add of real patches into a full image.
pub fn merge_patches(patches: &[Vec<f64>], layout: &PatchLayout, window: &MergeWindow) -> Result<RasterGrid> {
    if patches.len() != layout.len() {
        return Err(Error::config(format!(
            "{} patches for a layout of {}",
            patches.len(),
            layout.len()
        )));
    }
    let p = layout.patch_pixels;
    if window.size != p {
        return Err(Error::config("merge window size differs from patch size"));
    }
    let g = layout.grid;
    let mut acc = vec![0.0; g.len()];
    let mut wsum = vec![0.0; g.len()];
    for (patch, &(c0, r0)) in patches.iter().zip(&layout.offsets) {
        for r in 0..p {
            for c in 0..p {
                let k = r * p + c;
                let i = g.index(c0 + c, r0 + r);
                acc[i] += window.weights[k] * patch[k];
                wsum[i] += window.weights[k];
            }
        }
    }
    let values = acc
        .iter()
        .zip(&wsum)
        .map(|(a, w)| if *w > 0.0 { a / w } else { 0.0 })
        .collect();
    RasterGrid::from_values(g, values)
}

/// Settings for the deconvolution pipeline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeconvSettings {
    pub eps: f64,
    pub merge_fwhm: f64,
}

impl Default for DeconvSettings {
    fn default() -> Self {
        DeconvSettings {
            eps: 1e-3,
            merge_fwhm: 1.5,
        }
    }
}

/// Real-space patches deconvolved with the transfer stacks implied by `sos`.
pub fn deconvolve_patches(
    stack: &DasStack,
    sos: &RasterGrid,
    rays: &RayModel,
    layout: &PatchLayout,
    eps: f64,
) -> Result<Vec<Vec<f64>>> {
    if !stack.grid().same_shape(&layout.grid) {
        return Err(Error::config("patch layout grid does not match the DAS stack grid"));
    }
    if !sos.spec.same_shape(&layout.grid) {
        return Err(Error::config("SOS raster does not match the DAS stack grid"));
    }
    let p = layout.patch_pixels;
    let model = TransferModel::new(FrequencyGrid::new(p, layout.grid.pitch, rays.n_angles), &stack.delays);
    let fft = Fft2::square(p);
    (0..layout.len())
        .into_par_iter()
        .map(|i| {
            let center = layout.center(i);
            let w = rays.profile(center, sos, false)?.w;
            let h = model.stack(i, &w);
            let y: Vec<Vec<Complex64>> = stack
                .images
                .iter()
                .map(|img| fft.forward_real(&layout.extract(img, i)))
                .collect();
            let mut x = multichannel_deconvolve(&y, &h.spectra, eps);
            fft.inverse(&mut x);
            Ok(x.iter().map(|v| v.re).collect())
        })
        .collect()
}

/// Full deconvolution pipeline: per patch wavefront, transfer stack,
/// multichannel pseudo-inverse and inverse FFT, then Gaussian merging.
pub fn deconvolve_image(
    stack: &DasStack,
    sos: &RasterGrid,
    rays: &RayModel,
    layout: &PatchLayout,
    settings: &DeconvSettings,
) -> Result<RasterGrid> {
    let patches = deconvolve_patches(stack, sos, rays, layout, settings.eps)?;
    let window = MergeWindow::new(settings.merge_fwhm, layout.patch_pixels, layout.grid.pitch)?;
    merge_patches(&patches, layout, &window)
}
