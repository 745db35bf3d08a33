//! Image and sound-speed quality metrics and the method benchmark.

use std::time::Instant;

use crate::beamform::{das, dual_sos_das, BodyModel};
use crate::error::{Error, Result};
use crate::geometry::CircularMask;
use crate::optimize::{JointProblem, LossReport, TrainConfig};
use crate::raster::RasterGrid;
use crate::signals::SignalSet;

/// PSNR reported for identical images.
pub const PSNR_IDENTICAL: f64 = f64::INFINITY;

fn check_same(a: &RasterGrid, b: &RasterGrid) -> Result<()> {
    if !a.spec.same_shape(&b.spec) {
        return Err(Error::config(format!(
            "image shapes differ: {}x{} vs {}x{}",
            a.spec.width, a.spec.height, b.spec.width, b.spec.height
        )));
    }
    Ok(())
}

pub fn psnr(test: &RasterGrid, truth: &RasterGrid, data_range: f64) -> Result<f64> {
    check_same(test, truth)?;
    if !(data_range > 0.0) {
        return Err(Error::config("data range must be positive"));
    }
    let mse = test
        .values
        .iter()
        .zip(&truth.values)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / test.values.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_IDENTICAL);
    }
    Ok(10.0 * (data_range * data_range / mse).log10())
}

const SSIM_WIN: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

fn gaussian_kernel() -> [f64; SSIM_WIN] {
    let mut k = [0.0; SSIM_WIN];
    let c = (SSIM_WIN / 2) as f64;
    for (i, v) in k.iter_mut().enumerate() {
        let x = i as f64 - c;
        *v = (-x * x / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = k.iter().sum();
    k.map(|v| v / s)
}

/// Separable Gaussian filter over positions where the window fits.
fn filter_valid(values: &[f64], w: usize, h: usize, k: &[f64; SSIM_WIN]) -> (Vec<f64>, usize, usize) {
    let ow = w - SSIM_WIN + 1;
    let oh = h - SSIM_WIN + 1;
    let mut tmp = vec![0.0; ow * h];
    for r in 0..h {
        for c in 0..ow {
            tmp[r * ow + c] = (0..SSIM_WIN).map(|i| k[i] * values[r * w + c + i]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for r in 0..oh {
        for c in 0..ow {
            out[r * ow + c] = (0..SSIM_WIN).map(|i| k[i] * tmp[(r + i) * ow + c]).sum();
        }
    }
    (out, ow, oh)
}

/// Mean structural similarity with an 11x11 Gaussian window (σ = 1.5).
pub fn ssim(test: &RasterGrid, truth: &RasterGrid, data_range: f64) -> Result<f64> {
    check_same(test, truth)?;
    let (w, h) = (test.spec.width, test.spec.height);
    if w < SSIM_WIN || h < SSIM_WIN {
        return Err(Error::config(format!("SSIM needs images of at least {SSIM_WIN}x{SSIM_WIN}, got {w}x{h}")));
    }
    if !(data_range > 0.0) {
        return Err(Error::config("data range must be positive"));
    }
    let k = gaussian_kernel();
    let x = &test.values;
    let y = &truth.values;
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(y).map(|(a, b)| a * b).collect();
    let (mx, _, _) = filter_valid(x, w, h, &k);
    let (my, _, _) = filter_valid(y, w, h, &k);
    let (sxx, _, _) = filter_valid(&xx, w, h, &k);
    let (syy, _, _) = filter_valid(&yy, w, h, &k);
    let (sxy, _, _) = filter_valid(&xy, w, h, &k);
    let c1 = (SSIM_K1 * data_range).powi(2);
    let c2 = (SSIM_K2 * data_range).powi(2);
    let total: f64 = (0..mx.len())
        .map(|i| {
            let (ux, uy) = (mx[i], my[i]);
            let vx = sxx[i] - ux * ux;
            let vy = syy[i] - uy * uy;
            let cov = sxy[i] - ux * uy;
            ((2.0 * ux * uy + c1) * (2.0 * cov + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2))
        })
        .sum();
    Ok((total / mx.len() as f64).clamp(-1.0, 1.0))
}

/// Root-mean-square SOS error over the pixels inside `mask`.
pub fn sos_rmse(estimate: &RasterGrid, truth: &RasterGrid, mask: &CircularMask) -> Result<f64> {
    check_same(estimate, truth)?;
    let idx = mask.pixel_indices(&truth.spec);
    if idx.is_empty() {
        return Err(Error::config("mask covers no pixels"));
    }
    let s: f64 = idx
        .iter()
        .map(|&i| (estimate.values[i] - truth.values[i]).powi(2))
        .sum();
    Ok((s / idx.len() as f64).sqrt())
}

/// Scale an image to unit maximum and clip negative values.
pub fn normalize_image(img: &RasterGrid) -> RasterGrid {
    let m = img.max();
    let s = if m > 0.0 { 1.0 / m } else { 0.0 };
    RasterGrid {
        spec: img.spec,
        values: img.values.iter().map(|v| (v * s).max(0.0)).collect(),
    }
}

/// Reconstruction methods the benchmark knows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Das,
    DualSos,
    DeconvTrueSos,
    NfApact,
}

impl Method {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "das" => Ok(Method::Das),
            "dual_sos" | "dual-sos" => Ok(Method::DualSos),
            "deconv_true_sos" | "deconv" => Ok(Method::DeconvTrueSos),
            "nf_apact" | "nf" => Ok(Method::NfApact),
            other => Err(Error::config(format!(
                "unknown method `{other}` (expected das, dual_sos, deconv_true_sos or nf_apact)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Method::Das => "das",
            Method::DualSos => "dual_sos",
            Method::DeconvTrueSos => "deconv_true_sos",
            Method::NfApact => "nf_apact",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub method: String,
    pub psnr: f64,
    pub ssim: f64,
    /// Masked SOS error, when the method estimates SOS.
    pub sos_rmse: Option<f64>,
    pub runtime: f64,
}

impl EvalReport {
    pub fn table_row(&self) -> String {
        let rmse = self.sos_rmse.map_or("-".to_string(), |v| format!("{v:.3}"));
        format!(
            "{:<16} {:>9.3} {:>7.4} {:>9} {:>9.2}",
            self.method, self.psnr, self.ssim, rmse, self.runtime
        )
    }

    pub fn table_header() -> String {
        format!("{:<16} {:>9} {:>7} {:>9} {:>9}", "method", "psnr_db", "ssim", "sos_rmse", "seconds")
    }
}

/// Ground truth used to score reconstructions.
#[derive(Debug, Clone)]
pub struct BenchmarkTruth {
    /// Reference image the reconstructions are compared with.
    pub image: RasterGrid,
    pub sos: RasterGrid,
    pub mask: CircularMask,
}

#[derive(Debug, Clone)]
pub struct BenchmarkConfig {
    /// Uniform SOS assumed by conventional DAS, m/s.
    pub das_v0: f64,
    pub body: BodyModel,
    pub train: TrainConfig,
}

/// A scored reconstruction together with its outputs.
#[derive(Debug, Clone)]
pub struct MethodOutput {
    pub report: EvalReport,
    pub image: RasterGrid,
    pub sos: Option<RasterGrid>,
    /// Training history; empty for methods without an optimizer.
    pub reports: Vec<LossReport>,
}

/// Score one image against the truth after normalization.
pub fn score(image: &RasterGrid, truth: &RasterGrid) -> Result<(f64, f64)> {
    let a = normalize_image(image);
    let b = normalize_image(truth);
    Ok((psnr(&a, &b, 1.0)?, ssim(&a, &b, 1.0)?))
}

/// Run each method in turn and score it.
pub fn benchmark(
    signals: &SignalSet,
    truth: &BenchmarkTruth,
    methods: &[&str],
    config: &BenchmarkConfig,
) -> Result<Vec<MethodOutput>> {
    let parsed = methods.iter().map(|m| Method::parse(m)).collect::<Result<Vec<_>>>()?;
    let grid = config.train.grid;
    if !truth.image.spec.same_shape(&grid) || !truth.sos.spec.same_shape(&grid) {
        return Err(Error::config("truth rasters do not match the reconstruction grid"));
    }
    let mut out = Vec::with_capacity(parsed.len());
    let mut problem: Option<JointProblem> = None;
    for method in parsed {
        let start = Instant::now();
        let mut reports = Vec::new();
        let (image, sos) = match method {
            Method::Das => (das(signals, grid, config.das_v0, 0.0)?, None),
            Method::DualSos => (dual_sos_das(signals, grid, config.das_v0, &config.body)?, None),
            Method::DeconvTrueSos | Method::NfApact => {
                if problem.is_none() {
                    problem = Some(JointProblem::new(signals, config.train.clone())?);
                }
                let p = problem.as_ref().expect("problem built above");
                if method == Method::DeconvTrueSos {
                    (p.deconvolve(&truth.sos)?, None)
                } else {
                    let r = crate::optimize::train(p, |_| {})?;
                    reports = r.reports;
                    (r.image, Some(r.sos))
                }
            }
        };
        let runtime = start.elapsed().as_secs_f64();
        let (p, s) = score(&image, &truth.image)?;
        let rmse = match &sos {
            Some(est) => Some(sos_rmse(est, &truth.sos, &truth.mask)?),
            None => None,
        };
        out.push(MethodOutput {
            report: EvalReport {
                method: method.name().to_string(),
                psnr: p,
                ssim: s,
                sos_rmse: rmse,
                runtime,
            },
            image,
            sos,
            reports,
        });
    }
    Ok(out)
}
