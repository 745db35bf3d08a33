//! Self-supervised joint reconstruction of the image and the sound speed.
//!
//! Each optimizer step renders the SOS network, traces wavefronts for every
//! patch, builds the transfer stacks, and scores how well the multichannel
//! deconvolution explains the fixed DAS stack. Gradients run back through
//! the pseudo-inverse, the transfer functions, the ray integrals and the
//! network.

use std::time::Instant;

use num_complex::Complex64;
use rayon::prelude::*;

use crate::aberration::{FrequencyGrid, RayModel, TransferModel};
use crate::beamform::{das_stack, delay_range, DasStack};
use crate::deconv::{deconvolve_image, extract_patch_spectra, DeconvSettings, PatchSpectra};
use crate::error::{Error, Result};
use crate::geometry::{CircularMask, RingGeometry};
use crate::nfield::{backprop_sos, init_siren, render_sos, SirenParams, SosField, DEFAULT_OMEGA0, DEFAULT_OUT_SCALE};
use crate::patch::PatchLayout;
use crate::raster::{GridSpec, RasterGrid};
use crate::signals::SignalSet;

/// Patches handled per parallel work item.
const PATCH_CHUNK: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub grid: GridSpec,
    pub mask: CircularMask,
    /// Assumed background SOS (m/s); the signals' background when `None`.
    pub v0: Option<f64>,
    pub delays: Vec<f64>,
    pub patch_size: f64,
    pub overlap: f64,
    pub merge_fwhm: f64,
    pub eps_deconv: f64,
    pub n_angles: usize,
    pub ray_step: f64,
    pub hidden: usize,
    pub layers: usize,
    pub omega0: f64,
    pub out_scale: f64,
    pub epochs: usize,
    pub steps_per_epoch: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub lambda_tv: f64,
    pub seed: u64,
    /// Differentiate through the dependence of the deconvolved patch on H.
    pub implicit_grad: bool,
    /// Constant in-mask SOS offsets (m/s) scored before training; the best
    /// one seeds the network's output bias. `None` starts from the raw
    /// initialization.
    pub warm_start: Option<OffsetSearch>,
}

/// Uniform grid of SOS offsets `min, min + step, ..., <= max`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OffsetSearch {
    pub min: f64,
    pub max: f64,
    pub step: f64,
}

impl OffsetSearch {
    pub fn offsets(&self) -> Vec<f64> {
        let n = ((self.max - self.min) / self.step + 1e-9).floor() as usize + 1;
        (0..n).map(|i| self.min + i as f64 * self.step).collect()
    }
}

impl Default for OffsetSearch {
    fn default() -> Self {
        OffsetSearch {
            min: -100.0,
            max: 200.0,
            step: 10.0,
        }
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            grid: GridSpec::desk_default(),
            mask: CircularMask {
                center: [0.0, 0.0],
                radius: 11.0,
            },
            v0: None,
            delays: delay_range(-0.8, 0.8, 32).expect("static delay range"),
            patch_size: 3.2,
            overlap: 0.75,
            merge_fwhm: 1.5,
            eps_deconv: 1e-3,
            n_angles: 512,
            ray_step: 0.05,
            hidden: 64,
            layers: 2,
            omega0: DEFAULT_OMEGA0,
            out_scale: DEFAULT_OUT_SCALE,
            epochs: 10,
            steps_per_epoch: 5,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            lambda_tv: DEFAULT_LAMBDA_TV,
            seed: 0,
            implicit_grad: true,
            warm_start: Some(OffsetSearch::default()),
        }
    }
}

/// Default TV weight for a unit-peak DAS stack.
pub const DEFAULT_LAMBDA_TV: f64 = 1e-5;

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.steps_per_epoch == 0 {
            return Err(Error::config("epochs and steps per epoch must be at least 1"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::config(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        if !(self.lambda_tv >= 0.0) {
            return Err(Error::config(format!("TV weight must be non-negative, got {}", self.lambda_tv)));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.adam_eps > 0.0) {
            return Err(Error::config("Adam betas must lie in [0, 1) and epsilon must be positive"));
        }
        if !(self.eps_deconv >= 0.0) {
            return Err(Error::config("deconvolution stabilizer must be non-negative"));
        }
        if self.delays.is_empty() {
            return Err(Error::config("at least one delay is required"));
        }
        if let Some(w) = self.warm_start {
            if !(w.step > 0.0) || !(w.max >= w.min) || !w.min.is_finite() || !w.max.is_finite() {
                return Err(Error::config(format!(
                    "warm-start search needs finite min <= max and a positive step, got {}..{} by {}",
                    w.min, w.max, w.step
                )));
            }
        }
        Ok(())
    }
}

/// Loss values recorded once per epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossReport {
    pub epoch: usize,
    pub data_term: f64,
    pub tv_term: f64,
    pub total: f64,
    /// Seconds since training started.
    pub wall_time: f64,
}

impl LossReport {
    pub fn log_line(&self) -> String {
        format!(
            "epoch={} data_term={:.9e} tv_term={:.9e} total={:.9e} seconds={:.3}",
            self.epoch, self.data_term, self.tv_term, self.total, self.wall_time
        )
    }
}

/// Unnormalized `Σ_j Σ_k |k| |Y_j - H_j X̂|²` of one patch and its gradient
/// with respect to every `H_j(k)`, using `δL = Re(conj(g) δH)`.
pub fn patch_data_loss(
    y: &[Vec<Complex64>],
    h: &[Vec<Complex64>],
    kmag: &[f64],
    eps: f64,
    implicit: bool,
) -> (f64, Vec<Vec<Complex64>>) {
    let m = y.len();
    assert_eq!(h.len(), m, "channel count mismatch");
    let nb = kmag.len();
    let stab = eps * m as f64;
    let mut grad = vec![vec![Complex64::new(0.0, 0.0); nb]; m];
    let mut loss = 0.0;
    let mut resid = vec![Complex64::new(0.0, 0.0); m];
    for bin in 0..nb {
        let k = kmag[bin];
        if k == 0.0 {
            continue;
        }
        let mut a = Complex64::new(0.0, 0.0);
        let mut b = stab;
        for j in 0..m {
            a += h[j][bin].conj() * y[j][bin];
            b += h[j][bin].norm_sqr();
        }
        let x = if b > 0.0 { a / b } else { Complex64::new(0.0, 0.0) };
        let mut c = Complex64::new(0.0, 0.0);
        for j in 0..m {
            let r = y[j][bin] - h[j][bin] * x;
            resid[j] = r;
            loss += k * r.norm_sqr();
            c += r.conj() * h[j][bin];
        }
        let implicit = implicit && b > 0.0;
        let cb = if implicit { c / b } else { Complex64::new(0.0, 0.0) };
        let hx = 2.0 * (cb * x).re;
        for j in 0..m {
            let mut g = -resid[j] * x.conj();
            if implicit {
                g += -cb * y[j][bin] + hx * h[j][bin];
            }
            grad[j][bin] = 2.0 * k * g;
        }
    }
    (loss, grad)
}

/// Normalized data term `Σ_i patch_data_loss / (N M P²)` with gradients
/// scaled to match.
pub fn data_loss(
    y: &[PatchSpectra],
    h: &[Vec<Vec<Complex64>>],
    kmag: &[f64],
    eps: f64,
    implicit: bool,
) -> (f64, Vec<Vec<Vec<Complex64>>>) {
    assert_eq!(y.len(), h.len(), "patch count mismatch");
    if y.is_empty() {
        return (0.0, Vec::new());
    }
    let norm = (y.len() * y[0].spectra.len() * kmag.len()) as f64;
    let parts: Vec<(f64, Vec<Vec<Complex64>>)> = y
        .par_iter()
        .zip(h.par_iter())
        .map(|(yi, hi)| {
            let (l, mut g) = patch_data_loss(&yi.spectra, hi, kmag, eps, implicit);
            for gj in &mut g {
                for v in gj.iter_mut() {
                    *v /= norm;
                }
            }
            (l, g)
        })
        .collect();
    let total = parts.iter().map(|p| p.0).sum::<f64>() / norm;
    (total, parts.into_iter().map(|p| p.1).collect())
}

/// Anisotropic TV `λ Σ (|Δx v| + |Δy v|)` over forward differences starting
/// at masked pixels, and its subgradient on the masked pixels.
pub fn tv_loss(field: &SosField, lambda: f64) -> (f64, Vec<f64>) {
    let grid = field.raster.spec;
    let mut slot = vec![usize::MAX; grid.len()];
    for (k, &i) in field.masked_indices.iter().enumerate() {
        slot[i] = k;
    }
    let v = &field.raster.values;
    let mut total = 0.0;
    let mut grad = vec![0.0; field.masked_indices.len()];
    for (k, &i) in field.masked_indices.iter().enumerate() {
        let (c, r) = (i % grid.width, i / grid.width);
        let mut neighbors = [None, None];
        if c + 1 < grid.width {
            neighbors[0] = Some(i + 1);
        }
        if r + 1 < grid.height {
            neighbors[1] = Some(i + grid.width);
        }
        for n in neighbors.into_iter().flatten() {
            let diff = v[n] - v[i];
            total += diff.abs();
            let s = if diff > 0.0 {
                1.0
            } else if diff < 0.0 {
                -1.0
            } else {
                0.0
            };
            grad[k] -= lambda * s;
            if slot[n] != usize::MAX {
                grad[slot[n]] += lambda * s;
            }
        }
    }
    (lambda * total, grad)
}

/// First and second moment estimates for Adam.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        AdamState {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }
}

pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamState,
    lr: f64,
    betas: (f64, f64),
    eps: f64,
) -> Result<()> {
    if params.len() != grads.len() || state.m.len() != grads.len() {
        return Err(Error::config("Adam parameter, gradient and state sizes differ"));
    }
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::numerical("parameter gradient", format!("entry {i} is {}", grads[i])));
    }
    let (b1, b2) = betas;
    state.t += 1;
    let c1 = 1.0 - b1.powi(state.t as i32);
    let c2 = 1.0 - b2.powi(state.t as i32);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g;
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * g * g;
        let mh = state.m[i] / c1;
        let vh = state.v[i] / c2;
        params[i] -= lr * mh / (vh.sqrt() + eps);
    }
    Ok(())
}

fn first_non_finite(values: &[f64]) -> Option<(usize, f64)> {
    values.iter().copied().enumerate().find(|(_, v)| !v.is_finite())
}

/// Losses and parameter gradient from one evaluation.
#[derive(Debug, Clone)]
pub struct StepEval {
    pub data_term: f64,
    pub tv_term: f64,
    pub grad: Vec<f64>,
}

/// Everything held fixed while the SOS network trains.
pub struct JointProblem {
    pub config: TrainConfig,
    pub v0: f64,
    pub layout: PatchLayout,
    pub rays: RayModel,
    model: TransferModel,
    centers: Vec<[f64; 2]>,
    spectra: Vec<PatchSpectra>,
    /// DAS stack as beamformed, before normalization.
    pub stack: DasStack,
    /// Factor applied to the stack for training.
    pub stack_scale: f64,
}

impl JointProblem {
    /// Beamform `signals` once and prepare every fixed quantity.
    pub fn new(signals: &SignalSet, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let v0 = config.v0.unwrap_or(signals.background_sos);
        let stack = das_stack(signals, config.grid, v0, &config.delays)?;
        Self::from_stack(stack, signals.geom, config)
    }

    pub fn from_stack(stack: DasStack, geom: RingGeometry, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        if stack.delays != config.delays {
            return Err(Error::config("DAS stack delays differ from the configured delays"));
        }
        let v0 = stack.v0;
        let layout = PatchLayout::new(config.grid, config.patch_size, config.overlap)?;
        let rays = RayModel::new(geom, config.mask, v0, config.n_angles, config.ray_step)?;
        let centers = layout.centers();
        for &c in &centers {
            if !geom.contains_strictly(c) {
                return Err(Error::config(format!("patch center ({:.2}, {:.2}) lies outside the ring", c[0], c[1])));
            }
        }
        let peak = stack.images.iter().map(|im| im.max_abs()).fold(0.0, f64::max);
        let stack_scale = if peak > 0.0 { 1.0 / peak } else { 1.0 };
        let spectra = extract_patch_spectra(&stack.scaled(stack_scale), &layout)?;
        let model = TransferModel::new(
            FrequencyGrid::new(layout.patch_pixels, config.grid.pitch, config.n_angles),
            &config.delays,
        );
        Ok(JointProblem {
            config,
            v0,
            layout,
            rays,
            model,
            centers,
            spectra,
            stack,
            stack_scale,
        })
    }

    pub fn init_params(&self) -> Result<SirenParams> {
        let mut p = init_siren(self.config.seed, self.config.hidden, self.config.layers, self.config.omega0)?;
        p.out_scale = self.config.out_scale;
        p.v0 = self.v0;
        Ok(p)
    }

    /// Score each constant offset added to the rendered SOS inside the mask
    /// with the data term, refine the best grid point with a parabola
    /// through its neighbours, and return the winner with its loss.
    pub fn best_offset(&self, params: &SirenParams, search: &OffsetSearch) -> Result<(f64, f64)> {
        let field = self.render(params);
        let score = |off: f64| -> Result<f64> {
            let mut sos = field.raster.clone();
            for &i in &field.masked_indices {
                sos.values[i] += off;
            }
            Ok(self.data_term(&sos, false)?.0)
        };
        let offsets = search.offsets();
        let losses = offsets.iter().map(|&o| score(o)).collect::<Result<Vec<_>>>()?;
        let (ib, &lb) = losses
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .expect("offset grid is never empty");
        let mut best = (offsets[ib], lb);
        if ib > 0 && ib + 1 < offsets.len() {
            let (l0, l2) = (losses[ib - 1], losses[ib + 1]);
            let curv = l0 - 2.0 * lb + l2;
            if curv > 0.0 {
                let vertex = offsets[ib] + 0.5 * search.step * (l0 - l2) / curv;
                let lv = score(vertex)?;
                if lv < best.1 {
                    best = (vertex, lv);
                }
            }
        }
        Ok(best)
    }

    pub fn render(&self, params: &SirenParams) -> SosField {
        render_sos(params, self.config.grid, &self.config.mask)
    }

    /// Data and TV terms, plus the gradient with respect to the network
    /// parameters when `with_grad` is set.
    pub fn evaluate(&self, params: &SirenParams, with_grad: bool) -> Result<StepEval> {
        let field = self.render(params);
        if let Some((i, v)) = first_non_finite(&field.raster.values) {
            return Err(Error::numerical("sos field", format!("pixel {i} is {v}")));
        }
        let (data_term, grad_grid) = self.data_term(&field.raster, with_grad)?;
        let (tv_term, tv_grad) = tv_loss(&field, self.config.lambda_tv);
        if !tv_term.is_finite() {
            return Err(Error::numerical("tv loss", format!("value {tv_term}")));
        }
        let grad = if with_grad {
            let grad_v: Vec<f64> = field
                .masked_indices
                .iter()
                .zip(&tv_grad)
                .map(|(&i, t)| grad_grid[i] + t)
                .collect();
            if let Some((i, v)) = first_non_finite(&grad_v) {
                return Err(Error::numerical("sos gradient", format!("masked pixel {i} is {v}")));
            }
            let g = backprop_sos(params, &field, &grad_v)?;
            if let Some((i, v)) = first_non_finite(&g) {
                return Err(Error::numerical("parameter gradient", format!("entry {i} is {v}")));
            }
            g
        } else {
            Vec::new()
        };
        Ok(StepEval {
            data_term,
            tv_term,
            grad,
        })
    }

    /// Normalized data term for an SOS raster and, optionally, its gradient
    /// on the grid.
    pub fn data_term(&self, sos: &RasterGrid, with_grad: bool) -> Result<(f64, Vec<f64>)> {
        let n_pix = sos.spec.len();
        let kmag = &self.model.freq.kmag;
        let norm = (self.spectra.len() * self.config.delays.len() * kmag.len()) as f64;
        let eps = self.config.eps_deconv;
        let implicit = self.config.implicit_grad;
        let idx: Vec<usize> = (0..self.spectra.len()).collect();
        let parts: Vec<Result<(f64, Vec<f64>)>> = idx
            .par_chunks(PATCH_CHUNK)
            .map(|chunk| {
                let mut loss = 0.0;
                let mut acc = if with_grad { vec![0.0; n_pix] } else { Vec::new() };
                for &i in chunk {
                    let center = self.centers[i];
                    let w = self.rays.wavefront(center, sos);
                    if let Some((m, v)) = first_non_finite(&w) {
                        return Err(Error::numerical("wavefront", format!("patch {i}, angle {m} is {v}")));
                    }
                    let h = self.model.stack(i, &w);
                    let (l, g) = patch_data_loss(&self.spectra[i].spectra, &h.spectra, kmag, eps, implicit);
                    if !l.is_finite() {
                        return Err(Error::numerical("data loss", format!("patch {i} loss is {l}")));
                    }
                    loss += l;
                    if with_grad {
                        let gw = self.model.vjp(&w, &g);
                        if let Some((m, v)) = first_non_finite(&gw) {
                            return Err(Error::numerical("wavefront gradient", format!("patch {i}, angle {m} is {v}")));
                        }
                        let scaled: Vec<f64> = gw.iter().map(|v| v / norm).collect();
                        self.rays.wavefront_vjp(center, sos, &scaled, &mut acc);
                    }
                }
                Ok((loss, acc))
            })
            .collect();
        let mut loss = 0.0;
        let mut grad = if with_grad { vec![0.0; n_pix] } else { Vec::new() };
        for part in parts {
            let (l, g) = part?;
            loss += l;
            for (a, b) in grad.iter_mut().zip(g) {
                *a += b;
            }
        }
        Ok((loss / norm, grad))
    }

    /// Deconvolve the unnormalized stack with a given SOS.
    pub fn deconvolve(&self, sos: &RasterGrid) -> Result<RasterGrid> {
        deconvolve_image(
            &self.stack,
            sos,
            &self.rays,
            &self.layout,
            &DeconvSettings {
                eps: self.config.eps_deconv,
                merge_fwhm: self.config.merge_fwhm,
            },
        )
    }
}

/// Output of a joint reconstruction.
#[derive(Debug, Clone)]
pub struct JointResult {
    pub image: RasterGrid,
    pub sos: RasterGrid,
    pub params: SirenParams,
    pub reports: Vec<LossReport>,
}

pub fn joint_reconstruct(signals: &SignalSet, config: TrainConfig) -> Result<JointResult> {
    joint_reconstruct_with(signals, config, |_| {})
}

/// Joint reconstruction that reports every epoch to `observer`.
pub fn joint_reconstruct_with(
    signals: &SignalSet,
    config: TrainConfig,
    observer: impl FnMut(&LossReport),
) -> Result<JointResult> {
    let problem = JointProblem::new(signals, config)?;
    train(&problem, observer)
}

/// Optimize the network for a prepared problem, then deconvolve with the
/// learned SOS.
pub fn train(problem: &JointProblem, mut observer: impl FnMut(&LossReport)) -> Result<JointResult> {
    let cfg = &problem.config;
    let start = Instant::now();
    let mut params = problem.init_params()?;
    if let Some(search) = cfg.warm_start.filter(|_| params.out_scale != 0.0) {
        let (offset, _) = problem.best_offset(&params, &search)?;
        if let Some(bias) = params.flat.last_mut() {
            *bias += offset / params.out_scale;
        }
    }
    let mut state = AdamState::new(params.n_params());
    let mut reports = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let mut first = None;
        for _ in 0..cfg.steps_per_epoch {
            let eval = problem.evaluate(&params, true)?;
            first.get_or_insert((eval.data_term, eval.tv_term));
            adam_step(
                &mut params.flat,
                &eval.grad,
                &mut state,
                cfg.learning_rate,
                (cfg.beta1, cfg.beta2),
                cfg.adam_eps,
            )?;
        }
        let (data_term, tv_term) = first.expect("at least one step per epoch");
        let report = LossReport {
            epoch,
            data_term,
            tv_term,
            total: data_term + tv_term,
            wall_time: start.elapsed().as_secs_f64(),
        };
        observer(&report);
        reports.push(report);
    }
    let sos = problem.render(&params).raster;
    let image = problem.deconvolve(&sos)?;
    Ok(JointResult {
        image,
        sos,
        params,
        reports,
    })
}
