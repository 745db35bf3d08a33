//! Finite-difference checks for every link of the differentiable chain.
//! Each returns the worst relative error it observed.

use num_complex::Complex64;
use pact_core::aberration::{FrequencyGrid, RayModel, TransferModel};
use pact_core::beamform::das_stack;
use pact_core::deconv::multichannel_deconvolve;
use pact_core::geometry::{CircularMask, RingGeometry};
use pact_core::nfield::SirenParams;
use pact_core::optimize::{JointProblem, TrainConfig};
use pact_core::phantom::{simulate_signals, Phantom, SimConfig};
use pact_core::raster::{GridSpec, RasterGrid};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

fn lumpy_sos(grid: GridSpec, mask: &CircularMask, rng: &mut ChaCha8Rng) -> RasterGrid {
    let mut sos = RasterGrid::filled(grid, 1500.0);
    for i in mask.pixel_indices(&grid) {
        sos.values[i] = 1500.0 + rng.gen_range(-40.0..80.0);
    }
    sos
}

pub fn wavefront_jacobian() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let grid = GridSpec::centered(64, 64, 0.1).unwrap();
    let mask = CircularMask::new([0.2, -0.1], 2.6).unwrap();
    let sos = lumpy_sos(grid, &mask, &mut rng);
    let rays = RayModel::new(RingGeometry::new(64, 50.0, 0.0).unwrap(), mask, 1500.0, 48, 0.05).unwrap();
    let center = [0.35, 0.6];
    let profile = rays.profile(center, &sos, true).unwrap();
    let jac = profile.jacobian.unwrap();
    let masked = mask.pixel_indices(&grid);
    let eps = 0.1;
    let mut worst = 0.0_f64;
    for _ in 0..12 {
        let k = rng.gen_range(0..masked.len());
        let mut up = sos.clone();
        up.values[masked[k]] += eps;
        let mut dn = sos.clone();
        dn.values[masked[k]] -= eps;
        let wu = rays.wavefront(center, &up);
        let wd = rays.wavefront(center, &dn);
        let fd: Vec<f64> = wu.iter().zip(&wd).map(|(a, b)| (a - b) / (2.0 * eps)).collect();
        let analytic: Vec<f64> = jac
            .iter()
            .map(|row| row.iter().find(|e| e.0 as usize == k).map_or(0.0, |e| e.1))
            .collect();
        worst = worst.max(rel_err(&fd, &analytic));
    }
    worst
}

pub fn transfer_gradient() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let n_angles = 64;
    let freq = FrequencyGrid::new(16, 0.2, n_angles);
    let delays = [-0.5, -0.2, 0.1, 0.4];
    let model = TransferModel::new(freq, &delays);
    let w: Vec<f64> = (0..n_angles).map(|_| rng.gen_range(-0.3..0.3)).collect();
    let nb = model.freq.n_bins();
    let g: Vec<Vec<Complex64>> = (0..delays.len())
        .map(|_| (0..nb).map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect())
        .collect();
    let pairing = |w: &[f64]| -> f64 {
        let h = model.stack(0, w);
        h.spectra
            .iter()
            .zip(&g)
            .flat_map(|(hj, gj)| hj.iter().zip(gj).map(|(a, b)| (b.conj() * a).re))
            .sum()
    };
    let analytic = model.vjp(&w, &g);
    let step = 1e-6;
    let fd: Vec<f64> = (0..n_angles)
        .map(|m| {
            let mut up = w.clone();
            up[m] += step;
            let mut dn = w.clone();
            dn[m] -= step;
            (pairing(&up) - pairing(&dn)) / (2.0 * step)
        })
        .collect();
    
    rel_err(&fd, &analytic)
}

pub fn pseudo_inverse_derivative() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (m, nb, eps) = (4, 9, 1e-3);
    let mut c = || Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
    let y: Vec<Vec<Complex64>> = (0..m).map(|_| (0..nb).map(|_| c()).collect()).collect();
    let h: Vec<Vec<Complex64>> = (0..m).map(|_| (0..nb).map(|_| c()).collect()).collect();
    let x = multichannel_deconvolve(&y, &h, eps);
    let step = 1e-6;
    let mut worst = 0.0_f64;
    for j in 0..m {
        for b in 0..nb {
            let denom: f64 = h.iter().map(|hj| hj[b].norm_sqr()).sum::<f64>() + eps * m as f64;
            // Wirtinger derivatives of X = Σ conj(H) Y / (Σ |H|² + εM)
            let d_h = -x[b] * h[j][b].conj() / denom;
            let d_hbar = (y[j][b] - x[b] * h[j][b]) / denom;
            for dir in [Complex64::new(1.0, 0.0), Complex64::new(0.0, 1.0)] {
                let mut up = h.clone();
                up[j][b] += dir * step;
                let mut dn = h.clone();
                dn[j][b] -= dir * step;
                let fd = (multichannel_deconvolve(&y, &up, eps)[b] - multichannel_deconvolve(&y, &dn, eps)[b])
                    / (2.0 * step);
                let analytic = d_h * dir + d_hbar * dir.conj();
                worst = worst.max((fd - analytic).norm() / analytic.norm().max(fd.norm()));
            }
        }
    }
    worst
}

pub fn full_chain_gradient() -> f64 {
    let grid = GridSpec::centered(64, 64, 0.1).unwrap();
    let geom = RingGeometry::new(128, 50.0, 0.0).unwrap();
    let mask = CircularMask::new([0.0, 0.0], 3.0).unwrap();
    let mut pressure = RasterGrid::zeros(grid);
    for (c, r) in [(20, 22), (40, 30), (33, 45), (25, 40), (45, 20)] {
        pressure.set(c, r, 1.0);
    }
    let mut sos = RasterGrid::filled(grid, 1500.0);
    for i in CircularMask::new([0.5, -0.3], 2.0).unwrap().pixel_indices(&grid) {
        sos.values[i] = 1560.0;
    }
    let ph = Phantom { pressure, sos, mask, background_sos: 1500.0 };
    let sig = simulate_signals(&ph, &geom, &SimConfig::default()).unwrap();
    let delays = vec![-0.3, -0.1, 0.1, 0.3];
    let stack = das_stack(&sig, grid, 1500.0, &delays).unwrap();
    let cfg = TrainConfig {
        grid,
        mask,
        delays,
        patch_size: 3.2,
        overlap: 0.0,
        n_angles: 64,
        hidden: 16,
        lambda_tv: 1e-3,
        ..TrainConfig::default()
    };
    let p = JointProblem::from_stack(stack, geom, cfg).unwrap();
    assert_eq!(p.layout.len(), 4);
    let params = p.init_params().unwrap();
    let g = p.evaluate(&params, true).unwrap().grad;
    let total = |q: &SirenParams| {
        let e = p.evaluate(q, false).unwrap();
        e.data_term + e.tv_term
    };
    let mut worst = 0.0_f64;
    for k in 0..20 {
        let i = (k * 7919 + 13) % params.n_params();
        // Small enough that no TV difference changes sign inside the stencil.
        let h = 1e-8;
        let mut a = params.clone();
        a.flat[i] += h;
        let mut b = params.clone();
        b.flat[i] -= h;
        let fd = (total(&a) - total(&b)) / (2.0 * h);
        let rel = (fd - g[i]).abs() / fd.abs().max(g[i].abs()).max(1e-8);
        worst = worst.max(rel);
    }
    worst
}
