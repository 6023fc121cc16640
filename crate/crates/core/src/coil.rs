//! Coil compression: sinogram-domain SIR-optimal virtual coils, SVD
//! compression, and streak-based coil removal.

use nalgebra::DMatrix;
use ndarray::{Array2, Array3, ArrayView2, ArrayView3, Axis};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fft::CenteredFft1d;
use crate::linalg::{adjoint, cholesky, eigh_desc, fix_column_phase, from_dmatrix, lower_inverse, mix_coils, ridge, to_dmatrix};
use crate::metrics;
use crate::types::{RadialKSpace, C64};

pub const DEFAULT_RHO_S: f64 = 0.5;
pub const DEFAULT_RHO_I: f64 = 0.75;
pub const DEFAULT_EPS_REL: f64 = 1e-6;
pub const REMOVAL_MEDIAN_FACTOR: f64 = 1.5;

/// Centered inverse FFT along readout. Output is `[N_sp, N_RO, N_c]`.
pub fn to_sinogram(y: &RadialKSpace) -> Array3<C64> {
    let (nro, nsp, nc) = y.data.dim();
    let fft = CenteredFft1d::new(nro);
    let mut out = Array3::zeros((nsp, nro, nc));
    let mut buf = vec![C64::new(0.0, 0.0); nro];
    for sp in 0..nsp {
        for c in 0..nc {
            for ro in 0..nro {
                buf[ro] = y.data[[ro, sp, c]];
            }
            fft.inverse(&mut buf);
            for ro in 0..nro {
                out[[sp, ro, c]] = buf[ro];
            }
        }
    }
    out
}

/// Inverse of [`to_sinogram`].
pub fn from_sinogram(sino: ArrayView3<'_, C64>, spoke_timestamps: Vec<f64>) -> Result<RadialKSpace> {
    let (nsp, nro, nc) = sino.dim();
    let fft = CenteredFft1d::new(nro);
    let mut data = Array3::zeros((nro, nsp, nc));
    let mut buf = vec![C64::new(0.0, 0.0); nro];
    for sp in 0..nsp {
        for c in 0..nc {
            for ro in 0..nro {
                buf[ro] = sino[[sp, ro, c]];
            }
            fft.forward(&mut buf);
            for ro in 0..nro {
                data[[ro, sp, c]] = buf[ro];
            }
        }
    }
    RadialKSpace::new(data, spoke_timestamps)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegionMasks {
    /// `[N_sp, N_RO]`
    pub signal_mask: Array2<bool>,
    pub interference_mask: Array2<bool>,
}

impl RegionMasks {
    pub fn signal_count(&self) -> usize {
        self.signal_mask.iter().filter(|&&b| b).count()
    }

    pub fn interference_count(&self) -> usize {
        self.interference_mask.iter().filter(|&&b| b).count()
    }
}

/// Projection position of sinogram column `j` as a fraction of the FOV.
pub fn projection_position(j: usize, n_readout: usize) -> f64 {
    (j as f64 - (n_readout / 2) as f64) / n_readout as f64
}

/// Central band `|r| <= rho_s/2` against peripheral band `|r| >= rho_i/2`,
/// identical for every spoke.
pub fn build_region_masks(n_spokes: usize, n_readout: usize, rho_s: f64, rho_i: f64) -> Result<RegionMasks> {
    if !(0.0 < rho_s && rho_s < rho_i && rho_i <= 1.0) {
        return Err(Error::OutOfRange(format!("need 0 < rho_s ({rho_s}) < rho_i ({rho_i}) <= 1")));
    }
    let cols: Vec<f64> = (0..n_readout).map(|j| projection_position(j, n_readout).abs()).collect();
    let signal = Array2::from_shape_fn((n_spokes, n_readout), |(_, j)| cols[j] <= rho_s / 2.0);
    let interf = Array2::from_shape_fn((n_spokes, n_readout), |(_, j)| cols[j] >= rho_i / 2.0);
    let masks = RegionMasks { signal_mask: signal, interference_mask: interf };
    if masks.signal_count() == 0 {
        return Err(Error::Empty("signal region".into()));
    }
    if masks.interference_count() == 0 {
        return Err(Error::Empty("interference region".into()));
    }
    Ok(masks)
}

fn masked_covariance(sino: ArrayView3<'_, C64>, mask: &Array2<bool>) -> Array2<C64> {
    let nc = sino.dim().2;
    let zero = || Array2::<C64>::zeros((nc, nc));
    // per-spoke partial sums in parallel, combined in spoke order so the
    // result does not depend on the thread count
    let partials: Vec<(Array2<C64>, usize)> = (0..sino.dim().0)
        .into_par_iter()
        .map(|sp| {
            let mut acc = zero();
            let mut n = 0usize;
            for (ro, &m) in mask.row(sp).iter().enumerate() {
                if !m {
                    continue;
                }
                n += 1;
                let v = sino.slice(ndarray::s![sp, ro, ..]);
                for i in 0..nc {
                    for j in 0..nc {
                        acc[[i, j]] += v[i] * v[j].conj();
                    }
                }
            }
            (acc, n)
        })
        .collect();
    let (sum, count) = partials.into_iter().fold((zero(), 0), |(a, n), (b, m)| (a + b, n + m));
    sum / C64::new(count.max(1) as f64, 0.0)
}

/// Mean outer products `A` (signal) and `B` (interference) of the coil vectors.
pub fn compute_covariances(sino: ArrayView3<'_, C64>, masks: &RegionMasks) -> Result<(Array2<C64>, Array2<C64>)> {
    let (nsp, nro, _) = sino.dim();
    if masks.signal_mask.dim() != (nsp, nro) || masks.interference_mask.dim() != (nsp, nro) {
        return Err(Error::Shape(format!("masks {:?} vs sinogram {:?}", masks.signal_mask.dim(), (nsp, nro))));
    }
    if masks.signal_count() == 0 || masks.interference_count() == 0 {
        return Err(Error::Empty("region mask".into()));
    }
    if sino.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::NonFinite("sinogram".into()));
    }
    Ok((masked_covariance(sino, &masks.signal_mask), masked_covariance(sino, &masks.interference_mask)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct VirtualCoilBasis {
    /// `[N_c, N_v]`
    pub weights: Array2<C64>,
    pub sir_values: Vec<f64>,
}

impl VirtualCoilBasis {
    pub fn n_virtual(&self) -> usize {
        self.weights.ncols()
    }
}

/// Rayleigh quotient `wᴴAw / wᴴBw`.
pub fn sir(w: &[C64], a: ArrayView2<'_, C64>, b: ArrayView2<'_, C64>) -> f64 {
    let quad = |m: ArrayView2<'_, C64>| {
        let mut acc = C64::new(0.0, 0.0);
        for i in 0..w.len() {
            for j in 0..w.len() {
                acc += w[i].conj() * m[[i, j]] * w[j];
            }
        }
        acc.re
    };
    quad(a) / quad(b)
}

/// Generalized eigenvectors of `A w = λ B̃ w` with `B̃ = B + eps tr(B)/N_c I`,
/// top `n_v` by descending `λ`.
pub fn solve_sir(a: ArrayView2<'_, C64>, b: ArrayView2<'_, C64>, n_v: usize, eps_rel: f64) -> Result<VirtualCoilBasis> {
    let nc = a.nrows();
    if a.dim() != (nc, nc) || b.dim() != (nc, nc) {
        return Err(Error::Shape(format!("A {:?}, B {:?}", a.dim(), b.dim())));
    }
    if n_v == 0 || n_v > nc {
        return Err(Error::OutOfRange(format!("n_v = {n_v} with {nc} coils")));
    }
    let bt = ridge(b, eps_rel);
    let l = cholesky(bt.view(), "regularized interference covariance")?;
    let li = lower_inverse(&l)?;
    let c = &li * to_dmatrix(a) * li.adjoint();
    let (vals, u) = eigh_desc(&c);
    let mut w: DMatrix<C64> = li.adjoint() * u.columns(0, n_v);
    fix_column_phase(&mut w);
    Ok(VirtualCoilBasis { weights: from_dmatrix(&w), sir_values: vals[..n_v].to_vec() })
}

/// Replaces each coil vector `v` with `Wᴴ v`.
pub fn apply_compression(y: &RadialKSpace, w: ArrayView2<'_, C64>) -> Result<RadialKSpace> {
    if w.nrows() != y.n_coils() {
        return Err(Error::Shape(format!("weights have {} rows, data has {} coils", w.nrows(), y.n_coils())));
    }
    mix_coils(y, adjoint(w).view())
}

/// SIR-optimal compression basis computed from the sinogram of `y`.
pub fn soc_basis(y: &RadialKSpace, n_v: usize, rho_s: f64, rho_i: f64, eps_rel: f64) -> Result<VirtualCoilBasis> {
    let sino = to_sinogram(y);
    let masks = build_region_masks(y.n_spokes(), y.n_readout(), rho_s, rho_i)?;
    let (a, b) = compute_covariances(sino.view(), &masks)?;
    solve_sir(a.view(), b.view(), n_v, eps_rel)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvdBasis {
    pub weights: Array2<C64>,
    pub singular_values: Vec<f64>,
    pub retained_energy: f64,
}

/// Top left singular vectors of the `[N_c, samples]` data matrix, from the
/// eigendecomposition of its Gram matrix.
pub fn svd_basis(y: &RadialKSpace, n_v: usize) -> Result<SvdBasis> {
    let nc = y.n_coils();
    if n_v == 0 || n_v > nc {
        return Err(Error::OutOfRange(format!("n_v = {n_v} with {nc} coils")));
    }
    let flat = y.data.view().into_shape_with_order((y.n_readout() * y.n_spokes(), nc)).map_err(|e| Error::Shape(e.to_string()))?;
    let gram = to_dmatrix(flat.t()) * to_dmatrix(flat.t()).adjoint();
    let (vals, mut u) = eigh_desc(&gram);
    fix_column_phase(&mut u);
    let vals: Vec<f64> = vals.into_iter().map(|v| v.max(0.0)).collect();
    let total: f64 = vals.iter().sum();
    let kept: f64 = vals[..n_v].iter().sum();
    Ok(SvdBasis {
        weights: from_dmatrix(&u.columns(0, n_v).into_owned()),
        singular_values: vals[..n_v].iter().map(|v| v.sqrt()).collect(),
        retained_energy: if total > 0.0 { (kept / total).min(1.0) } else { 1.0 },
    })
}

pub fn svd_compress(y: &RadialKSpace, n_v: usize) -> Result<(RadialKSpace, SvdBasis)> {
    let basis = svd_basis(y, n_v)?;
    Ok((apply_compression(y, basis.weights.view())?, basis))
}

#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct CoilRemoval {
    pub kept: Vec<usize>,
    pub sar_values: Vec<f64>,
    pub threshold: f64,
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// Drops coils whose image streak ratio exceeds `sar_threshold` (default
/// 1.5x the median), keeping at least `max(1, N_c/2)` coils.
pub fn coil_removal(per_coil_images: ArrayView3<'_, C64>, sar_threshold: Option<f64>) -> Result<CoilRemoval> {
    let nc = per_coil_images.dim().0;
    if nc == 0 {
        return Err(Error::Empty("no coil images".into()));
    }
    let sar_values = per_coil_images
        .axis_iter(Axis(0))
        .map(|img| metrics::sar(img.mapv(|z| z.norm()).view(), metrics::SAR_LOWPASS_FRAC))
        .collect::<Result<Vec<_>>>()?;
    let med = median(&sar_values);
    let threshold = sar_threshold.unwrap_or(REMOVAL_MEDIAN_FACTOR * med);
    let min_keep = (nc / 2).max(1);
    let select = |t: f64| (0..nc).filter(|&c| sar_values[c] <= t).collect::<Vec<_>>();
    let mut kept = select(threshold);
    if kept.len() < min_keep {
        kept = select(med);
    }
    if kept.len() < min_keep {
        let mut order: Vec<usize> = (0..nc).collect();
        order.sort_by(|&a, &b| sar_values[a].total_cmp(&sar_values[b]));
        kept = order[..min_keep].to_vec();
        kept.sort_unstable();
    }
    Ok(CoilRemoval { kept, sar_values, threshold })
}

/// Keeps only the listed coils.
pub fn select_coils(y: &RadialKSpace, kept: &[usize]) -> Result<RadialKSpace> {
    if let Some(&c) = kept.iter().find(|&&c| c >= y.n_coils()) {
        return Err(Error::OutOfRange(format!("coil {c} of {}", y.n_coils())));
    }
    RadialKSpace::new(y.data.select(Axis(2), kept), y.spoke_timestamps.clone())
}
