use std::path::PathBuf;

use ndarray::{Array2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{cg_solve_dc, resnet_prox_infer, stack, temporal_tv_prox, ProxWeights, SenseOperator, TV_INNER_ITERS};
use crate::error::{Error, Result};
use crate::types::{CineImage, C64};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProxKind {
    Identity,
    /// Temporal TV with threshold `tau_rel * max |x0|`.
    TemporalTv { tau_rel: f64 },
    Resnet { weight_file: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProxSpec {
    pub prox: ProxKind,
    pub unrolls: usize,
    pub lambda: f64,
    pub n_cg: usize,
}

impl Default for ProxSpec {
    fn default() -> Self {
        ProxSpec { prox: ProxKind::TemporalTv { tau_rel: 0.02 }, unrolls: 6, lambda: 2.0, n_cg: 10 }
    }
}

impl ProxSpec {
    pub fn validate(&self) -> Result<()> {
        if let ProxKind::TemporalTv { tau_rel } = self.prox {
            if !(tau_rel >= 0.0) {
                return Err(Error::OutOfRange(format!("tau_rel = {tau_rel} must be >= 0")));
            }
        }
        if !(self.lambda > 0.0) {
            return Err(Error::OutOfRange(format!("lambda = {} must be > 0", self.lambda)));
        }
        if self.unrolls == 0 || self.n_cg == 0 {
            return Err(Error::OutOfRange("unrolls and n_cg must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UnrollDiagnostics {
    pub unroll: usize,
    /// `||A z_k - y||` summed over phases.
    pub dc_residual_prox: f64,
    /// `||A x_{k+1} - y||`.
    pub dc_residual: f64,
    /// `||x_{k+1} - x_k|| / ||x_k||`.
    pub change: f64,
    /// Largest final relative CG residual over phases.
    pub cg_residual: f64,
}

#[derive(Debug, Clone)]
pub struct UnrolledOutput {
    pub image: CineImage,
    pub diagnostics: Vec<UnrollDiagnostics>,
}

enum LoadedProx {
    Identity,
    Tv(f64),
    Resnet(ProxWeights),
}

impl LoadedProx {
    fn apply(&self, x: &CineImage, k_over_k: f64) -> Result<CineImage> {
        match self {
            LoadedProx::Identity => Ok(x.clone()),
            LoadedProx::Tv(tau) => Ok(temporal_tv_prox(x, *tau, TV_INNER_ITERS)),
            LoadedProx::Resnet(w) => resnet_prox_infer(x, w, k_over_k),
        }
    }
}

/// `K` alternations of `z_k = prox(x_k, k/K)` and the data-consistency CG
/// solve `x_{k+1} = argmin ||Ax - y||^2 + lambda ||x - z_k||^2`, from `x0`.
pub fn unrolled_reconstruct(op: &SenseOperator, y: &[Array2<C64>], x0: &CineImage, spec: &ProxSpec) -> Result<UnrolledOutput> {
    spec.validate()?;
    if y.len() != op.n_phases() {
        return Err(Error::Shape(format!("{} phases of data for {} operator phases", y.len(), op.n_phases())));
    }
    let prox = match &spec.prox {
        ProxKind::Identity => LoadedProx::Identity,
        ProxKind::TemporalTv { tau_rel } => {
            LoadedProx::Tv(tau_rel * x0.frames.iter().map(|z| z.norm()).fold(0.0, f64::max))
        }
        ProxKind::Resnet { weight_file } => LoadedProx::Resnet(ProxWeights::read(weight_file)?),
    };
    let mut x = x0.clone();
    let mut diagnostics = Vec::with_capacity(spec.unrolls);
    for k in 0..spec.unrolls {
        let z = prox.apply(&x, k as f64 / spec.unrolls as f64)?;
        let outs = z
            .frames
            .axis_iter(Axis(0))
            .into_par_iter()
            .enumerate()
            .map(|(t, zt)| cg_solve_dc(op, t, y[t].view(), zt, spec.lambda, spec.n_cg))
            .collect::<Result<Vec<_>>>()?;
        let dc_prox: f64 = outs.iter().map(|o| o.objective[0]).sum::<f64>().sqrt();
        let dc: f64 = outs.iter().map(|o| o.dc_residual_sqr).sum::<f64>().sqrt();
        let cg_residual = outs.iter().filter_map(|o| o.residuals.last().copied()).fold(0.0, f64::max);
        let next = stack(outs.into_iter().map(|o| o.x).collect());
        let xn = x.norm();
        let change = (&next.frames - &x.frames).iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt() / if xn > 0.0 { xn } else { 1.0 };
        log::debug!("unroll {k}: dc {dc_prox:.4e} -> {dc:.4e}, change {change:.3e}, cg residual {cg_residual:.2e}");
        diagnostics.push(UnrollDiagnostics { unroll: k, dc_residual_prox: dc_prox, dc_residual: dc, change, cg_residual });
        x = next;
    }
    Ok(UnrolledOutput { image: x, diagnostics })
}

#[cfg(test)]
mod tests {
    use super::super::tests::small_operator;
    use super::*;
    use crate::nufft::rel_l2;
    use ndarray::Array3;
    use rand::{Rng, SeedableRng};

    #[test]
    fn identity_single_unroll_is_one_cg_solve() {
        let (op, _) = small_operator(16, 8, 2, 2);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        let y: Vec<Array2<C64>> = (0..2).map(|t| Array2::from_shape_fn((2, op.n_samples(t)), |_| C64::new(rng.gen(), rng.gen()))).collect();
        let x0 = op.adjoint(&y).unwrap();
        let spec = ProxSpec { prox: ProxKind::Identity, unrolls: 1, lambda: 0.2, n_cg: 7 };
        let out = unrolled_reconstruct(&op, &y, &x0, &spec).unwrap();
        for t in 0..2 {
            let direct = cg_solve_dc(&op, t, y[t].view(), x0.frames.index_axis(Axis(0), t), 0.2, 7).unwrap();
            let got = out.image.frames.index_axis(Axis(0), t).to_owned();
            assert!(rel_l2(got.as_slice().unwrap(), direct.x.as_slice().unwrap()) < 1e-14);
        }
    }

    #[test]
    fn dc_residual_never_rises_within_an_unroll() {
        let (op, _) = small_operator(16, 8, 2, 3);
        let op = op.dcf_weighted();
        let truth = CineImage { frames: Array3::from_shape_fn((3, 16, 16), |(t, i, j)| C64::new(((i + j + t) % 5) as f64, 0.0)) };
        let y = op.forward(&truth).unwrap();
        let x0 = op.adjoint(&y).unwrap();
        let out = unrolled_reconstruct(&op, &y, &x0, &ProxSpec { n_cg: 4, ..Default::default() }).unwrap();
        assert_eq!(out.diagnostics.len(), 6);
        assert!(out.diagnostics.iter().all(|d| d.dc_residual <= d.dc_residual_prox * (1.0 + 1e-9)));
    }

    #[test]
    fn spec_validation() {
        let ok = ProxSpec::default();
        assert!(ok.validate().is_ok());
        assert!(ProxSpec { lambda: 0.0, ..ok.clone() }.validate().is_err());
        assert!(ProxSpec { unrolls: 0, ..ok.clone() }.validate().is_err());
        assert!(ProxSpec { prox: ProxKind::TemporalTv { tau_rel: -1.0 }, ..ok }.validate().is_err());
    }
}
