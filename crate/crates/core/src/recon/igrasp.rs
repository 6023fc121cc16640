use ndarray::{Array2, Zip};
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use super::{samples_norm_sqr, temporal_tv_norm, temporal_tv_prox, SenseOperator, TV_INNER_ITERS};
use crate::error::{Error, Result};
use crate::types::{CineImage, C64};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IgraspOptions {
    /// Temporal TV weight relative to `max |A^H y|`.
    pub lambda_t_rel: f64,
    pub n_iter: usize,
    pub power_iters: usize,
    pub tv_inner: usize,
}

impl Default for IgraspOptions {
    fn default() -> Self {
        IgraspOptions { lambda_t_rel: 0.05, n_iter: 50, power_iters: 20, tv_inner: TV_INNER_ITERS }
    }
}

#[derive(Debug, Clone)]
pub struct IgraspOutput {
    pub image: CineImage,
    /// Objective of the accepted iterate, starting at the initialization.
    pub objective: Vec<f64>,
    pub lipschitz: f64,
    pub lambda_t: f64,
    pub restarts: usize,
}

/// Largest eigenvalue of `A^H A` by power iteration.
pub fn power_iteration(op: &SenseOperator, iters: usize, seed: u64) -> Result<f64> {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let n = op.matrix_size();
    let mut x = CineImage { frames: ndarray::Array3::from_shape_fn((op.n_phases(), n, n), |_| C64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)) };
    let mut est = 0.0;
    for _ in 0..iters.max(1) {
        let nx = x.norm();
        if nx == 0.0 {
            return Ok(0.0);
        }
        x.frames.mapv_inplace(|v| v / nx);
        let y = op.normal(&x)?;
        est = y.norm();
        x = y;
    }
    Ok(est)
}

fn combine(a: &[Array2<C64>], ca: f64, b: &[Array2<C64>], cb: f64, c: &[Array2<C64>], cc: f64) -> Vec<Array2<C64>> {
    a.iter()
        .zip(b)
        .zip(c)
        .map(|((a, b), c)| {
            let mut out = a * ca;
            Zip::from(&mut out).and(b).and(c).for_each(|o, b, c| *o += b * cb + c * cc);
            out
        })
        .collect()
}

fn combine_img(a: &CineImage, ca: f64, b: &CineImage, cb: f64, c: &CineImage, cc: f64) -> CineImage {
    let mut out = &a.frames * ca;
    Zip::from(&mut out).and(&b.frames).and(&c.frames).for_each(|o, b, c| *o += b * cb + c * cc);
    CineImage { frames: out }
}

fn residual(ax: &[Array2<C64>], y: &[Array2<C64>]) -> Vec<Array2<C64>> {
    ax.iter().zip(y).map(|(a, b)| a - b).collect()
}

/// Monotone FISTA on `1/2 sum_t ||A_t x_t - y_t||^2 + lambda_t ||D_t x||_1`,
/// started from `x0`. `y` is in the operator's range (see
/// [`SenseOperator::prepare`]).
pub fn igrasp_reconstruct(op: &SenseOperator, y: &[Array2<C64>], x0: &CineImage, opts: &IgraspOptions) -> Result<IgraspOutput> {
    if !(opts.lambda_t_rel >= 0.0) {
        return Err(Error::OutOfRange(format!("lambda_t_rel = {}", opts.lambda_t_rel)));
    }
    let aty = op.adjoint(y)?;
    let max_aty = aty.frames.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let lambda_t = opts.lambda_t_rel * max_aty;
    // small margin over the power-iteration estimate, which approaches L from below
    let lipschitz = 1.02 * power_iteration(op, opts.power_iters, 0x5eed)?;
    if !(lipschitz > 0.0) {
        return Err(Error::Empty("encoding operator is zero".into()));
    }
    let objective_of = |ax: &[Array2<C64>], x: &CineImage| {
        0.5 * samples_norm_sqr(&residual(ax, y)) + lambda_t * temporal_tv_norm(x)
    };

    let mut x = x0.clone();
    let mut ax = op.forward(&x)?;
    let mut f = objective_of(&ax, &x);
    if !f.is_finite() {
        return Err(Error::Diverged("initial objective is not finite".into()));
    }
    let (mut v, mut av) = (x.clone(), ax.clone());
    let mut t_k = 1.0f64;
    let mut objective = vec![f];
    let mut restarts = 0;
    let mut rejected_in_row = 0;
    for it in 0..opts.n_iter {
        let grad = op.adjoint(&residual(&av, y))?;
        let step = combine_img(&v, 1.0, &grad, -1.0 / lipschitz, &v, 0.0);
        let z = temporal_tv_prox(&step, lambda_t / lipschitz, opts.tv_inner);
        let az = op.forward(&z)?;
        let fz = objective_of(&az, &z);
        if !fz.is_finite() {
            return Err(Error::Diverged(format!("non-finite objective at iteration {it}")));
        }
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t_k * t_k).sqrt());
        let accepted = fz <= f;
        if accepted {
            let x_prev = std::mem::replace(&mut x, z);
            let ax_prev = std::mem::replace(&mut ax, az);
            f = fz;
            rejected_in_row = 0;
            // v = x + (t_k/t_next)(z - x) + ((t_k - 1)/t_next)(x - x_prev), with z = x
            let c = (t_k - 1.0) / t_next;
            v = combine_img(&x, 1.0 + c, &x_prev, -c, &x, 0.0);
            av = combine(&ax, 1.0 + c, &ax_prev, -c, &ax, 0.0);
            t_k = t_next;
        } else {
            rejected_in_row += 1;
            restarts += 1;
            log::debug!("igrasp iteration {it}: objective rose to {fz:.6e} from {f:.6e}, restarting momentum");
            if rejected_in_row >= 2 {
                log::debug!("igrasp stopped at iteration {it}: no descent after restart");
                objective.push(f);
                break;
            }
            v = x.clone();
            av = ax.clone();
            t_k = 1.0;
        }
        objective.push(f);
    }
    Ok(IgraspOutput { image: x, objective, lipschitz, lambda_t, restarts })
}
