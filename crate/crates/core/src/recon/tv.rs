use ndarray::{Array3, Axis};

use crate::types::{CineImage, C64};

/// Inner dual iterations of the temporal TV prox.
pub const TV_INNER_ITERS: usize = 5;

/// Circular forward differences along time: `d[t] = x[t+1] - x[t]`.
pub fn temporal_differences(x: &Array3<C64>) -> Array3<C64> {
    let nt = x.len_of(Axis(0));
    let mut d = Array3::zeros(x.dim());
    for t in 0..nt {
        let next = x.index_axis(Axis(0), (t + 1) % nt);
        let cur = x.index_axis(Axis(0), t);
        d.index_axis_mut(Axis(0), t).assign(&(&next - &cur));
    }
    d
}

/// Adjoint of [`temporal_differences`]: `(D^H p)[t] = p[t-1] - p[t]`.
fn temporal_differences_adjoint(p: &Array3<C64>) -> Array3<C64> {
    let nt = p.len_of(Axis(0));
    let mut out = Array3::zeros(p.dim());
    for t in 0..nt {
        let prev = p.index_axis(Axis(0), (t + nt - 1) % nt);
        let cur = p.index_axis(Axis(0), t);
        out.index_axis_mut(Axis(0), t).assign(&(&prev - &cur));
    }
    out
}

/// `sum |x[t+1] - x[t]|` over all pixels, circular in `t`.
pub fn temporal_tv_norm(x: &CineImage) -> f64 {
    temporal_differences(&x.frames).iter().map(|z| z.norm()).sum()
}

/// Approximate prox of `tau * ||D_t x||_1` by projected gradient on the dual
/// (step 1/4, `n_inner` iterations from a zero dual).
pub fn temporal_tv_prox(x: &CineImage, tau: f64, n_inner: usize) -> CineImage {
    if tau <= 0.0 || x.n_phases() < 2 {
        return x.clone();
    }
    let mut p = Array3::<C64>::zeros(x.frames.dim());
    let mut u = x.frames.clone();
    for _ in 0..n_inner {
        let du = temporal_differences(&u);
        ndarray::Zip::from(&mut p).and(&du).for_each(|p, d| {
            let v = *p + d / (4.0 * tau);
            let m = v.norm();
            *p = if m > 1.0 { v / m } else { v };
        });
        let dhp = temporal_differences_adjoint(&p);
        ndarray::Zip::from(&mut u).and(&x.frames).and(&dhp).for_each(|u, x, d| *u = x - d * tau);
    }
    CineImage { frames: u }
}
