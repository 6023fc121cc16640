//! Small dense complex linear algebra on coil-sized matrices.

use nalgebra::DMatrix;
use ndarray::{Array2, Array3, ArrayView2};

use crate::error::{Error, Result};
use crate::types::{RadialKSpace, C64};

pub fn to_dmatrix(a: ArrayView2<'_, C64>) -> DMatrix<C64> {
    let (r, c) = a.dim();
    DMatrix::from_fn(r, c, |i, j| a[[i, j]])
}

pub fn from_dmatrix(m: &DMatrix<C64>) -> Array2<C64> {
    Array2::from_shape_fn((m.nrows(), m.ncols()), |(i, j)| m[(i, j)])
}

pub fn trace(a: ArrayView2<'_, C64>) -> f64 {
    a.diag().iter().map(|z| z.re).sum()
}

/// `a + eps * tr(a) / n * I`.
pub fn ridge(a: ArrayView2<'_, C64>, eps_rel: f64) -> Array2<C64> {
    let n = a.nrows();
    let mut out = a.to_owned();
    let r = eps_rel * trace(a) / n as f64;
    for i in 0..n {
        out[[i, i]] += r;
    }
    out
}

/// Lower Cholesky factor of a Hermitian positive definite matrix.
pub fn cholesky(a: ArrayView2<'_, C64>, what: &str) -> Result<DMatrix<C64>> {
    let l = nalgebra::Cholesky::new(to_dmatrix(a))
        .map(|c| c.l())
        .ok_or_else(|| Error::NotPositiveDefinite(what.to_string()))?;
    // complex square roots never fail, so a negative pivot shows up as an
    // imaginary diagonal entry
    if (0..l.nrows()).any(|i| {
        let d = l[(i, i)];
        !(d.re > 0.0 && d.im.abs() <= 1e-8 * d.re && d.re.is_finite())
    }) {
        return Err(Error::NotPositiveDefinite(what.to_string()));
    }
    Ok(l)
}

/// Inverse of a lower-triangular matrix.
pub fn lower_inverse(l: &DMatrix<C64>) -> Result<DMatrix<C64>> {
    let n = l.nrows();
    l.solve_lower_triangular(&DMatrix::identity(n, n))
        .ok_or_else(|| Error::NotPositiveDefinite("singular triangular factor".into()))
}

/// Applies `M` to every coil vector: `out[ro, sp, :] = M * in[ro, sp, :]`.
/// `M` is `[n_out x n_in]`.
pub fn mix_coils(y: &RadialKSpace, m: ArrayView2<'_, C64>) -> Result<RadialKSpace> {
    let (nro, nsp, nc) = y.data.dim();
    let (n_out, n_in) = m.dim();
    if n_in != nc {
        return Err(Error::Shape(format!("coil matrix expects {n_in} coils, data has {nc}")));
    }
    let mut data = Array3::zeros((nro, nsp, n_out));
    for ro in 0..nro {
        for sp in 0..nsp {
            for o in 0..n_out {
                let mut acc = C64::new(0.0, 0.0);
                for c in 0..nc {
                    acc += m[[o, c]] * y.data[[ro, sp, c]];
                }
                data[[ro, sp, o]] = acc;
            }
        }
    }
    RadialKSpace::new(data, y.spoke_timestamps.clone())
}

/// Conjugate transpose.
pub fn adjoint(a: ArrayView2<'_, C64>) -> Array2<C64> {
    a.t().mapv(|z| z.conj())
}

/// Hermitian eigendecomposition sorted by descending eigenvalue. Columns of
/// the returned matrix are the eigenvectors.
pub fn eigh_desc(a: &DMatrix<C64>) -> (Vec<f64>, DMatrix<C64>) {
    // symmetrize against round-off before the solver sees it
    let h = (a + a.adjoint()) * C64::new(0.5, 0.0);
    let eig = nalgebra::SymmetricEigen::new(h);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let vals = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vecs = DMatrix::from_fn(a.nrows(), order.len(), |r, c| eig.eigenvectors[(r, order[c])]);
    (vals, vecs)
}

/// Rotates each column so that its largest-magnitude entry is real positive.
pub fn fix_column_phase(m: &mut DMatrix<C64>) {
    for mut col in m.column_iter_mut() {
        let Some((_, big)) = col.iter().enumerate().max_by(|a, b| a.1.norm().total_cmp(&b.1.norm())) else {
            continue;
        };
        let n = big.norm();
        if n > 0.0 {
            let rot = big.conj() / n;
            col.iter_mut().for_each(|z| *z *= rot);
        }
    }
}
