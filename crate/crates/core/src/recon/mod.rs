//! Multi-coil radial reconstruction: SENSE encoding, gridding, sensitivity
//! estimation, CG data consistency, iGRASP and unrolled reconstruction.

mod cg;
mod igrasp;
mod resnet;
mod tv;
mod unrolled;

pub use cg::{cg_solve_dc, CgOutput};
pub use igrasp::{igrasp_reconstruct, IgraspOptions, IgraspOutput};
pub use resnet::{make_random_weights, resnet_prox_infer, LayerSpec, ProxWeights, WeightsHeader};
pub use tv::{temporal_differences, temporal_tv_norm, temporal_tv_prox, TV_INNER_ITERS};
pub use unrolled::{unrolled_reconstruct, ProxKind, ProxSpec, UnrollDiagnostics, UnrolledOutput};

use ndarray::{Array2, Array3, ArrayView2, Axis};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::nufft::{NufftParams, NufftPlan};
use crate::preprocess::compute_dcf;
use crate::types::{BinnedKSpace, CineImage, DcfWeights, RadialKSpace, SensitivityMaps, Trajectory, C64};

/// Fraction of the k-space radius used for sensitivity estimation.
pub const SENS_CENTRAL_FRAC: f64 = 0.25;
/// Pixels with RSS below this fraction of the maximum get zero maps.
pub const SENS_RSS_FLOOR: f64 = 1e-3;

/// Per-phase SENSE encoding `y_t,c = NUFFT_t(S_c x_t)`, optionally weighted
/// by the square root of the density compensation.
#[derive(Debug, Clone)]
pub struct SenseOperator {
    maps: SensitivityMaps,
    plans: Vec<NufftPlan>,
    dcf: Vec<DcfWeights>,
    sqrt_w: Option<Vec<Vec<f64>>>,
}

impl SenseOperator {
    /// Unweighted operator over the given per-phase trajectories.
    pub fn new(maps: SensitivityMaps, trajs: &[&Trajectory], params: NufftParams) -> Result<Self> {
        let n = maps.matrix_size();
        let plans = trajs
            .par_iter()
            .map(|tr| NufftPlan::new(n, &tr.sample_coords(), params))
            .collect::<Result<Vec<_>>>()?;
        let dcf = trajs.iter().map(|tr| compute_dcf(tr)).collect::<Result<Vec<_>>>()?;
        Ok(SenseOperator { maps, plans, dcf, sqrt_w: None })
    }

    pub fn for_binned(maps: SensitivityMaps, b: &BinnedKSpace, params: NufftParams) -> Result<Self> {
        if b.n_coils() != maps.n_coils() {
            return Err(Error::Shape(format!("{} coil maps for {} data coils", maps.n_coils(), b.n_coils())));
        }
        let trajs: Vec<&Trajectory> = b.phases.iter().map(|p| &p.traj).collect();
        Self::new(maps, &trajs, params)
    }

    /// Switches to `A = W^{1/2} F S`, whose normal operator is close to the
    /// identity on well-sampled data.
    pub fn dcf_weighted(mut self) -> Self {
        self.sqrt_w = Some(self.dcf.iter().map(|d| d.flat().iter().map(|w| w.sqrt()).collect()).collect());
        self
    }

    pub fn is_weighted(&self) -> bool {
        self.sqrt_w.is_some()
    }

    pub fn maps(&self) -> &SensitivityMaps {
        &self.maps
    }

    pub fn dcf(&self, t: usize) -> &DcfWeights {
        &self.dcf[t]
    }

    pub fn n_phases(&self) -> usize {
        self.plans.len()
    }

    pub fn matrix_size(&self) -> usize {
        self.maps.matrix_size()
    }

    pub fn n_coils(&self) -> usize {
        self.maps.n_coils()
    }

    pub fn n_samples(&self, t: usize) -> usize {
        self.plans[t].n_samples()
    }

    fn check_phase(&self, t: usize) -> Result<()> {
        if t >= self.plans.len() {
            return Err(Error::OutOfRange(format!("phase {t} of {}", self.plans.len())));
        }
        Ok(())
    }

    /// Samples of phase `t` as `[coil, sample]`.
    pub fn forward_phase(&self, t: usize, x: ArrayView2<'_, C64>) -> Result<Array2<C64>> {
        self.check_phase(t)?;
        let n = self.matrix_size();
        if x.dim() != (n, n) {
            return Err(Error::Shape(format!("image {:?} for operator size {n}", x.dim())));
        }
        let plan = &self.plans[t];
        let mut out = Array2::zeros((self.n_coils(), plan.n_samples()));
        for (c, s) in self.maps.maps.outer_iter().enumerate() {
            let coil_img = &s * &x;
            let mut samples = plan.forward(coil_img.view())?;
            if let Some(w) = &self.sqrt_w {
                samples.iter_mut().zip(&w[t]).for_each(|(v, w)| *v *= *w);
            }
            out.row_mut(c).assign(&ndarray::ArrayView1::from(&samples));
        }
        Ok(out)
    }

    /// `sum_c conj(S_c) NUFFT_t^H (w_c y_c)`, with `w` the operator weighting.
    pub fn adjoint_phase(&self, t: usize, y: ArrayView2<'_, C64>) -> Result<Array2<C64>> {
        self.check_phase(t)?;
        let w = self.sqrt_w.as_ref().map(|w| w[t].as_slice());
        self.coil_combine(t, y, w)
    }

    fn coil_combine(&self, t: usize, y: ArrayView2<'_, C64>, w: Option<&[f64]>) -> Result<Array2<C64>> {
        let plan = &self.plans[t];
        if y.dim() != (self.n_coils(), plan.n_samples()) {
            return Err(Error::Shape(format!("data {:?} vs {} coils x {} samples", y.dim(), self.n_coils(), plan.n_samples())));
        }
        let n = self.matrix_size();
        let mut acc = Array2::<C64>::zeros((n, n));
        for (c, s) in self.maps.maps.outer_iter().enumerate() {
            let row = y.row(c);
            let img = match row.as_slice() {
                Some(sl) => plan.adjoint(sl, w)?,
                None => plan.adjoint(&row.to_vec(), w)?,
            };
            ndarray::Zip::from(&mut acc).and(&s).and(&img).for_each(|a, s, v| *a += s.conj() * v);
        }
        Ok(acc)
    }

    /// `A^H A x` for one phase.
    pub fn normal_phase(&self, t: usize, x: ArrayView2<'_, C64>) -> Result<Array2<C64>> {
        let y = self.forward_phase(t, x)?;
        self.adjoint_phase(t, y.view())
    }

    /// Raw per-phase samples `[coil, sample]` mapped into the operator's range
    /// (multiplied by `sqrt(w)` when weighted).
    pub fn prepare_phase(&self, t: usize, raw: &RadialKSpace) -> Result<Array2<C64>> {
        self.check_phase(t)?;
        let mut y = raw.coil_major();
        if y.dim() != (self.n_coils(), self.n_samples(t)) {
            return Err(Error::Shape(format!("phase {t} data {:?} vs operator", y.dim())));
        }
        if let Some(w) = &self.sqrt_w {
            for mut row in y.outer_iter_mut() {
                row.iter_mut().zip(&w[t]).for_each(|(v, w)| *v *= *w);
            }
        }
        Ok(y)
    }

    pub fn prepare(&self, b: &BinnedKSpace) -> Result<Vec<Array2<C64>>> {
        if b.n_phases() != self.n_phases() {
            return Err(Error::Shape(format!("{} phases of data for {} operator phases", b.n_phases(), self.n_phases())));
        }
        b.phases.par_iter().enumerate().map(|(t, p)| self.prepare_phase(t, &p.kspace)).collect()
    }

    pub fn forward(&self, x: &CineImage) -> Result<Vec<Array2<C64>>> {
        self.check_frames(x)?;
        x.frames.axis_iter(Axis(0)).into_par_iter().enumerate().map(|(t, f)| self.forward_phase(t, f)).collect()
    }

    pub fn adjoint(&self, y: &[Array2<C64>]) -> Result<CineImage> {
        if y.len() != self.n_phases() {
            return Err(Error::Shape(format!("{} phases of data for {} operator phases", y.len(), self.n_phases())));
        }
        let frames = y.par_iter().enumerate().map(|(t, yt)| self.adjoint_phase(t, yt.view())).collect::<Result<Vec<_>>>()?;
        Ok(stack(frames))
    }

    pub fn normal(&self, x: &CineImage) -> Result<CineImage> {
        self.check_frames(x)?;
        let frames = x
            .frames
            .axis_iter(Axis(0))
            .into_par_iter()
            .enumerate()
            .map(|(t, f)| self.normal_phase(t, f))
            .collect::<Result<Vec<_>>>()?;
        Ok(stack(frames))
    }

    fn check_frames(&self, x: &CineImage) -> Result<()> {
        if x.n_phases() != self.n_phases() || x.matrix_size() != self.matrix_size() {
            return Err(Error::Shape(format!(
                "cine {:?} for operator with {} phases of size {}",
                x.frames.dim(),
                self.n_phases(),
                self.matrix_size()
            )));
        }
        Ok(())
    }

    /// DCF-weighted coil-combined adjoint of raw samples of phase `t`.
    pub fn gridding_phase(&self, t: usize, raw: ArrayView2<'_, C64>) -> Result<Array2<C64>> {
        self.check_phase(t)?;
        self.coil_combine(t, raw, Some(self.dcf[t].flat().as_slice()))
    }
}

pub(crate) fn stack(frames: Vec<Array2<C64>>) -> CineImage {
    let n = frames.first().map_or(0, |f| f.nrows());
    let mut out = Array3::zeros((frames.len(), n, n));
    for (t, f) in frames.into_iter().enumerate() {
        out.index_axis_mut(Axis(0), t).assign(&f);
    }
    CineImage { frames: out }
}

/// Per-phase DCF-weighted SENSE adjoint.
pub fn gridding_recon(b: &BinnedKSpace, maps: &SensitivityMaps, params: NufftParams) -> Result<CineImage> {
    let op = SenseOperator::for_binned(maps.clone(), b, params)?;
    gridding_with(&op, b)
}

pub fn gridding_with(op: &SenseOperator, b: &BinnedKSpace) -> Result<CineImage> {
    let frames = b
        .phases
        .par_iter()
        .enumerate()
        .map(|(t, p)| op.gridding_phase(t, p.kspace.coil_major().view()))
        .collect::<Result<Vec<_>>>()?;
    Ok(stack(frames))
}

/// DCF-weighted single-coil adjoints of every coil, `[coil, y, x]`.
pub fn per_coil_gridding(y: &RadialKSpace, traj: &Trajectory, n: usize, params: NufftParams) -> Result<Array3<C64>> {
    let plan = NufftPlan::new(n, &traj.sample_coords(), params)?;
    let dcf = compute_dcf(traj)?.flat();
    let samples = y.coil_major();
    let imgs = samples
        .outer_iter()
        .into_par_iter()
        .map(|row| plan.adjoint(&row.to_vec(), Some(&dcf)))
        .collect::<Result<Vec<_>>>()?;
    let mut out = Array3::zeros((imgs.len(), n, n));
    for (c, img) in imgs.into_iter().enumerate() {
        out.index_axis_mut(Axis(0), c).assign(&img);
    }
    Ok(out)
}

/// Low-resolution sensitivities: Hann-tapered central k-space per coil,
/// divided by the root-sum-of-squares.
pub fn estimate_sensitivities(y: &RadialKSpace, traj: &Trajectory, n: usize, params: NufftParams) -> Result<SensitivityMaps> {
    if y.n_spokes() < 16 {
        return Err(Error::OutOfRange(format!("{} spokes, need at least 16", y.n_spokes())));
    }
    if y.n_spokes() != traj.n_spokes() || y.n_readout() != traj.n_readout() {
        return Err(Error::Shape("k-space and trajectory disagree".into()));
    }
    if y.data.iter().all(|z| z.norm() == 0.0) {
        return Err(Error::Empty("all-zero k-space".into()));
    }
    let cutoff = SENS_CENTRAL_FRAC * 0.5;
    let coords = traj.sample_coords();
    let dcf = compute_dcf(traj)?.flat();
    let keep: Vec<usize> = (0..coords.len()).filter(|&m| coords[m][0].hypot(coords[m][1]) < cutoff).collect();
    let sub: Vec<[f64; 2]> = keep.iter().map(|&m| coords[m]).collect();
    let taper: Vec<f64> = keep
        .iter()
        .map(|&m| {
            let r = coords[m][0].hypot(coords[m][1]);
            dcf[m] * 0.5 * (1.0 + (std::f64::consts::PI * r / cutoff).cos())
        })
        .collect();
    let plan = NufftPlan::new(n, &sub, params)?;
    let samples = y.coil_major();
    let imgs = samples
        .outer_iter()
        .into_par_iter()
        .map(|row| {
            let s: Vec<C64> = keep.iter().map(|&m| row[m]).collect();
            plan.adjoint(&s, Some(&taper))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut raw = Array3::zeros((imgs.len(), n, n));
    for (c, img) in imgs.into_iter().enumerate() {
        raw.index_axis_mut(Axis(0), c).assign(&img);
    }
    let rss = crate::types::rss(&raw);
    let floor = SENS_RSS_FLOOR * rss.iter().cloned().fold(0.0, f64::max);
    let mut maps = SensitivityMaps::normalized(raw);
    for mut coil in maps.maps.outer_iter_mut() {
        ndarray::Zip::from(&mut coil).and(&rss).for_each(|v, &r| {
            if r < floor {
                *v = C64::new(0.0, 0.0);
            }
        });
    }
    Ok(maps)
}

/// `|truth| * ||E(p)||`, where `E(p)` is the effective coil sensitivity seen
/// by the reconstruction after any linear coil mixing `M` (`[n_out, n_in]`)
/// of the simulated maps. Unit-RSS estimated maps absorb this shading into
/// the image, so it is the reference a SENSE reconstruction converges to.
pub fn shaded_reference(truth: &CineImage, true_maps: &SensitivityMaps, mixing: Option<ArrayView2<'_, C64>>) -> Result<ndarray::Array3<f64>> {
    let n = truth.matrix_size();
    if true_maps.matrix_size() != n {
        return Err(Error::Shape("maps and truth sizes differ".into()));
    }
    let shade = match mixing {
        None => true_maps.rss(),
        Some(m) => {
            if m.ncols() != true_maps.n_coils() {
                return Err(Error::Shape(format!("mixing has {} inputs for {} coils", m.ncols(), true_maps.n_coils())));
            }
            Array2::from_shape_fn((n, n), |(i, j)| {
                let s = true_maps.maps.slice(ndarray::s![.., i, j]);
                m.outer_iter().map(|row| row.iter().zip(s.iter()).map(|(a, b)| a * b).sum::<C64>().norm_sqr()).sum::<f64>().sqrt()
            })
        }
    };
    let mut out = truth.magnitude();
    for mut f in out.outer_iter_mut() {
        f *= &shade;
    }
    Ok(out)
}


pub(crate) fn samples_norm_sqr(y: &[Array2<C64>]) -> f64 {
    y.iter().flat_map(|a| a.iter()).map(|z| z.norm_sqr()).sum()
}
