//! Acquisition-side preprocessing: trajectory generation, noise
//! prewhitening, cardiac binning, respiratory gating, spoke selection,
//! density compensation and spoke-wise phase correction.

use std::f64::consts::PI;

use ndarray::{s, Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::linalg;
use crate::types::{BinnedKSpace, DcfWeights, PhaseBin, PhysioTrace, RadialKSpace, Trajectory, C64};

/// `180 * 2 / (1 + sqrt 5)` degrees.
pub const GOLDEN_ANGLE_DEG: f64 = 111.246_117_974_981_07;

/// Relative ridge added to the noise covariance before factorization.
pub const NOISE_RIDGE: f64 = 1e-9;

/// Radial trajectory with spoke `i` at angle `(i * increment) mod 180` degrees
/// and readout samples `k_r = (j - n/2) / n`.
pub fn make_trajectory(n_spokes: usize, n_readout: usize, angle_increment_deg: f64) -> Result<Trajectory> {
    if n_spokes == 0 || n_readout == 0 {
        return Err(Error::OutOfRange("trajectory needs at least one spoke and one readout sample".into()));
    }
    let half = (n_readout / 2) as f64;
    let mut coords = ndarray::Array3::zeros((n_spokes, n_readout, 2));
    for i in 0..n_spokes {
        let theta = spoke_angle_deg(i, angle_increment_deg).to_radians();
        let (sin, cos) = theta.sin_cos();
        for j in 0..n_readout {
            let kr = (j as f64 - half) / n_readout as f64;
            coords[[i, j, 0]] = kr * sin;
            coords[[i, j, 1]] = kr * cos;
        }
    }
    Ok(Trajectory { coords, angle_increment_deg })
}

pub fn spoke_angle_deg(i: usize, angle_increment_deg: f64) -> f64 {
    (i as f64 * angle_increment_deg).rem_euclid(180.0)
}

/// Sample noise covariance `(1/M) sum n n^H` of `[M x N_c]` noise samples.
pub fn estimate_noise_cov(noise: ArrayView2<'_, C64>) -> Result<Array2<C64>> {
    let (m, nc) = noise.dim();
    if m == 0 || nc == 0 {
        return Err(Error::Empty("noise scan".into()));
    }
    if noise.iter().any(|z| !(z.re.is_finite() && z.im.is_finite())) {
        return Err(Error::NonFinite("noise samples".into()));
    }
    if m <= nc {
        log::warn!("noise covariance from {m} samples for {nc} coils is ill-conditioned");
    }
    let mut psi = Array2::<C64>::zeros((nc, nc));
    for row in noise.outer_iter() {
        for i in 0..nc {
            for j in 0..nc {
                psi[[i, j]] += row[i] * row[j].conj();
            }
        }
    }
    psi.mapv_inplace(|z| z / m as f64);
    Ok(psi)
}

/// Whitening matrix `L^-1` with `Psi + ridge = L L^H`.
pub fn whitening_matrix(psi: ArrayView2<'_, C64>) -> Result<Array2<C64>> {
    let (r, c) = psi.dim();
    if r != c || r == 0 {
        return Err(Error::Shape(format!("noise covariance must be square, got {r}x{c}")));
    }
    let reg = linalg::ridge(psi, NOISE_RIDGE);
    let l = linalg::cholesky(reg.view(), "noise covariance")?;
    Ok(linalg::from_dmatrix(&linalg::lower_inverse(&l)?))
}

/// Replaces every coil vector `v` by `L^-1 v`.
pub fn prewhiten(y: &RadialKSpace, psi: ArrayView2<'_, C64>) -> Result<RadialKSpace> {
    if psi.nrows() != y.n_coils() {
        return Err(Error::Shape(format!("{}-coil covariance for {}-coil data", psi.nrows(), y.n_coils())));
    }
    let w = whitening_matrix(psi)?;
    linalg::mix_coils(y, w.view())
}

/// Cardiac phase index sets. Spoke at time `s` inside RR interval
/// `[r_j, r_j+1)` goes to bin `min(floor(T * phi), T - 1)`; spokes outside the
/// triggered range are dropped.
pub fn bin_cardiac(trace: &PhysioTrace, spoke_timestamps: &[f64], n_phases: usize) -> Result<Vec<Vec<usize>>> {
    if n_phases == 0 {
        return Err(Error::OutOfRange("number of cardiac phases must be >= 1".into()));
    }
    let tr = &trace.cardiac_triggers;
    if tr.len() < 2 {
        return Err(Error::TooFewTriggers(tr.len()));
    }
    let mut bins = vec![Vec::new(); n_phases];
    for (i, &s) in spoke_timestamps.iter().enumerate() {
        let Some(j) = trace.rr_interval(s) else { continue };
        let phi = (s - tr[j]) / (tr[j + 1] - tr[j]);
        // a spoke on a bin edge up to round-off belongs to the later bin
        let t = ((n_phases as f64 * phi + 1e-9).floor() as usize).min(n_phases - 1);
        bins[t].push(i);
    }
    Ok(bins)
}

/// Respiratory acceptance mask.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GatingMask {
    pub keep: Vec<bool>,
    pub threshold_value: f64,
    pub keep_fraction: f64,
}

impl GatingMask {
    pub fn all(n: usize) -> Self {
        GatingMask { keep: vec![true; n], threshold_value: f64::INFINITY, keep_fraction: 1.0 }
    }

    pub fn n_kept(&self) -> usize {
        self.keep.iter().filter(|&&k| k).count()
    }
}

/// Keeps spokes whose interpolated bellows value is at or below the
/// `keep_fraction` quantile (end-expiration).
pub fn gate_respiratory(trace: &PhysioTrace, spoke_timestamps: &[f64], keep_fraction: f64) -> Result<GatingMask> {
    if spoke_timestamps.is_empty() {
        return Err(Error::Empty("spoke list".into()));
    }
    if !(keep_fraction > 0.0 && keep_fraction <= 1.0) {
        return Err(Error::OutOfRange(format!("keep_fraction {keep_fraction} not in (0, 1]")));
    }
    let surrogate: Vec<f64> = spoke_timestamps.iter().map(|&t| trace.bellows_at(t)).collect();
    let mut sorted = surrogate.clone();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let idx = ((keep_fraction * n as f64).ceil() as usize).clamp(1, n) - 1;
    let threshold_value = sorted[idx];
    Ok(GatingMask { keep: surrogate.iter().map(|&v| v <= threshold_value).collect(), threshold_value, keep_fraction })
}

/// Builds per-phase k-space from gated spokes. With `undersample_r > 1` each
/// phase keeps the first `floor(n_t / R)` of its gated spokes in time order.
pub fn select_spokes(
    y: &RadialKSpace,
    traj: &Trajectory,
    bins: &[Vec<usize>],
    mask: &GatingMask,
    undersample_r: f64,
) -> Result<BinnedKSpace> {
    let nsp = y.n_spokes();
    if traj.n_spokes() != nsp || mask.keep.len() != nsp {
        return Err(Error::Shape(format!(
            "{nsp} spokes in data, {} in trajectory, {} in gating mask",
            traj.n_spokes(),
            mask.keep.len()
        )));
    }
    if !(undersample_r >= 1.0) {
        return Err(Error::OutOfRange(format!("undersampling factor {undersample_r} < 1")));
    }
    let mut phases = Vec::with_capacity(bins.len());
    let mut empty = Vec::new();
    for (t, bin) in bins.iter().enumerate() {
        let mut gated: Vec<usize> = bin.iter().copied().filter(|&i| i < nsp && mask.keep[i]).collect();
        gated.sort_unstable();
        let n_keep = (gated.len() as f64 / undersample_r).floor() as usize;
        gated.truncate(n_keep);
        if gated.is_empty() {
            empty.push(t);
        }
        phases.push(PhaseBin { kspace: y.select_spokes(&gated), traj: traj.select_spokes(&gated), indices: gated });
    }
    if !empty.is_empty() {
        return Err(Error::EmptyPhases { phases: empty });
    }
    Ok(BinnedKSpace { phases, n_source_spokes: nsp })
}

/// Analytic radial density compensation
/// `w = |k_r| * dk * pi / N_sp`, with the centre sample given
/// `pi (dk/2)^2 / N_sp`.
pub fn compute_dcf(traj: &Trajectory) -> Result<DcfWeights> {
    let kr = traj.radial_positions()?;
    let (nsp, nro) = kr.dim();
    if nsp == 0 || nro == 0 {
        return Err(Error::Empty("trajectory".into()));
    }
    let dk = if nro > 1 {
        let row = kr.row(0);
        let (lo, hi) = row.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        (hi - lo) / (nro - 1) as f64
    } else {
        1.0
    };
    let centre = PI * (dk / 2.0).powi(2) / nsp as f64;
    let weights = kr.mapv(|k| {
        if k.abs() < 0.5 * dk {
            centre
        } else {
            k.abs() * dk * PI / nsp as f64
        }
    });
    Ok(DcfWeights { weights })
}

/// Index of the sample closest to `k = 0` on each spoke.
pub fn centre_index(traj: &Trajectory, sp: usize) -> usize {
    (0..traj.n_readout())
        .min_by(|&a, &b| {
            let ra = traj.coords[[sp, a, 0]].hypot(traj.coords[[sp, a, 1]]);
            let rb = traj.coords[[sp, b, 0]].hypot(traj.coords[[sp, b, 1]]);
            ra.total_cmp(&rb)
        })
        .unwrap_or(0)
}

/// Output of [`phase_correct_spokes`].
#[derive(Debug, Clone)]
pub struct PhaseCorrected {
    pub binned: BinnedKSpace,
    /// `(phase, spoke)` pairs left untouched because their centre was zero.
    pub flagged: Vec<(usize, usize)>,
}

/// Removes the spoke-to-spoke phase of the k-space centre. Each spoke is
/// rotated by `-arg(u^H y(0))`, where `u` is the dominant eigenvector of the
/// centre-sample coil covariance pooled over all phases (largest entry real
/// positive). `u` does not depend on the spoke phases, so the output is the
/// same whatever phase each input spoke carried.
pub fn phase_correct_spokes(b: &BinnedKSpace) -> Result<PhaseCorrected> {
    let nc = b.n_coils();
    let mut cov = nalgebra::DMatrix::<C64>::zeros(nc, nc);
    let mut count = 0usize;
    for ph in &b.phases {
        for sp in 0..ph.indices.len() {
            let ci = centre_index(&ph.traj, sp);
            let v = nalgebra::DVector::from_iterator(nc, (0..nc).map(|c| ph.kspace.data[[ci, sp, c]]));
            cov += &v * v.adjoint();
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::Empty("binned k-space has no spokes".into()));
    }
    let (_, mut vecs) = linalg::eigh_desc(&cov);
    linalg::fix_column_phase(&mut vecs);
    let reference: Vec<C64> = vecs.column(0).iter().copied().collect();

    let mut out = b.clone();
    let mut flagged = Vec::new();
    for (t, ph) in out.phases.iter_mut().enumerate() {
        for sp in 0..ph.indices.len() {
            let ci = centre_index(&ph.traj, sp);
            let c: C64 = (0..nc).map(|k| reference[k].conj() * ph.kspace.data[[ci, sp, k]]).sum();
            if c.norm() == 0.0 {
                flagged.push((t, sp));
                continue;
            }
            let rot = c.conj() / c.norm();
            ph.kspace.data.slice_mut(s![.., sp, ..]).mapv_inplace(|z| z * rot);
        }
    }
    if !flagged.is_empty() {
        log::warn!("{} spokes with zero centre sample left uncorrected", flagged.len());
    }
    Ok(PhaseCorrected { binned: out, flagged })
}
