//! Dynamic multi-coil digital phantom: a beating disc inside an elliptical
//! body, a bright peripheral disc that produces streaks, rigid respiratory
//! shift, synthetic ECG/bellows traces and exact radial sampling.

use std::f64::consts::PI;

use ndarray::{Array2, Array3, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::nufft;
use crate::types::{CineImage, PhysioTrace, RadialKSpace, SensitivityMaps, Trajectory, Validate, Violation, C64};

/// Bellows sampling rate in Hz.
pub const BELLOWS_RATE: f64 = 50.0;

const SUPERSAMPLE: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Disc {
    /// `(y, x)` offset from the image centre in pixels.
    pub center: [f64; 2],
    pub radius: f64,
    pub intensity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhantomConfig {
    pub matrix_size: usize,
    /// Readout samples per spoke; 0 means `matrix_size`.
    pub n_readout: usize,
    pub n_coils: usize,
    /// `(y, x)` offset of the heart from the image centre, pixels.
    pub heart_center: [f64; 2],
    /// `(r_min, r_max)` in pixels.
    pub heart_radius_range: [f64; 2],
    pub heart_intensity: f64,
    /// Intensity is a multiple of the body intensity (1.0).
    pub peripheral_source: Disc,
    /// `(y, x)` semi-axes of the body ellipse, pixels.
    pub ellipse_axes: [f64; 2],
    pub rr_mean: f64,
    pub rr_jitter: f64,
    pub resp_period: f64,
    /// Peak bulk shift in pixels.
    pub resp_depth: f64,
    /// Standard deviation of the real and of the imaginary noise part.
    pub noise_sigma: f64,
    /// Correlation coefficient between every pair of receive channels.
    pub coil_noise_correlation: f64,
    /// Time between spokes, seconds.
    pub tr: f64,
    pub duration: f64,
}

impl PhantomConfig {
    /// Geometry scaled to an `n x n` matrix.
    pub fn for_size(n: usize) -> Self {
        let f = n as f64;
        PhantomConfig {
            matrix_size: n,
            n_readout: 0,
            n_coils: 8,
            heart_center: [-0.06 * f, 0.04 * f],
            heart_radius_range: [0.07 * f, 0.13 * f],
            heart_intensity: 2.0,
            peripheral_source: Disc { center: [0.22 * f, -0.33 * f], radius: 0.045 * f, intensity: 10.0 },
            ellipse_axes: [0.36 * f, 0.44 * f],
            rr_mean: 1.0,
            rr_jitter: 0.05,
            resp_period: 4.0,
            resp_depth: 0.06 * f,
            noise_sigma: 0.5,
            coil_noise_correlation: 0.2,
            tr: 0.003,
            duration: 12.0,
        }
    }

    pub fn readout_len(&self) -> usize {
        if self.n_readout == 0 {
            self.matrix_size
        } else {
            self.n_readout
        }
    }

    pub fn n_spokes(&self) -> usize {
        (self.duration / self.tr + 1e-9).floor() as usize
    }
}

impl Default for PhantomConfig {
    fn default() -> Self {
        PhantomConfig::for_size(64)
    }
}

impl Validate for PhantomConfig {
    fn validate(&self) -> std::result::Result<(), Violation> {
        let half = self.matrix_size as f64 / 2.0;
        let [rmin, rmax] = self.heart_radius_range;
        let bad = |path: &str, rule| Err(Violation::new(path, rule));
        if self.matrix_size < 2 {
            return bad("matrix_size", "matrix_size >= 2");
        }
        if self.n_coils == 0 {
            return bad("n_coils", "n_coils >= 1");
        }
        if !(rmin >= 0.0 && rmin < rmax && rmax < half) {
            return bad("heart_radius_range", "r_min < r_max < N/2");
        }
        if !(self.noise_sigma >= 0.0) {
            return bad("noise_sigma", "noise_sigma >= 0");
        }
        if !(self.tr > 0.0) {
            return bad("tr", "tr > 0");
        }
        if !(self.duration > self.rr_mean && self.rr_mean > 0.0) {
            return bad("duration", "duration > rr_mean > 0");
        }
        if !(self.rr_jitter >= 0.0 && self.rr_jitter < self.rr_mean) {
            return bad("rr_jitter", "0 <= rr_jitter < rr_mean");
        }
        if !(self.resp_period > 0.0) {
            return bad("resp_period", "resp_period > 0");
        }
        if !(0.0..1.0).contains(&self.coil_noise_correlation) {
            return bad("coil_noise_correlation", "correlation in [0, 1)");
        }
        Ok(())
    }
}

/// Heart radius at cardiac phase `phi`: maximal at 0, minimal at 0.5.
pub fn heart_radius(phi: f64, cfg: &PhantomConfig) -> f64 {
    let [rmin, rmax] = cfg.heart_radius_range;
    rmax - (rmax - rmin) * (1.0 - (2.0 * PI * phi).cos()) / 2.0
}

/// Rigid vertical shift in pixels for a bellows value in `[-1, 1]`.
pub fn resp_displacement(bellows: f64, cfg: &PhantomConfig) -> f64 {
    cfg.resp_depth * (bellows + 1.0) / 2.0
}

fn inside_ellipse(y: f64, x: f64, ay: f64, ax: f64) -> bool {
    (y / ay).powi(2) + (x / ax).powi(2) <= 1.0
}

/// Analytic scene, averaged over `4 x 4` sub-pixel samples.
pub fn make_phantom_frame(cardiac_phase: f64, resp_displacement: f64, cfg: &PhantomConfig) -> Array2<f64> {
    let n = cfg.matrix_size;
    let half = (n / 2) as f64;
    let r_heart = heart_radius(cardiac_phase, cfg);
    let src = cfg.peripheral_source;
    let [ay, ax] = cfg.ellipse_axes;
    let sub = SUPERSAMPLE as f64;
    Array2::from_shape_fn((n, n), |(i, j)| {
        let mut acc = 0.0;
        for a in 0..SUPERSAMPLE {
            for b in 0..SUPERSAMPLE {
                let y = i as f64 - half + (a as f64 + 0.5) / sub - 0.5 - resp_displacement;
                let x = j as f64 - half + (b as f64 + 0.5) / sub - 0.5;
                let mut v = 0.0;
                if inside_ellipse(y, x, ay, ax) {
                    v = 1.0;
                }
                if (y - cfg.heart_center[0]).hypot(x - cfg.heart_center[1]) <= r_heart {
                    v = cfg.heart_intensity;
                }
                if (y - src.center[0]).hypot(x - src.center[1]) <= src.radius {
                    v = src.intensity;
                }
                acc += v;
            }
        }
        acc / (sub * sub)
    })
}

/// Un-normalized Gaussian coil profiles with linear phase ramps, centred on a
/// circle of radius `0.6 N / 2`.
pub fn simulate_coils_raw(n_coils: usize, n: usize) -> Array3<C64> {
    let f = n as f64;
    let half = (n / 2) as f64;
    let width = 0.25 * f;
    let ring = 0.6 * f / 2.0;
    let mut maps = Array3::zeros((n_coils, n, n));
    for c in 0..n_coils {
        let ang = 2.0 * PI * c as f64 / n_coils as f64;
        let (cy, cx) = (ring * ang.sin(), ring * ang.cos());
        // quarter-turn of phase across the field of view along the coil axis
        let slope = 0.5 * PI / f;
        for i in 0..n {
            for j in 0..n {
                let (y, x) = (i as f64 - half, j as f64 - half);
                let d2 = (y - cy).powi(2) + (x - cx).powi(2);
                let mag = (-d2 / (2.0 * width * width)).exp();
                let phase = slope * (y * ang.sin() + x * ang.cos()) + ang;
                maps[[c, i, j]] = C64::from_polar(mag, phase);
            }
        }
    }
    maps
}

pub fn simulate_coils(n_coils: usize, n: usize) -> Result<SensitivityMaps> {
    if n_coils == 0 || n == 0 {
        return Err(Error::OutOfRange("coil count and matrix size must be >= 1".into()));
    }
    Ok(SensitivityMaps::normalized(simulate_coils_raw(n_coils, n)))
}

/// Cardiac triggers at cumulative RR intervals `rr_mean + jitter * u`,
/// `u ~ U[-1, 1]` from a seeded generator, and a unit sinusoidal bellows
/// sampled at 50 Hz.
pub fn synth_physio(cfg: &PhantomConfig, seed: u64) -> Result<PhysioTrace> {
    if !(cfg.duration > cfg.rr_mean && cfg.rr_mean > 0.0) {
        return Err(Error::OutOfRange(format!("duration {} must exceed rr_mean {}", cfg.duration, cfg.rr_mean)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::MAX);
    let mut triggers = Vec::new();
    let mut t = 0.0;
    while t < cfg.duration {
        triggers.push(t);
        let u: f64 = rng.gen_range(-1.0..=1.0);
        t += cfg.rr_mean + cfg.rr_jitter * u;
    }
    let n_bellows = (cfg.duration * BELLOWS_RATE).floor() as usize + 1;
    let bellows_samples =
        (0..n_bellows).map(|i| (2.0 * PI * (i as f64 / BELLOWS_RATE) / cfg.resp_period).sin()).collect();
    Ok(PhysioTrace { cardiac_triggers: triggers, bellows_samples, bellows_rate: BELLOWS_RATE, duration: cfg.duration })
}

/// Lower Cholesky factor of the channel noise correlation matrix.
fn noise_mixing(cfg: &PhantomConfig) -> Result<Array2<C64>> {
    let nc = cfg.n_coils;
    let rho = cfg.coil_noise_correlation;
    let corr = Array2::from_shape_fn((nc, nc), |(i, j)| C64::new(if i == j { 1.0 } else { rho }, 0.0));
    Ok(linalg::from_dmatrix(&linalg::cholesky(corr.view(), "coil noise correlation")?))
}

fn correlated_noise(rng: &mut ChaCha8Rng, mix: ArrayView2<'_, C64>, sigma: f64, out: &mut [C64]) {
    let g = Normal::new(0.0, 1.0).expect("unit normal");
    let z: Vec<C64> = (0..out.len()).map(|_| C64::new(g.sample(rng), g.sample(rng)) * sigma).collect();
    for (i, o) in out.iter_mut().enumerate() {
        *o = (0..=i).map(|j| mix[[i, j]] * z[j]).sum();
    }
}

/// `m` noise-only coil vectors with the configured channel correlation.
pub fn simulate_noise_scan(cfg: &PhantomConfig, m: usize, seed: u64) -> Result<Array2<C64>> {
    let mix = noise_mixing(cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::MAX - 1);
    let mut out = Array2::zeros((m, cfg.n_coils));
    let mut buf = vec![C64::new(0.0, 0.0); cfg.n_coils];
    for mut row in out.outer_iter_mut() {
        correlated_noise(&mut rng, mix.view(), cfg.noise_sigma, &mut buf);
        row.iter_mut().zip(&buf).for_each(|(r, b)| *r = *b);
    }
    Ok(out)
}

/// Ground-truth cine at resp displacement 0 and phase centres `(t + 0.5)/T`.
pub fn truth_cine(cfg: &PhantomConfig, n_phases: usize) -> CineImage {
    let n = cfg.matrix_size;
    let mut frames = Array3::zeros((n_phases, n, n));
    for t in 0..n_phases {
        let f = make_phantom_frame((t as f64 + 0.5) / n_phases as f64, 0.0, cfg);
        frames.index_axis_mut(ndarray::Axis(0), t).assign(&f.mapv(|v| C64::new(v, 0.0)));
    }
    CineImage { frames }
}

/// Exact multi-coil radial sampling of the moving scene. Spoke `n` is
/// acquired at `n * tr`; each spoke's noise comes from its own RNG stream.
pub fn sample_radial(
    cfg: &PhantomConfig,
    maps: &SensitivityMaps,
    traj: &Trajectory,
    trace: &PhysioTrace,
    seed: u64,
    n_phases: usize,
) -> Result<(RadialKSpace, CineImage)> {
    let n = cfg.matrix_size;
    let nc = maps.n_coils();
    if maps.matrix_size() != n || nc != cfg.n_coils {
        return Err(Error::Shape(format!(
            "maps are {}x{}x{} but config asks for {} coils at N={n}",
            nc,
            maps.matrix_size(),
            maps.matrix_size(),
            cfg.n_coils
        )));
    }
    let nsp = cfg.n_spokes();
    if traj.n_spokes() != nsp {
        return Err(Error::Shape(format!("trajectory has {} spokes, duration/tr gives {nsp}", traj.n_spokes())));
    }
    let nro = traj.n_readout();
    let mix = noise_mixing(cfg)?;
    let spokes: Vec<Vec<Vec<C64>>> = (0..nsp)
        .into_par_iter()
        .map(|sp| {
            let t = sp as f64 * cfg.tr;
            let frame = make_phantom_frame(trace.cardiac_phase_at(t), resp_displacement(trace.bellows_at(t), cfg), cfg);
            let coil_images: Vec<Array2<C64>> =
                (0..nc).map(|c| ndarray::Zip::from(maps.maps.index_axis(ndarray::Axis(0), c)).and(&frame).map_collect(|s, &v| s * v)).collect();
            let views: Vec<_> = coil_images.iter().map(|a| a.view()).collect();
            let coords: Vec<[f64; 2]> = (0..nro).map(|ro| [traj.coords[[sp, ro, 0]], traj.coords[[sp, ro, 1]]]).collect();
            let mut samples = nufft::dft_forward_multi(&views, &coords);
            if cfg.noise_sigma > 0.0 {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(sp as u64);
                let mut buf = vec![C64::new(0.0, 0.0); nc];
                for ro in 0..nro {
                    correlated_noise(&mut rng, mix.view(), cfg.noise_sigma, &mut buf);
                    for c in 0..nc {
                        samples[c][ro] += buf[c];
                    }
                }
            }
            samples
        })
        .collect();
    let mut data = Array3::zeros((nro, nsp, nc));
    for (sp, s) in spokes.iter().enumerate() {
        for c in 0..nc {
            for ro in 0..nro {
                data[[ro, sp, c]] = s[c][ro];
            }
        }
    }
    let ts = (0..nsp).map(|sp| sp as f64 * cfg.tr).collect();
    Ok((RadialKSpace::new(data, ts)?, truth_cine(cfg, n_phases)))
}

/// Everything `simulate` produces for one slice.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub config: PhantomConfig,
    pub maps: SensitivityMaps,
    pub trace: PhysioTrace,
    pub traj: Trajectory,
    pub kspace: RadialKSpace,
    pub truth: CineImage,
    pub noise_scan: Array2<C64>,
}

pub fn simulate(cfg: &PhantomConfig, n_phases: usize, seed: u64, noise_scan_len: usize) -> Result<Simulation> {
    cfg.validate()?;
    let maps = simulate_coils(cfg.n_coils, cfg.matrix_size)?;
    let trace = synth_physio(cfg, seed)?;
    let traj = crate::preprocess::make_trajectory(cfg.n_spokes(), cfg.readout_len(), crate::preprocess::GOLDEN_ANGLE_DEG)?;
    let (kspace, truth) = sample_radial(cfg, &maps, &traj, &trace, seed, n_phases)?;
    let noise_scan = simulate_noise_scan(cfg, noise_scan_len, seed)?;
    Ok(Simulation { config: cfg.clone(), maps, trace, traj, kspace, truth, noise_scan })
}
