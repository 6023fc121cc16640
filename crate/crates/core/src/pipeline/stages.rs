//! In-memory pipeline stages. Each takes only the outputs of earlier stages
//! and the configuration, so the file-backed runner can replay any of them.

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use super::config::{CompressionMethod, PipelineConfig, ReconMethod};
use crate::coil;
use crate::error::{Error, Result};
use crate::linalg;
use crate::metrics::{self, MetricReport};
use crate::phantom::{self, Simulation};
use crate::preprocess::{self, GatingMask};
use crate::recon::{self, gridding_with, igrasp_reconstruct, unrolled_reconstruct, SenseOperator};
use crate::types::{BinnedKSpace, CineImage, SensitivityMaps, C64};

pub fn simulate_stage(cfg: &PipelineConfig) -> Result<Simulation> {
    phantom::simulate(&cfg.phantom, cfg.n_phases, cfg.seed, cfg.noise_scan_len)
}

/// Whitened k-space plus the cardiac bins and respiratory mask.
#[derive(Debug, Clone)]
pub struct Preprocessed {
    pub noise_cov: Array2<C64>,
    /// `L^-1`, applied to every coil vector.
    pub whitening: Array2<C64>,
    pub kspace: crate::types::RadialKSpace,
    pub bins: Vec<Vec<usize>>,
    pub gating: GatingMask,
}

pub fn preprocess_stage(cfg: &PipelineConfig, sim: &Simulation) -> Result<Preprocessed> {
    let noise_cov = preprocess::estimate_noise_cov(sim.noise_scan.view())?;
    let whitening = preprocess::whitening_matrix(noise_cov.view())?;
    let kspace = linalg::mix_coils(&sim.kspace, whitening.view())?;
    let bins = preprocess::bin_cardiac(&sim.trace, &kspace.spoke_timestamps, cfg.n_phases)?;
    let gating = preprocess::gate_respiratory(&sim.trace, &kspace.spoke_timestamps, cfg.keep_fraction)?;
    Ok(Preprocessed { noise_cov, whitening, kspace, bins, gating })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CompressionInfo {
    pub method: String,
    pub n_out: usize,
    pub undersampling: f64,
    pub spokes_per_phase: Vec<usize>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub sir_values: Vec<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub singular_values: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub retained_energy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub removal: Option<coil::CoilRemoval>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub phase_flagged: Vec<(usize, usize)>,
}

/// Binned, compressed k-space of one undersampling factor.
#[derive(Debug, Clone)]
pub struct Compressed {
    pub binned: BinnedKSpace,
    /// Combined coil mixing `W^H L^-1` from physical to output channels.
    pub mixing: Array2<C64>,
    pub info: CompressionInfo,
}

pub fn compress_stage(cfg: &PipelineConfig, sim: &Simulation, pre: &Preprocessed, r: f64, method: CompressionMethod) -> Result<Compressed> {
    let binned = preprocess::select_spokes(&pre.kspace, &sim.traj, &pre.bins, &pre.gating, r)?;
    let (pooled, pooled_traj) = binned.pooled()?;
    let c = &cfg.compression;
    let nc = binned.n_coils();
    let mut info = CompressionInfo { method: method.name().into(), undersampling: r, spokes_per_phase: binned.spoke_counts(), ..Default::default() };
    let weights: Array2<C64> = match method {
        CompressionMethod::None => Array2::eye(nc),
        CompressionMethod::Soc => {
            let basis = if c.include_all_spokes {
                coil::soc_basis(&pre.kspace, c.n_virtual, c.rho_s, c.rho_i, c.eps_rel)?
            } else {
                coil::soc_basis(&pooled, c.n_virtual, c.rho_s, c.rho_i, c.eps_rel)?
            };
            info.sir_values = basis.sir_values;
            basis.weights
        }
        CompressionMethod::Svd => {
            let basis = coil::svd_basis(&pooled, c.n_virtual)?;
            info.singular_values = basis.singular_values;
            info.retained_energy = Some(basis.retained_energy);
            basis.weights
        }
        CompressionMethod::Removal => {
            let imgs = recon::per_coil_gridding(&pooled, &pooled_traj, cfg.phantom.matrix_size, cfg.recon.nufft)?;
            let removal = coil::coil_removal(imgs.view(), c.removal_threshold)?;
            let mut w = Array2::zeros((nc, removal.kept.len()));
            for (j, &k) in removal.kept.iter().enumerate() {
                w[[k, j]] = C64::new(1.0, 0.0);
            }
            info.removal = Some(removal);
            w
        }
    };
    let wh = linalg::adjoint(weights.view());
    let mut out = binned;
    for ph in &mut out.phases {
        ph.kspace = linalg::mix_coils(&ph.kspace, wh.view())?;
    }
    if cfg.phase_correction {
        let pc = preprocess::phase_correct_spokes(&out)?;
        out = pc.binned;
        info.phase_flagged = pc.flagged;
    }
    info.n_out = out.n_coils();
    Ok(Compressed { binned: out, mixing: wh.dot(&pre.whitening), info })
}

pub fn sensitivity_stage(cfg: &PipelineConfig, comp: &Compressed) -> Result<SensitivityMaps> {
    let (pooled, traj) = comp.binned.pooled()?;
    recon::estimate_sensitivities(&pooled, &traj, cfg.phantom.matrix_size, cfg.recon.nufft)
}

/// Reconstructions of one undersampling factor, in `cfg.recon.methods` order.
#[derive(Debug, Clone)]
pub struct Reconstructions {
    pub images: Vec<(ReconMethod, CineImage)>,
    /// Per-method diagnostics serialized for the run directory.
    pub diagnostics: Vec<(ReconMethod, serde_json::Value)>,
}

pub fn sense_operator(cfg: &PipelineConfig, comp: &Compressed, maps: &SensitivityMaps) -> Result<SenseOperator> {
    Ok(SenseOperator::for_binned(maps.clone(), &comp.binned, cfg.recon.nufft)?.dcf_weighted())
}

/// One reconstruction method. `gridding` must be supplied for iterative methods.
pub fn recon_method(
    cfg: &PipelineConfig,
    op: &SenseOperator,
    y: &[Array2<C64>],
    comp: &Compressed,
    method: ReconMethod,
    gridding: Option<&CineImage>,
) -> Result<(CineImage, serde_json::Value)> {
    let x0 = || gridding.ok_or_else(|| Error::Config(format!("{} needs the gridding initialization", method.name())));
    Ok(match method {
        ReconMethod::Gridding => (gridding_with(op, &comp.binned)?, serde_json::json!({})),
        ReconMethod::Igrasp => {
            let out = igrasp_reconstruct(op, y, x0()?, &cfg.recon.igrasp_options())?;
            let diag = serde_json::json!({
                "objective": out.objective,
                "lipschitz": out.lipschitz,
                "lambda_t": out.lambda_t,
                "restarts": out.restarts,
            });
            (out.image, diag)
        }
        ReconMethod::Unrolled => {
            let out = unrolled_reconstruct(op, y, x0()?, &cfg.recon.prox_spec()?)?;
            (out.image, serde_json::json!({ "unrolls": out.diagnostics }))
        }
    })
}

pub fn recon_stage(cfg: &PipelineConfig, comp: &Compressed, maps: &SensitivityMaps) -> Result<Reconstructions> {
    let op = sense_operator(cfg, comp, maps)?;
    let y = op.prepare(&comp.binned)?;
    let mut methods = cfg.recon.methods.clone();
    methods.sort();
    methods.dedup();
    let mut images: Vec<(ReconMethod, CineImage)> = Vec::new();
    let mut diagnostics = Vec::new();
    let mut grid: Option<CineImage> = None;
    for &m in &methods {
        if m != ReconMethod::Gridding && grid.is_none() {
            grid = Some(recon_method(cfg, &op, &y, comp, ReconMethod::Gridding, None)?.0);
        }
        let start = std::time::Instant::now();
        let (img, diag) = recon_method(cfg, &op, &y, comp, m, grid.as_ref())?;
        log::info!("{} done in {:.1} s", m.name(), start.elapsed().as_secs_f64());
        if m == ReconMethod::Gridding {
            grid = Some(img.clone());
        }
        images.push((m, img));
        diagnostics.push((m, diag));
    }
    Ok(Reconstructions { images, diagnostics })
}

/// Evaluation reference for one coil mixing: truth shaded by the effective
/// coil sensitivity after whitening and compression.
pub fn reference_stage(sim: &Simulation, comp: &Compressed) -> Result<Array3<f64>> {
    recon::shaded_reference(&sim.truth, &sim.maps, Some(comp.mixing.view()))
}

pub fn evaluate_stage(reference: &Array3<f64>, image: &CineImage) -> Result<MetricReport> {
    metrics::evaluate(reference.view(), image)
}

/// Mean streak ratio of the gridding reconstruction after each compression
/// method at undersampling `r`.
pub fn compression_comparison(cfg: &PipelineConfig, sim: &Simulation, pre: &Preprocessed, r: f64) -> Result<Vec<(CompressionMethod, f64)>> {
    let mut out = Vec::new();
    for &m in &cfg.compression.compare {
        let comp = compress_stage(cfg, sim, pre, r, m)?;
        let maps = sensitivity_stage(cfg, &comp)?;
        let op = sense_operator(cfg, &comp, &maps)?;
        let grid = gridding_with(&op, &comp.binned)?;
        let sars = grid
            .magnitude()
            .outer_iter()
            .map(|f| metrics::sar(f, metrics::SAR_LOWPASS_FRAC))
            .collect::<Result<Vec<_>>>()?;
        let mean = sars.iter().sum::<f64>() / sars.len() as f64;
        log::info!("compression {}: mean streak ratio {mean:.4}", m.name());
        out.push((m, mean));
    }
    Ok(out)
}
