//! File-backed pipeline runs. Every stage owns one directory, reads only the
//! container files of earlier stages and is skipped when its key (stage
//! parameters plus input checksums) and its recorded outputs are unchanged.

use std::collections::BTreeMap;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use super::config::{CompressionMethod, PipelineConfig, ReconMethod};
use super::stages::{self, CompressionInfo, Compressed, Preprocessed};
use super::store::{self, read_json, write_json};
use crate::array_io;
use crate::error::{Error, Result};
use crate::phantom::Simulation;
use crate::preprocess::GatingMask;
use crate::types::C64;

pub const STAGE_FILE: &str = "stage.json";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    pub dir: String,
    pub key: String,
    pub params: serde_json::Value,
    /// Input file checksums, relative to the run directory.
    pub inputs: BTreeMap<String, String>,
    /// Output file checksums, relative to the stage directory.
    pub outputs: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub config: PipelineConfig,
    pub stages: Vec<StageRecord>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(format!("{:x}", h.finalize()))
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<_> = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?.collect::<std::io::Result<Vec<_>>>().map_err(|e| Error::io(dir, e))?;
    entries.sort_by_key(|e| e.file_name());
    for e in entries {
        let p = e.path();
        if p.is_dir() {
            collect_files(root, &p, out)?;
        } else if !(dir == root && e.file_name() == STAGE_FILE) {
            out.push(p);
        }
    }
    Ok(())
}

/// Checksums of every file under `dir` except its stage record, keyed by
/// the path relative to `base`.
pub fn checksum_tree(dir: &Path, base: &Path) -> Result<BTreeMap<String, String>> {
    let mut files = Vec::new();
    collect_files(dir, dir, &mut files)?;
    files
        .into_iter()
        .map(|p| {
            let rel = p.strip_prefix(base).unwrap_or(&p).to_string_lossy().replace('\\', "/");
            Ok((rel, sha256_file(&p)?))
        })
        .collect()
}

pub fn r_label(r: f64) -> String {
    if r.fract() == 0.0 {
        format!("r{}", r as u64)
    } else {
        format!("r{r}")
    }
}

/// A run directory being filled by [`run_pipeline`] or the CLI stages.
pub struct Run {
    pub dir: PathBuf,
    pub cfg: PipelineConfig,
    pub records: Vec<StageRecord>,
    /// Wall time per stage directory; zero for cache hits.
    pub timings: BTreeMap<String, f64>,
}

impl Run {
    pub fn open(dir: &Path, cfg: &PipelineConfig) -> Result<Self> {
        cfg.validate()?;
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_json(&dir.join("config.json"), cfg)?;
        Ok(Run { dir: dir.to_path_buf(), cfg: cfg.clone(), records: Vec::new(), timings: BTreeMap::new() })
    }

    /// Reopens a run using its stored configuration.
    pub fn resume(dir: &Path) -> Result<Self> {
        let cfg: PipelineConfig = read_json(&dir.join("config.json"))?;
        Run::open(dir, &cfg)
    }

    pub fn stage_dir(&self, rel: &str) -> PathBuf {
        self.dir.join(rel)
    }

    /// Runs `body` in stage directory `rel` unless a matching record exists.
    fn stage<F>(&mut self, name: &'static str, rel: &str, inputs: &[&str], params: serde_json::Value, body: F) -> Result<PathBuf>
    where
        F: FnOnce(&Path) -> Result<()>,
    {
        let dir = self.dir.join(rel);
        let mut input_sums = BTreeMap::new();
        for inp in inputs {
            let p = self.dir.join(inp);
            if !p.join(STAGE_FILE).is_file() {
                return Err(Error::Config(format!("input stage `{inp}` has not been run")).in_stage(name));
            }
            input_sums.extend(checksum_tree(&p, &self.dir).map_err(|e| e.in_stage(name))?);
        }
        let mut h = Sha256::new();
        h.update(name.as_bytes());
        h.update(serde_json::to_vec(&params)?);
        for (k, v) in &input_sums {
            h.update(k.as_bytes());
            h.update(v.as_bytes());
        }
        let key = format!("{:x}", h.finalize());
        let record_path = dir.join(STAGE_FILE);
        if record_path.is_file() {
            if let Ok(old) = read_json::<StageRecord>(&record_path) {
                if old.key == key && checksum_tree(&dir, &dir).ok().as_ref() == Some(&old.outputs) {
                    log::info!("[{name}] {rel}: up to date");
                    self.timings.insert(rel.to_string(), 0.0);
                    self.records.push(old);
                    return Ok(dir);
                }
            }
        }
        if dir.exists() {
            fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        }
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        log::info!("[{name}] {rel}: running");
        let start = Instant::now();
        body(&dir).map_err(|e| e.in_stage(name))?;
        self.timings.insert(rel.to_string(), start.elapsed().as_secs_f64());
        let record = StageRecord { name: name.into(), dir: rel.into(), key, params, inputs: input_sums, outputs: checksum_tree(&dir, &dir)? };
        write_json(&record_path, &record)?;
        self.records.push(record);
        Ok(dir)
    }

    pub fn simulate(&mut self) -> Result<()> {
        let cfg = self.cfg.clone();
        let params = json!({ "phantom": cfg.phantom, "n_phases": cfg.n_phases, "seed": cfg.seed, "noise_scan_len": cfg.noise_scan_len });
        self.stage("simulate", "simulate", &[], params, |d| store::write_simulation(d, &stages::simulate_stage(&cfg)?))?;
        Ok(())
    }

    pub fn preprocess(&mut self) -> Result<()> {
        let cfg = self.cfg.clone();
        let sim_dir = self.stage_dir("simulate");
        let params = json!({ "n_phases": cfg.n_phases, "keep_fraction": cfg.keep_fraction });
        self.stage("preprocess", "preprocess", &["simulate"], params, |d| {
            let sim = store::read_simulation(&sim_dir)?;
            write_preprocessed(d, &stages::preprocess_stage(&cfg, &sim)?)
        })?;
        Ok(())
    }

    fn compress_params(&self, r: f64, method: CompressionMethod) -> serde_json::Value {
        json!({
            "r": r,
            "method": method,
            "compression": self.cfg.compression,
            "phase_correction": self.cfg.phase_correction,
            "nufft": self.cfg.recon.nufft,
        })
    }

    /// Compression with the configured method at undersampling `r`.
    pub fn compress(&mut self, r: f64) -> Result<()> {
        let cfg = self.cfg.clone();
        let (sim_dir, pre_dir) = (self.stage_dir("simulate"), self.stage_dir("preprocess"));
        let rel = format!("{}/compress", r_label(r));
        let params = self.compress_params(r, cfg.compression.method);
        self.stage("compress", &rel, &["simulate", "preprocess"], params, |d| {
            let sim = store::read_simulation(&sim_dir)?;
            let pre = read_preprocessed(&pre_dir)?;
            write_compressed(d, &stages::compress_stage(&cfg, &sim, &pre, r, cfg.compression.method)?)
        })?;
        Ok(())
    }

    pub fn sensitivities(&mut self, r: f64) -> Result<()> {
        let cfg = self.cfg.clone();
        let comp_rel = format!("{}/compress", r_label(r));
        let comp_dir = self.stage_dir(&comp_rel);
        let rel = format!("{}/maps", r_label(r));
        self.stage("maps", &rel, &[&comp_rel], json!({ "nufft": cfg.recon.nufft }), |d| {
            let comp = read_compressed(&comp_dir)?;
            store::write_maps(&d.join("maps.npy"), &stages::sensitivity_stage(&cfg, &comp)?)
        })?;
        Ok(())
    }

    /// Gridding is always reconstructed first; iterative methods start from it.
    pub fn methods(&self) -> Vec<ReconMethod> {
        let mut m = self.cfg.recon.methods.clone();
        m.push(ReconMethod::Gridding);
        m.sort();
        m.dedup();
        m
    }

    pub fn recon(&mut self, r: f64, method: ReconMethod) -> Result<()> {
        let cfg = self.cfg.clone();
        let label = r_label(r);
        let comp_rel = format!("{label}/compress");
        let maps_rel = format!("{label}/maps");
        let grid_rel = format!("{label}/gridding");
        let mut inputs = vec![comp_rel.as_str(), maps_rel.as_str()];
        let params = match method {
            ReconMethod::Gridding => json!({ "method": method, "nufft": cfg.recon.nufft }),
            ReconMethod::Igrasp => {
                inputs.push(&grid_rel);
                json!({ "method": method, "nufft": cfg.recon.nufft, "options": cfg.recon.igrasp_options() })
            }
            ReconMethod::Unrolled => {
                inputs.push(&grid_rel);
                let spec = cfg.recon.prox_spec()?;
                let weights = match &spec.prox {
                    crate::recon::ProxKind::Resnet { weight_file } => Some(sha256_file(weight_file)?),
                    _ => None,
                };
                json!({ "method": method, "nufft": cfg.recon.nufft, "prox": spec, "weights_sha256": weights })
            }
        };
        let (comp_dir, maps_dir, grid_dir) = (self.stage_dir(&comp_rel), self.stage_dir(&maps_rel), self.stage_dir(&grid_rel));
        let rel = format!("{label}/{}", method.name());
        let inputs: Vec<String> = inputs.iter().map(|s| s.to_string()).collect();
        let input_refs: Vec<&str> = inputs.iter().map(|s| s.as_str()).collect();
        self.stage("recon", &rel, &input_refs, params, |d| {
            let comp = read_compressed(&comp_dir)?;
            let maps = store::read_maps(&maps_dir.join("maps.npy"))?;
            let op = stages::sense_operator(&cfg, &comp, &maps)?;
            let y = op.prepare(&comp.binned)?;
            let grid = if method == ReconMethod::Gridding { None } else { Some(store::read_cine(&grid_dir.join("image.npy"))?) };
            let (img, diag) = stages::recon_method(&cfg, &op, &y, &comp, method, grid.as_ref())?;
            store::write_cine(&d.join("image.npy"), &img)?;
            write_json(&d.join("diagnostics.json"), &diag)
        })?;
        Ok(())
    }

    pub fn evaluate(&mut self, r: f64) -> Result<()> {
        let label = r_label(r);
        let methods = self.methods();
        let mut inputs = vec!["simulate".to_string(), format!("{label}/compress")];
        inputs.extend(methods.iter().map(|m| format!("{label}/{}", m.name())));
        let input_refs: Vec<&str> = inputs.iter().map(|s| s.as_str()).collect();
        let base = self.dir.clone();
        let params = json!({ "methods": methods, "metrics": crate::metrics::MetricParams::default() });
        self.stage("evaluate", &format!("{label}/evaluate"), &input_refs, params, |d| {
            let sim = store::read_simulation(&base.join("simulate"))?;
            let comp = read_compressed(&base.join(format!("{label}/compress")))?;
            let reference = stages::reference_stage(&sim, &comp)?;
            array_io::write(d.join("reference.npy"), &reference)?;
            for m in &methods {
                let img = store::read_cine(&base.join(format!("{label}/{}/image.npy", m.name())))?;
                write_json(&d.join(format!("metrics_{}.json", m.name())), &stages::evaluate_stage(&reference, &img)?)?;
            }
            Ok(())
        })?;
        Ok(())
    }

    /// Streak ratio of the gridding reconstruction per compression method at the largest R.
    pub fn compare(&mut self) -> Result<()> {
        let cfg = self.cfg.clone();
        let r = max_r(&cfg);
        let mut params = self.compress_params(r, cfg.compression.method);
        params["compare"] = json!(cfg.compression.compare);
        let base = self.dir.clone();
        self.stage("compare", "compare", &["simulate", "preprocess"], params, |d| {
            let sim = store::read_simulation(&base.join("simulate"))?;
            let pre = read_preprocessed(&base.join("preprocess"))?;
            let rows: Vec<_> = stages::compression_comparison(&cfg, &sim, &pre, r)?
                .into_iter()
                .map(|(m, sar)| json!({ "method": m, "r": r, "sar_mean": sar }))
                .collect();
            write_json(&d.join("compression.json"), &rows)
        })?;
        Ok(())
    }

    pub fn write_manifest(&self) -> Result<Manifest> {
        let manifest = Manifest {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            config: self.cfg.clone(),
            stages: self.records.clone(),
        };
        write_json(&self.dir.join(MANIFEST_FILE), &manifest)?;
        write_json(&self.dir.join("timings.json"), &self.timings)?;
        Ok(manifest)
    }
}

pub fn max_r(cfg: &PipelineConfig) -> f64 {
    cfg.r_values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// Runs every stage, then writes the manifest and the report.
pub fn run_pipeline(cfg: &PipelineConfig, dir: &Path) -> Result<Manifest> {
    let mut run = Run::open(dir, cfg)?;
    run.simulate()?;
    run.preprocess()?;
    for &r in &cfg.r_values {
        run.compress(r)?;
        run.sensitivities(r)?;
        for m in run.methods() {
            run.recon(r, m)?;
        }
        run.evaluate(r)?;
    }
    if !cfg.compression.compare.is_empty() {
        run.compare()?;
    }
    let manifest = run.write_manifest()?;
    super::report::report(dir).map_err(|e| e.in_stage("report"))?;
    Ok(manifest)
}

pub fn write_preprocessed(dir: &Path, pre: &Preprocessed) -> Result<()> {
    array_io::write(dir.join("noise_cov.npy"), &pre.noise_cov)?;
    array_io::write(dir.join("whitening.npy"), &pre.whitening)?;
    store::write_kspace(dir, "", &pre.kspace)?;
    write_json(&dir.join("bins.json"), &pre.bins)?;
    write_json(&dir.join("gating.json"), &pre.gating)
}

pub fn read_preprocessed(dir: &Path) -> Result<Preprocessed> {
    let gating: GatingMask = read_json(&dir.join("gating.json"))?;
    Ok(Preprocessed {
        noise_cov: array_io::read(dir.join("noise_cov.npy"))?,
        whitening: array_io::read(dir.join("whitening.npy"))?,
        kspace: store::read_kspace(dir, "")?,
        bins: read_json(&dir.join("bins.json"))?,
        gating,
    })
}

pub fn write_compressed(dir: &Path, c: &Compressed) -> Result<()> {
    store::write_binned(&dir.join("binned"), &c.binned)?;
    array_io::write(dir.join("mixing.npy"), &c.mixing)?;
    write_json(&dir.join("compression.json"), &c.info)
}

pub fn read_compressed(dir: &Path) -> Result<Compressed> {
    let mixing: Array2<C64> = array_io::read(dir.join("mixing.npy"))?;
    let info: CompressionInfo = read_json(&dir.join("compression.json"))?;
    Ok(Compressed { binned: store::read_binned(&dir.join("binned"))?, mixing, info })
}

/// Loads the evaluation reference of one R.
pub fn read_reference(run_dir: &Path, r: f64) -> Result<Array3<f64>> {
    array_io::read(run_dir.join(format!("{}/evaluate/reference.npy", r_label(r))))
}

/// Loads the simulation of a run.
pub fn read_simulation(run_dir: &Path) -> Result<Simulation> {
    store::read_simulation(&run_dir.join("simulate"))
}
