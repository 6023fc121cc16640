//! Pipeline configuration: flat `key = value` text with dotted keys or
//! `[section]` headers, or JSON.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::coil::{DEFAULT_EPS_REL, DEFAULT_RHO_I, DEFAULT_RHO_S};
use crate::error::{Error, Result};
use crate::nufft::NufftParams;
use crate::phantom::PhantomConfig;
use crate::recon::{IgraspOptions, ProxKind, ProxSpec};
use crate::types::Validate;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CompressionMethod {
    None,
    Soc,
    Svd,
    Removal,
}

impl CompressionMethod {
    pub fn name(self) -> &'static str {
        match self {
            CompressionMethod::None => "none",
            CompressionMethod::Soc => "soc",
            CompressionMethod::Svd => "svd",
            CompressionMethod::Removal => "removal",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompressionConfig {
    pub method: CompressionMethod,
    pub n_virtual: usize,
    pub rho_s: f64,
    pub rho_i: f64,
    pub eps_rel: f64,
    /// Use every acquired spoke for the SOC covariances instead of only the
    /// gated ones.
    pub include_all_spokes: bool,
    /// Absolute streak-ratio threshold for coil removal; unset means 1.5x the median.
    pub removal_threshold: Option<f64>,
    /// Compression methods compared by streak ratio at the highest R.
    #[serde(deserialize_with = "one_or_many")]
    pub compare: Vec<CompressionMethod>,
}

impl Default for CompressionConfig {
    fn default() -> Self {
        CompressionConfig {
            method: CompressionMethod::Soc,
            n_virtual: 6,
            rho_s: DEFAULT_RHO_S,
            rho_i: DEFAULT_RHO_I,
            eps_rel: DEFAULT_EPS_REL,
            include_all_spokes: false,
            removal_threshold: None,
            compare: vec![CompressionMethod::Soc, CompressionMethod::Svd, CompressionMethod::Removal],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "lowercase")]
pub enum ReconMethod {
    Gridding,
    Igrasp,
    Unrolled,
}

impl ReconMethod {
    pub fn name(self) -> &'static str {
        match self {
            ReconMethod::Gridding => "gridding",
            ReconMethod::Igrasp => "igrasp",
            ReconMethod::Unrolled => "unrolled",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProxChoice {
    Identity,
    Tv,
    Resnet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReconConfig {
    #[serde(deserialize_with = "one_or_many")]
    pub methods: Vec<ReconMethod>,
    pub prox: ProxChoice,
    /// Data-consistency weight of the unrolled reconstruction.
    pub lambda: f64,
    pub unrolls: usize,
    pub n_cg: usize,
    /// TV threshold of the unrolled prox relative to `max |x0|`.
    pub tau_rel: f64,
    pub weight_file: Option<PathBuf>,
    pub n_iter: usize,
    pub lambda_t_rel: f64,
    pub nufft: NufftParams,
}

impl Default for ReconConfig {
    fn default() -> Self {
        let p = ProxSpec::default();
        let tau_rel = match p.prox {
            ProxKind::TemporalTv { tau_rel } => tau_rel,
            _ => 0.0,
        };
        let ig = IgraspOptions::default();
        ReconConfig {
            methods: vec![ReconMethod::Gridding, ReconMethod::Igrasp, ReconMethod::Unrolled],
            prox: ProxChoice::Tv,
            lambda: p.lambda,
            unrolls: p.unrolls,
            n_cg: p.n_cg,
            tau_rel,
            weight_file: None,
            n_iter: ig.n_iter,
            lambda_t_rel: ig.lambda_t_rel,
            nufft: NufftParams::default(),
        }
    }
}

impl ReconConfig {
    pub fn prox_spec(&self) -> Result<ProxSpec> {
        let prox = match self.prox {
            ProxChoice::Identity => ProxKind::Identity,
            ProxChoice::Tv => ProxKind::TemporalTv { tau_rel: self.tau_rel },
            ProxChoice::Resnet => ProxKind::Resnet {
                weight_file: self.weight_file.clone().ok_or_else(|| Error::Config("recon.prox = resnet needs recon.weight_file".into()))?,
            },
        };
        let spec = ProxSpec { prox, unrolls: self.unrolls, lambda: self.lambda, n_cg: self.n_cg };
        spec.validate()?;
        Ok(spec)
    }

    pub fn igrasp_options(&self) -> IgraspOptions {
        IgraspOptions { lambda_t_rel: self.lambda_t_rel, n_iter: self.n_iter, ..IgraspOptions::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub phantom: PhantomConfig,
    /// Cardiac phases.
    pub n_phases: usize,
    pub keep_fraction: f64,
    pub noise_scan_len: usize,
    pub compression: CompressionConfig,
    pub recon: ReconConfig,
    #[serde(deserialize_with = "one_or_many")]
    pub r_values: Vec<f64>,
    /// Spoke-wise phase correction after compression.
    pub phase_correction: bool,
    pub seed: u64,
    pub output_dir: Option<PathBuf>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig::for_size(48)
    }
}

impl PipelineConfig {
    /// Phantom for an `n x n` matrix with a scan long enough for roughly
    /// Nyquist-sampled gated phases.
    pub fn for_size(n: usize) -> Self {
        let mut cfg = PipelineConfig {
            phantom: PhantomConfig::for_size(n),
            n_phases: 20,
            keep_fraction: 0.5,
            noise_scan_len: 4096,
            compression: CompressionConfig::default(),
            recon: ReconConfig::default(),
            r_values: vec![4.0, 6.0, 8.0],
            phase_correction: false,
            seed: 1,
            output_dir: None,
        };
        let nyquist = std::f64::consts::FRAC_PI_2 * n as f64;
        let spokes = nyquist * cfg.n_phases as f64 / cfg.keep_fraction;
        cfg.phantom.duration = (spokes * cfg.phantom.tr).ceil();
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_phases < 1 {
            return bad("n_phases must be >= 1".into());
        }
        if !(self.keep_fraction > 0.0 && self.keep_fraction <= 1.0) {
            return bad(format!("keep_fraction {} not in (0, 1]", self.keep_fraction));
        }
        if self.r_values.is_empty() {
            return bad("r_values is empty".into());
        }
        if let Some(r) = self.r_values.iter().find(|&&r| !(r >= 1.0)) {
            return bad(format!("undersampling factor {r} < 1"));
        }
        self.phantom.validate().map_err(|v| Error::Config(format!("phantom: {v}")))?;
        if self.noise_scan_len < 2 * self.phantom.n_coils {
            return bad(format!("noise_scan_len {} too short for {} coils", self.noise_scan_len, self.phantom.n_coils));
        }
        let c = &self.compression;
        if c.method != CompressionMethod::None && c.method != CompressionMethod::Removal && !(1..=self.phantom.n_coils).contains(&c.n_virtual) {
            return bad(format!("compression.n_virtual {} not in 1..={}", c.n_virtual, self.phantom.n_coils));
        }
        if !(0.0 < c.rho_s && c.rho_s < c.rho_i && c.rho_i <= 1.0) {
            return bad(format!("need 0 < rho_s < rho_i <= 1, got {} and {}", c.rho_s, c.rho_i));
        }
        if self.recon.methods.is_empty() {
            return bad("recon.methods is empty".into());
        }
        if self.recon.methods.contains(&ReconMethod::Unrolled) {
            let spec = self.recon.prox_spec()?;
            if let ProxKind::Resnet { weight_file } = &spec.prox {
                if !weight_file.is_file() {
                    return bad(format!("weight file {} does not exist", weight_file.display()));
                }
            }
        }
        if !(self.recon.lambda_t_rel >= 0.0) {
            return bad("recon.lambda_t_rel must be >= 0".into());
        }
        Ok(())
    }

    /// Reads a JSON file (first non-blank character `{`) or key-value text.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let value = if text.trim_start().starts_with('{') { serde_json::from_str(text)? } else { parse_key_values(text)? };
        let cfg: PipelineConfig = serde_json::from_value(value).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

/// Accepts a single value where a list is expected.
fn one_or_many<'de, D, T>(d: D) -> std::result::Result<Vec<T>, D::Error>
where
    D: serde::Deserializer<'de>,
    T: Deserialize<'de>,
{
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum OneOrMany<T> {
        Many(Vec<T>),
        One(T),
    }
    Ok(match OneOrMany::deserialize(d)? {
        OneOrMany::Many(v) => v,
        OneOrMany::One(v) => vec![v],
    })
}

fn scalar(raw: &str) -> Value {
    let s = raw.trim();
    if s.len() >= 2 && s.starts_with('"') && s.ends_with('"') {
        return Value::String(s[1..s.len() - 1].to_string());
    }
    match s {
        "true" => return Value::Bool(true),
        "false" => return Value::Bool(false),
        "null" | "none_value" => return Value::Null,
        _ => {}
    }
    if let Ok(i) = s.parse::<i64>() {
        return Value::from(i);
    }
    if let Ok(f) = s.parse::<f64>() {
        if f.is_finite() {
            return Value::from(f);
        }
    }
    Value::String(s.to_string())
}

fn parse_value(raw: &str) -> Value {
    let s = raw.trim();
    let inner = s.strip_prefix('[').and_then(|v| v.strip_suffix(']'));
    match inner {
        Some(list) if list.trim().is_empty() => Value::Array(Vec::new()),
        Some(list) => Value::Array(list.split(',').map(scalar).collect()),
        None if s.contains(',') => Value::Array(s.split(',').map(scalar).collect()),
        None => scalar(s),
    }
}

/// Turns `a.b.c = v` lines (optionally under `[a.b]` headers) into a JSON tree.
pub fn parse_key_values(text: &str) -> Result<Value> {
    let mut root = Map::new();
    let mut section: Vec<String> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            section = name.split('.').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect();
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::Config(format!("line {}: expected `key = value`", lineno + 1)));
        };
        let mut path = section.clone();
        path.extend(key.trim().split('.').map(|s| s.trim().to_string()));
        if path.iter().any(|p| p.is_empty()) {
            return Err(Error::Config(format!("line {}: empty key segment", lineno + 1)));
        }
        let (last, parents) = path.split_last().expect("non-empty key");
        let mut node = &mut root;
        for p in parents {
            let entry = node.entry(p.clone()).or_insert_with(|| Value::Object(Map::new()));
            node = entry.as_object_mut().ok_or_else(|| Error::Config(format!("line {}: `{p}` is not a section", lineno + 1)))?;
        }
        node.insert(last.clone(), parse_value(value));
    }
    Ok(Value::Object(root))
}
