use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use radcine::metrics::{xt_profile, LineAxis};
use radcine::nufft::{self, NufftParams};
use radcine::pipeline::report::{window_u8, write_pgm};
use radcine::pipeline::run::{r_label, Run};
use radcine::pipeline::{self, store, PipelineConfig, ReconMethod};
use radcine::recon::{make_random_weights, ProxWeights};
use radcine::{Error, Result};

/// Golden-angle radial cine reconstruction pipeline.
#[derive(Parser)]
#[command(name = "radcine", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Configuration file (key = value or JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Run directory.
    #[arg(long, default_value = "run")]
    out: PathBuf,
}

#[derive(Args, Clone)]
struct RFilter {
    /// Only this undersampling factor; all configured ones by default.
    #[arg(long)]
    r: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the phantom acquisition.
    Simulate(Common),
    /// Prewhiten, bin and gate.
    Preprocess(Common),
    /// Select spokes per R, compress coils, estimate maps; also compares compression methods.
    Compress {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        r: RFilter,
    },
    /// Reconstruct with the configured methods.
    Recon {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        r: RFilter,
        #[arg(long, value_enum)]
        method: Option<MethodArg>,
    },
    /// Compute metrics against the shaded reference.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        r: RFilter,
    },
    /// Write an x-t profile (PGM and CSV) of one reconstruction.
    Profile {
        #[arg(long, default_value = "run")]
        out: PathBuf,
        #[arg(long)]
        r: f64,
        #[arg(long, value_enum, default_value = "unrolled")]
        method: MethodArg,
        #[arg(long, value_enum, default_value = "horizontal")]
        axis: AxisArg,
        /// Line index; defaults to the line through the heart centre.
        #[arg(long)]
        index: Option<usize>,
    },
    /// Regenerate tables and figures from a run directory.
    Report {
        #[arg(long, default_value = "run")]
        out: PathBuf,
    },
    /// Built-in numerical checks.
    Selftest {
        #[command(subcommand)]
        what: SelftestKind,
    },
    /// Write a residual-CNN weight file with random (or zero) weights.
    MakeRandomWeights {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 2)]
        blocks: usize,
        #[arg(long, default_value_t = 8)]
        channels: usize,
        #[arg(long, default_value_t = 0.05)]
        scale: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// All-zero weights (the prox becomes the identity).
        #[arg(long)]
        zeros: bool,
    },
    /// Every stage followed by the report.
    Run(Common),
}

#[derive(Subcommand)]
enum SelftestKind {
    /// NUFFT adjoint dot test and accuracy against the exact DFT.
    Nufft {
        #[arg(long, default_value_t = 64)]
        n: usize,
        #[arg(long, default_value_t = 32)]
        spokes: usize,
        #[arg(long, default_value_t = 2.0)]
        oversampling: f64,
        #[arg(long, default_value_t = 6)]
        width: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Gridding,
    Igrasp,
    Unrolled,
}

impl From<MethodArg> for ReconMethod {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Gridding => ReconMethod::Gridding,
            MethodArg::Igrasp => ReconMethod::Igrasp,
            MethodArg::Unrolled => ReconMethod::Unrolled,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum AxisArg {
    Horizontal,
    Vertical,
}

/// Configuration from `--config`, else the run's stored one, else defaults.
fn load_config(c: &Common) -> Result<PipelineConfig> {
    load_config_inner(c).map_err(|e| e.in_stage("config"))
}

fn load_config_inner(c: &Common) -> Result<PipelineConfig> {
    let mut cfg = match &c.config {
        Some(p) => PipelineConfig::from_file(p)?,
        None if c.out.join("config.json").is_file() => store::read_json(&c.out.join("config.json"))?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn open(c: &Common) -> Result<Run> {
    Run::open(&c.out, &load_config(c)?)
}

fn r_values(run: &Run, f: &RFilter) -> Vec<f64> {
    f.r.map_or_else(|| run.cfg.r_values.clone(), |r| vec![r])
}

fn finish(run: &Run) -> Result<()> {
    // keep the records of stages not touched by this invocation
    let mut merged = run.records.clone();
    if let Ok(old) = store::read_json::<pipeline::Manifest>(&run.dir.join(pipeline::run::MANIFEST_FILE)) {
        for rec in old.stages {
            if !merged.iter().any(|m| m.dir == rec.dir) {
                merged.push(rec);
            }
        }
    }
    merged.sort_by(|a, b| a.dir.cmp(&b.dir));
    let mut all = Run { dir: run.dir.clone(), cfg: run.cfg.clone(), records: merged, timings: run.timings.clone() };
    all.records.dedup_by(|a, b| a.dir == b.dir);
    all.write_manifest()?;
    Ok(())
}

fn profile(out: &Path, r: f64, method: ReconMethod, axis: AxisArg, index: Option<usize>) -> Result<()> {
    let cfg: PipelineConfig = store::read_json(&out.join("config.json"))?;
    let label = r_label(r);
    let img = store::read_cine(&out.join(format!("{label}/{}/image.npy", method.name())))?;
    let n = img.matrix_size();
    let (line_axis, centre, name) = match axis {
        AxisArg::Horizontal => (LineAxis::Horizontal, cfg.phantom.heart_center[0], "h"),
        AxisArg::Vertical => (LineAxis::Vertical, cfg.phantom.heart_center[1], "v"),
    };
    let index = index.unwrap_or(((n / 2) as f64 + centre).round().clamp(0.0, (n - 1) as f64) as usize);
    let xt = xt_profile(&img, line_axis, index)?;
    let dir = out.join("report");
    std::fs::create_dir_all(&dir).map_err(|e| Error::Config(format!("{}: {e}", dir.display())))?;
    let stem = format!("profile_{label}_{}_{name}{index}", method.name());
    write_pgm(&dir.join(format!("{stem}.pgm")), &window_u8(xt.view()))?;
    let csv: String = xt.outer_iter().map(|row| row.iter().map(|v| format!("{v:.6e}")).collect::<Vec<_>>().join(",") + "\n").collect();
    let path = dir.join(format!("{stem}.csv"));
    std::fs::write(&path, csv).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    println!("{}", path.display());
    Ok(())
}

fn execute(cmd: Command) -> Result<()> {
    match cmd {
        Command::Simulate(c) => {
            let mut run = open(&c)?;
            run.simulate()?;
            finish(&run)
        }
        Command::Preprocess(c) => {
            let mut run = open(&c)?;
            run.preprocess()?;
            finish(&run)
        }
        Command::Compress { common, r } => {
            let mut run = open(&common)?;
            for r in r_values(&run, &r) {
                run.compress(r)?;
                run.sensitivities(r)?;
            }
            if !run.cfg.compression.compare.is_empty() {
                run.compare()?;
            }
            finish(&run)
        }
        Command::Recon { common, r, method } => {
            let mut run = open(&common)?;
            for r in r_values(&run, &r) {
                let methods = match method {
                    Some(m) if ReconMethod::from(m) == ReconMethod::Gridding => vec![ReconMethod::Gridding],
                    Some(m) => vec![ReconMethod::Gridding, m.into()],
                    None => run.methods(),
                };
                for m in methods {
                    run.recon(r, m)?;
                }
            }
            finish(&run)
        }
        Command::Evaluate { common, r } => {
            let mut run = open(&common)?;
            for r in r_values(&run, &r) {
                run.evaluate(r)?;
            }
            finish(&run)
        }
        Command::Profile { out, r, method, axis, index } => profile(&out, r, method.into(), axis, index).map_err(|e| e.in_stage("profile")),
        Command::Report { out } => {
            let rep = pipeline::report(&out).map_err(|e| e.in_stage("report"))?;
            print!("{}", std::fs::read_to_string(out.join("report/table.txt")).unwrap_or_default());
            for f in rep.files {
                log::info!("wrote {}", f.display());
            }
            Ok(())
        }
        Command::Selftest { what: SelftestKind::Nufft { n, spokes, oversampling, width, seed } } => {
            let st = nufft::self_test(n, spokes, NufftParams { oversampling, width }, seed).map_err(|e| e.in_stage("selftest"))?;
            println!("{}", serde_json::to_string_pretty(&st)?);
            if st.dot_test > 1e-6 {
                return Err(Error::Diverged(format!("dot test {:.3e} > 1e-6", st.dot_test)).in_stage("selftest"));
            }
            Ok(())
        }
        Command::MakeRandomWeights { out, blocks, channels, scale, seed, zeros } => {
            let w = if zeros { ProxWeights::zeros(blocks, channels) } else { make_random_weights(blocks, channels, scale, seed) };
            w.write(&out).map_err(|e| e.in_stage("make-random-weights"))
        }
        Command::Run(c) => {
            let cfg = load_config(&c)?;
            let manifest = pipeline::run_pipeline(&cfg, &c.out)?;
            print!("{}", std::fs::read_to_string(c.out.join("report/table.txt")).unwrap_or_default());
            log::info!("{} stages recorded in {}", manifest.stages.len(), c.out.join(pipeline::run::MANIFEST_FILE).display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).format_timestamp(None).init();
    if let Ok(w) = std::env::var("RADCINE_WORKERS") {
        match w.parse::<usize>() {
            Ok(n) if n > 0 => {
                if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
                    log::warn!("could not size the worker pool: {e}");
                }
            }
            _ => log::warn!("ignoring RADCINE_WORKERS={w}: expected a positive integer"),
        }
    }
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            match &e {
                Error::Stage { stage, source } => eprintln!("error [{stage}]: {source}"),
                other => eprintln!("error: {other}"),
            }
            ExitCode::FAILURE
        }
    }
}
