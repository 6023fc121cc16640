use std::fs;
use std::path::Path;

use ndarray::Axis;
use radcine::metrics::{xt_profile, LineAxis};
use radcine::pipeline::run::{Manifest, MANIFEST_FILE};
use radcine::pipeline::{report, run_pipeline, store, CompressionMethod, PipelineConfig, ReconMethod, Run};
use radcine::Error;

fn small_config() -> PipelineConfig {
    let mut cfg = PipelineConfig::for_size(32);
    // keeps the scan length of 20 phases so every gated phase has spokes
    cfg.n_phases = 8;
    cfg.r_values = vec![2.0, 4.0];
    cfg.recon.n_iter = 8;
    cfg.recon.unrolls = 2;
    cfg.recon.n_cg = 4;
    cfg.compression.compare = vec![CompressionMethod::Soc, CompressionMethod::Svd];
    cfg
}

fn manifest(dir: &Path) -> Manifest {
    store::read_json(&dir.join(MANIFEST_FILE)).unwrap()
}

/// Amplitude of DFT bin `k` of a real series.
fn dft_amp(x: &[f64], k: usize) -> f64 {
    let n = x.len() as f64;
    let (mut re, mut im) = (0.0, 0.0);
    for (t, v) in x.iter().enumerate() {
        let a = -2.0 * std::f64::consts::PI * (k * t) as f64 / n;
        re += v * a.cos();
        im += v * a.sin();
    }
    re.hypot(im)
}

fn heart_border_series(cfg: &PipelineConfig, img: &radcine::types::CineImage) -> Vec<f64> {
    let n = cfg.phantom.matrix_size;
    let p = &cfg.phantom;
    let row = ((n / 2) as f64 + p.heart_center[0]).round() as usize;
    let r_mid = 0.5 * (p.heart_radius_range[0] + p.heart_radius_range[1]);
    let col = ((n / 2) as f64 + p.heart_center[1] + r_mid).round() as usize;
    let xt = xt_profile(img, LineAxis::Horizontal, row).unwrap();
    xt.index_axis(Axis(1), col).to_vec()
}

fn dominant_is_fundamental(series: &[f64]) -> bool {
    let f1 = dft_amp(series, 1);
    (2..=series.len() / 2).all(|k| dft_amp(series, k) < f1)
}

#[test]
fn pipeline_is_deterministic_cached_and_reportable() {
    let cfg = small_config();
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));

    let first = run_pipeline(&cfg, &a).unwrap();
    let other = run_pipeline(&cfg, &b).unwrap();
    assert_eq!(first.stages, other.stages, "two fresh runs differ");

    // every stage directory exists and has a record
    let dirs: Vec<&str> = first.stages.iter().map(|s| s.dir.as_str()).collect();
    for d in ["simulate", "preprocess", "r2/compress", "r2/maps", "r2/gridding", "r2/igrasp", "r2/unrolled", "r2/evaluate", "r4/evaluate", "compare"] {
        assert!(dirs.contains(&d), "missing stage {d}");
        assert!(a.join(d).join("stage.json").is_file());
    }

    // rerun: everything is a cache hit and the manifest is unchanged
    let mut run = Run::open(&a, &cfg).unwrap();
    run.simulate().unwrap();
    run.preprocess().unwrap();
    for &r in &cfg.r_values {
        run.compress(r).unwrap();
        run.sensitivities(r).unwrap();
        for m in run.methods() {
            run.recon(r, m).unwrap();
        }
        run.evaluate(r).unwrap();
    }
    run.compare().unwrap();
    assert!(run.timings.values().all(|&t| t == 0.0), "stages reran: {:?}", run.timings);
    assert_eq!(run.write_manifest().unwrap().stages, first.stages);

    // the report regenerates from artifacts alone
    fs::remove_dir_all(a.join("report")).unwrap();
    let rep = report(&a).unwrap();
    assert_eq!(rep.rows.len(), 3 * cfg.r_values.len());
    for m in [ReconMethod::Gridding, ReconMethod::Igrasp, ReconMethod::Unrolled] {
        for &r in &cfg.r_values {
            let row = rep.row(m, r).unwrap();
            assert!(row.psnr_mean.is_finite() && row.ssim_mean > 0.0, "{row:?}");
        }
    }
    assert_eq!(rep.compression.len(), 2);
    let table = fs::read_to_string(a.join("report/table.txt")).unwrap();
    assert!(table.contains("R=2") && table.contains("R=4") && table.contains("unrolled"));
    let csv = fs::read_to_string(a.join("report/metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 3 * cfg.r_values.len());
    for f in ["grid_r2.pgm", "xt_r4.pgm"] {
        assert!(fs::read(a.join("report").join(f)).unwrap().starts_with(b"P5\n"));
    }

    // the heart border oscillates once per cardiac cycle in the recon too
    let img = store::read_cine(&a.join("r2/unrolled/image.npy")).unwrap();
    assert!(dominant_is_fundamental(&heart_border_series(&cfg, &img)));
}

#[test]
fn changed_recon_parameter_reruns_only_downstream_stages() {
    let mut cfg = small_config();
    cfg.r_values = vec![4.0];
    cfg.recon.methods = vec![ReconMethod::Gridding, ReconMethod::Unrolled];
    cfg.compression.compare.clear();
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("run");
    let before = run_pipeline(&cfg, &dir).unwrap();

    cfg.recon.lambda *= 2.0;
    let mut run = Run::open(&dir, &cfg).unwrap();
    run.simulate().unwrap();
    run.preprocess().unwrap();
    run.compress(4.0).unwrap();
    run.sensitivities(4.0).unwrap();
    run.recon(4.0, ReconMethod::Gridding).unwrap();
    run.recon(4.0, ReconMethod::Unrolled).unwrap();
    run.evaluate(4.0).unwrap();
    for d in ["simulate", "preprocess", "r4/compress", "r4/maps", "r4/gridding"] {
        assert_eq!(run.timings[d], 0.0, "{d} reran");
    }
    for d in ["r4/unrolled", "r4/evaluate"] {
        assert!(run.timings[d] > 0.0, "{d} was cached");
    }
    let after = run.write_manifest().unwrap();
    let key = |m: &Manifest, d: &str| m.stages.iter().find(|s| s.dir == d).unwrap().key.clone();
    assert_eq!(key(&before, "r4/gridding"), key(&after, "r4/gridding"));
    assert_ne!(key(&before, "r4/unrolled"), key(&after, "r4/unrolled"));
}

#[test]
fn tampered_output_is_recomputed() {
    let mut cfg = small_config();
    cfg.r_values = vec![4.0];
    cfg.recon.methods = vec![ReconMethod::Gridding];
    cfg.compression.compare.clear();
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("run");
    let before = run_pipeline(&cfg, &dir).unwrap();
    fs::write(dir.join("preprocess/bins.json"), b"[]").unwrap();

    let mut run = Run::open(&dir, &cfg).unwrap();
    run.simulate().unwrap();
    run.preprocess().unwrap();
    assert_eq!(run.timings["simulate"], 0.0);
    assert!(run.timings["preprocess"] > 0.0);
    let after = run.write_manifest().unwrap();
    let rec = |m: &Manifest| m.stages.iter().find(|s| s.dir == "preprocess").unwrap().clone();
    assert_eq!(rec(&before).outputs, rec(&after).outputs);
    assert_eq!(manifest(&dir).stages.len(), 2);
}

#[test]
fn zero_phases_is_a_config_error_before_any_work() {
    let mut cfg = small_config();
    cfg.n_phases = 0;
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("run");
    match run_pipeline(&cfg, &dir) {
        Err(Error::Config(msg)) => assert!(msg.contains("n_phases"), "{msg}"),
        other => panic!("expected a config error, got {other:?}"),
    }
    assert!(!dir.exists());
}

#[test]
fn missing_input_stage_is_reported_with_stage_name() {
    let cfg = small_config();
    let tmp = tempfile::tempdir().unwrap();
    let mut run = Run::open(&tmp.path().join("run"), &cfg).unwrap();
    let err = run.preprocess().unwrap_err();
    match err {
        Error::Stage { stage, .. } => assert_eq!(stage, "preprocess"),
        other => panic!("expected a stage error, got {other:?}"),
    }
}

#[test]
fn truth_heart_border_oscillates_with_cardiac_period() {
    let cfg = PipelineConfig::default();
    let truth = radcine::phantom::truth_cine(&cfg.phantom, cfg.n_phases);
    let series = heart_border_series(&cfg, &truth);
    let spread = series.iter().cloned().fold(f64::MIN, f64::max) - series.iter().cloned().fold(f64::MAX, f64::min);
    assert!(spread > 0.5, "border column barely changes: {series:?}");
    assert!(dominant_is_fundamental(&series));

    // a static pixel far from the heart does not oscillate
    let n = cfg.phantom.matrix_size;
    let xt = xt_profile(&truth, LineAxis::Horizontal, n / 2).unwrap();
    let still = xt.index_axis(Axis(1), n / 2 - (0.3 * n as f64) as usize).to_vec();
    assert!(still.windows(2).all(|w| w[0] == w[1]));
}
