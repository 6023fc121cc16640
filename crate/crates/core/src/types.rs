//! Shared domain types for one slice of a radial cine acquisition.
//!
//! All containers are plain data with public fields. Invariants are not
//! enforced at construction (so that malformed objects can be represented
//! and reported); call [`Validate::validate`] to check them.

use std::collections::HashSet;
use std::fmt;

use ndarray::{s, Array2, Array3, ArrayView2, Axis};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;

/// First violated invariant of a domain object.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub path: String,
    pub rule: &'static str,
}

impl Violation {
    pub fn new(path: impl Into<String>, rule: &'static str) -> Self {
        Violation { path: path.into(), rule }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.rule)
    }
}

pub trait Validate {
    /// Returns the first violated invariant, or `Ok(())`.
    fn validate(&self) -> std::result::Result<(), Violation>;
}

fn check(cond: bool, path: impl FnOnce() -> String, rule: &'static str) -> std::result::Result<(), Violation> {
    if cond {
        Ok(())
    } else {
        Err(Violation::new(path(), rule))
    }
}

fn first_non_finite_c(it: impl Iterator<Item = C64>) -> Option<usize> {
    it.enumerate().find(|(_, z)| !(z.re.is_finite() && z.im.is_finite())).map(|(i, _)| i)
}

/// Multi-coil radial samples of one slice, `data[[readout, spoke, coil]]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RadialKSpace {
    pub data: Array3<C64>,
    /// Acquisition time of each spoke in seconds.
    pub spoke_timestamps: Vec<f64>,
}

impl RadialKSpace {
    pub fn new(data: Array3<C64>, spoke_timestamps: Vec<f64>) -> Result<Self> {
        if data.dim().1 != spoke_timestamps.len() {
            return Err(Error::Shape(format!(
                "{} spokes in data but {} timestamps",
                data.dim().1,
                spoke_timestamps.len()
            )));
        }
        Ok(RadialKSpace { data, spoke_timestamps })
    }

    pub fn n_readout(&self) -> usize {
        self.data.dim().0
    }

    pub fn n_spokes(&self) -> usize {
        self.data.dim().1
    }

    pub fn n_coils(&self) -> usize {
        self.data.dim().2
    }

    /// `[n_readout, n_coils]` view of one spoke.
    pub fn spoke(&self, sp: usize) -> ArrayView2<'_, C64> {
        self.data.slice(s![.., sp, ..])
    }

    /// Samples arranged `[coil, spoke * n_readout + readout]`, the order used by
    /// the NUFFT plans built from [`Trajectory::sample_coords`].
    pub fn coil_major(&self) -> Array2<C64> {
        let (nro, nsp, nc) = self.data.dim();
        let mut out = Array2::zeros((nc, nsp * nro));
        for c in 0..nc {
            let mut row = out.row_mut(c);
            for sp in 0..nsp {
                for ro in 0..nro {
                    row[sp * nro + ro] = self.data[[ro, sp, c]];
                }
            }
        }
        out
    }

    /// Inverse of [`RadialKSpace::coil_major`].
    pub fn from_coil_major(samples: &Array2<C64>, n_readout: usize, spoke_timestamps: Vec<f64>) -> Result<Self> {
        let (nc, m) = samples.dim();
        let nsp = spoke_timestamps.len();
        if m != nsp * n_readout {
            return Err(Error::Shape(format!("{m} samples per coil is not {nsp} spokes x {n_readout} readout")));
        }
        let mut data = Array3::zeros((n_readout, nsp, nc));
        for c in 0..nc {
            for sp in 0..nsp {
                for ro in 0..n_readout {
                    data[[ro, sp, c]] = samples[[c, sp * n_readout + ro]];
                }
            }
        }
        RadialKSpace::new(data, spoke_timestamps)
    }

    /// Gather the given spokes (in the given order).
    pub fn select_spokes(&self, spokes: &[usize]) -> RadialKSpace {
        RadialKSpace {
            data: self.data.select(Axis(1), spokes),
            spoke_timestamps: spokes.iter().map(|&i| self.spoke_timestamps[i]).collect(),
        }
    }
}

impl Validate for RadialKSpace {
    fn validate(&self) -> std::result::Result<(), Violation> {
        let (nro, nsp, nc) = self.data.dim();
        check(nro >= 1, || "data.n_readout".into(), "all dims >= 1")?;
        check(nsp >= 1, || "data.n_spokes".into(), "all dims >= 1")?;
        check(nc >= 1, || "data.n_coils".into(), "all dims >= 1")?;
        check(self.spoke_timestamps.len() == nsp, || "spoke_timestamps".into(), "one timestamp per spoke")?;
        if let Some(i) = self.spoke_timestamps.windows(2).position(|w| !(w[1] > w[0])) {
            return Err(Violation::new(format!("spoke_timestamps[{}]", i + 1), "timestamps strictly increasing"));
        }
        if let Some(i) = first_non_finite_c(self.data.iter().copied()) {
            let ro = i / (nsp * nc);
            let sp = (i / nc) % nsp;
            let c = i % nc;
            return Err(Violation::new(format!("data[{ro},{sp},{c}]"), "data finite"));
        }
        Ok(())
    }
}

/// Per-spoke, per-readout k-space locations `coords[[spoke, readout, (ky, kx)]]`
/// in cycles per pixel, each component in `[-0.5, 0.5)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub coords: Array3<f64>,
    pub angle_increment_deg: f64,
}

impl Trajectory {
    pub fn n_spokes(&self) -> usize {
        self.coords.dim().0
    }

    pub fn n_readout(&self) -> usize {
        self.coords.dim().1
    }

    /// Flattened `(ky, kx)` list in `(spoke, readout)` order.
    pub fn sample_coords(&self) -> Vec<[f64; 2]> {
        let (nsp, nro, _) = self.coords.dim();
        let mut out = Vec::with_capacity(nsp * nro);
        for sp in 0..nsp {
            for ro in 0..nro {
                out.push([self.coords[[sp, ro, 0]], self.coords[[sp, ro, 1]]]);
            }
        }
        out
    }

    pub fn select_spokes(&self, spokes: &[usize]) -> Trajectory {
        Trajectory {
            coords: self.coords.select(Axis(0), spokes),
            angle_increment_deg: self.angle_increment_deg,
        }
    }

    /// Unit direction `(ky, kx)` of a spoke, from its outermost sample.
    pub fn spoke_direction(&self, sp: usize) -> Option<[f64; 2]> {
        let nro = self.n_readout();
        let (mut best, mut best_r) = (None, 0.0);
        for ro in 0..nro {
            let k = [self.coords[[sp, ro, 0]], self.coords[[sp, ro, 1]]];
            let r = k[0].hypot(k[1]);
            if r > best_r {
                best_r = r;
                best = Some([k[0] / r, k[1] / r]);
            }
        }
        best
    }

    /// Signed radial position of every sample along its spoke direction.
    pub fn radial_positions(&self) -> Result<Array2<f64>> {
        let (nsp, nro, _) = self.coords.dim();
        let mut kr = Array2::zeros((nsp, nro));
        for sp in 0..nsp {
            let dir = self.spoke_direction(sp).unwrap_or([0.0, 1.0]);
            for ro in 0..nro {
                let (ky, kx) = (self.coords[[sp, ro, 0]], self.coords[[sp, ro, 1]]);
                let along = ky * dir[0] + kx * dir[1];
                let across = -ky * dir[1] + kx * dir[0];
                if across.abs() > 1e-9 {
                    return Err(Error::NonRadial(format!("spoke {sp} sample {ro} is off the spoke line")));
                }
                kr[[sp, ro]] = along;
            }
        }
        Ok(kr)
    }
}

impl Validate for Trajectory {
    fn validate(&self) -> std::result::Result<(), Violation> {
        let (nsp, nro, two) = self.coords.dim();
        check(two == 2, || "coords".into(), "last axis is (ky, kx)")?;
        check(nsp >= 1 && nro >= 1, || "coords".into(), "all dims >= 1")?;
        for ((sp, ro, d), &v) in self.coords.indexed_iter() {
            if !v.is_finite() {
                return Err(Violation::new(format!("coords[{sp},{ro},{d}]"), "coords finite"));
            }
            if !(-0.5..0.5).contains(&v) {
                return Err(Violation::new(format!("coords[{sp},{ro},{d}]"), "|coords| componentwise < 0.5"));
            }
        }
        if let Err(Error::NonRadial(msg)) = self.radial_positions() {
            return Err(Violation::new(format!("coords ({msg})"), "spoke samples collinear through the origin"));
        }
        Ok(())
    }
}

/// Physiological recordings for one slice.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PhysioTrace {
    /// Cardiac trigger times in seconds, sorted.
    pub cardiac_triggers: Vec<f64>,
    pub bellows_samples: Vec<f64>,
    /// Bellows sampling rate in Hz; sample `i` is at `i / bellows_rate` seconds.
    pub bellows_rate: f64,
    pub duration: f64,
}

impl PhysioTrace {
    /// Linearly interpolated bellows value at time `t` (clamped at the ends).
    pub fn bellows_at(&self, t: f64) -> f64 {
        let n = self.bellows_samples.len();
        if n == 0 {
            return 0.0;
        }
        let pos = (t * self.bellows_rate).max(0.0);
        let i = pos.floor() as usize;
        if i + 1 >= n {
            return self.bellows_samples[n - 1];
        }
        let frac = pos - i as f64;
        self.bellows_samples[i] * (1.0 - frac) + self.bellows_samples[i + 1] * frac
    }

    /// Index `j` of the RR interval `[r_j, r_{j+1})` enclosing `t`, if any.
    pub fn rr_interval(&self, t: f64) -> Option<usize> {
        let tr = &self.cardiac_triggers;
        if tr.len() < 2 || t < tr[0] || t >= tr[tr.len() - 1] {
            return None;
        }
        // partition_point gives the first trigger > t
        let j = tr.partition_point(|&r| r <= t);
        Some(j - 1)
    }

    /// Cardiac phase fraction in `[0, 1)` at time `t`. Outside the triggered
    /// range the neighbouring RR interval is extended periodically.
    pub fn cardiac_phase_at(&self, t: f64) -> f64 {
        let tr = &self.cardiac_triggers;
        if tr.len() < 2 {
            return 0.0;
        }
        if let Some(j) = self.rr_interval(t) {
            return ((t - tr[j]) / (tr[j + 1] - tr[j])).clamp(0.0, 1.0 - f64::EPSILON);
        }
        let (r0, rr) = if t < tr[0] {
            (tr[0], tr[1] - tr[0])
        } else {
            let n = tr.len();
            (tr[n - 1], tr[n - 1] - tr[n - 2])
        };
        ((t - r0) / rr).rem_euclid(1.0)
    }
}

impl Validate for PhysioTrace {
    fn validate(&self) -> std::result::Result<(), Violation> {
        check(self.bellows_rate > 0.0, || "bellows_rate".into(), "bellows_rate > 0")?;
        if let Some(i) = self.cardiac_triggers.windows(2).position(|w| w[1] < w[0]) {
            return Err(Violation::new(format!("cardiac_triggers[{}]", i + 1), "triggers sorted"));
        }
        if let Some(i) = self.cardiac_triggers.iter().position(|&t| !(0.0..=self.duration).contains(&t)) {
            return Err(Violation::new(format!("cardiac_triggers[{i}]"), "triggers within [0, duration]"));
        }
        if let Some(i) = self.bellows_samples.iter().position(|v| !v.is_finite()) {
            return Err(Violation::new(format!("bellows_samples[{i}]"), "bellows finite"));
        }
        Ok(())
    }
}

/// Spokes and data of one cardiac phase.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseBin {
    /// Source spoke indices, increasing in time.
    pub indices: Vec<usize>,
    pub kspace: RadialKSpace,
    pub traj: Trajectory,
}

/// Cardiac-phase-binned k-space of one slice.
#[derive(Debug, Clone, PartialEq)]
pub struct BinnedKSpace {
    pub phases: Vec<PhaseBin>,
    /// Spoke count of the acquisition the index sets refer to.
    pub n_source_spokes: usize,
}

impl BinnedKSpace {
    pub fn n_phases(&self) -> usize {
        self.phases.len()
    }

    pub fn n_coils(&self) -> usize {
        self.phases.first().map_or(0, |p| p.kspace.n_coils())
    }

    pub fn n_readout(&self) -> usize {
        self.phases.first().map_or(0, |p| p.kspace.n_readout())
    }

    pub fn spoke_counts(&self) -> Vec<usize> {
        self.phases.iter().map(|p| p.indices.len()).collect()
    }

    /// All retained spokes of every phase pooled back into acquisition order.
    pub fn pooled(&self) -> Result<(RadialKSpace, Trajectory)> {
        let mut order: Vec<(usize, usize, usize)> = Vec::new();
        for (t, ph) in self.phases.iter().enumerate() {
            for (local, &src) in ph.indices.iter().enumerate() {
                order.push((src, t, local));
            }
        }
        if order.is_empty() {
            return Err(Error::Empty("binned k-space has no spokes".into()));
        }
        order.sort_unstable();
        let (nro, nc) = (self.n_readout(), self.n_coils());
        let mut data = Array3::zeros((nro, order.len(), nc));
        let mut coords = Array3::zeros((order.len(), nro, 2));
        let mut ts = Vec::with_capacity(order.len());
        for (j, &(_, t, local)) in order.iter().enumerate() {
            let ph = &self.phases[t];
            data.slice_mut(s![.., j, ..]).assign(&ph.kspace.spoke(local));
            coords.slice_mut(s![j, .., ..]).assign(&ph.traj.coords.slice(s![local, .., ..]));
            ts.push(ph.kspace.spoke_timestamps[local]);
        }
        let angle = self.phases[0].traj.angle_increment_deg;
        Ok((RadialKSpace::new(data, ts)?, Trajectory { coords, angle_increment_deg: angle }))
    }

    /// Checks that every retained spoke equals the corresponding source row.
    pub fn validate_against(&self, source: &RadialKSpace) -> std::result::Result<(), Violation> {
        self.validate()?;
        for (t, ph) in self.phases.iter().enumerate() {
            for (local, &src) in ph.indices.iter().enumerate() {
                if ph.kspace.spoke(local) != source.spoke(src) {
                    return Err(Violation::new(
                        format!("phases[{t}].kspace spoke {local}"),
                        "retained spoke equals source row",
                    ));
                }
            }
        }
        Ok(())
    }
}

impl Validate for BinnedKSpace {
    fn validate(&self) -> std::result::Result<(), Violation> {
        let mut seen = HashSet::new();
        for (t, ph) in self.phases.iter().enumerate() {
            check(
                ph.kspace.n_spokes() == ph.indices.len(),
                || format!("phases[{t}]"),
                "N_sp(t) = |I_t|",
            )?;
            check(
                ph.traj.n_spokes() == ph.indices.len(),
                || format!("phases[{t}].traj"),
                "trajectory matches retained spokes",
            )?;
            for &i in &ph.indices {
                check(i < self.n_source_spokes, || format!("phases[{t}].indices"), "indices within source spokes")?;
                check(seen.insert(i), || format!("phases[{t}].indices"), "index sets disjoint")?;
            }
            if !ph.indices.is_empty() {
                ph.kspace.validate().map_err(|v| Violation::new(format!("phases[{t}].kspace.{}", v.path), v.rule))?;
                ph.traj.validate().map_err(|v| Violation::new(format!("phases[{t}].traj.{}", v.path), v.rule))?;
            }
        }
        Ok(())
    }
}

/// Per-coil complex sensitivity images `maps[[coil, y, x]]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityMaps {
    pub maps: Array3<C64>,
}

impl SensitivityMaps {
    pub fn n_coils(&self) -> usize {
        self.maps.dim().0
    }

    pub fn matrix_size(&self) -> usize {
        self.maps.dim().1
    }

    /// Root-sum-of-squares magnitude across coils.
    pub fn rss(&self) -> Array2<f64> {
        rss(&self.maps)
    }

    /// Scales every pixel to unit root-sum-of-squares; all-zero pixels stay zero.
    pub fn normalized(raw: Array3<C64>) -> Self {
        let r = rss(&raw);
        let mut maps = raw;
        for mut coil in maps.outer_iter_mut() {
            ndarray::Zip::from(&mut coil).and(&r).for_each(|v, &r| {
                if r > 0.0 {
                    *v /= r;
                }
            });
        }
        SensitivityMaps { maps }
    }
}

pub(crate) fn rss(stack: &Array3<C64>) -> Array2<f64> {
    let (_, ny, nx) = stack.dim();
    let mut out = Array2::<f64>::zeros((ny, nx));
    for coil in stack.outer_iter() {
        ndarray::Zip::from(&mut out).and(&coil).for_each(|o, v| *o += v.norm_sqr());
    }
    out.mapv_inplace(f64::sqrt);
    out
}

impl Validate for SensitivityMaps {
    fn validate(&self) -> std::result::Result<(), Violation> {
        let (nc, ny, nx) = self.maps.dim();
        check(nc >= 1 && ny >= 1, || "maps".into(), "all dims >= 1")?;
        check(ny == nx, || "maps".into(), "square maps")?;
        if let Some(i) = first_non_finite_c(self.maps.iter().copied()) {
            return Err(Violation::new(format!("maps[flat {i}]"), "maps finite"));
        }
        for ((y, x), &r) in self.rss().indexed_iter() {
            if r > 0.0 && (r - 1.0).abs() > 1e-6 {
                return Err(Violation::new(format!("rss[{y},{x}]"), "unit root-sum-of-squares where nonzero"));
            }
        }
        Ok(())
    }
}

/// Complex 2D+t image `frames[[phase, y, x]]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CineImage {
    pub frames: Array3<C64>,
}

impl CineImage {
    pub fn zeros(n_phases: usize, n: usize) -> Self {
        CineImage { frames: Array3::zeros((n_phases, n, n)) }
    }

    pub fn n_phases(&self) -> usize {
        self.frames.dim().0
    }

    pub fn matrix_size(&self) -> usize {
        self.frames.dim().1
    }

    pub fn magnitude(&self) -> Array3<f64> {
        self.frames.mapv(|z| z.norm())
    }

    pub fn norm(&self) -> f64 {
        self.frames.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }
}

impl Validate for CineImage {
    fn validate(&self) -> std::result::Result<(), Violation> {
        let (t, ny, nx) = self.frames.dim();
        check(t >= 1 && ny >= 1, || "frames".into(), "all dims >= 1")?;
        check(ny == nx, || "frames".into(), "square frames")?;
        if let Some(i) = first_non_finite_c(self.frames.iter().copied()) {
            let (ft, fy, fx) = (i / (ny * nx), (i / nx) % ny, i % nx);
            return Err(Violation::new(format!("frames[{ft},{fy},{fx}]"), "all entries finite"));
        }
        Ok(())
    }
}

/// Density compensation weights `weights[[spoke, readout]]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DcfWeights {
    pub weights: Array2<f64>,
}

impl DcfWeights {
    /// Flattened in `(spoke, readout)` order.
    pub fn flat(&self) -> Vec<f64> {
        self.weights.iter().copied().collect()
    }
}

impl Validate for DcfWeights {
    fn validate(&self) -> std::result::Result<(), Violation> {
        for ((sp, ro), &w) in self.weights.indexed_iter() {
            check(w.is_finite(), || format!("weights[{sp},{ro}]"), "weights finite")?;
            check(w >= 0.0, || format!("weights[{sp},{ro}]"), "weights >= 0")?;
        }
        Ok(())
    }
}
