//! Container files of a run directory.
//!
//! | file | contents |
//! |---|---|
//! | `kspace.npy` | `<c16 [readout, spoke, coil]` |
//! | `spoke_times.npy` | `<f8 [spoke]`, seconds |
//! | `traj.npy` | `<f8 [spoke, readout, 2]`, `(ky, kx)` in cycles/pixel |
//! | `maps.npy` | `<c16 [coil, y, x]` |
//! | `truth.npy`, `image.npy` | `<c16 [phase, y, x]` |
//! | `noise.npy` | `<c16 [sample, coil]` |
//! | `physio.json` | triggers, bellows samples and rate, duration |
//! | binned directory | `phase_{t}_kspace.npy`, `phase_{t}_traj.npy`, `binned.json` |

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, Array3};
use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::array_io;
use crate::error::{Error, Result};
use crate::phantom::{PhantomConfig, Simulation};
use crate::types::{BinnedKSpace, CineImage, PhaseBin, PhysioTrace, RadialKSpace, SensitivityMaps, Trajectory, C64};

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn write_kspace(dir: &Path, prefix: &str, y: &RadialKSpace) -> Result<()> {
    array_io::write(dir.join(format!("{prefix}kspace.npy")), &y.data)?;
    array_io::write(dir.join(format!("{prefix}spoke_times.npy")), &Array1::from(y.spoke_timestamps.clone()))
}

pub fn read_kspace(dir: &Path, prefix: &str) -> Result<RadialKSpace> {
    let data: Array3<C64> = array_io::read(dir.join(format!("{prefix}kspace.npy")))?;
    let ts: Array1<f64> = array_io::read(dir.join(format!("{prefix}spoke_times.npy")))?;
    RadialKSpace::new(data, ts.to_vec())
}

#[derive(Serialize, Deserialize)]
struct TrajMeta {
    angle_increment_deg: f64,
}

pub fn write_traj(dir: &Path, prefix: &str, traj: &Trajectory) -> Result<()> {
    array_io::write(dir.join(format!("{prefix}traj.npy")), &traj.coords)?;
    write_json(&dir.join(format!("{prefix}traj.json")), &TrajMeta { angle_increment_deg: traj.angle_increment_deg })
}

pub fn read_traj(dir: &Path, prefix: &str) -> Result<Trajectory> {
    let coords = array_io::read(dir.join(format!("{prefix}traj.npy")))?;
    let meta: TrajMeta = read_json(&dir.join(format!("{prefix}traj.json")))?;
    Ok(Trajectory { coords, angle_increment_deg: meta.angle_increment_deg })
}

pub fn write_cine(path: &Path, x: &CineImage) -> Result<()> {
    array_io::write(path, &x.frames)
}

pub fn read_cine(path: &Path) -> Result<CineImage> {
    Ok(CineImage { frames: array_io::read(path)? })
}

pub fn write_maps(path: &Path, m: &SensitivityMaps) -> Result<()> {
    array_io::write(path, &m.maps)
}

pub fn read_maps(path: &Path) -> Result<SensitivityMaps> {
    Ok(SensitivityMaps { maps: array_io::read(path)? })
}

#[derive(Serialize, Deserialize)]
struct BinnedMeta {
    n_phases: usize,
    n_source_spokes: usize,
    indices: Vec<Vec<usize>>,
}

/// Writes one binned k-space directory.
pub fn write_binned(dir: &Path, b: &BinnedKSpace) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (t, ph) in b.phases.iter().enumerate() {
        write_kspace(dir, &format!("phase_{t}_"), &ph.kspace)?;
        write_traj(dir, &format!("phase_{t}_"), &ph.traj)?;
    }
    let meta = BinnedMeta { n_phases: b.n_phases(), n_source_spokes: b.n_source_spokes, indices: b.phases.iter().map(|p| p.indices.clone()).collect() };
    write_json(&dir.join("binned.json"), &meta)
}

pub fn read_binned(dir: &Path) -> Result<BinnedKSpace> {
    let meta: BinnedMeta = read_json(&dir.join("binned.json"))?;
    if meta.indices.len() != meta.n_phases {
        return Err(Error::Shape(format!("binned.json lists {} index sets for {} phases", meta.indices.len(), meta.n_phases)));
    }
    let phases = meta
        .indices
        .into_iter()
        .enumerate()
        .map(|(t, indices)| {
            let prefix = format!("phase_{t}_");
            Ok(PhaseBin { indices, kspace: read_kspace(dir, &prefix)?, traj: read_traj(dir, &prefix)? })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BinnedKSpace { phases, n_source_spokes: meta.n_source_spokes })
}

pub fn write_simulation(dir: &Path, sim: &Simulation) -> Result<()> {
    write_kspace(dir, "", &sim.kspace)?;
    write_traj(dir, "", &sim.traj)?;
    write_maps(&dir.join("maps.npy"), &sim.maps)?;
    write_cine(&dir.join("truth.npy"), &sim.truth)?;
    array_io::write(dir.join("noise.npy"), &sim.noise_scan)?;
    write_json(&dir.join("physio.json"), &sim.trace)?;
    write_json(&dir.join("phantom.json"), &sim.config)
}

pub fn read_simulation(dir: &Path) -> Result<Simulation> {
    let config: PhantomConfig = read_json(&dir.join("phantom.json"))?;
    let trace: PhysioTrace = read_json(&dir.join("physio.json"))?;
    let noise_scan: Array2<C64> = array_io::read(dir.join("noise.npy"))?;
    Ok(Simulation {
        config,
        maps: read_maps(&dir.join("maps.npy"))?,
        trace,
        traj: read_traj(dir, "")?,
        kspace: read_kspace(dir, "")?,
        truth: read_cine(&dir.join("truth.npy"))?,
        noise_scan,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::preprocess::{make_trajectory, GOLDEN_ANGLE_DEG};

    #[test]
    fn binned_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let traj = make_trajectory(6, 8, GOLDEN_ANGLE_DEG).unwrap();
        let data = Array3::from_shape_fn((8, 6, 2), |(r, s, c)| C64::new(r as f64, (s * 2 + c) as f64));
        let y = RadialKSpace::new(data, (0..6).map(|i| i as f64 * 0.01).collect()).unwrap();
        let idx = [vec![0, 2, 4], vec![1, 5]];
        let b = BinnedKSpace {
            phases: idx.iter().map(|i| PhaseBin { indices: i.clone(), kspace: y.select_spokes(i), traj: traj.select_spokes(i) }).collect(),
            n_source_spokes: 6,
        };
        write_binned(dir.path(), &b).unwrap();
        assert_eq!(read_binned(dir.path()).unwrap(), b);
        fs::remove_file(dir.path().join("phase_1_traj.npy")).unwrap();
        assert!(matches!(read_binned(dir.path()), Err(Error::Io { .. })));
    }
}
