use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array4, ArrayView4, Axis};
use rand::SeedableRng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{CineImage, C64};

const IN_CHANNELS: usize = 3;
const OUT_CHANNELS: usize = 2;
const KERNEL: [usize; 3] = [3, 3, 3];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WeightsHeader {
    pub n_blocks: usize,
    pub channels: usize,
    pub kernel: [usize; 3],
    pub layers: Vec<LayerSpec>,
}

impl WeightsHeader {
    /// Layer list of the architecture: `conv_in`, `n_blocks` residual blocks
    /// of two convolutions, `conv_out`, each with weight `[out, in, 3, 3, 3]`
    /// and bias `[out]`.
    pub fn for_architecture(n_blocks: usize, channels: usize) -> Self {
        let mut layers = Vec::new();
        let mut conv = |name: String, out: usize, inp: usize| {
            layers.push(LayerSpec { name: format!("{name}.weight"), shape: vec![out, inp, KERNEL[0], KERNEL[1], KERNEL[2]] });
            layers.push(LayerSpec { name: format!("{name}.bias"), shape: vec![out] });
        };
        conv("conv_in".into(), channels, IN_CHANNELS);
        for b in 0..n_blocks {
            conv(format!("block{b}.conv1"), channels, channels);
            conv(format!("block{b}.conv2"), channels, channels);
        }
        conv("conv_out".into(), OUT_CHANNELS, channels);
        WeightsHeader { n_blocks, channels, kernel: KERNEL, layers }
    }
}

/// Weights of the residual 3-D CNN proximal operator.
#[derive(Debug, Clone, PartialEq)]
pub struct ProxWeights {
    pub header: WeightsHeader,
    /// One flat tensor per header layer, row-major.
    pub tensors: Vec<Vec<f32>>,
}

impl ProxWeights {
    pub fn zeros(n_blocks: usize, channels: usize) -> Self {
        let header = WeightsHeader::for_architecture(n_blocks, channels);
        let tensors = header.layers.iter().map(|l| vec![0.0; l.shape.iter().product()]).collect();
        ProxWeights { header, tensors }
    }

    pub fn validate(&self) -> Result<()> {
        let h = &self.header;
        if h.channels == 0 {
            return Err(Error::Weights("zero channels".into()));
        }
        if h.kernel != KERNEL {
            return Err(Error::Weights(format!("kernel {:?}, expected {KERNEL:?}", h.kernel)));
        }
        let want = WeightsHeader::for_architecture(h.n_blocks, h.channels);
        if want.layers != h.layers {
            return Err(Error::Weights(format!(
                "layer list does not match {} blocks of {} channels",
                h.n_blocks, h.channels
            )));
        }
        if self.tensors.len() != h.layers.len() {
            return Err(Error::Weights(format!("{} tensors for {} layers", self.tensors.len(), h.layers.len())));
        }
        for (l, t) in h.layers.iter().zip(&self.tensors) {
            if t.len() != l.shape.iter().product::<usize>() {
                return Err(Error::Weights(format!("{} has {} values for shape {:?}", l.name, t.len(), l.shape)));
            }
            if t.iter().any(|v| !v.is_finite()) {
                return Err(Error::Weights(format!("{} has non-finite values", l.name)));
            }
        }
        Ok(())
    }

    fn tensor(&self, name: &str) -> &[f32] {
        let i = self.header.layers.iter().position(|l| l.name == name).expect("validated layer list");
        &self.tensors[i]
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut Vec<f32>> {
        let i = self.header.layers.iter().position(|l| l.name == name)?;
        Some(&mut self.tensors[i])
    }

    /// `u64` LE header length, JSON header, then `f32` LE payloads in layer order.
    pub fn write(&self, path: &Path) -> Result<()> {
        self.validate()?;
        let header = serde_json::to_vec(&self.header)?;
        let mut buf = Vec::with_capacity(8 + header.len() + 4 * self.tensors.iter().map(Vec::len).sum::<usize>());
        buf.extend_from_slice(&(header.len() as u64).to_le_bytes());
        buf.extend_from_slice(&header);
        for t in &self.tensors {
            for v in t {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        std::fs::File::create(path).and_then(|mut f| f.write_all(&buf)).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path).and_then(|mut f| f.read_to_end(&mut bytes)).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let len_bytes: [u8; 8] = bytes.get(..8).and_then(|b| b.try_into().ok()).ok_or_else(|| Error::Weights("file shorter than header length".into()))?;
        let hlen = u64::from_le_bytes(len_bytes) as usize;
        let hbytes = bytes.get(8..8usize.saturating_add(hlen)).ok_or_else(|| Error::Weights("truncated header".into()))?;
        let header: WeightsHeader = serde_json::from_slice(hbytes).map_err(|e| Error::Weights(format!("header: {e}")))?;
        let mut pos = 8 + hlen;
        let mut tensors = Vec::with_capacity(header.layers.len());
        for l in &header.layers {
            let n: usize = l.shape.iter().product();
            let chunk = bytes.get(pos..pos + 4 * n).ok_or_else(|| Error::Weights(format!("payload of {} truncated", l.name)))?;
            tensors.push(chunk.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect());
            pos += 4 * n;
        }
        if pos != bytes.len() {
            return Err(Error::Weights(format!("{} trailing bytes", bytes.len() - pos)));
        }
        let w = ProxWeights { header, tensors };
        w.validate()?;
        Ok(w)
    }
}

/// Small zero-mean Gaussian weights, for exercising the operator only.
pub fn make_random_weights(n_blocks: usize, channels: usize, scale: f64, seed: u64) -> ProxWeights {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let g = Normal::new(0.0, scale.abs().max(f64::MIN_POSITIVE)).expect("finite scale");
    let mut w = ProxWeights::zeros(n_blocks, channels);
    for t in &mut w.tensors {
        t.iter_mut().for_each(|v| *v = g.sample(&mut rng) as f32);
    }
    w
}

/// Circular padding by one on the last three axes.
fn pad(x: ArrayView4<'_, f32>) -> Array4<f32> {
    let (c, t, y, xx) = x.dim();
    Array4::from_shape_fn((c, t + 2, y + 2, xx + 2), |(ci, a, b, d)| {
        x[[ci, (a + t - 1) % t, (b + y - 1) % y, (d + xx - 1) % xx]]
    })
}

/// 3x3x3 convolution with circular boundary on `[channel, t, y, x]`.
fn conv3(x: ArrayView4<'_, f32>, weight: &[f32], bias: &[f32], out_ch: usize) -> Array4<f32> {
    let (in_ch, nt, ny, nx) = x.dim();
    let p = pad(x);
    let planes: Vec<Vec<f32>> = (0..out_ch)
        .into_par_iter()
        .map(|o| {
            let mut acc = vec![bias[o]; nt * ny * nx];
            for i in 0..in_ch {
                let pi = p.index_axis(Axis(0), i);
                for dt in 0..3 {
                    for dy in 0..3 {
                        for dx in 0..3 {
                            let w = weight[(((o * in_ch + i) * 3 + dt) * 3 + dy) * 3 + dx];
                            if w == 0.0 {
                                continue;
                            }
                            for t in 0..nt {
                                for y in 0..ny {
                                    let src = pi.slice(ndarray::s![t + dt, y + dy, dx..dx + nx]);
                                    let dst = &mut acc[(t * ny + y) * nx..(t * ny + y + 1) * nx];
                                    for (d, s) in dst.iter_mut().zip(src.iter()) {
                                        *d += w * s;
                                    }
                                }
                            }
                        }
                    }
                }
            }
            acc
        })
        .collect();
    let flat: Vec<f32> = planes.into_iter().flatten().collect();
    Array4::from_shape_vec((out_ch, nt, ny, nx), flat).expect("conv output shape")
}

/// Residual CNN update of a cine stack; input channels are
/// `(re, im, k_over_k)` and the 2-channel output is added to `(re, im)`.
pub fn resnet_prox_infer(x: &CineImage, w: &ProxWeights, k_over_k: f64) -> Result<CineImage> {
    w.validate()?;
    let (nt, ny, nx) = x.frames.dim();
    if nt == 0 || ny == 0 || nx == 0 {
        return Err(Error::Empty("cine".into()));
    }
    let ch = w.header.channels;
    let mut inp = Array4::<f32>::zeros((IN_CHANNELS, nt, ny, nx));
    for ((t, i, j), z) in x.frames.indexed_iter() {
        inp[[0, t, i, j]] = z.re as f32;
        inp[[1, t, i, j]] = z.im as f32;
        inp[[2, t, i, j]] = k_over_k as f32;
    }
    let relu = |a: &mut Array4<f32>| a.mapv_inplace(|v| v.max(0.0));
    let mut h = conv3(inp.view(), w.tensor("conv_in.weight"), w.tensor("conv_in.bias"), ch);
    relu(&mut h);
    for b in 0..w.header.n_blocks {
        let mut r = conv3(h.view(), w.tensor(&format!("block{b}.conv1.weight")), w.tensor(&format!("block{b}.conv1.bias")), ch);
        relu(&mut r);
        let r = conv3(r.view(), w.tensor(&format!("block{b}.conv2.weight")), w.tensor(&format!("block{b}.conv2.bias")), ch);
        h += &r;
    }
    let out = conv3(h.view(), w.tensor("conv_out.weight"), w.tensor("conv_out.bias"), OUT_CHANNELS);
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("resnet activation".into()));
    }
    let mut frames = x.frames.clone();
    for ((t, i, j), z) in frames.indexed_iter_mut() {
        *z += C64::new(out[[0, t, i, j]] as f64, out[[1, t, i, j]] as f64);
    }
    Ok(CineImage { frames })
}
