//! Image-quality metrics on magnitude images: PSNR, SSIM, streak-artifact
//! ratio, and x-t line profiles.

use ndarray::{Array1, Array2, Array3, ArrayBase, ArrayView2, ArrayView3, Axis, Data, Dimension};
use rustfft::FftDirection;
use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::fft::fft2;
use crate::types::{CineImage, C64};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;
pub const SAR_LOWPASS_FRAC: f64 = 0.25;
pub const SAR_SUPPORT_FRAC: f64 = 0.05;

fn same_shape<A, B, S1, S2, D>(a: &ArrayBase<S1, D>, b: &ArrayBase<S2, D>) -> Result<()>
where
    S1: Data<Elem = A>,
    S2: Data<Elem = B>,
    D: Dimension,
{
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!("reference {:?} vs reconstruction {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

/// `20 log10(max(ref) / sqrt(MSE))`; identical inputs give `+inf`.
pub fn psnr<S1, S2, D>(reference: &ArrayBase<S1, D>, rec: &ArrayBase<S2, D>) -> Result<f64>
where
    S1: Data<Elem = f64>,
    S2: Data<Elem = f64>,
    D: Dimension,
{
    same_shape(reference, rec)?;
    let max = reference.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if reference.is_empty() || reference.iter().all(|&v| v == 0.0) {
        return Err(Error::Empty("reference image is all zero".into()));
    }
    let mse = reference.iter().zip(rec.iter()).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / reference.len() as f64;
    Ok(psnr_from_mse(max, mse))
}

pub fn psnr_from_mse(max: f64, mse: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        20.0 * (max / mse.sqrt()).log10()
    }
}

fn gaussian_window(len: usize, sigma: f64) -> Vec<f64> {
    let c = (len as f64 - 1.0) / 2.0;
    let w: Vec<f64> = (0..len).map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Separable "valid" filtering of a 2-D array along both axes.
fn filter_valid_2d(a: ArrayView2<'_, f64>, w: &[f64]) -> Array2<f64> {
    let (ny, nx) = a.dim();
    let k = w.len();
    let (oy, ox) = (ny + 1 - k, nx + 1 - k);
    let mut tmp = Array2::<f64>::zeros((ny, ox));
    for i in 0..ny {
        for j in 0..ox {
            tmp[[i, j]] = (0..k).map(|t| w[t] * a[[i, j + t]]).sum();
        }
    }
    Array2::from_shape_fn((oy, ox), |(i, j)| (0..k).map(|t| w[t] * tmp[[i + t, j]]).sum::<f64>())
}

fn ssim_window(n: usize) -> usize {
    let k = SSIM_WINDOW.min(n);
    if k.is_multiple_of(2) {
        k - 1
    } else {
        k
    }
}

fn ssim_from_moments(mx: f64, my: f64, sxx: f64, syy: f64, sxy: f64) -> f64 {
    let c1 = SSIM_K1.powi(2);
    let c2 = SSIM_K2.powi(2);
    ((2.0 * mx * my + c1) * (2.0 * sxy + c2)) / ((mx * mx + my * my + c1) * (sxx + syy + c2))
}

/// Mean SSIM of two images already scaled to a unit dynamic range.
pub fn ssim_normalized(x: ArrayView2<'_, f64>, y: ArrayView2<'_, f64>) -> Result<f64> {
    same_shape(&x, &y)?;
    let n = x.nrows().min(x.ncols());
    if n == 0 {
        return Err(Error::Empty("image".into()));
    }
    let w = gaussian_window(ssim_window(n), SSIM_SIGMA);
    let mx = filter_valid_2d(x, &w);
    let my = filter_valid_2d(y, &w);
    let xx = filter_valid_2d((&x * &x).view(), &w);
    let yy = filter_valid_2d((&y * &y).view(), &w);
    let xy = filter_valid_2d((&x * &y).view(), &w);
    let mut total = 0.0;
    for i in 0..mx.len() {
        let (a, b) = (mx.as_slice().unwrap()[i], my.as_slice().unwrap()[i]);
        let sxx = xx.as_slice().unwrap()[i] - a * a;
        let syy = yy.as_slice().unwrap()[i] - b * b;
        let sxy = xy.as_slice().unwrap()[i] - a * b;
        total += ssim_from_moments(a, b, sxx, syy, sxy);
    }
    Ok(total / mx.len() as f64)
}

fn ref_max<S: Data<Elem = f64>, D: Dimension>(reference: &ArrayBase<S, D>) -> Result<f64> {
    let max = reference.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(max > 0.0) {
        return Err(Error::Empty("reference image has no positive values".into()));
    }
    Ok(max)
}

/// SSIM with both images divided by the reference maximum.
pub fn ssim(reference: ArrayView2<'_, f64>, rec: ArrayView2<'_, f64>) -> Result<f64> {
    same_shape(&reference, &rec)?;
    let m = ref_max(&reference)?;
    ssim_normalized(reference.mapv(|v| v / m).view(), rec.mapv(|v| v / m).view())
}

/// 3-D SSIM over a `[T, N, N]` stack with a separable Gaussian window
/// (shortened along `t` when `T < 11`).
pub fn ssim_volume(reference: ArrayView3<'_, f64>, rec: ArrayView3<'_, f64>) -> Result<f64> {
    same_shape(&reference, &rec)?;
    let m = ref_max(&reference)?;
    let x = reference.mapv(|v| v / m);
    let y = rec.mapv(|v| v / m);
    let (nt, ny, nx) = x.dim();
    let wt = gaussian_window(ssim_window(nt), SSIM_SIGMA);
    let ws = gaussian_window(ssim_window(ny.min(nx)), SSIM_SIGMA);
    let filt = |a: &Array3<f64>| -> Array3<f64> {
        let frames: Vec<Array2<f64>> = a.outer_iter().map(|f| filter_valid_2d(f, &ws)).collect();
        let (oy, ox) = frames[0].dim();
        let ot = nt + 1 - wt.len();
        Array3::from_shape_fn((ot, oy, ox), |(t, i, j)| (0..wt.len()).map(|k| wt[k] * frames[t + k][[i, j]]).sum::<f64>())
    };
    let (mx, my) = (filt(&x), filt(&y));
    let (xx, yy, xy) = (filt(&(&x * &x)), filt(&(&y * &y)), filt(&(&x * &y)));
    let mut total = 0.0;
    for (((((a, b), p), q), r), _) in mx.iter().zip(my.iter()).zip(xx.iter()).zip(yy.iter()).zip(xy.iter()).zip(0..) {
        total += ssim_from_moments(*a, *b, p - a * a, q - b * b, r - a * b);
    }
    Ok(total / mx.len() as f64)
}

/// Radially symmetric Hann low-pass of an image (window radius
/// `lowpass_frac * 0.5` cycles/pixel), real part.
pub fn hann_lowpass(image: ArrayView2<'_, f64>, lowpass_frac: f64) -> Array2<f64> {
    let (ny, nx) = image.dim();
    let spec = fft2(&image.mapv(|v| C64::new(v, 0.0)), FftDirection::Forward);
    let radius = lowpass_frac * 0.5;
    let freq = |i: usize, n: usize| {
        let k = if i < n.div_ceil(2) { i as f64 } else { i as f64 - n as f64 };
        k / n as f64
    };
    let filtered = Array2::from_shape_fn((ny, nx), |(i, j)| {
        let r = freq(i, ny).hypot(freq(j, nx));
        let w = if r < radius { 0.5 * (1.0 + (std::f64::consts::PI * r / radius).cos()) } else { 0.0 };
        spec[[i, j]] * w
    });
    let back = fft2(&filtered, FftDirection::Inverse);
    let scale = 1.0 / (ny * nx) as f64;
    back.mapv(|z| z.re * scale)
}

/// Streak-artifact ratio `mean|I - I_ref| / mean(I_ref)` over the support
/// `I_ref > 0.05 max(I_ref)`.
pub fn sar(image: ArrayView2<'_, f64>, lowpass_frac: f64) -> Result<f64> {
    if !(lowpass_frac > 0.0 && lowpass_frac <= 1.0) {
        return Err(Error::OutOfRange(format!("lowpass_frac {lowpass_frac} not in (0, 1]")));
    }
    let iref = hann_lowpass(image, lowpass_frac);
    let max = iref.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let (mut num, mut den, mut count) = (0.0, 0.0, 0usize);
    for (&v, &r) in image.iter().zip(iref.iter()) {
        if r > SAR_SUPPORT_FRAC * max {
            num += (v - r).abs();
            den += r;
            count += 1;
        }
    }
    if count == 0 || !(den > 0.0) {
        return Err(Error::Empty("low-pass reference has zero mean".into()));
    }
    Ok(num / den)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LineAxis {
    Horizontal,
    Vertical,
}

/// `|cine|` along one image row (horizontal) or column (vertical), stacked
/// over frames into a `[T, N]` map.
pub fn xt_profile(cine: &CineImage, axis: LineAxis, index: usize) -> Result<Array2<f64>> {
    let n = cine.matrix_size();
    if index >= n {
        return Err(Error::OutOfRange(format!("line index {index} >= {n}")));
    }
    let mag = cine.magnitude();
    Ok(match axis {
        LineAxis::Horizontal => mag.index_axis(Axis(1), index).to_owned(),
        LineAxis::Vertical => mag.index_axis(Axis(2), index).to_owned(),
    })
}

fn ser_db<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_infinite() {
        s.serialize_str(if *v > 0.0 { "inf" } else { "-inf" })
    } else {
        s.serialize_f64(*v)
    }
}

fn ser_db_vec<S: Serializer>(v: &[f64], s: S) -> std::result::Result<S::Ok, S::Error> {
    use serde::ser::SerializeSeq;
    let mut seq = s.serialize_seq(Some(v.len()))?;
    for x in v {
        if x.is_infinite() {
            seq.serialize_element(if *x > 0.0 { "inf" } else { "-inf" })?;
        } else {
            seq.serialize_element(x)?;
        }
    }
    seq.end()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeanStd {
    #[serde(serialize_with = "ser_db")]
    pub mean: f64,
    #[serde(serialize_with = "ser_db")]
    pub std: f64,
}

impl MeanStd {
    pub fn of(v: &[f64]) -> Self {
        let n = v.len().max(1) as f64;
        let mean = v.iter().sum::<f64>() / n;
        if mean.is_infinite() {
            return MeanStd { mean, std: 0.0 };
        }
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        MeanStd { mean, std: var.sqrt() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricParams {
    pub ssim_window: usize,
    pub ssim_sigma: f64,
    pub ssim_k1: f64,
    pub ssim_k2: f64,
    pub sar_lowpass_frac: f64,
    pub sar_support_frac: f64,
}

impl Default for MetricParams {
    fn default() -> Self {
        MetricParams {
            ssim_window: SSIM_WINDOW,
            ssim_sigma: SSIM_SIGMA,
            ssim_k1: SSIM_K1,
            ssim_k2: SSIM_K2,
            sar_lowpass_frac: SAR_LOWPASS_FRAC,
            sar_support_frac: SAR_SUPPORT_FRAC,
        }
    }
}

/// Per-frame and aggregate quality numbers of one reconstruction.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricReport {
    #[serde(serialize_with = "ser_db_vec")]
    pub psnr_db: Vec<f64>,
    pub ssim: Vec<f64>,
    pub sar: Vec<f64>,
    pub psnr_summary: MeanStd,
    pub ssim_summary: MeanStd,
    pub sar_summary: MeanStd,
    /// PSNR over the whole stack with the stack maximum.
    #[serde(serialize_with = "ser_db")]
    pub psnr_stack_db: f64,
    pub ssim_volume: f64,
    pub params: MetricParams,
}

/// Compares magnitude images of a reconstruction with a reference stack.
pub fn evaluate(reference: ArrayView3<'_, f64>, rec: &CineImage) -> Result<MetricReport> {
    let mag = rec.magnitude();
    same_shape(&reference, &mag)?;
    let mut psnr_db = Vec::new();
    let mut ssims = Vec::new();
    let mut sars = Vec::new();
    for (r, m) in reference.outer_iter().zip(mag.outer_iter()) {
        psnr_db.push(psnr(&r, &m)?);
        ssims.push(ssim(r, m)?);
        sars.push(sar(m, SAR_LOWPASS_FRAC)?);
    }
    Ok(MetricReport {
        psnr_summary: MeanStd::of(&psnr_db),
        ssim_summary: MeanStd::of(&ssims),
        sar_summary: MeanStd::of(&sars),
        psnr_stack_db: psnr(&reference, &mag)?,
        ssim_volume: ssim_volume(reference, mag.view())?,
        psnr_db,
        ssim: ssims,
        sar: sars,
        params: MetricParams::default(),
    })
}

/// Mean of a 1-D array, used by report tables.
pub fn mean(v: &Array1<f64>) -> f64 {
    v.mean().unwrap_or(f64::NAN)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn textured(n: usize, seed: u64) -> Array2<f64> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((n, n), |(i, j)| 0.5 + 0.3 * ((i as f64 * 0.3).sin() * (j as f64 * 0.2).cos()) + 0.1 * rng.gen::<f64>())
    }

    #[test]
    fn psnr_examples() {
        let a = textured(16, 1);
        assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
        assert_eq!(psnr_from_mse(1.0, 0.01), 20.0);
        // 20 log10(2 / 0.1) = 20 (1 + log10 2)
        let want = 20.0 * (1.0 + 2f64.log10());
        assert!((psnr_from_mse(2.0, 0.01) - want).abs() < 1e-12);
        assert!((want - 26.0206).abs() < 1e-4);
        // every pixel off by 0.1 with max 1
        let mut r = Array2::zeros((4, 4));
        r[[0, 0]] = 1.0;
        let rec = r.mapv(|v| v + 0.1);
        assert!((psnr(&r, &rec).unwrap() - 20.0).abs() < 1e-9);
        assert!(psnr(&Array2::<f64>::zeros((2, 2)), &r.slice(ndarray::s![..2, ..2])).is_err());
    }

    #[test]
    fn psnr_decreases_with_noise() {
        let a = textured(32, 2);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let noise = Array2::from_shape_fn((32, 32), |_| rng.gen::<f64>() - 0.5);
        let vals: Vec<f64> = [0.01, 0.05, 0.2].iter().map(|s| psnr(&a, &(&a + &noise.mapv(|v| v * s))).unwrap()).collect();
        assert!(vals[0] > vals[1] && vals[1] > vals[2]);
    }

    #[test]
    fn ssim_examples() {
        let a = textured(32, 4);
        assert!((ssim(a.view(), a.view()).unwrap() - 1.0).abs() < 1e-9);
        let inv = a.mapv(|v| 1.0 - v);
        assert!(ssim(a.view(), inv.view()).unwrap() < 1.0);
        let flat = Array2::from_elem((20, 20), 0.5);
        assert!((ssim_normalized(flat.view(), flat.view()).unwrap() - 1.0).abs() < 1e-12);
        assert!(ssim(a.view(), flat.view()).is_err());
    }

    #[test]
    fn ssim_reference_value() {
        // 2x2 block computed by hand with a 1-tap window: stabilized local SSIM
        let x = ndarray::array![[0.2, 0.8], [0.4, 0.6]];
        let y = ndarray::array![[0.3, 0.7], [0.4, 0.5]];
        let (mx, my) = (0.5, 0.475);
        let sxx = (0.04 + 0.64 + 0.16 + 0.36) / 4.0 - mx * mx;
        let syy = (0.09 + 0.49 + 0.16 + 0.25) / 4.0 - my * my;
        let sxy = (0.06 + 0.56 + 0.16 + 0.30) / 4.0 - mx * my;
        let want = ssim_from_moments(mx, my, sxx, syy, sxy);
        let w = [0.5, 0.5];
        let f = |a: &Array2<f64>| filter_valid_2d(a.view(), &w)[[0, 0]];
        let got = ssim_from_moments(f(&x), f(&y), f(&(&x * &x)) - f(&x).powi(2), f(&(&y * &y)) - f(&y).powi(2), f(&(&x * &y)) - f(&x) * f(&y));
        assert!((got - want).abs() < 1e-12);
    }

    #[test]
    fn ssim_volume_identity() {
        let a = Array3::from_shape_fn((6, 16, 16), |(t, i, j)| 0.5 + 0.4 * ((t + i) as f64 * 0.3).sin() * (j as f64 * 0.2).cos());
        assert!((ssim_volume(a.view(), a.view()).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn sar_examples() {
        let flat = Array2::from_elem((32, 32), 3.0);
        assert!(sar(flat.view(), 0.25).unwrap() <= 1e-6);
        let blob = Array2::from_shape_fn((48, 48), |(i, j)| {
            let r = ((i as f64 - 24.0).powi(2) + (j as f64 - 24.0).powi(2)).sqrt();
            if r < 15.0 { 1.0 } else { 0.0 }
        });
        let base = sar(blob.view(), 0.25).unwrap();
        let streaked = Array2::from_shape_fn((48, 48), |(i, j)| blob[[i, j]] + 0.3 * (2.9 * (i as f64 + 0.7 * j as f64)).cos());
        assert!(sar(streaked.view(), 0.25).unwrap() > base);
        assert!(sar(flat.view(), 0.0).is_err());
        assert!(sar(Array2::<f64>::zeros((8, 8)).view(), 0.25).is_err());
    }

    #[test]
    fn xt_profile_shapes() {
        let mut cine = CineImage::zeros(5, 8);
        cine.frames.iter_mut().enumerate().for_each(|(i, v)| *v = C64::new((i % 64) as f64, 0.0));
        let p = xt_profile(&cine, LineAxis::Vertical, 3).unwrap();
        assert_eq!(p.dim(), (5, 8));
        assert!(p.outer_iter().all(|r| r == p.row(0)));
        assert_eq!(p[[0, 2]], (2 * 8 + 3) as f64);
        assert!(xt_profile(&cine, LineAxis::Horizontal, 8).is_err());
    }

    #[test]
    fn report_serializes_inf() {
        let mut cine = CineImage::zeros(2, 16);
        cine.frames.iter_mut().enumerate().for_each(|(i, v)| *v = C64::new(1.0 + (i % 7) as f64, 0.0));
        let r = evaluate(cine.magnitude().view(), &cine).unwrap();
        let js = serde_json::to_string(&r).unwrap();
        assert!(js.contains("\"psnr_stack_db\":\"inf\""), "{js}");
    }

    proptest! {
        #[test]
        fn sar_scale_invariant(seed in 0u64..1000, exp in -3i32..4) {
            let a = textured(24, seed);
            let c = 2f64.powi(exp);
            let s1 = sar(a.view(), 0.25).unwrap();
            let s2 = sar(a.mapv(|v| v * c).view(), 0.25).unwrap();
            prop_assert_eq!(s1.to_bits(), s2.to_bits());
        }

        #[test]
        fn ssim_symmetric(seed in 0u64..1000) {
            let a = textured(20, seed);
            let b = textured(20, seed + 1);
            let ab = ssim_normalized(a.view(), b.view()).unwrap();
            let ba = ssim_normalized(b.view(), a.view()).unwrap();
            prop_assert!((ab - ba).abs() < 1e-12);
            prop_assert!((-1.0..=1.0).contains(&ab));
        }
    }
}
