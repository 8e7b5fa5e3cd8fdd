//! Spatial covariance estimation and MVDR beamforming.
//!
//! Two covariance estimators are provided: a batch mask-weighted average and a
//! recursively smoothed (exponential forgetting) estimate normalised by the
//! equally smoothed mask weight. Both feed either MVDR formulation:
//!
//! - steering-vector MVDR, `w = Φₙ⁻¹d / (dᴴΦₙ⁻¹d)`;
//! - reference-channel MVDR, `w = Φₙ⁻¹Φₓ eᵣ / tr(Φₙ⁻¹Φₓ)`.

use nalgebra::{DMatrix, DVector};
use ndarray::{s, Array2, Array3, Array4, ArrayView2, ArrayView3, Axis};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::signal::Spectrogram;

/// Identity scale used when a bin has no mask weight at all.
pub const EMPTY_BIN_EPS: f64 = 1e-10;
const WEIGHT_FLOOR: f64 = 1e-10;
const SOUDEN_TRACE_FLOOR: f64 = 1e-10;
pub const DEFAULT_LOADING: f64 = 1e-6;

/// Per-bin C×C power spectral density matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialCovariance {
    /// `[bins × C × C]`
    pub matrices: Array3<Complex64>,
    /// Accumulated mask weight per bin.
    pub weight: Vec<f64>,
    /// Bins where the mask weight vanished and `ε·I` was substituted.
    pub fallback_bins: Vec<usize>,
}

impl SpatialCovariance {
    pub fn bins(&self) -> usize {
        self.matrices.dim().0
    }

    pub fn channels(&self) -> usize {
        self.matrices.dim().1
    }

    pub fn matrix(&self, f: usize) -> ArrayView2<'_, Complex64> {
        self.matrices.index_axis(Axis(0), f)
    }

    /// Largest deviation from Hermitian symmetry over all bins.
    pub fn hermitian_error(&self) -> f64 {
        let (bins, c, _) = self.matrices.dim();
        let mut worst: f64 = 0.0;
        for f in 0..bins {
            for i in 0..c {
                for j in 0..c {
                    let d = self.matrices[[f, i, j]] - self.matrices[[f, j, i]].conj();
                    worst = worst.max(d.norm());
                }
            }
        }
        worst
    }

    /// Smallest eigenvalue relative to the trace, minimised over bins.
    pub fn min_relative_eigenvalue(&self) -> f64 {
        (0..self.bins())
            .map(|f| {
                let m = linalg::to_na(self.matrix(f));
                let tr = linalg::real_trace(&m).max(f64::MIN_POSITIVE);
                let eig = m.symmetric_eigenvalues();
                eig.iter().cloned().fold(f64::INFINITY, f64::min) / tr
            })
            .fold(f64::INFINITY, f64::min)
    }
}

fn check_mask(spec: &Spectrogram, mask: ArrayView2<f64>) -> Result<()> {
    if mask.dim() != (spec.frames(), spec.bins()) {
        return Err(Error::shape(format!(
            "mask {:?} does not match spectrogram frames × bins ({}, {})",
            mask.dim(),
            spec.frames(),
            spec.bins()
        )));
    }
    if mask.iter().any(|m| !(0.0..=1.0).contains(m)) {
        return Err(Error::invalid("mask values must lie in [0, 1]"));
    }
    Ok(())
}

fn outer_accumulate(acc: &mut [Complex64], x: &[Complex64], weight: f64) {
    let c = x.len();
    for i in 0..c {
        let xi = x[i] * weight;
        for j in 0..c {
            acc[i * c + j] += xi * x[j].conj();
        }
    }
}

fn finish_bin(num: &[Complex64], weight: f64, c: usize) -> (Vec<Complex64>, bool) {
    if weight <= WEIGHT_FLOOR {
        let mut eye = vec![Complex64::new(0.0, 0.0); c * c];
        for i in 0..c {
            eye[i * c + i] = Complex64::new(EMPTY_BIN_EPS, 0.0);
        }
        return (eye, true);
    }
    let mut out: Vec<Complex64> = num.iter().map(|v| v / weight.max(WEIGHT_FLOOR)).collect();
    // Exact Hermitian symmetry.
    for i in 0..c {
        out[i * c + i] = Complex64::new(out[i * c + i].re, 0.0);
        for j in (i + 1)..c {
            out[j * c + i] = out[i * c + j].conj();
        }
    }
    (out, false)
}

fn assemble(per_bin: Vec<(Vec<Complex64>, f64, bool)>, c: usize) -> SpatialCovariance {
    let bins = per_bin.len();
    let mut matrices = Array3::zeros((bins, c, c));
    let mut weight = Vec::with_capacity(bins);
    let mut fallback_bins = Vec::new();
    for (f, (m, w, fb)) in per_bin.into_iter().enumerate() {
        matrices
            .index_axis_mut(Axis(0), f)
            .assign(&Array2::from_shape_vec((c, c), m).expect("c×c"));
        weight.push(w);
        if fb {
            fallback_bins.push(f);
        }
    }
    SpatialCovariance {
        matrices,
        weight,
        fallback_bins,
    }
}

/// Mask-weighted average `Σₜ m·x xᴴ / Σₜ m` per bin.
pub fn psd_batch(spec: &Spectrogram, mask: ArrayView2<f64>) -> Result<SpatialCovariance> {
    check_mask(spec, mask)?;
    let c = spec.channels();
    let per_bin = (0..spec.bins())
        .into_par_iter()
        .map(|f| {
            let mut num = vec![Complex64::new(0.0, 0.0); c * c];
            let mut w = 0.0;
            for t in 0..spec.frames() {
                let m = mask[[t, f]];
                if m == 0.0 {
                    continue;
                }
                let x = spec.observation(t, f);
                outer_accumulate(&mut num, &x, m);
                w += m;
            }
            let (mat, fb) = finish_bin(&num, w, c);
            (mat, w, fb)
        })
        .collect();
    Ok(assemble(per_bin, c))
}

/// Output of [`psd_recursive`].
#[derive(Debug, Clone)]
pub struct RecursivePsd {
    /// Smoothed estimate after every frame, `[frames × bins × C × C]`.
    pub per_frame: Array4<Complex64>,
    pub last: SpatialCovariance,
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid(format!(
            "forgetting factor {alpha} must lie in (0, 1)"
        )));
    }
    Ok(())
}

/// Runs the normalised recursion for one bin and hands every intermediate
/// estimate to `visit`.
fn recurse_bin(
    spec: &Spectrogram,
    mask: ArrayView2<f64>,
    f: usize,
    alpha: f64,
    mut visit: impl FnMut(usize, &[Complex64]),
) -> (Vec<Complex64>, f64, bool) {
    let c = spec.channels();
    let mut num = vec![Complex64::new(0.0, 0.0); c * c];
    let mut w = 0.0;
    let mut last = finish_bin(&num, 0.0, c);
    for t in 0..spec.frames() {
        let m = mask[[t, f]];
        for v in num.iter_mut() {
            *v *= alpha;
        }
        if m != 0.0 {
            let x = spec.observation(t, f);
            outer_accumulate(&mut num, &x, (1.0 - alpha) * m);
        }
        w = alpha * w + (1.0 - alpha) * m;
        last = finish_bin(&num, w, c);
        visit(t, &last.0);
    }
    (last.0, w, last.1)
}

/// Recursively smoothed PSD with mask-weighted normalisation:
/// `Nₜ = α Nₜ₋₁ + (1−α) mₜ xₜxₜᴴ`, `Wₜ = α Wₜ₋₁ + (1−α) mₜ`, `Φₜ = Nₜ / Wₜ`.
pub fn psd_recursive(
    spec: &Spectrogram,
    mask: ArrayView2<f64>,
    alpha: f64,
) -> Result<RecursivePsd> {
    check_mask(spec, mask)?;
    check_alpha(alpha)?;
    let c = spec.channels();
    let frames = spec.frames();
    type BinResult = (Array3<Complex64>, (Vec<Complex64>, f64, bool));
    let results: Vec<BinResult> = (0..spec.bins())
        .into_par_iter()
        .map(|f| {
            let mut traj = Array3::zeros((frames, c, c));
            let fin = recurse_bin(spec, mask, f, alpha, |t, m| {
                traj.index_axis_mut(Axis(0), t)
                    .assign(&ndarray::ArrayView2::from_shape((c, c), m).expect("c×c"));
            });
            (traj, fin)
        })
        .collect();
    let mut per_frame = Array4::zeros((frames, spec.bins(), c, c));
    let mut finals = Vec::with_capacity(results.len());
    for (f, (traj, fin)) in results.into_iter().enumerate() {
        per_frame.slice_mut(s![.., f, .., ..]).assign(&traj);
        finals.push(fin);
    }
    Ok(RecursivePsd {
        per_frame,
        last: assemble(finals, c),
    })
}

/// Final state of the recursion only, without storing the trajectory.
pub fn psd_recursive_final(
    spec: &Spectrogram,
    mask: ArrayView2<f64>,
    alpha: f64,
) -> Result<SpatialCovariance> {
    check_mask(spec, mask)?;
    check_alpha(alpha)?;
    let per_bin = (0..spec.bins())
        .into_par_iter()
        .map(|f| recurse_bin(spec, mask, f, alpha, |_, _| {}))
        .collect();
    Ok(assemble(per_bin, spec.channels()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MvdrVariant {
    SteeringMvdr,
    SoudenMvdr,
}

#[derive(Debug, Clone)]
pub struct BeamformerWeights {
    /// `[bins × C]`; the output is `wᴴx`.
    pub weights: Array2<Complex64>,
    pub variant: MvdrVariant,
    pub ref_channel: Option<usize>,
    pub steering: Option<Array2<Complex64>>,
    /// Bins whose solve failed or fell back, with a reason.
    pub bin_errors: Vec<(usize, String)>,
}

impl BeamformerWeights {
    pub fn bins(&self) -> usize {
        self.weights.nrows()
    }

    pub fn channels(&self) -> usize {
        self.weights.ncols()
    }
}

fn dvec(v: ndarray::ArrayView1<Complex64>) -> DVector<Complex64> {
    DVector::from_iterator(v.len(), v.iter().copied())
}

/// Steering-vector MVDR: minimises `wᴴΦₙw` subject to `wᴴd = 1`.
pub fn mvdr_steering(
    phi_noise: &SpatialCovariance,
    steering: ArrayView2<Complex64>,
    loading: f64,
) -> Result<BeamformerWeights> {
    let (bins, c) = (phi_noise.bins(), phi_noise.channels());
    if steering.dim() != (bins, c) {
        return Err(Error::shape(format!(
            "steering {:?} does not match covariance ({bins}, {c})",
            steering.dim()
        )));
    }
    let per_bin: Vec<std::result::Result<Vec<Complex64>, String>> = (0..bins)
        .into_par_iter()
        .map(|f| {
            let phi = linalg::diagonal_load(&linalg::to_na(phi_noise.matrix(f)), loading);
            let d = dvec(steering.row(f));
            let num = linalg::hpd_solve(&phi, &DMatrix::from_column_slice(c, 1, d.as_slice()))
                .ok_or_else(|| "noise covariance singular after loading".to_string())?;
            let denom = (d.adjoint() * &num)[(0, 0)];
            if denom.norm() < 1e-300 || !denom.re.is_finite() {
                return Err("steering vector has no response".to_string());
            }
            // w = Φ⁻¹d / (dᴴΦ⁻¹d); dᴴΦ⁻¹d is real for Hermitian Φ.
            let scale = 1.0 / denom.re;
            Ok(num.iter().map(|v| v * scale).collect())
        })
        .collect();

    let mut weights = Array2::zeros((bins, c));
    let mut bin_errors = Vec::new();
    for (f, r) in per_bin.into_iter().enumerate() {
        match r {
            Ok(w) => weights.row_mut(f).assign(&ndarray::Array1::from_vec(w)),
            Err(e) => bin_errors.push((f, e)),
        }
    }
    Ok(BeamformerWeights {
        weights,
        variant: MvdrVariant::SteeringMvdr,
        ref_channel: None,
        steering: Some(steering.to_owned()),
        bin_errors,
    })
}

/// Reference-channel MVDR: `w = Φₙ⁻¹Φₓ eᵣ / tr(Φₙ⁻¹Φₓ)`.
///
/// Bins where the trace vanishes pass the reference channel through.
pub fn mvdr_souden(
    phi_target: &SpatialCovariance,
    phi_noise: &SpatialCovariance,
    ref_channel: usize,
    loading: f64,
) -> Result<BeamformerWeights> {
    let (bins, c) = (phi_noise.bins(), phi_noise.channels());
    if phi_target.matrices.dim() != phi_noise.matrices.dim() {
        return Err(Error::shape("target and noise covariances differ in shape"));
    }
    if ref_channel >= c {
        return Err(Error::invalid(format!(
            "reference channel {ref_channel} out of range for {c} channels"
        )));
    }
    let per_bin: Vec<std::result::Result<Vec<Complex64>, String>> = (0..bins)
        .into_par_iter()
        .map(|f| {
            let phi_n = linalg::diagonal_load(&linalg::to_na(phi_noise.matrix(f)), loading);
            let phi_x = linalg::to_na(phi_target.matrix(f));
            let m = linalg::hpd_solve(&phi_n, &phi_x)
                .ok_or_else(|| "noise covariance singular after loading".to_string())?;
            let tr: f64 = (0..c).map(|i| m[(i, i)].re).sum();
            if !(tr >= SOUDEN_TRACE_FLOOR) {
                return Err(format!("trace {tr:e} below floor, reference passthrough"));
            }
            Ok((0..c).map(|i| m[(i, ref_channel)] / tr).collect())
        })
        .collect();

    let mut weights = Array2::zeros((bins, c));
    let mut bin_errors = Vec::new();
    for (f, r) in per_bin.into_iter().enumerate() {
        match r {
            Ok(w) => weights.row_mut(f).assign(&ndarray::Array1::from_vec(w)),
            Err(e) => {
                weights[[f, ref_channel]] = Complex64::new(1.0, 0.0);
                bin_errors.push((f, e));
            }
        }
    }
    Ok(BeamformerWeights {
        weights,
        variant: MvdrVariant::SoudenMvdr,
        ref_channel: Some(ref_channel),
        steering: None,
        bin_errors,
    })
}

/// `y(t,f) = w(f)ᴴ x(t,f)`, returned as a single-channel spectrogram.
pub fn apply_beamformer(weights: &BeamformerWeights, spec: &Spectrogram) -> Result<Spectrogram> {
    apply_weights(weights.weights.view(), spec)
}

pub(crate) fn apply_weights(w: ArrayView2<Complex64>, spec: &Spectrogram) -> Result<Spectrogram> {
    if w.dim() != (spec.bins(), spec.channels()) {
        return Err(Error::shape(format!(
            "weights {:?} do not match spectrogram bins × channels ({}, {})",
            w.dim(),
            spec.bins(),
            spec.channels()
        )));
    }
    let mut out = Array3::zeros((1, spec.frames(), spec.bins()));
    for t in 0..spec.frames() {
        for f in 0..spec.bins() {
            let mut acc = Complex64::new(0.0, 0.0);
            for c in 0..spec.channels() {
                acc += w[[f, c]].conj() * spec.data[[c, t, f]];
            }
            out[[0, t, f]] = acc;
        }
    }
    Ok(Spectrogram {
        data: out,
        params: spec.params,
        sample_rate: spec.sample_rate,
    })
}

/// Time-varying weights `[frames × bins × C]`, one filter per frame.
pub fn apply_adaptive(weights: ArrayView3<Complex64>, spec: &Spectrogram) -> Result<Spectrogram> {
    if weights.dim() != (spec.frames(), spec.bins(), spec.channels()) {
        return Err(Error::shape("adaptive weights do not match spectrogram"));
    }
    let mut out = Array3::zeros((1, spec.frames(), spec.bins()));
    for t in 0..spec.frames() {
        for f in 0..spec.bins() {
            let mut acc = Complex64::new(0.0, 0.0);
            for c in 0..spec.channels() {
                acc += weights[[t, f, c]].conj() * spec.data[[c, t, f]];
            }
            out[[0, t, f]] = acc;
        }
    }
    Ok(Spectrogram {
        data: out,
        params: spec.params,
        sample_rate: spec.sample_rate,
    })
}

/// Per-frame reference-channel MVDR from a recursive PSD trajectory.
pub fn souden_adaptive(
    target: &RecursivePsd,
    noise: &RecursivePsd,
    ref_channel: usize,
    loading: f64,
) -> Result<Array3<Complex64>> {
    let (frames, bins, c, _) = target.per_frame.dim();
    if noise.per_frame.dim() != target.per_frame.dim() {
        return Err(Error::shape(
            "target and noise trajectories differ in shape",
        ));
    }
    let mut out = Array3::zeros((frames, bins, c));
    for t in 0..frames {
        let phi_x = SpatialCovariance {
            matrices: target.per_frame.index_axis(Axis(0), t).to_owned(),
            weight: vec![1.0; bins],
            fallback_bins: vec![],
        };
        let phi_n = SpatialCovariance {
            matrices: noise.per_frame.index_axis(Axis(0), t).to_owned(),
            weight: vec![1.0; bins],
            fallback_bins: vec![],
        };
        let w = mvdr_souden(&phi_x, &phi_n, ref_channel, loading)?;
        out.index_axis_mut(Axis(0), t).assign(&w.weights);
    }
    Ok(out)
}

/// Picks the reference channel whose reference-channel MVDR has the largest
/// estimated output SNR `Σ wᴴΦₓw / Σ wᴴΦₙw`.
pub fn best_reference_channel(
    phi_target: &SpatialCovariance,
    phi_noise: &SpatialCovariance,
    loading: f64,
) -> Result<usize> {
    let c = phi_noise.channels();
    let mut best = (0, f64::NEG_INFINITY);
    for r in 0..c {
        let w = mvdr_souden(phi_target, phi_noise, r, loading)?;
        let mut sig = 0.0;
        let mut noise = 0.0;
        for f in 0..w.bins() {
            let wf = dvec(w.weights.row(f));
            let px = linalg::to_na(phi_target.matrix(f));
            let pn = linalg::to_na(phi_noise.matrix(f));
            sig += (wf.adjoint() * px * &wf)[(0, 0)].re;
            noise += (wf.adjoint() * pn * &wf)[(0, 0)].re;
        }
        let snr = sig / noise.max(1e-300);
        if snr > best.1 {
            best = (r, snr);
        }
    }
    Ok(best.0)
}

/// Principal eigenvector of each bin's covariance, scaled so the reference
/// entry is real and equal to one (relative transfer function).
pub fn principal_steering(phi: &SpatialCovariance, ref_channel: usize) -> Array2<Complex64> {
    let (bins, c) = (phi.bins(), phi.channels());
    let mut out = Array2::zeros((bins, c));
    for f in 0..bins {
        let eig = linalg::to_na(phi.matrix(f)).symmetric_eigen();
        let (imax, _) =
            eig.eigenvalues
                .iter()
                .enumerate()
                .fold(
                    (0, f64::NEG_INFINITY),
                    |a, (i, v)| if *v > a.1 { (i, *v) } else { a },
                );
        let v = eig.eigenvectors.column(imax);
        let r = v[ref_channel];
        let scale = if r.norm() > 1e-12 {
            Complex64::new(1.0, 0.0) / r
        } else {
            Complex64::new(1.0, 0.0)
        };
        for i in 0..c {
            out[[f, i]] = v[i] * scale;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::StftParams;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn spec_from(data: Array3<Complex64>) -> Spectrogram {
        // Only the bins dimension must match the params.
        let bins = data.dim().2;
        let fft = (bins - 1) * 2;
        let params = StftParams::new(fft, fft / 4, crate::Window::SqrtHann).unwrap();
        Spectrogram::new(data, params, 16000).unwrap()
    }

    fn random_spec(rng: &mut ChaCha8Rng, ch: usize, frames: usize, bins: usize) -> Spectrogram {
        let data = Array3::from_shape_fn((ch, frames, bins), |_| {
            c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
        });
        spec_from(data)
    }

    fn cov_from(mats: Vec<DMatrix<Complex64>>) -> SpatialCovariance {
        let c = mats[0].nrows();
        let mut m = Array3::zeros((mats.len(), c, c));
        for (f, mat) in mats.iter().enumerate() {
            m.index_axis_mut(Axis(0), f).assign(&linalg::from_na(mat));
        }
        SpatialCovariance {
            weight: vec![1.0; mats.len()],
            matrices: m,
            fallback_bins: vec![],
        }
    }

    #[test]
    fn batch_constant_observation_is_outer_product() {
        let x = [c(1.0, 0.5), c(-0.3, 2.0)];
        let data = Array3::from_shape_fn((2, 6, 3), |(ch, _, _)| x[ch]);
        let spec = spec_from(data);
        let mask = Array2::ones((6, 3));
        let phi = psd_batch(&spec, mask.view()).unwrap();
        for f in 0..3 {
            for i in 0..2 {
                for j in 0..2 {
                    assert_abs_diff_eq!(
                        (phi.matrices[[f, i, j]] - x[i] * x[j].conj()).norm(),
                        0.0,
                        epsilon = 1e-15
                    );
                }
            }
        }
    }

    #[test]
    fn batch_single_frame_mask() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let spec = random_spec(&mut rng, 3, 5, 3);
        let mut mask = Array2::zeros((5, 3));
        mask.row_mut(2).fill(0.4);
        let phi = psd_batch(&spec, mask.view()).unwrap();
        for f in 0..3 {
            let x = spec.observation(2, f);
            for i in 0..3 {
                for j in 0..3 {
                    assert_abs_diff_eq!(
                        (phi.matrices[[f, i, j]] - x[i] * x[j].conj()).norm(),
                        0.0,
                        epsilon = 1e-14
                    );
                }
            }
        }
    }

    #[test]
    fn batch_matches_naive_average() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let spec = random_spec(&mut rng, 3, 40, 5);
        let mask = Array2::from_shape_fn((40, 5), |_| rng.random_range(0.0..1.0));
        let phi = psd_batch(&spec, mask.view()).unwrap();
        for f in 0..5 {
            for i in 0..3 {
                for j in 0..3 {
                    let mut num = c(0.0, 0.0);
                    let mut den = 0.0;
                    for t in 0..40 {
                        num += spec.data[[i, t, f]] * spec.data[[j, t, f]].conj() * mask[[t, f]];
                        den += mask[[t, f]];
                    }
                    assert_abs_diff_eq!(
                        (phi.matrices[[f, i, j]] - num / den).norm(),
                        0.0,
                        epsilon = 1e-12
                    );
                }
            }
        }
        assert!(phi.hermitian_error() < 1e-10);
        assert!(phi.min_relative_eigenvalue() > -1e-8);
    }

    #[test]
    fn zero_mask_bin_falls_back() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let spec = random_spec(&mut rng, 2, 4, 3);
        let mut mask = Array2::ones((4, 3));
        mask.column_mut(1).fill(0.0);
        let phi = psd_batch(&spec, mask.view()).unwrap();
        assert_eq!(phi.fallback_bins, vec![1]);
        assert_eq!(phi.matrices[[1, 0, 0]], c(EMPTY_BIN_EPS, 0.0));
        assert_eq!(phi.matrices[[1, 0, 1]], c(0.0, 0.0));
    }

    #[test]
    fn mask_shape_and_range_checked() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let spec = random_spec(&mut rng, 2, 4, 3);
        assert!(matches!(
            psd_batch(&spec, Array2::ones((3, 3)).view()),
            Err(Error::Shape(_))
        ));
        assert!(psd_batch(&spec, Array2::from_elem((4, 3), 1.5).view()).is_err());
    }

    #[test]
    fn recursive_fixed_point() {
        let x = [c(0.2, -1.0), c(0.7, 0.1)];
        let spec = spec_from(Array3::from_shape_fn((2, 10, 3), |(ch, _, _)| x[ch]));
        let rec = psd_recursive(&spec, Array2::ones((10, 3)).view(), 0.9).unwrap();
        for t in 0..10 {
            for i in 0..2 {
                for j in 0..2 {
                    let d = rec.per_frame[[t, 1, i, j]] - x[i] * x[j].conj();
                    assert!(d.norm() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn recursive_three_frames_closed_form() {
        let alpha: f64 = 0.95;
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let spec = random_spec(&mut rng, 2, 3, 3);
        let mask = ndarray::array![[0.2, 1.0, 0.0], [0.0, 0.5, 0.0], [0.9, 0.3, 0.0]];
        let rec = psd_recursive(&spec, mask.view(), alpha).unwrap();
        // Exponential weights (1−α)α^{t−τ}; the common (1−α) cancels in the ratio.
        for f in 0..2 {
            for t in 0..3 {
                let mut num = Array2::<Complex64>::zeros((2, 2));
                let mut den = 0.0;
                for tau in 0..=t {
                    let w = (1.0 - alpha) * alpha.powi((t - tau) as i32) * mask[[tau, f]];
                    for i in 0..2 {
                        for j in 0..2 {
                            num[[i, j]] +=
                                spec.data[[i, tau, f]] * spec.data[[j, tau, f]].conj() * w;
                        }
                    }
                    den += w;
                }
                for i in 0..2 {
                    for j in 0..2 {
                        let expect = if den > 0.0 {
                            num[[i, j]] / den
                        } else if i == j {
                            c(EMPTY_BIN_EPS, 0.0)
                        } else {
                            c(0.0, 0.0)
                        };
                        assert!((rec.per_frame[[t, f, i, j]] - expect).norm() < 1e-10);
                    }
                }
            }
        }
        // Bin 2 never sees mask weight.
        assert_eq!(rec.last.fallback_bins, vec![2]);
        let fin = psd_recursive_final(&spec, mask.view(), alpha).unwrap();
        assert_eq!(fin, rec.last);
    }

    #[test]
    fn alpha_out_of_range_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let spec = random_spec(&mut rng, 2, 3, 3);
        let m = Array2::ones((3, 3));
        for a in [0.0, 1.0, -0.2, 1.5] {
            assert!(psd_recursive(&spec, m.view(), a).is_err());
        }
    }

    #[test]
    fn steering_identity_noise_is_matched_filter() {
        let d = DVector::from_vec(vec![c(0.6, 0.0), c(0.0, 0.8)]);
        let phi = cov_from(vec![DMatrix::identity(2, 2)]);
        let st = Array2::from_shape_vec((1, 2), d.iter().copied().collect()).unwrap();
        let w = mvdr_steering(&phi, st.view(), 0.0).unwrap();
        for i in 0..2 {
            assert!((w.weights[[0, i]] - d[i]).norm() < 1e-12);
        }
    }

    #[test]
    fn steering_diag_noise_hand_solution() {
        let s2 = std::f64::consts::SQRT_2;
        let mut phi = DMatrix::identity(2, 2);
        phi[(1, 1)] = c(4.0, 0.0);
        let phi = cov_from(vec![phi]);
        let st = Array2::from_elem((1, 2), c(1.0 / s2, 0.0));
        let w = mvdr_steering(&phi, st.view(), 0.0).unwrap();
        let expect = [8.0 / 5.0 / s2, 2.0 / 5.0 / s2];
        for (i, e) in expect.iter().enumerate() {
            assert!((w.weights[[0, i]] - c(*e, 0.0)).norm() < 1e-12);
        }
        // Generic LU solve as a second route.
        let m =
            DMatrix::from_row_slice(2, 2, &[c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(4.0, 0.0)]);
        let d = DVector::from_element(2, c(1.0 / s2, 0.0));
        let u = m.lu().solve(&d).unwrap();
        let denom = (d.adjoint() * &u)[(0, 0)];
        for i in 0..2 {
            assert!((w.weights[[0, i]] - u[i] / denom).norm() < 1e-12);
        }
    }

    #[test]
    fn souden_identity_case() {
        let eye = cov_from(vec![DMatrix::identity(2, 2)]);
        let w = mvdr_souden(&eye, &eye, 0, 0.0).unwrap();
        assert!((w.weights[[0, 0]] - c(0.5, 0.0)).norm() < 1e-12);
        assert!(w.weights[[0, 1]].norm() < 1e-12);
        assert!(w.bin_errors.is_empty());
    }

    #[test]
    fn souden_zero_target_passes_reference_through() {
        let eye = cov_from(vec![DMatrix::identity(3, 3)]);
        let zero = cov_from(vec![DMatrix::zeros(3, 3)]);
        let w = mvdr_souden(&zero, &eye, 1, DEFAULT_LOADING).unwrap();
        assert_eq!(w.weights[[0, 1]], c(1.0, 0.0));
        assert_eq!(w.bin_errors.len(), 1);
        assert!(mvdr_souden(&zero, &eye, 3, DEFAULT_LOADING).is_err());
    }

    #[test]
    fn apply_unit_and_zero_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let spec = random_spec(&mut rng, 3, 4, 5);
        let mut w = Array2::zeros((5, 3));
        w.column_mut(0).fill(c(1.0, 0.0));
        let y = apply_weights(w.view(), &spec).unwrap();
        assert_eq!(
            y.data.index_axis(Axis(0), 0),
            spec.data.index_axis(Axis(0), 0)
        );
        let z = apply_weights(Array2::zeros((5, 3)).view(), &spec).unwrap();
        assert!(z.data.iter().all(|v| v.norm() == 0.0));
        assert!(apply_weights(Array2::zeros((4, 3)).view(), &spec).is_err());
    }

    #[test]
    fn adaptive_matches_static_for_constant_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let spec = random_spec(&mut rng, 2, 4, 3);
        let w = Array2::from_shape_fn((3, 2), |_| {
            c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
        });
        let tv = Array3::from_shape_fn((4, 3, 2), |(_, f, ch)| w[[f, ch]]);
        let a = apply_weights(w.view(), &spec).unwrap();
        let b = apply_adaptive(tv.view(), &spec).unwrap();
        assert_eq!(a.data, b.data);
    }
}
