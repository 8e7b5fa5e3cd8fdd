//! Guided source separation.
//!
//! Speaker segments drive a complex angular central Gaussian mixture model
//! (CACGMM) fitted independently per frequency bin. The mixture weight of a
//! class at frame `t` is uniform over the classes active at `t` and zero
//! otherwise, so the class order is the same in every bin and no permutation
//! alignment is needed.

use nalgebra::DMatrix;
use ndarray::{s, Array2, Array3, Array4, Axis};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::beamform::{self, MvdrVariant};
use crate::error::{Error, Result};
use crate::linalg;
use crate::signal::{istft, stft, MultiChannelWave, Spectrogram, StftParams};

pub const NOISE_LABEL: &str = "noise";

/// Activity intervals `[start, end)` in seconds for one speaker.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentAnnotation {
    pub speaker: String,
    pub intervals: Vec<(f64, f64)>,
}

impl SegmentAnnotation {
    /// Validates that intervals are sorted, non-overlapping and non-empty.
    pub fn new(speaker: impl Into<String>, intervals: Vec<(f64, f64)>) -> Result<Self> {
        let speaker = speaker.into();
        for (i, &(a, b)) in intervals.iter().enumerate() {
            if !a.is_finite() || !b.is_finite() || b <= a {
                return Err(Error::invalid(format!(
                    "{speaker}: interval [{a}, {b}) must have end > start"
                )));
            }
            if i > 0 && a < intervals[i - 1].1 {
                return Err(Error::invalid(format!(
                    "{speaker}: intervals must be sorted and non-overlapping"
                )));
            }
        }
        Ok(Self { speaker, intervals })
    }

    /// Sorts arbitrary intervals and merges overlapping or touching ones.
    pub fn from_unsorted(
        speaker: impl Into<String>,
        mut intervals: Vec<(f64, f64)>,
    ) -> Result<Self> {
        intervals.retain(|(a, b)| b > a);
        intervals.sort_by(|x, y| x.0.total_cmp(&y.0));
        let mut merged: Vec<(f64, f64)> = Vec::with_capacity(intervals.len());
        for (a, b) in intervals {
            match merged.last_mut() {
                Some(last) if a <= last.1 => last.1 = last.1.max(b),
                _ => merged.push((a, b)),
            }
        }
        Self::new(speaker, merged)
    }

    pub fn is_empty(&self) -> bool {
        self.intervals.is_empty()
    }

    pub fn contains(&self, time: f64) -> bool {
        self.intervals.iter().any(|&(a, b)| time >= a && time < b)
    }

    pub fn end(&self) -> f64 {
        self.intervals.last().map_or(0.0, |i| i.1)
    }

    pub fn total_duration(&self) -> f64 {
        self.intervals.iter().map(|(a, b)| b - a).sum()
    }
}

/// Binary class activity per frame: one row per speaker plus a final,
/// always-active noise row.
#[derive(Debug, Clone, PartialEq)]
pub struct Activity {
    pub labels: Vec<String>,
    /// `[classes × frames]`
    pub matrix: Array2<bool>,
}

impl Activity {
    pub fn classes(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn frames(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn is_active(&self, class: usize, frame: usize) -> bool {
        self.matrix[[class, frame]]
    }
}

/// Marks a speaker active on every frame whose centre lies inside one of
/// its intervals dilated by `context_s` on each side.
pub fn activity_matrix(
    annotations: &[SegmentAnnotation],
    n_frames: usize,
    params: &StftParams,
    sample_rate: u32,
    context_s: f64,
) -> Activity {
    let k = annotations.len();
    let mut matrix = Array2::from_elem((k + 1, n_frames), false);
    for (row, ann) in annotations.iter().enumerate() {
        for t in 0..n_frames {
            let centre = params.frame_time(t, sample_rate);
            matrix[[row, t]] = ann
                .intervals
                .iter()
                .any(|&(a, b)| centre >= a - context_s && centre < b + context_s);
        }
    }
    matrix.row_mut(k).fill(true);
    let mut labels: Vec<String> = annotations.iter().map(|a| a.speaker.clone()).collect();
    labels.push(NOISE_LABEL.to_string());
    Activity { labels, matrix }
}

/// Time-frequency posteriors, `[classes × frames × bins]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskSet {
    pub masks: Array3<f64>,
    pub class_labels: Vec<String>,
}

impl MaskSet {
    pub fn class_mask(&self, label: &str) -> Option<ndarray::ArrayView2<'_, f64>> {
        let k = self.class_labels.iter().position(|l| l == label)?;
        Some(self.masks.index_axis(Axis(0), k))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CacgmmState {
    /// `[classes × bins × C × C]`, trace normalised to C.
    pub shape_matrices: Array4<Complex64>,
    /// Total log-likelihood over all bins, one entry per iteration.
    pub log_likelihood_trace: Vec<f64>,
    pub warnings: Vec<String>,
}

const NORM_FLOOR: f64 = 1e-12;
const QUAD_FLOOR: f64 = 1e-10;
const SHAPE_REG: f64 = 1e-6;

struct BinResult {
    gamma: Array2<f64>,
    shapes: Vec<DMatrix<Complex64>>,
    ll: Vec<f64>,
}

fn ln_factorial(n: usize) -> f64 {
    (1..=n).map(|i| (i as f64).ln()).sum()
}

/// Inverse (row-major) and log-determinant of a shape matrix after loading.
fn shape_inverse(b: &DMatrix<Complex64>) -> Result<(Vec<Complex64>, f64)> {
    let loaded = linalg::diagonal_load(b, SHAPE_REG);
    let (inv, logdet) = linalg::hpd_inverse(&loaded)
        .ok_or_else(|| Error::Numerical("CACGMM shape matrix singular after loading".into()))?;
    Ok((linalg::row_major(&inv), logdet))
}

fn em_bin(
    spec: &Spectrogram,
    f: usize,
    activity: &Activity,
    class_has_frames: &[bool],
    n_iter: usize,
) -> Result<BinResult> {
    let c = spec.channels();
    let n = spec.frames();
    let k = activity.classes();
    let cf = c as f64;
    let log_norm = ln_factorial(c - 1) - std::f64::consts::LN_2 - cf * std::f64::consts::PI.ln();

    // Unit-norm observations; `None` for near-silent frames.
    let obs: Vec<Option<Vec<Complex64>>> = (0..n)
        .map(|t| {
            let x = spec.observation(t, f);
            let norm = x.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
            (norm >= NORM_FLOOR).then(|| x.iter().map(|v| v / norm).collect())
        })
        .collect();
    let n_active: Vec<f64> = (0..n)
        .map(|t| (0..k).filter(|&j| activity.is_active(j, t)).count() as f64)
        .collect();

    let mut gamma = Array2::zeros((k, n));
    for t in 0..n {
        for j in 0..k {
            if activity.is_active(j, t) {
                gamma[[j, t]] = 1.0 / n_active[t];
            }
        }
    }
    let mut shapes: Vec<DMatrix<Complex64>> = vec![DMatrix::identity(c, c); k];
    let mut ll_trace = Vec::with_capacity(n_iter);
    let mut logp = vec![0.0; k];

    for _ in 0..n_iter {
        // M-step: one fixed-point update of each shape matrix.
        for j in 0..k {
            if !class_has_frames[j] {
                continue;
            }
            let (inv, _) = shape_inverse(&shapes[j])?;
            let mut acc = vec![Complex64::new(0.0, 0.0); c * c];
            let mut total = 0.0;
            for t in 0..n {
                let g = gamma[[j, t]];
                let Some(z) = &obs[t] else { continue };
                if g == 0.0 {
                    continue;
                }
                let q = linalg::quad_form(&inv, z).max(QUAD_FLOOR);
                let w = g / q;
                for a in 0..c {
                    let za = z[a] * w;
                    for b in 0..c {
                        acc[a * c + b] += za * z[b].conj();
                    }
                }
                total += g;
            }
            if total <= 0.0 {
                continue;
            }
            let mut b = DMatrix::from_row_slice(c, c, &acc) * Complex64::new(cf / total, 0.0);
            linalg::hermitize(&mut b);
            for i in 0..c {
                b[(i, i)] += Complex64::new(SHAPE_REG, 0.0);
            }
            let tr = linalg::real_trace(&b);
            if tr > 0.0 {
                b *= Complex64::new(cf / tr, 0.0);
            }
            shapes[j] = b;
        }

        // E-step with time-varying weights tied to the activity.
        let inverses: Vec<(Vec<Complex64>, f64)> =
            shapes.iter().map(shape_inverse).collect::<Result<_>>()?;
        let mut ll = 0.0;
        for t in 0..n {
            let Some(z) = &obs[t] else { continue };
            let mut max = f64::NEG_INFINITY;
            for j in 0..k {
                if !activity.is_active(j, t) {
                    logp[j] = f64::NEG_INFINITY;
                    continue;
                }
                let (inv, logdet) = &inverses[j];
                let q = linalg::quad_form(inv, z).max(QUAD_FLOOR);
                logp[j] = -n_active[t].ln() + log_norm - logdet - cf * q.ln();
                max = max.max(logp[j]);
            }
            let sum: f64 = logp.iter().map(|lp| (lp - max).exp()).sum();
            let lse = max + sum.ln();
            ll += lse;
            for j in 0..k {
                gamma[[j, t]] = if activity.is_active(j, t) {
                    (logp[j] - lse).exp()
                } else {
                    0.0
                };
            }
        }
        ll_trace.push(ll);
    }

    Ok(BinResult {
        gamma,
        shapes,
        ll: ll_trace,
    })
}

/// Fits the activity-guided CACGMM independently in every frequency bin.
pub fn cacgmm_em(
    spec: &Spectrogram,
    activity: &Activity,
    n_iter: usize,
) -> Result<(MaskSet, CacgmmState)> {
    let c = spec.channels();
    if c < 2 {
        return Err(Error::invalid("mask estimation needs at least 2 channels"));
    }
    if n_iter == 0 {
        return Err(Error::invalid("n_iter must be at least 1"));
    }
    if activity.frames() != spec.frames() {
        return Err(Error::shape(format!(
            "activity covers {} frames, spectrogram has {}",
            activity.frames(),
            spec.frames()
        )));
    }
    let k = activity.classes();
    let class_has_frames: Vec<bool> = (0..k)
        .map(|j| activity.matrix.row(j).iter().any(|a| *a))
        .collect();
    let mut warnings = Vec::new();
    for (j, has) in class_has_frames.iter().enumerate() {
        if !has {
            warnings.push(format!(
                "class '{}' has no active frames; mask left at zero",
                activity.labels[j]
            ));
        }
    }

    let results: Vec<BinResult> = (0..spec.bins())
        .into_par_iter()
        .map(|f| em_bin(spec, f, activity, &class_has_frames, n_iter))
        .collect::<Result<_>>()?;

    let (n, bins) = (spec.frames(), spec.bins());
    let mut masks = Array3::zeros((k, n, bins));
    let mut shape_matrices = Array4::zeros((k, bins, c, c));
    let mut trace = vec![0.0; n_iter];
    for (f, r) in results.into_iter().enumerate() {
        masks.slice_mut(s![.., .., f]).assign(&r.gamma);
        for (j, b) in r.shapes.iter().enumerate() {
            shape_matrices
                .slice_mut(s![j, f, .., ..])
                .assign(&linalg::from_na(b));
        }
        for (i, v) in r.ll.iter().enumerate() {
            trace[i] += v;
        }
    }
    Ok((
        MaskSet {
            masks,
            class_labels: activity.labels.clone(),
        },
        CacgmmState {
            shape_matrices,
            log_likelihood_trace: trace,
            warnings,
        },
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "kebab-case")]
pub enum PsdMethod {
    Batch,
    Recursive { alpha: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GssConfig {
    pub stft: StftParams,
    /// Seconds of audio added on each side of a segment before mask estimation.
    pub context_s: f64,
    /// Dilation applied to every speaker interval in the activity matrix.
    pub activity_dilation_s: f64,
    pub n_iter: usize,
    /// Lower bound for the target mask applied as a postfilter; `None` disables it.
    pub mask_floor: Option<f64>,
    pub psd: PsdMethod,
    pub variant: MvdrVariant,
    pub loading: f64,
    /// Noise PSD floored at this many dB below the target PSD trace, so
    /// near noise-free segments do not invert a degenerate matrix.
    pub max_snr_db: Option<f64>,
    /// Beamformer reference channel; chosen by estimated output SNR when absent.
    pub ref_channel: Option<usize>,
    /// Per-frame weights from the recursive PSD trajectory instead of one
    /// filter per segment.
    pub adaptive: bool,
}

impl Default for GssConfig {
    fn default() -> Self {
        Self {
            stft: StftParams::default(),
            context_s: 15.0,
            activity_dilation_s: 0.0,
            n_iter: 20,
            mask_floor: None,
            psd: PsdMethod::Recursive { alpha: 0.99 },
            variant: MvdrVariant::SoudenMvdr,
            loading: beamform::DEFAULT_LOADING,
            max_snr_db: Some(40.0),
            ref_channel: None,
            adaptive: false,
        }
    }
}

impl GssConfig {
    pub fn validate(&self) -> Result<()> {
        self.stft.validate()?;
        if !(self.context_s >= 0.0) || !(self.activity_dilation_s >= 0.0) {
            return Err(Error::invalid("context and dilation must be non-negative"));
        }
        if self.n_iter == 0 {
            return Err(Error::invalid("n_iter must be at least 1"));
        }
        if let Some(fl) = self.mask_floor {
            if !(0.0..=1.0).contains(&fl) {
                return Err(Error::invalid("mask_floor must lie in [0, 1]"));
            }
        }
        if let PsdMethod::Recursive { alpha } = self.psd {
            if !(alpha > 0.0 && alpha < 1.0) {
                return Err(Error::invalid(format!("alpha {alpha} must lie in (0, 1)")));
            }
        }
        if !(self.loading >= 0.0) {
            return Err(Error::invalid("loading must be non-negative"));
        }
        if self.max_snr_db.is_some_and(|v| !v.is_finite()) {
            return Err(Error::invalid("max_snr_db must be finite"));
        }
        Ok(())
    }
}

/// Enhanced single-channel audio for one speaker.
#[derive(Debug, Clone)]
pub struct GssOutput {
    pub speaker: String,
    /// Concatenation of the enhanced target segments.
    pub audio: Vec<f64>,
    /// Segments in sample indices of the input, in output order.
    pub segments: Vec<(usize, usize)>,
    /// Reference channel used per segment.
    pub ref_channels: Vec<usize>,
    pub warnings: Vec<String>,
}

/// Enhanced audio of one segment, before concatenation.
#[derive(Debug, Clone)]
pub struct SegmentOutput {
    pub audio: Vec<f64>,
    pub ref_channel: usize,
    pub warnings: Vec<String>,
}

fn shifted(annotations: &[SegmentAnnotation], offset_s: f64, len_s: f64) -> Vec<SegmentAnnotation> {
    annotations
        .iter()
        .map(|a| SegmentAnnotation {
            speaker: a.speaker.clone(),
            intervals: a
                .intervals
                .iter()
                .map(|&(s, e)| ((s - offset_s).max(0.0), (e - offset_s).min(len_s)))
                .filter(|(s, e)| e > s)
                .collect(),
        })
        .collect()
}

/// Adds `ratio · tr(Φₓ)/C · I` to every bin of the noise PSD.
fn floor_noise(
    mut noise: ndarray::ArrayViewMut3<Complex64>,
    target: ndarray::ArrayView3<Complex64>,
    ratio: f64,
) {
    let (bins, c, _) = target.dim();
    for f in 0..bins {
        let tr: f64 = (0..c).map(|i| target[[f, i, i]].re).sum();
        let add = ratio * tr.max(0.0) / c as f64;
        for i in 0..c {
            noise[[f, i, i]] += add;
        }
    }
}

/// Runs mask estimation and beamforming over one window of the recording
/// and returns the enhanced audio of that whole window.
pub fn enhance_window(
    wave: &MultiChannelWave,
    annotations: &[SegmentAnnotation],
    target: &str,
    window: (usize, usize),
    config: &GssConfig,
) -> Result<SegmentOutput> {
    let sr = wave.sample_rate();
    let (w0, w1) = window;
    let crop = wave.slice(w0, w1);
    let spec = stft(&crop, &config.stft)?;
    let local = shifted(annotations, w0 as f64 / sr as f64, crop.duration_s());
    let activity = activity_matrix(
        &local,
        spec.frames(),
        &config.stft,
        sr,
        config.activity_dilation_s,
    );
    let target_idx = activity
        .index_of(target)
        .ok_or_else(|| Error::invalid(format!("speaker '{target}' not in annotations")))?;
    let (masks, state) = cacgmm_em(&spec, &activity, config.n_iter)?;

    let target_mask = masks.masks.index_axis(Axis(0), target_idx).to_owned();
    let mut noise_mask = Array2::<f64>::zeros(target_mask.dim());
    for j in (0..activity.classes()).filter(|&j| j != target_idx) {
        noise_mask += &masks.masks.index_axis(Axis(0), j);
    }
    noise_mask.mapv_inplace(|v| v.clamp(0.0, 1.0));

    let mut warnings = state.warnings.clone();
    let (phi_x, mut phi_n, mut trajectories) = match config.psd {
        PsdMethod::Batch => (
            beamform::psd_batch(&spec, target_mask.view())?,
            beamform::psd_batch(&spec, noise_mask.view())?,
            None,
        ),
        PsdMethod::Recursive { alpha } if config.adaptive => {
            let x = beamform::psd_recursive(&spec, target_mask.view(), alpha)?;
            let n = beamform::psd_recursive(&spec, noise_mask.view(), alpha)?;
            (x.last.clone(), n.last.clone(), Some((x, n)))
        }
        PsdMethod::Recursive { alpha } => (
            beamform::psd_recursive_final(&spec, target_mask.view(), alpha)?,
            beamform::psd_recursive_final(&spec, noise_mask.view(), alpha)?,
            None,
        ),
    };

    if let Some(db) = config.max_snr_db {
        let ratio = 10f64.powf(-db / 10.0);
        floor_noise(phi_n.matrices.view_mut(), phi_x.matrices.view(), ratio);
        if let Some((x, n)) = trajectories.as_mut() {
            for t in 0..x.per_frame.dim().0 {
                floor_noise(
                    n.per_frame.index_axis_mut(Axis(0), t),
                    x.per_frame.index_axis(Axis(0), t),
                    ratio,
                );
            }
        }
    }

    let ref_channel = match config.ref_channel {
        Some(r) if r >= spec.channels() => {
            return Err(Error::invalid(format!(
                "reference channel {r} out of range for {} channels",
                spec.channels()
            )))
        }
        Some(r) => r,
        None => beamform::best_reference_channel(&phi_x, &phi_n, config.loading)?,
    };

    let mut enhanced = match (config.variant, trajectories) {
        (MvdrVariant::SoudenMvdr, Some((x, n))) => {
            let w = beamform::souden_adaptive(&x, &n, ref_channel, config.loading)?;
            beamform::apply_adaptive(w.view(), &spec)?
        }
        (MvdrVariant::SoudenMvdr, None) => {
            let w = beamform::mvdr_souden(&phi_x, &phi_n, ref_channel, config.loading)?;
            if !w.bin_errors.is_empty() {
                warnings.push(format!(
                    "{} bins fell back to reference passthrough",
                    w.bin_errors.len()
                ));
            }
            beamform::apply_beamformer(&w, &spec)?
        }
        (MvdrVariant::SteeringMvdr, _) => {
            let steering = beamform::principal_steering(&phi_x, ref_channel);
            let w = beamform::mvdr_steering(&phi_n, steering.view(), config.loading)?;
            if !w.bin_errors.is_empty() {
                warnings.push(format!(
                    "{} bins had singular noise covariance",
                    w.bin_errors.len()
                ));
            }
            beamform::apply_beamformer(&w, &spec)?
        }
    };

    if let Some(floor) = config.mask_floor {
        for t in 0..enhanced.frames() {
            for f in 0..enhanced.bins() {
                enhanced.data[[0, t, f]] *= target_mask[[t, f]].max(floor);
            }
        }
    }

    let out = istft(&enhanced, crop.len())?;
    let audio = out.channel(0).to_vec();
    if audio.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("enhanced audio is not finite".into()));
    }
    Ok(SegmentOutput {
        audio,
        ref_channel,
        warnings,
    })
}

/// Enhances every segment of `target` and concatenates the results.
///
/// Each segment is processed on a window extended by `context_s` on both
/// sides, then cut back to the segment itself.
pub fn gss_enhance(
    wave: &MultiChannelWave,
    annotations: &[SegmentAnnotation],
    target: &str,
    config: &GssConfig,
) -> Result<GssOutput> {
    config.validate()?;
    if wave.channels() < 2 {
        return Err(Error::invalid("need ≥ 2 channels"));
    }
    let ann = annotations
        .iter()
        .find(|a| a.speaker == target)
        .ok_or_else(|| Error::invalid(format!("speaker '{target}' not in annotations")))?;
    if ann.is_empty() {
        return Err(Error::invalid(format!(
            "speaker '{target}' has no segments"
        )));
    }
    let sr = wave.sample_rate() as f64;
    let len = wave.len();
    let to_sample = |s: f64| ((s * sr).round().max(0.0) as usize).min(len);
    let ctx = (config.context_s * sr).round() as usize;

    let mut audio = Vec::new();
    let mut segments = Vec::new();
    let mut ref_channels = Vec::new();
    let mut warnings = Vec::new();
    for &(start, end) in &ann.intervals {
        let (s0, s1) = (to_sample(start), to_sample(end));
        if s1 <= s0 {
            continue;
        }
        let mut w0 = s0.saturating_sub(ctx);
        let mut w1 = (s1 + ctx).min(len);
        // A window must hold at least one full frame.
        if w1 - w0 < config.stft.fft_size {
            w0 = w0.saturating_sub(config.stft.fft_size);
            w1 = (w0 + 2 * config.stft.fft_size).min(len);
            if w1 - w0 < config.stft.fft_size {
                return Err(Error::invalid("recording shorter than one STFT frame"));
            }
        }
        let seg = enhance_window(wave, annotations, target, (w0, w1), config)?;
        audio.extend_from_slice(&seg.audio[s0 - w0..s1 - w0]);
        segments.push((s0, s1));
        ref_channels.push(seg.ref_channel);
        warnings.extend(seg.warnings);
    }
    if segments.is_empty() {
        return Err(Error::invalid(format!(
            "speaker '{target}' has no usable segments"
        )));
    }
    Ok(GssOutput {
        speaker: target.to_string(),
        audio,
        segments,
        ref_channels,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn annotation_validation() {
        assert!(SegmentAnnotation::new("a", vec![(1.0, 0.5)]).is_err());
        assert!(SegmentAnnotation::new("a", vec![(0.0, 2.0), (1.0, 3.0)]).is_err());
        assert!(SegmentAnnotation::new("a", vec![(0.0, 1.0), (1.0, 3.0)]).is_ok());
        let m = SegmentAnnotation::from_unsorted("a", vec![(2.0, 3.0), (0.0, 1.0), (0.5, 1.5)])
            .unwrap();
        assert_eq!(m.intervals, vec![(0.0, 1.5), (2.0, 3.0)]);
    }

    #[test]
    fn activity_frames_follow_centres() {
        let p = StftParams::default();
        let sr = 16000;
        let ann = SegmentAnnotation::new("a", vec![(1.0, 2.0)]).unwrap();
        let n = 400;
        let act = activity_matrix(std::slice::from_ref(&ann), n, &p, sr, 0.0);
        for t in 0..n {
            // Frame centre in integer samples, compared against [16000, 32000).
            let centre = t * p.hop;
            let expect = (16000..32000).contains(&centre);
            assert_eq!(act.matrix[[0, t]], expect, "frame {t}");
            assert!(act.matrix[[1, t]]);
        }
        assert_eq!(act.labels, vec!["a".to_string(), NOISE_LABEL.to_string()]);
    }

    #[test]
    fn activity_saturates_with_long_context() {
        let p = StftParams::default();
        let ann = SegmentAnnotation::new("a", vec![(4.0, 5.0)]).unwrap();
        let n = p.frame_count(160000);
        let act = activity_matrix(&[ann], n, &p, 16000, 15.0);
        assert!(act.matrix.row(0).iter().all(|a| *a));
    }

    #[test]
    fn no_annotations_leaves_only_noise() {
        let act = activity_matrix(&[], 10, &StftParams::default(), 16000, 0.0);
        assert_eq!(act.classes(), 1);
        assert!(act.matrix.iter().all(|a| *a));
    }

    fn random_spec(ch: usize, frames: usize, seed: u64) -> Spectrogram {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = StftParams::new(16, 4, crate::Window::SqrtHann).unwrap();
        let data = Array3::from_shape_fn((ch, frames, p.bins()), |_| {
            Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
        });
        Spectrogram::new(data, p, 16000).unwrap()
    }

    #[test]
    fn masks_sum_to_one_and_respect_activity() {
        let spec = random_spec(3, 60, 1);
        let mut matrix = Array2::from_elem((3, 60), false);
        for t in 0..60 {
            matrix[[0, t]] = t < 40;
            matrix[[1, t]] = t >= 20;
            matrix[[2, t]] = true;
        }
        let act = Activity {
            labels: vec!["a".into(), "b".into(), NOISE_LABEL.into()],
            matrix,
        };
        let (m, st) = cacgmm_em(&spec, &act, 5).unwrap();
        for t in 0..60 {
            for f in 0..spec.bins() {
                let s: f64 = (0..3).map(|k| m.masks[[k, t, f]]).sum();
                assert!((s - 1.0).abs() < 1e-6);
                for k in 0..3 {
                    if !act.matrix[[k, t]] {
                        assert_eq!(m.masks[[k, t, f]], 0.0);
                    }
                    assert!((0.0..=1.0).contains(&m.masks[[k, t, f]]));
                }
            }
        }
        assert_eq!(st.log_likelihood_trace.len(), 5);
        for f in 0..spec.bins() {
            for k in 0..3usize {
                let b = st.shape_matrices.slice(s![k, f, .., ..]);
                let tr: f64 = (0..3usize).map(|i| b[[i, i]].re).sum();
                assert!((tr - 3.0).abs() < 1e-9);
                for i in 0..3usize {
                    for j in 0..3usize {
                        assert!((b[[i, j]] - b[[j, i]].conj()).norm() < 1e-10);
                    }
                }
            }
        }
    }

    #[test]
    fn inactive_class_gets_zero_mask_and_warning() {
        let spec = random_spec(2, 20, 2);
        let mut matrix = Array2::from_elem((3, 20), true);
        matrix.row_mut(1).fill(false);
        let act = Activity {
            labels: vec!["a".into(), "b".into(), NOISE_LABEL.into()],
            matrix,
        };
        let (m, st) = cacgmm_em(&spec, &act, 3).unwrap();
        assert!(m.masks.index_axis(Axis(0), 1).iter().all(|v| *v == 0.0));
        assert_eq!(st.warnings.len(), 1);
        let b = st.shape_matrices.slice(s![1usize, 0usize, .., ..]);
        assert_eq!(b[[0, 0]], Complex64::new(1.0, 0.0));
        assert_eq!(b[[0, 1]], Complex64::new(0.0, 0.0));
    }

    #[test]
    fn silent_frames_get_uniform_masks() {
        let mut spec = random_spec(2, 10, 3);
        spec.data
            .slice_mut(s![.., 4, ..])
            .fill(Complex64::new(0.0, 0.0));
        let act = Activity {
            labels: vec!["a".into(), NOISE_LABEL.into()],
            matrix: Array2::from_elem((2, 10), true),
        };
        let (m, _) = cacgmm_em(&spec, &act, 2).unwrap();
        for f in 0..spec.bins() {
            assert_eq!(m.masks[[0, 4, f]], 0.5);
            assert_eq!(m.masks[[1, 4, f]], 0.5);
        }
    }

    #[test]
    fn rejects_mono_and_zero_iterations() {
        let spec = random_spec(1, 10, 4);
        let act = activity_matrix(&[], 10, &spec.params, 16000, 0.0);
        assert!(cacgmm_em(&spec, &act, 3).is_err());
        let spec = random_spec(2, 10, 4);
        assert!(cacgmm_em(&spec, &act, 0).is_err());
    }

    #[test]
    fn em_is_deterministic() {
        let spec = random_spec(3, 30, 9);
        let act = Activity {
            labels: vec!["a".into(), NOISE_LABEL.into()],
            matrix: Array2::from_elem((2, 30), true),
        };
        let a = cacgmm_em(&spec, &act, 4).unwrap();
        let b = cacgmm_em(&spec, &act, 4).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
    }

    #[test]
    fn config_validation() {
        GssConfig::default().validate().unwrap();
        let c = GssConfig {
            psd: PsdMethod::Recursive { alpha: 1.0 },
            ..Default::default()
        };
        assert!(c.validate().is_err());
        let c = GssConfig {
            mask_floor: Some(2.0),
            ..Default::default()
        };
        assert!(c.validate().is_err());
        let c = GssConfig {
            max_snr_db: Some(f64::NAN),
            ..Default::default()
        };
        assert!(c.validate().is_err());
    }
}
