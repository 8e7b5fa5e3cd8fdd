//! Sound source localization and target-speaker channel selection.
//!
//! Localization uses steered-response power with phase transform (SRP-PHAT):
//! phase differences enter through PHAT-normalised cross-spectra and energy
//! through a per-bin weight (bin magnitude normalised to unit mean). Steering
//! is far-field, azimuth only, in the x-y plane around the array centroid.
//!
//! Channel selection compares two criteria:
//! - energy/phase: energy on frames where only the target talks, times a
//!   phase-coherence factor against the target's DOA;
//! - max-SNR: speech-active power over noise-only power.

use std::f64::consts::PI;

use ndarray::Array2;
use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gss::{activity_matrix, Activity, SegmentAnnotation};
use crate::signal::Spectrogram;
use crate::sim::{centroid, DEFAULT_SPEED_OF_SOUND};

const PHAT_FLOOR: f64 = 1e-12;
/// Oversampling of the GCC correlation before parabolic peak refinement.
const GCC_UPSAMPLE: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LocalizationConfig {
    pub grid_deg: f64,
    pub band_hz: (f64, f64),
    pub speed_of_sound: f64,
}

impl Default for LocalizationConfig {
    fn default() -> Self {
        Self {
            grid_deg: 1.0,
            band_hz: (300.0, 4000.0),
            speed_of_sound: DEFAULT_SPEED_OF_SOUND,
        }
    }
}

impl LocalizationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.grid_deg > 0.0 && self.grid_deg <= 180.0) {
            return Err(Error::invalid("grid_deg must lie in (0, 180]"));
        }
        if !(self.band_hz.0 >= 0.0 && self.band_hz.1 > self.band_hz.0) {
            return Err(Error::invalid("band_hz must be an increasing pair"));
        }
        if !(self.speed_of_sound > 0.0) {
            return Err(Error::invalid("speed_of_sound must be positive"));
        }
        Ok(())
    }

    fn band_bins(&self, spec: &Spectrogram) -> Vec<usize> {
        (0..spec.bins())
            .filter(|&f| {
                let hz = spec.bin_frequency(f);
                hz >= self.band_hz.0 && hz <= self.band_hz.1
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DoaEstimate {
    pub azimuth_deg: f64,
    pub score: f64,
    pub source_id: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SelectionCriterion {
    EnergyPhase,
    MaxSnr,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelSelection {
    pub speaker: String,
    pub channel_index: usize,
    pub criterion: SelectionCriterion,
    pub per_channel_scores: Vec<f64>,
    /// Set when the preferred frame set was empty and a wider one was used.
    pub fallback: bool,
}

/// Index of the largest value, lowest index on ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Time delay of channel `ch_b` relative to `ch_a` in seconds, from the
/// phase-transformed cross-power spectrum averaged over `frames`.
pub fn gcc_phat(
    spec: &Spectrogram,
    ch_a: usize,
    ch_b: usize,
    frames: std::ops::Range<usize>,
    max_tdoa_s: Option<f64>,
) -> Result<f64> {
    if ch_a == ch_b {
        return Err(Error::invalid("gcc_phat needs two distinct channels"));
    }
    if ch_a >= spec.channels() || ch_b >= spec.channels() {
        return Err(Error::invalid("channel index out of range"));
    }
    if frames.is_empty() || frames.end > spec.frames() {
        return Err(Error::invalid(
            "frame range must be non-empty and within the spectrogram",
        ));
    }
    let bins = spec.bins();
    let n = spec.params.fft_size;
    let count = frames.len() as f64;
    let mut cross = vec![Complex64::new(0.0, 0.0); bins];
    for t in frames {
        for (f, g) in cross.iter_mut().enumerate() {
            *g += spec.data[[ch_b, t, f]] * spec.data[[ch_a, t, f]].conj() / count;
        }
    }
    if cross.iter().all(|g| g.norm() < PHAT_FLOOR) {
        return Err(Error::InsufficientEnergy(
            "cross-power spectrum vanishes in every bin".into(),
        ));
    }

    let m = n * GCC_UPSAMPLE;
    let mut buf = vec![Complex64::new(0.0, 0.0); m];
    for f in 0..bins {
        let g = cross[f] / cross[f].norm().max(PHAT_FLOOR);
        if f == 0 || f == bins - 1 {
            buf[f] = Complex64::new(g.re, 0.0);
        } else {
            buf[f] = g;
            buf[m - f] = g.conj();
        }
    }
    FftPlanner::new().plan_fft_inverse(m).process(&mut buf);
    let corr: Vec<f64> = buf.iter().map(|v| v.re).collect();

    let fs = spec.sample_rate as f64 * GCC_UPSAMPLE as f64;
    let max_lag = match max_tdoa_s {
        Some(t) => ((t * fs).ceil() as usize).min(m / 2 - 1),
        None => m / 2 - 1,
    };
    let at = |lag: i64| corr[lag.rem_euclid(m as i64) as usize];
    let mut best = 0i64;
    for lag in -(max_lag as i64)..=(max_lag as i64) {
        if at(lag) > at(best) {
            best = lag;
        }
    }
    let (y0, y1, y2) = (at(best - 1), at(best), at(best + 1));
    let denom = y0 - 2.0 * y1 + y2;
    let offset = if denom.abs() > 1e-300 {
        (0.5 * (y0 - y2) / denom).clamp(-0.5, 0.5)
    } else {
        0.0
    };
    Ok((best as f64 + offset) / fs)
}

/// Steered-response power over the azimuth grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SrpMap {
    pub azimuths_deg: Vec<f64>,
    pub power: Vec<f64>,
}

impl SrpMap {
    pub fn argmax_deg(&self) -> (f64, f64) {
        let i = argmax(&self.power);
        (self.azimuths_deg[i], self.power[i])
    }

    /// Circular local maxima, strongest first.
    pub fn peaks(&self) -> Vec<(f64, f64)> {
        let n = self.power.len();
        let mut peaks: Vec<(f64, f64)> = (0..n)
            .filter(|&i| {
                let p = self.power[i];
                p > self.power[(i + n - 1) % n] && p >= self.power[(i + 1) % n]
            })
            .map(|i| (self.azimuths_deg[i], self.power[i]))
            .collect();
        peaks.sort_by(|a, b| b.1.total_cmp(&a.1));
        peaks
    }
}

fn check_geometry(spec: &Spectrogram, geometry: &[[f64; 3]]) -> Result<()> {
    if geometry.len() < 2 {
        return Err(Error::invalid(
            "localization needs microphone geometry for ≥ 2 mics",
        ));
    }
    if geometry.len() != spec.channels() {
        return Err(Error::invalid(format!(
            "geometry has {} positions for {} channels",
            geometry.len(),
            spec.channels()
        )));
    }
    Ok(())
}

/// Far-field arrival-time offsets `τ_m` (seconds) for a plane wave from
/// `azimuth_deg`; mics nearer the source have negative offsets.
fn arrival_offsets(geometry: &[[f64; 3]], azimuth_deg: f64, c: f64) -> Vec<f64> {
    let centre = centroid(geometry);
    let (s, co) = azimuth_deg.to_radians().sin_cos();
    geometry
        .iter()
        .map(|p| -((p[0] - centre[0]) * co + (p[1] - centre[1]) * s) / c)
        .collect()
}

/// SRP-PHAT map over `frames`, with per-bin energy weights.
///
/// `P(θ) = Σ_t Σ_f w(t,f) |Σ_m e^{jωτ_m(θ)} X_m / |X_m||²`, which equals
/// `M Σ w + 2 Σ_{i<j} Re(...)` over mic pairs and is non-negative.
pub fn srp_map(
    spec: &Spectrogram,
    geometry: Option<&[[f64; 3]]>,
    frames: &[usize],
    config: &LocalizationConfig,
) -> Result<SrpMap> {
    config.validate()?;
    let geometry =
        geometry.ok_or_else(|| Error::invalid("srp_map requires microphone geometry"))?;
    check_geometry(spec, geometry)?;
    if frames.is_empty() {
        return Err(Error::invalid("srp_map needs at least one frame"));
    }
    let c = spec.channels();
    let band = config.band_bins(spec);
    if band.is_empty() {
        return Err(Error::invalid("localization band contains no bins"));
    }

    // Energy weight: mean channel magnitude, normalised to unit mean.
    let mut weight = Array2::<f64>::zeros((frames.len(), band.len()));
    for (ti, &t) in frames.iter().enumerate() {
        for (fi, &f) in band.iter().enumerate() {
            weight[[ti, fi]] = (0..c).map(|m| spec.data[[m, t, f]].norm()).sum::<f64>() / c as f64;
        }
    }
    let mean_w = weight.mean().unwrap_or(0.0);
    if !(mean_w > 0.0) {
        return Err(Error::InsufficientEnergy(
            "no energy in the localization band".into(),
        ));
    }
    weight.mapv_inplace(|w| w / mean_w);

    // Weighted PHAT cross-spectra per pair and bin, summed over frames.
    let pairs: Vec<(usize, usize)> = (0..c)
        .flat_map(|i| ((i + 1)..c).map(move |j| (i, j)))
        .collect();
    let mut cross = Array2::<Complex64>::zeros((pairs.len(), band.len()));
    let mut total_weight = 0.0;
    for (ti, &t) in frames.iter().enumerate() {
        for (fi, &f) in band.iter().enumerate() {
            let w = weight[[ti, fi]];
            total_weight += w;
            for (pi, &(i, j)) in pairs.iter().enumerate() {
                let g = spec.data[[i, t, f]] * spec.data[[j, t, f]].conj();
                cross[[pi, fi]] += g * (w / g.norm().max(PHAT_FLOOR));
            }
        }
    }
    let omegas: Vec<f64> = band
        .iter()
        .map(|&f| 2.0 * PI * spec.bin_frequency(f))
        .collect();

    let n_grid = (360.0 / config.grid_deg).round().max(1.0) as usize;
    let azimuths_deg: Vec<f64> = (0..n_grid)
        .map(|i| i as f64 * 360.0 / n_grid as f64)
        .collect();
    let power = azimuths_deg
        .par_iter()
        .map(|&az| {
            let tau = arrival_offsets(geometry, az, config.speed_of_sound);
            let mut p = 0.0;
            for (pi, &(i, j)) in pairs.iter().enumerate() {
                let dt = tau[i] - tau[j];
                for (fi, w) in omegas.iter().enumerate() {
                    p += (cross[[pi, fi]] * Complex64::from_polar(1.0, w * dt)).re;
                }
            }
            (c as f64 * total_weight + 2.0 * p).max(0.0)
        })
        .collect();
    Ok(SrpMap {
        azimuths_deg,
        power,
    })
}

fn frames_where(activity: &Activity, pred: impl Fn(usize) -> bool) -> Vec<usize> {
    (0..activity.frames()).filter(|&t| pred(t)).collect()
}

fn speaker_activity(spec: &Spectrogram, activities: &[SegmentAnnotation]) -> Activity {
    activity_matrix(
        activities,
        spec.frames(),
        &spec.params,
        spec.sample_rate,
        0.0,
    )
}

/// Frames where `k` is active and, if possible, every other speaker is
/// silent. The flag is set when the exclusive set was empty.
fn target_frames(activity: &Activity, k: usize) -> (Vec<usize>, bool) {
    let speakers = activity.classes() - 1;
    let only = frames_where(activity, |t| {
        activity.is_active(k, t) && (0..speakers).all(|j| j == k || !activity.is_active(j, t))
    });
    if !only.is_empty() {
        return (only, false);
    }
    (frames_where(activity, |t| activity.is_active(k, t)), true)
}

#[derive(Debug, Clone)]
pub struct SpeakerDoa {
    pub speaker: String,
    pub estimate: Result<DoaEstimate>,
    /// True when no exclusive frames existed and all active frames were used.
    pub fallback: bool,
}

/// Per-speaker DOA from SRP-PHAT over that speaker's exclusive frames.
pub fn localize_sources(
    spec: &Spectrogram,
    geometry: Option<&[[f64; 3]]>,
    activities: &[SegmentAnnotation],
    config: &LocalizationConfig,
) -> Result<Vec<SpeakerDoa>> {
    config.validate()?;
    let geometry =
        geometry.ok_or_else(|| Error::invalid("localization requires microphone geometry"))?;
    check_geometry(spec, geometry)?;
    let activity = speaker_activity(spec, activities);
    Ok(activities
        .iter()
        .enumerate()
        .map(|(k, ann)| localize_one(spec, geometry, &activity, k, &ann.speaker, config))
        .collect())
}

fn localize_one(
    spec: &Spectrogram,
    geometry: &[[f64; 3]],
    activity: &Activity,
    k: usize,
    speaker: &str,
    config: &LocalizationConfig,
) -> SpeakerDoa {
    let (frames, fallback) = target_frames(activity, k);
    let estimate = if frames.is_empty() {
        Err(Error::invalid(format!(
            "speaker '{speaker}' has no active frames"
        )))
    } else {
        srp_map(spec, Some(geometry), &frames, config).map(|map| {
            let (az, score) = map.argmax_deg();
            DoaEstimate {
                azimuth_deg: az,
                score,
                source_id: Some(speaker.to_string()),
            }
        })
    };
    SpeakerDoa {
        speaker: speaker.to_string(),
        estimate,
        fallback,
    }
}

fn band_energy(spec: &Spectrogram, c: usize, frames: &[usize], band: &[usize]) -> f64 {
    frames
        .iter()
        .map(|&t| {
            band.iter()
                .map(|&f| spec.data[[c, t, f]].norm_sqr())
                .sum::<f64>()
        })
        .sum()
}

/// Energy/phase channel selection for `speaker`.
///
/// Score of channel `c` = band energy over target-only frames ×
/// `(1 + ρ_c) / 2`, where `ρ_c` is the mean cosine between the observed
/// phase of `X_c X_r*` and the phase predicted by the target DOA, averaged
/// over all other channels `r`, frames and band bins.
pub fn select_channel_energy_phase(
    spec: &Spectrogram,
    geometry: Option<&[[f64; 3]]>,
    activities: &[SegmentAnnotation],
    speaker: &str,
    config: &LocalizationConfig,
) -> Result<ChannelSelection> {
    config.validate()?;
    let geometry =
        geometry.ok_or_else(|| Error::invalid("channel selection requires microphone geometry"))?;
    check_geometry(spec, geometry)?;
    let activity = speaker_activity(spec, activities);
    let k = activity
        .index_of(speaker)
        .filter(|&k| k < activities.len())
        .ok_or_else(|| Error::invalid(format!("speaker '{speaker}' not in annotations")))?;
    let doa = localize_one(spec, geometry, &activity, k, speaker, config);
    let azimuth = doa.estimate?.azimuth_deg;
    let (frames, fallback) = target_frames(&activity, k);
    let band = config.band_bins(spec);
    let c = spec.channels();
    let tau = arrival_offsets(geometry, azimuth, config.speed_of_sound);

    let scores = (0..c)
        .map(|ch| {
            let energy = band_energy(spec, ch, &frames, &band);
            let mut cos_sum = 0.0;
            let mut count = 0usize;
            for r in (0..c).filter(|&r| r != ch) {
                for &t in &frames {
                    for &f in &band {
                        let g = spec.data[[ch, t, f]] * spec.data[[r, t, f]].conj();
                        if g.norm() < PHAT_FLOOR {
                            continue;
                        }
                        let predicted = -2.0 * PI * spec.bin_frequency(f) * (tau[ch] - tau[r]);
                        cos_sum += (g.arg() - predicted).cos();
                        count += 1;
                    }
                }
            }
            let rho = if count > 0 {
                cos_sum / count as f64
            } else {
                0.0
            };
            energy * (1.0 + rho) / 2.0
        })
        .collect::<Vec<f64>>();
    Ok(ChannelSelection {
        speaker: speaker.to_string(),
        channel_index: argmax(&scores),
        criterion: SelectionCriterion::EnergyPhase,
        per_channel_scores: scores,
        fallback,
    })
}

/// Conventional max-SNR channel selection: mean power over frames where the
/// speaker is active divided by mean power over frames with no speaker.
pub fn select_channel_max_snr(
    spec: &Spectrogram,
    activities: &[SegmentAnnotation],
    speaker: &str,
) -> Result<ChannelSelection> {
    let activity = speaker_activity(spec, activities);
    let k = activity
        .index_of(speaker)
        .filter(|&k| k < activities.len())
        .ok_or_else(|| Error::invalid(format!("speaker '{speaker}' not in annotations")))?;
    let active = frames_where(&activity, |t| activity.is_active(k, t));
    if active.is_empty() {
        return Err(Error::invalid(format!(
            "speaker '{speaker}' has no active frames"
        )));
    }
    let speakers = activities.len();
    let c = spec.channels();
    let frame_power = |ch: usize, t: usize| -> f64 {
        (0..spec.bins())
            .map(|f| spec.data[[ch, t, f]].norm_sqr())
            .sum()
    };
    let mut noise = frames_where(&activity, |t| {
        (0..speakers).all(|j| !activity.is_active(j, t))
    });
    let fallback = noise.is_empty();
    if fallback {
        let mut by_power: Vec<(usize, f64)> = (0..spec.frames())
            .map(|t| (t, (0..c).map(|ch| frame_power(ch, t)).sum::<f64>()))
            .collect();
        by_power.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        let keep = (spec.frames() / 10).max(1);
        noise = by_power.into_iter().take(keep).map(|(t, _)| t).collect();
    }
    let mean = |ch: usize, frames: &[usize]| -> f64 {
        frames.iter().map(|&t| frame_power(ch, t)).sum::<f64>() / frames.len() as f64
    };
    let scores: Vec<f64> = (0..c)
        .map(|ch| mean(ch, &active) / mean(ch, &noise).max(1e-12))
        .collect();
    Ok(ChannelSelection {
        speaker: speaker.to_string(),
        channel_index: argmax(&scores),
        criterion: SelectionCriterion::MaxSnr,
        per_channel_scores: scores,
        fallback,
    })
}

/// Absolute angular difference in degrees, wrapped to `[0, 180]`.
pub fn angular_distance(a_deg: f64, b_deg: f64) -> f64 {
    let d = (a_deg - b_deg).rem_euclid(360.0);
    d.min(360.0 - d)
}
