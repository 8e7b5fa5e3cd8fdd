//! Anechoic multi-channel scene simulator.
//!
//! Every source-to-microphone path is a pure delay `d / c` with gain
//! `1 / max(d, 0.1 m)`. The delay is applied as a linear phase ramp in the
//! frequency domain, so fractional delays are exact up to circular wrap of
//! the (zero-padded) buffer. Spatially white Gaussian noise is added at the
//! requested SNR.

use std::f64::consts::PI;

use ndarray::Array2;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gss::SegmentAnnotation;
use crate::signal::MultiChannelWave;

fn gaussian<R: Rng>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

pub const DEFAULT_SPEED_OF_SOUND: f64 = 343.0;
const MIN_DISTANCE: f64 = 0.1;
/// Frame length and threshold used to derive oracle activities.
pub const ACTIVITY_FRAME_S: f64 = 0.02;
pub const ACTIVITY_THRESHOLD_DB: f64 = 40.0;

fn default_speed_of_sound() -> f64 {
    DEFAULT_SPEED_OF_SOUND
}

fn default_amplitude() -> f64 {
    0.1
}

/// Source signal description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum SignalSpec {
    WhiteNoise {
        duration_s: f64,
        #[serde(default = "default_amplitude")]
        amplitude: f64,
        #[serde(default)]
        seed: Option<u64>,
    },
    Tone {
        freq_hz: f64,
        duration_s: f64,
        #[serde(default = "default_amplitude")]
        amplitude: f64,
    },
    /// Harmonic signal with a gliding fundamental and a syllable-rate
    /// amplitude envelope, plus a small broadband component.
    SpeechLike {
        duration_s: f64,
        f0_hz: f64,
        #[serde(default = "default_amplitude")]
        amplitude: f64,
        #[serde(default)]
        seed: Option<u64>,
    },
    Samples {
        samples: Vec<f64>,
    },
    /// Path to a mono WAV file; must be resolved to `Samples` before simulation.
    Wav {
        path: String,
    },
}

impl SignalSpec {
    /// Renders the signal at `sample_rate`. `fallback_seed` is used when the
    /// spec carries no seed of its own.
    pub fn render(&self, sample_rate: u32, fallback_seed: u64) -> Result<Vec<f64>> {
        let sr = sample_rate as f64;
        let n_of = |d: f64| -> Result<usize> {
            if !(d > 0.0) || !d.is_finite() {
                return Err(Error::invalid(format!("duration {d} must be positive")));
            }
            Ok((d * sr).round() as usize)
        };
        match self {
            SignalSpec::WhiteNoise {
                duration_s,
                amplitude,
                seed,
            } => {
                let n = n_of(*duration_s)?;
                let mut rng = ChaCha8Rng::seed_from_u64(seed.unwrap_or(fallback_seed));
                Ok((0..n)
                    .map(|_| amplitude * gaussian(&mut rng))
                    .collect::<Vec<f64>>())
            }
            SignalSpec::Tone {
                freq_hz,
                duration_s,
                amplitude,
            } => {
                let n = n_of(*duration_s)?;
                Ok((0..n)
                    .map(|i| amplitude * (2.0 * PI * freq_hz * i as f64 / sr).sin())
                    .collect())
            }
            SignalSpec::SpeechLike {
                duration_s,
                f0_hz,
                amplitude,
                seed,
            } => Ok(speech_like(
                n_of(*duration_s)?,
                sr,
                *f0_hz,
                *amplitude,
                seed.unwrap_or(fallback_seed),
            )),
            SignalSpec::Samples { samples } => Ok(samples.clone()),
            SignalSpec::Wav { path } => Err(Error::invalid(format!(
                "WAV source '{path}' must be loaded before simulation"
            ))),
        }
    }
}

fn speech_like(n: usize, sr: f64, f0: f64, amplitude: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_harm = ((0.45 * sr) / f0).floor().max(1.0) as usize;
    let gains: Vec<f64> = (1..=n_harm)
        .map(|h| rng.random_range(0.3..1.0) / (h as f64).sqrt())
        .collect();
    let phases: Vec<f64> = (0..n_harm)
        .map(|_| rng.random_range(0.0..2.0 * PI))
        .collect();
    let glide_rate = rng.random_range(0.3..0.9);
    let glide_phase = rng.random_range(0.0..2.0 * PI);
    let syl_rate = rng.random_range(3.0..5.0);
    let syl_phase = rng.random_range(0.0..2.0 * PI);
    let mut phase = 0.0;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let t = i as f64 / sr;
        let f = f0 * (1.0 + 0.12 * (2.0 * PI * glide_rate * t + glide_phase).sin());
        phase += 2.0 * PI * f / sr;
        let env = 0.6 + 0.4 * (2.0 * PI * syl_rate * t + syl_phase).sin();
        let mut v = 0.0;
        for (h, (g, p)) in gains.iter().zip(&phases).enumerate() {
            if f * (h + 1) as f64 >= 0.48 * sr {
                break;
            }
            v += g * ((h + 1) as f64 * phase + p).sin();
        }
        let breath = gaussian(&mut rng);
        out.push(amplitude * env * (0.3 * v + 0.02 * breath));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceSpec {
    /// Speaker label; defaults to `spk<index>`.
    #[serde(default)]
    pub label: Option<String>,
    pub signal: SignalSpec,
    pub position: [f64; 3],
    #[serde(default)]
    pub onset: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub mic_positions: Vec<[f64; 3]>,
    pub sources: Vec<SourceSpec>,
    /// SNR of the summed source images against the additive white noise;
    /// `null` disables the noise.
    pub noise_snr_db: Option<f64>,
    pub sample_rate: u32,
    #[serde(default = "default_speed_of_sound")]
    pub speed_of_sound: f64,
    #[serde(default)]
    pub seed: u64,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.mic_positions.len() < 2 {
            return Err(Error::invalid("scene needs at least 2 microphones"));
        }
        if self.sources.is_empty() {
            return Err(Error::invalid("scene needs at least 1 source"));
        }
        if self.sample_rate == 0 {
            return Err(Error::invalid("sample_rate must be positive"));
        }
        if !(self.speed_of_sound > 0.0) || !self.speed_of_sound.is_finite() {
            return Err(Error::invalid("speed_of_sound must be positive"));
        }
        if let Some(snr) = self.noise_snr_db {
            if snr.is_nan() {
                return Err(Error::invalid("noise_snr_db is NaN"));
            }
        }
        if self.mic_positions.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::invalid(
                "mic_positions contain non-finite coordinates",
            ));
        }
        for (i, s) in self.sources.iter().enumerate() {
            if s.position.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!(
                    "sources[{i}].position is not finite"
                )));
            }
            if !(s.onset >= 0.0) || !s.onset.is_finite() {
                return Err(Error::invalid(format!("sources[{i}].onset must be ≥ 0")));
            }
            if self
                .mic_positions
                .iter()
                .any(|m| distance(m, &s.position) == 0.0)
            {
                return Err(Error::invalid(format!(
                    "sources[{i}].position coincides with a microphone"
                )));
            }
        }
        Ok(())
    }

    pub fn labels(&self) -> Vec<String> {
        self.sources
            .iter()
            .enumerate()
            .map(|(i, s)| s.label.clone().unwrap_or_else(|| format!("spk{i}")))
            .collect()
    }

    pub fn centroid(&self) -> [f64; 3] {
        centroid(&self.mic_positions)
    }
}

pub fn distance(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt()
}

pub fn centroid(points: &[[f64; 3]]) -> [f64; 3] {
    let n = points.len().max(1) as f64;
    let mut c = [0.0; 3];
    for p in points {
        for i in 0..3 {
            c[i] += p[i] / n;
        }
    }
    c
}

/// Azimuth in degrees `[0, 360)` of `point` seen from `origin`, in the x-y plane.
pub fn azimuth_deg(origin: &[f64; 3], point: &[f64; 3]) -> f64 {
    let a = (point[1] - origin[1])
        .atan2(point[0] - origin[0])
        .to_degrees();
    a.rem_euclid(360.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneTruth {
    pub mixture: MultiChannelWave,
    /// Each source's contribution at every microphone.
    pub images: Vec<MultiChannelWave>,
    pub noise: Array2<f64>,
    pub labels: Vec<String>,
    pub doas_deg: Vec<f64>,
    pub activities: Vec<SegmentAnnotation>,
}

/// Circularly delays `signal` (zero-padded to `fft_len`) by `delay` samples.
fn delayed(
    spectrum: &[Complex64],
    delay: f64,
    gain: f64,
    planner: &mut FftPlanner<f64>,
) -> Vec<f64> {
    let n = spectrum.len();
    let ifft = planner.plan_fft_inverse(n);
    let mut buf: Vec<Complex64> = spectrum
        .iter()
        .enumerate()
        .map(|(k, x)| {
            let h = if n.is_multiple_of(2) && k == n / 2 {
                Complex64::new((PI * delay).cos(), 0.0)
            } else {
                let kk = if k <= n / 2 {
                    k as f64
                } else {
                    k as f64 - n as f64
                };
                Complex64::from_polar(1.0, -2.0 * PI * kk * delay / n as f64)
            };
            x * h
        })
        .collect();
    ifft.process(&mut buf);
    buf.iter().map(|v| v.re * gain / n as f64).collect()
}

/// Simulates the scene and returns the mixture with full ground truth.
pub fn simulate(spec: &SceneSpec) -> Result<SceneTruth> {
    spec.validate()?;
    let sr = spec.sample_rate as f64;
    let c = spec.mic_positions.len();
    let labels = spec.labels();

    let signals: Vec<Vec<f64>> = spec
        .sources
        .iter()
        .enumerate()
        .map(|(i, s)| {
            s.signal
                .render(spec.sample_rate, spec.seed.wrapping_add(1 + i as u64))
        })
        .collect::<Result<_>>()?;
    for (i, s) in signals.iter().enumerate() {
        if s.is_empty() {
            return Err(Error::invalid(format!("sources[{i}] signal is empty")));
        }
        if s.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("sources[{i}] signal is not finite")));
        }
    }

    let onsets: Vec<usize> = spec
        .sources
        .iter()
        .map(|s| (s.onset * sr).round() as usize)
        .collect();
    let max_delay = spec
        .sources
        .iter()
        .flat_map(|s| {
            spec.mic_positions
                .iter()
                .map(move |m| distance(m, &s.position))
        })
        .fold(0.0, f64::max)
        / spec.speed_of_sound
        * sr;
    let len = signals
        .iter()
        .zip(&onsets)
        .map(|(s, o)| o + s.len())
        .max()
        .unwrap_or(0)
        + max_delay.ceil() as usize
        + 1;
    let fft_len = (len + 1024).next_power_of_two();

    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(fft_len);
    let mut images = Vec::with_capacity(signals.len());
    for ((sig, onset), src) in signals.iter().zip(&onsets).zip(&spec.sources) {
        let mut spectrum = vec![Complex64::new(0.0, 0.0); fft_len];
        for (i, v) in sig.iter().enumerate() {
            spectrum[onset + i] = Complex64::new(*v, 0.0);
        }
        fwd.process(&mut spectrum);
        let mut img = Array2::zeros((c, len));
        for (m, mic) in spec.mic_positions.iter().enumerate() {
            let d = distance(mic, &src.position);
            let y = delayed(
                &spectrum,
                d / spec.speed_of_sound * sr,
                1.0 / d.max(MIN_DISTANCE),
                &mut planner,
            );
            for (t, v) in y.into_iter().take(len).enumerate() {
                img[[m, t]] = v;
            }
        }
        images.push(img);
    }

    let mut clean = Array2::<f64>::zeros((c, len));
    for img in &images {
        clean += img;
    }
    let noise = match spec.noise_snr_db {
        Some(snr) if snr.is_finite() => {
            let p_clean = clean.iter().map(|v| v * v).sum::<f64>() / (c * len) as f64;
            let sigma = (p_clean / 10f64.powf(snr / 10.0)).sqrt();
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            Array2::from_shape_fn((c, len), |_| sigma * gaussian(&mut rng))
        }
        _ => Array2::zeros((c, len)),
    };
    let mixture = &clean + &noise;

    let centre = spec.centroid();
    let doas_deg = spec
        .sources
        .iter()
        .map(|s| azimuth_deg(&centre, &s.position))
        .collect();
    let activities = signals
        .iter()
        .zip(&onsets)
        .zip(&labels)
        .map(|((sig, onset), label)| {
            let mut placed = vec![0.0; onset + sig.len()];
            placed[*onset..].copy_from_slice(sig);
            derive_activities(
                label,
                &placed,
                spec.sample_rate,
                ACTIVITY_FRAME_S,
                ACTIVITY_THRESHOLD_DB,
            )
        })
        .collect::<Result<_>>()?;

    let wrap = |a: Array2<f64>| -> Result<MultiChannelWave> {
        MultiChannelWave::new(a, spec.sample_rate)?.with_geometry(spec.mic_positions.clone())
    };
    Ok(SceneTruth {
        mixture: wrap(mixture)?,
        images: images.into_iter().map(wrap).collect::<Result<_>>()?,
        noise,
        labels,
        doas_deg,
        activities,
    })
}

/// Oracle activity from signal energy: frames whose RMS is within
/// `threshold_db` of the loudest frame, with gaps of at most one frame bridged.
pub fn derive_activities(
    speaker: &str,
    signal: &[f64],
    sample_rate: u32,
    frame_s: f64,
    threshold_db: f64,
) -> Result<SegmentAnnotation> {
    if !(frame_s > 0.0) {
        return Err(Error::invalid("activity frame must be positive"));
    }
    let sr = sample_rate as f64;
    let flen = ((frame_s * sr).round() as usize).max(1);
    let rms: Vec<f64> = signal
        .chunks(flen)
        .map(|ch| (ch.iter().map(|v| v * v).sum::<f64>() / ch.len() as f64).sqrt())
        .collect();
    let max = rms.iter().cloned().fold(0.0, f64::max);
    if max <= 0.0 {
        return SegmentAnnotation::new(speaker, vec![]);
    }
    let thresh = max * 10f64.powf(-threshold_db / 20.0);
    let end_s = signal.len() as f64 / sr;
    let mut intervals: Vec<(f64, f64)> = Vec::new();
    for (i, r) in rms.iter().enumerate() {
        if *r <= thresh {
            continue;
        }
        let a = (i * flen) as f64 / sr;
        let b = (((i + 1) * flen) as f64 / sr).min(end_s);
        match intervals.last_mut() {
            Some(last) if a - last.1 <= frame_s + 1e-12 => last.1 = b,
            _ => intervals.push((a, b)),
        }
    }
    SegmentAnnotation::new(speaker, intervals)
}

/// Reference scenes used by the integration and acceptance suites.
pub mod scenarios {
    use super::*;

    /// `n` microphones on a circle of `radius` metres, first mic at 45°.
    pub fn circular_array(n: usize, radius: f64) -> Vec<[f64; 3]> {
        (0..n)
            .map(|i| {
                let a = (45.0 + 360.0 * i as f64 / n as f64).to_radians();
                [radius * a.cos(), radius * a.sin(), 0.0]
            })
            .collect()
    }

    fn at(azimuth_deg: f64, distance: f64) -> [f64; 3] {
        let a = azimuth_deg.to_radians();
        [distance * a.cos(), distance * a.sin(), 0.0]
    }

    /// Two partially overlapping talkers at least 60° apart around a
    /// 4-mic circular array, 20 dB SNR. Azimuths, pitches and signals vary
    /// with `seed`.
    pub fn two_speaker(seed: u64) -> SceneSpec {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x05ee_d0f5_ce7e);
        let az_a = rng.random_range(0.0..360.0);
        let sep: f64 = rng.random_range(60.0..180.0);
        let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let az_b = (az_a + sign * sep).rem_euclid(360.0);
        let speaker = |label: &str, az: f64, f0: f64, onset: f64, sseed: u64| SourceSpec {
            label: Some(label.to_string()),
            signal: SignalSpec::SpeechLike {
                duration_s: 3.0,
                f0_hz: f0,
                amplitude: 0.1,
                seed: Some(sseed),
            },
            position: at(az, 1.5),
            onset,
        };
        SceneSpec {
            mic_positions: circular_array(4, 0.1),
            sources: vec![
                speaker(
                    "spk_a",
                    az_a,
                    rng.random_range(100.0..140.0),
                    0.2,
                    seed * 2 + 1,
                ),
                speaker(
                    "spk_b",
                    az_b,
                    rng.random_range(180.0..240.0),
                    1.8,
                    seed * 2 + 2,
                ),
            ],
            noise_snr_db: Some(20.0),
            sample_rate: 16000,
            speed_of_sound: DEFAULT_SPEED_OF_SOUND,
            seed,
        }
    }

    /// Target close to mic 0 and a 10 dB louder interferer close to mic 2,
    /// overlapping half of the target's speech.
    pub fn loud_interferer(seed: u64) -> SceneSpec {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x1040d);
        let mics = circular_array(4, 0.1);
        let near = |mic: [f64; 3], jitter: f64| {
            let a = mic[1].atan2(mic[0]).to_degrees() + jitter;
            at(a, 0.35)
        };
        let target_pos = near(mics[0], rng.random_range(-10.0..10.0));
        let interferer_pos = near(mics[2], rng.random_range(-10.0..10.0));
        let amp = 0.1;
        SceneSpec {
            sources: vec![
                SourceSpec {
                    label: Some("target".into()),
                    signal: SignalSpec::SpeechLike {
                        duration_s: 3.0,
                        f0_hz: rng.random_range(100.0..140.0),
                        amplitude: amp,
                        seed: Some(seed * 2 + 11),
                    },
                    position: target_pos,
                    onset: 0.2,
                },
                SourceSpec {
                    label: Some("interferer".into()),
                    signal: SignalSpec::SpeechLike {
                        duration_s: 3.0,
                        f0_hz: rng.random_range(180.0..240.0),
                        amplitude: amp * 10f64.powf(10.0 / 20.0),
                        seed: Some(seed * 2 + 12),
                    },
                    position: interferer_pos,
                    onset: 1.7,
                },
            ],
            mic_positions: mics,
            noise_snr_db: Some(30.0),
            sample_rate: 16000,
            speed_of_sound: DEFAULT_SPEED_OF_SOUND,
            seed,
        }
    }
}
