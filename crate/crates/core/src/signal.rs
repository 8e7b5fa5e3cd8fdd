//! Time-frequency analysis and synthesis.
//!
//! Frames are centred on multiples of the hop: the signal is reflection-padded
//! by `fft_size / 2` on both sides before framing, so frame `t` is centred on
//! sample `t * hop` of the original signal. Only the one-sided spectrum
//! (`fft_size / 2 + 1` bins) is stored.

use std::sync::Arc;

use ndarray::{s, Array2, Array3, ArrayView1, Axis};
use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Time-domain audio, one row per channel.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiChannelWave {
    samples: Array2<f64>,
    sample_rate: u32,
    geometry: Option<Vec<[f64; 3]>>,
}

impl MultiChannelWave {
    pub fn new(samples: Array2<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::invalid("sample rate must be positive"));
        }
        if samples.nrows() == 0 {
            return Err(Error::invalid("wave needs at least one channel"));
        }
        Ok(Self {
            samples,
            sample_rate,
            geometry: None,
        })
    }

    pub fn mono(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        let n = samples.len();
        let arr = Array2::from_shape_vec((1, n), samples).expect("1×n shape");
        Self::new(arr, sample_rate)
    }

    /// Attaches microphone positions in metres, one per channel.
    pub fn with_geometry(mut self, geometry: Vec<[f64; 3]>) -> Result<Self> {
        if geometry.len() != self.channels() {
            return Err(Error::invalid(format!(
                "geometry has {} positions for {} channels",
                geometry.len(),
                self.channels()
            )));
        }
        if geometry.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::invalid("geometry contains non-finite coordinates"));
        }
        self.geometry = Some(geometry);
        Ok(self)
    }

    pub fn samples(&self) -> &Array2<f64> {
        &self.samples
    }

    pub fn into_samples(self) -> Array2<f64> {
        self.samples
    }

    pub fn channel(&self, c: usize) -> ArrayView1<'_, f64> {
        self.samples.row(c)
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn geometry(&self) -> Option<&[[f64; 3]]> {
        self.geometry.as_deref()
    }

    pub fn channels(&self) -> usize {
        self.samples.nrows()
    }

    pub fn len(&self) -> usize {
        self.samples.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.ncols() == 0
    }

    pub fn duration_s(&self) -> f64 {
        self.len() as f64 / self.sample_rate as f64
    }

    /// Samples `[start, end)` of every channel, geometry preserved.
    pub fn slice(&self, start: usize, end: usize) -> Self {
        let end = end.min(self.len());
        let start = start.min(end);
        Self {
            samples: self.samples.slice(s![.., start..end]).to_owned(),
            sample_rate: self.sample_rate,
            geometry: self.geometry.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Window {
    SqrtHann,
    Hann,
}

impl Window {
    /// Periodic window of length `n`, used for both analysis and synthesis.
    pub fn coefficients(self, n: usize) -> Vec<f64> {
        (0..n)
            .map(|i| {
                let hann = 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos();
                match self {
                    Window::Hann => hann,
                    Window::SqrtHann => hann.max(0.0).sqrt(),
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StftParams {
    pub fft_size: usize,
    pub hop: usize,
    pub window: Window,
}

impl Default for StftParams {
    fn default() -> Self {
        Self {
            fft_size: 512,
            hop: 128,
            window: Window::SqrtHann,
        }
    }
}

impl StftParams {
    pub fn new(fft_size: usize, hop: usize, window: Window) -> Result<Self> {
        let p = Self {
            fft_size,
            hop,
            window,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    /// Checks the power-of-two size, that the hop divides it, and that the
    /// squared window overlap-adds to a constant.
    pub fn validate(&self) -> Result<()> {
        if self.fft_size < 2 || !self.fft_size.is_power_of_two() {
            return Err(Error::invalid(format!(
                "fft_size {} must be a power of two ≥ 2",
                self.fft_size
            )));
        }
        if self.hop == 0 || !self.fft_size.is_multiple_of(self.hop) {
            return Err(Error::invalid(format!(
                "hop {} must divide fft_size {}",
                self.hop, self.fft_size
            )));
        }
        let env = cola_envelope(self.window, self.fft_size, self.hop);
        let mean = env.iter().sum::<f64>() / env.len() as f64;
        if mean <= 0.0 || env.iter().any(|v| (v - mean).abs() > 1e-10 * mean.max(1.0)) {
            return Err(Error::invalid(format!(
                "{:?} window is not constant-overlap-add at fft_size {} hop {}",
                self.window, self.fft_size, self.hop
            )));
        }
        Ok(())
    }

    /// Number of frames produced for a signal of `len` samples.
    pub fn frame_count(&self, len: usize) -> usize {
        len / self.hop + 1
    }

    /// Centre time of frame `t`, in seconds.
    pub fn frame_time(&self, t: usize, sample_rate: u32) -> f64 {
        (t * self.hop) as f64 / sample_rate as f64
    }
}

/// Σ_m w²(n − m·hop) over one hop period.
pub fn cola_envelope(window: Window, fft_size: usize, hop: usize) -> Vec<f64> {
    let w = window.coefficients(fft_size);
    (0..hop)
        .map(|n| {
            (0..fft_size / hop)
                .map(|m| w[n + m * hop].powi(2))
                .sum::<f64>()
        })
        .collect()
}

/// Complex STFT tensor `[channels × frames × bins]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub data: Array3<Complex64>,
    pub params: StftParams,
    pub sample_rate: u32,
}

impl Spectrogram {
    pub fn new(data: Array3<Complex64>, params: StftParams, sample_rate: u32) -> Result<Self> {
        let spec = Self {
            data,
            params,
            sample_rate,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        if self.sample_rate == 0 {
            return Err(Error::invalid("sample rate must be positive"));
        }
        if self.data.dim().2 != self.params.bins() {
            return Err(Error::shape(format!(
                "spectrogram has {} bins, fft_size {} implies {}",
                self.data.dim().2,
                self.params.fft_size,
                self.params.bins()
            )));
        }
        if self
            .data
            .iter()
            .any(|v| !v.re.is_finite() || !v.im.is_finite())
        {
            return Err(Error::invalid("spectrogram contains non-finite values"));
        }
        Ok(())
    }

    pub fn channels(&self) -> usize {
        self.data.dim().0
    }

    pub fn frames(&self) -> usize {
        self.data.dim().1
    }

    pub fn bins(&self) -> usize {
        self.data.dim().2
    }

    /// Centre frequency of bin `f` in Hz.
    pub fn bin_frequency(&self, f: usize) -> f64 {
        f as f64 * self.sample_rate as f64 / self.params.fft_size as f64
    }

    /// Observation vector of all channels at `(t, f)`.
    pub fn observation(&self, t: usize, f: usize) -> Vec<Complex64> {
        self.data.slice(s![.., t, f]).to_vec()
    }
}

fn reflect_pad(x: ArrayView1<f64>, pad: usize) -> Vec<f64> {
    let n = x.len();
    let mut out = Vec::with_capacity(n + 2 * pad);
    out.extend((1..=pad).rev().map(|i| x[i]));
    out.extend(x.iter().copied());
    out.extend((0..pad).map(|i| x[n - 2 - i]));
    out
}

/// Forward STFT of every channel.
pub fn stft(wave: &MultiChannelWave, params: &StftParams) -> Result<Spectrogram> {
    params.validate()?;
    let n = params.fft_size;
    let len = wave.len();
    if len < n {
        return Err(Error::invalid(format!(
            "signal of {len} samples is shorter than one {n}-sample frame"
        )));
    }
    let pad = n / 2;
    let frames = params.frame_count(len);
    let bins = params.bins();
    let window = params.window.coefficients(n);
    let fft: Arc<dyn Fft<f64>> = FftPlanner::new().plan_fft_forward(n);

    let per_channel: Vec<Array2<Complex64>> = (0..wave.channels())
        .into_par_iter()
        .map(|c| {
            let padded = reflect_pad(wave.channel(c), pad);
            let mut out = Array2::zeros((frames, bins));
            let mut buf = vec![Complex64::new(0.0, 0.0); n];
            for t in 0..frames {
                let start = t * params.hop;
                for (i, b) in buf.iter_mut().enumerate() {
                    *b = Complex64::new(padded[start + i] * window[i], 0.0);
                }
                fft.process(&mut buf);
                for f in 0..bins {
                    out[[t, f]] = buf[f];
                }
            }
            out
        })
        .collect();

    let mut data = Array3::zeros((wave.channels(), frames, bins));
    for (c, ch) in per_channel.into_iter().enumerate() {
        data.index_axis_mut(Axis(0), c).assign(&ch);
    }
    Ok(Spectrogram {
        data,
        params: *params,
        sample_rate: wave.sample_rate(),
    })
}

/// Inverse STFT by weighted overlap-add.
///
/// Each sample is divided by the overlapped analysis×synthesis window
/// envelope at that position, which equals the constant COLA sum away from
/// the signal edges. The result is truncated or zero-padded to
/// `target_length`.
pub fn istft(spec: &Spectrogram, target_length: usize) -> Result<MultiChannelWave> {
    spec.validate()?;
    let n = spec.params.fft_size;
    let hop = spec.params.hop;
    let pad = n / 2;
    let frames = spec.frames();
    let bins = spec.bins();
    let window = spec.params.window.coefficients(n);
    let ifft: Arc<dyn Fft<f64>> = FftPlanner::new().plan_fft_inverse(n);

    let total = if frames == 0 {
        0
    } else {
        (frames - 1) * hop + n
    };
    let mut envelope = vec![0.0; total];
    for t in 0..frames {
        for i in 0..n {
            envelope[t * hop + i] += window[i] * window[i];
        }
    }

    let rows: Vec<Vec<f64>> = (0..spec.channels())
        .into_par_iter()
        .map(|c| {
            let mut acc = vec![0.0; total];
            let mut buf = vec![Complex64::new(0.0, 0.0); n];
            for t in 0..frames {
                buf[0] = Complex64::new(spec.data[[c, t, 0]].re, 0.0);
                for f in 1..bins - 1 {
                    let v = spec.data[[c, t, f]];
                    buf[f] = v;
                    buf[n - f] = v.conj();
                }
                buf[n / 2] = Complex64::new(spec.data[[c, t, bins - 1]].re, 0.0);
                ifft.process(&mut buf);
                for i in 0..n {
                    acc[t * hop + i] += buf[i].re / n as f64 * window[i];
                }
            }
            (0..target_length)
                .map(|k| {
                    let idx = k + pad;
                    if idx < total && envelope[idx] > 1e-10 {
                        acc[idx] / envelope[idx]
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect();

    let mut samples = Array2::zeros((spec.channels(), target_length));
    for (c, row) in rows.into_iter().enumerate() {
        samples.row_mut(c).assign(&ndarray::Array1::from_vec(row));
    }
    MultiChannelWave::new(samples, spec.sample_rate)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise_wave(c: usize, t: usize, seed: u64) -> MultiChannelWave {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = Array2::from_shape_fn((c, t), |_| rng.random_range(-1.0..1.0));
        MultiChannelWave::new(s, 16000).unwrap()
    }

    fn rel_err(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
        let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
        let den: f64 = b.iter().map(|y| y * y).sum();
        (num / den).sqrt()
    }

    #[test]
    fn default_params_are_valid() {
        StftParams::default().validate().unwrap();
        StftParams::new(512, 128, Window::Hann).unwrap();
    }

    #[test]
    fn rejects_non_cola_and_bad_sizes() {
        assert!(StftParams::new(500, 100, Window::Hann).is_err());
        assert!(StftParams::new(512, 100, Window::Hann).is_err());
        // Squared Hann does not overlap-add to a constant at 50 % overlap.
        assert!(StftParams::new(512, 256, Window::Hann).is_err());
        assert!(StftParams::new(512, 256, Window::SqrtHann).is_ok());
    }

    #[test]
    fn zero_wave_gives_zero_spectrogram() {
        let w = MultiChannelWave::new(Array2::zeros((1, 4096)), 16000).unwrap();
        let spec = stft(&w, &StftParams::default()).unwrap();
        assert!(spec.data.iter().all(|v| v.norm() == 0.0));
        let back = istft(&spec, 4096).unwrap();
        assert!(back.samples().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn frame_count_and_bins() {
        let w = noise_wave(2, 4000, 1);
        let p = StftParams::default();
        let spec = stft(&w, &p).unwrap();
        assert_eq!(spec.frames(), 4000 / 128 + 1);
        assert_eq!(spec.bins(), 257);
        assert_eq!(spec.channels(), 2);
    }

    #[test]
    fn short_signal_rejected() {
        let w = noise_wave(1, 300, 1);
        let err = stft(&w, &StftParams::default()).unwrap_err();
        assert!(err.to_string().contains("shorter than one"));
    }

    #[test]
    fn bin_mismatch_rejected_by_istft() {
        let p = StftParams::default();
        let spec = Spectrogram {
            data: Array3::zeros((1, 3, 100)),
            params: p,
            sample_rate: 16000,
        };
        assert!(matches!(istft(&spec, 100), Err(Error::Shape(_))));
    }

    #[test]
    fn tone_peaks_at_its_bin() {
        let p = StftParams::default();
        let k = 37;
        // A cosine is even about both ends when T − 1 is a multiple of
        // fft_size, so reflection padding continues it exactly.
        let t = 4097;
        let x: Vec<f64> = (0..t)
            .map(|i| (2.0 * std::f64::consts::PI * k as f64 * i as f64 / p.fft_size as f64).cos())
            .collect();
        // Direct DFT of one interior windowed frame gives the expected peak.
        let w = p.window.coefficients(p.fft_size);
        let frame_start = 1024;
        let dft_mag = |bin: usize| {
            let mut acc = Complex64::new(0.0, 0.0);
            for n in 0..p.fft_size {
                let ang = -2.0 * std::f64::consts::PI * (bin * n) as f64 / p.fft_size as f64;
                acc += Complex64::from_polar(x[frame_start + n] * w[n], ang);
            }
            acc.norm()
        };
        let oracle_peak = (0..p.bins())
            .max_by(|a, b| dft_mag(*a).partial_cmp(&dft_mag(*b)).unwrap())
            .unwrap();
        assert_eq!(oracle_peak, k);

        let spec = stft(&MultiChannelWave::mono(x, 16000).unwrap(), &p).unwrap();
        for frame in 0..spec.frames() {
            let peak = (0..spec.bins())
                .max_by(|a, b| {
                    spec.data[[0, frame, *a]]
                        .norm()
                        .partial_cmp(&spec.data[[0, frame, *b]].norm())
                        .unwrap()
                })
                .unwrap();
            assert_eq!(peak, k, "frame {frame}");
        }
    }

    #[test]
    fn round_trip_both_windows() {
        let w = noise_wave(3, 5000, 7);
        for p in [
            StftParams::default(),
            StftParams::new(256, 64, Window::Hann).unwrap(),
            StftParams::new(1024, 512, Window::SqrtHann).unwrap(),
        ] {
            let spec = stft(&w, &p).unwrap();
            let back = istft(&spec, w.len()).unwrap();
            assert!(rel_err(back.samples(), w.samples()) < 1e-10, "{p:?}");
        }
    }

    #[test]
    fn single_frame_synthesis_by_hand() {
        let p = StftParams::new(16, 4, Window::SqrtHann).unwrap();
        let n = p.fft_size;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let frame: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let w = p.window.coefficients(n);
        // One-sided spectrum of the windowed frame, by direct DFT.
        let mut data = Array3::zeros((1, 1, p.bins()));
        for f in 0..p.bins() {
            let mut acc = Complex64::new(0.0, 0.0);
            for i in 0..n {
                let ang = -2.0 * std::f64::consts::PI * (f * i) as f64 / n as f64;
                acc += Complex64::from_polar(frame[i] * w[i], ang);
            }
            data[[0, 0, f]] = acc;
        }
        let spec = Spectrogram::new(data, p, 16000).unwrap();
        // Frame 0 covers padded [0, n); output sample k maps to padded k + n/2.
        let out = istft(&spec, n / 2).unwrap();
        for k in 0..n / 2 {
            let i = k + n / 2;
            let expect = frame[i] * w[i] * w[i] / (w[i] * w[i]);
            assert!((out.samples()[[0, k]] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn stft_istft_stft_idempotent() {
        let w = noise_wave(1, 3000, 11);
        let p = StftParams::default();
        let s1 = stft(&w, &p).unwrap();
        let y = istft(&s1, w.len()).unwrap();
        let s2 = stft(&y, &p).unwrap();
        let d: f64 = s1
            .data
            .iter()
            .zip(s2.data.iter())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        assert!(d < 1e-8);
    }

    #[test]
    fn parseval_per_frame() {
        let w = noise_wave(1, 4096, 5);
        let p = StftParams::default();
        let spec = stft(&w, &p).unwrap();
        let win = p.window.coefficients(p.fft_size);
        let padded = reflect_pad(w.channel(0), p.fft_size / 2);
        for t in [0, 3, 17, spec.frames() - 1] {
            let time_energy: f64 = (0..p.fft_size)
                .map(|i| (padded[t * p.hop + i] * win[i]).powi(2))
                .sum();
            let mut spec_energy = 0.0;
            for f in 0..p.bins() {
                let m = spec.data[[0, t, f]].norm_sqr();
                let doubled = f != 0 && f != p.bins() - 1;
                spec_energy += if doubled { 2.0 * m } else { m };
            }
            spec_energy /= p.fft_size as f64;
            assert!((time_energy - spec_energy).abs() < 1e-8 * time_energy);
        }
    }

    #[test]
    fn geometry_length_checked() {
        let w = noise_wave(2, 10, 1);
        assert!(w.clone().with_geometry(vec![[0.0; 3]]).is_err());
        assert!(w.with_geometry(vec![[0.0; 3], [0.1, 0.0, 0.0]]).is_ok());
    }
}
