//! Objective evaluation against simulator ground truth.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Reported dB values are clamped to ±`DB_CAP`.
pub const DB_CAP: f64 = 60.0;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn capped_ratio_db(num: f64, den: f64) -> f64 {
    if den <= 0.0 {
        return if num > 0.0 { DB_CAP } else { -DB_CAP };
    }
    if num <= 0.0 {
        return -DB_CAP;
    }
    (10.0 * (num / den).log10()).clamp(-DB_CAP, DB_CAP)
}

/// Truncates both signals to the shorter length; the flag reports whether
/// truncation happened.
pub fn align<'a>(a: &'a [f64], b: &'a [f64]) -> (&'a [f64], &'a [f64], bool) {
    let n = a.len().min(b.len());
    (&a[..n], &b[..n], a.len() != b.len())
}

/// Scale-invariant signal-to-distortion ratio in dB.
pub fn si_sdr(estimate: &[f64], reference: &[f64]) -> Result<f64> {
    let (e, r, _) = align(estimate, reference);
    if e.is_empty() {
        return Err(Error::invalid("si_sdr needs at least one sample"));
    }
    let rr = dot(r, r);
    if rr <= 0.0 {
        return Err(Error::invalid("si_sdr reference is all zero"));
    }
    let alpha = dot(e, r) / rr;
    let target: f64 = alpha * alpha * rr;
    let resid: f64 = e.iter().zip(r).map(|(x, y)| (x - alpha * y).powi(2)).sum();
    Ok(capped_ratio_db(target, resid))
}

/// A signal split into its target component and everything else.
#[derive(Debug, Clone, PartialEq)]
pub struct Decomposition {
    pub target: Vec<f64>,
    pub residual: Vec<f64>,
}

impl Decomposition {
    /// Residual taken as `estimate − target_image`.
    pub fn from_estimate(estimate: &[f64], target_image: &[f64]) -> Self {
        let (e, t, _) = align(estimate, target_image);
        Self {
            target: t.to_vec(),
            residual: e.iter().zip(t).map(|(a, b)| a - b).collect(),
        }
    }

    pub fn snr_db(&self) -> f64 {
        capped_ratio_db(
            dot(&self.target, &self.target),
            dot(&self.residual, &self.residual),
        )
    }
}

/// SNR of the enhanced signal minus SNR of the best raw channel.
pub fn snr_gain(enhanced: &Decomposition, raw_best_channel: &Decomposition) -> Result<f64> {
    if enhanced.target.is_empty() || raw_best_channel.target.is_empty() {
        return Err(Error::invalid("snr_gain needs oracle target components"));
    }
    Ok(enhanced.snr_db() - raw_best_channel.snr_db())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub si_sdr_db: f64,
    pub si_sdr_improvement_db: f64,
    pub snr_gain_db: f64,
    pub doa_error_deg: Option<f64>,
    pub channel_selection_correct: Option<bool>,
}

impl EvalReport {
    pub fn is_finite(&self) -> bool {
        self.si_sdr_db.is_finite()
            && self.si_sdr_improvement_db.is_finite()
            && self.snr_gain_db.is_finite()
            && self.doa_error_deg.is_none_or(f64::is_finite)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn noise(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
    }

    #[test]
    fn perfect_and_scaled_estimates_hit_cap() {
        let r = noise(1000, 1);
        assert_eq!(si_sdr(&r, &r).unwrap(), DB_CAP);
        let scaled: Vec<f64> = r.iter().map(|v| 3.7 * v).collect();
        assert_eq!(si_sdr(&scaled, &r).unwrap(), DB_CAP);
    }

    #[test]
    fn equal_power_orthogonal_noise_is_zero_db() {
        let r = noise(4000, 2);
        let n0 = noise(4000, 3);
        // Gram-Schmidt against the reference, then match power.
        let proj = dot(&n0, &r) / dot(&r, &r);
        let mut n: Vec<f64> = n0.iter().zip(&r).map(|(a, b)| a - proj * b).collect();
        let scale = (dot(&r, &r) / dot(&n, &n)).sqrt();
        n.iter_mut().for_each(|v| *v *= scale);
        assert!(dot(&n, &r).abs() < 1e-9);
        let e: Vec<f64> = r.iter().zip(&n).map(|(a, b)| a + b).collect();
        assert!(si_sdr(&e, &r).unwrap().abs() < 0.1);
        assert_eq!(si_sdr(&n, &r).unwrap(), -DB_CAP);
    }

    #[test]
    fn zero_reference_rejected() {
        assert!(si_sdr(&[1.0, 2.0], &[0.0, 0.0]).is_err());
        assert!(si_sdr(&[], &[]).is_err());
    }

    #[test]
    fn snr_gain_cases() {
        let img = noise(500, 4);
        let interf = noise(500, 5);
        let raw: Vec<f64> = img.iter().zip(&interf).map(|(a, b)| a + 0.5 * b).collect();
        let raw_d = Decomposition::from_estimate(&raw, &img);
        let perfect = Decomposition::from_estimate(&img, &img);
        assert!((snr_gain(&perfect, &raw_d).unwrap() - (DB_CAP - raw_d.snr_db())).abs() < 1e-12);
        assert_eq!(snr_gain(&raw_d, &raw_d).unwrap(), 0.0);
        let empty = Decomposition {
            target: vec![],
            residual: vec![],
        };
        assert!(snr_gain(&empty, &raw_d).is_err());
    }

    proptest! {
        #[test]
        fn si_sdr_scale_invariant(seed in 0u64..1000, scale in 0.01f64..100.0) {
            let r = noise(256, seed);
            let e: Vec<f64> = noise(256, seed + 1).iter().zip(&r).map(|(n, x)| x + 0.3 * n).collect();
            let scaled: Vec<f64> = e.iter().map(|v| v * scale).collect();
            let a = si_sdr(&e, &r).unwrap();
            let b = si_sdr(&scaled, &r).unwrap();
            prop_assert!((a - b).abs() < 1e-9);
        }
    }
}
