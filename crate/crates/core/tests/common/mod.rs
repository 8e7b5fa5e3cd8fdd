#![allow(dead_code)]

use farfield::sim::SceneTruth;
use farfield::{Complex64, MultiChannelWave};
use ndarray::{Array2, Array3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn cgauss(rng: &mut ChaCha8Rng) -> Complex64 {
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    Complex64::new(re, im)
}

pub fn cvec(rng: &mut ChaCha8Rng, n: usize) -> Vec<Complex64> {
    (0..n).map(|_| cgauss(rng)).collect()
}

/// `A Aᴴ + εI` with `A` complex Gaussian, `n × 2n`.
pub fn random_pd(rng: &mut ChaCha8Rng, n: usize) -> Array2<Complex64> {
    let a: Vec<Complex64> = cvec(rng, n * 2 * n);
    let mut m = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            let mut acc = Complex64::new(0.0, 0.0);
            for k in 0..2 * n {
                acc += a[i * 2 * n + k] * a[j * 2 * n + k].conj();
            }
            m[[i, j]] = acc;
        }
        m[[i, i]] += 0.1;
    }
    m
}

/// Gaussian elimination with partial pivoting.
pub fn solve(a: &Array2<Complex64>, b: &[Complex64]) -> Vec<Complex64> {
    let n = b.len();
    let mut m = a.clone();
    let mut x = b.to_vec();
    for col in 0..n {
        let p = (col..n)
            .max_by(|&i, &j| m[[i, col]].norm().total_cmp(&m[[j, col]].norm()))
            .unwrap();
        for k in 0..n {
            m.swap([col, k], [p, k]);
        }
        x.swap(col, p);
        for r in col + 1..n {
            let f = m[[r, col]] / m[[col, col]];
            for k in col..n {
                let v = m[[col, k]];
                m[[r, k]] -= f * v;
            }
            let v = x[col];
            x[r] -= f * v;
        }
    }
    for col in (0..n).rev() {
        let mut acc = x[col];
        for k in col + 1..n {
            acc -= m[[col, k]] * x[k];
        }
        x[col] = acc / m[[col, col]];
    }
    x
}

pub fn hdot(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

pub fn matvec(a: &Array2<Complex64>, v: &[Complex64]) -> Vec<Complex64> {
    (0..v.len())
        .map(|i| (0..v.len()).map(|j| a[[i, j]] * v[j]).sum())
        .collect()
}

/// `wᴴ Φ w`, real part.
pub fn quad(phi: &Array2<Complex64>, w: &[Complex64]) -> f64 {
    hdot(w, &matvec(phi, w)).re
}

pub fn random_spec_data(rng: &mut ChaCha8Rng, c: usize, t: usize, f: usize) -> Array3<Complex64> {
    Array3::from_shape_fn((c, t, f), |_| cgauss(rng))
}

pub fn white_wave(rng: &mut ChaCha8Rng, c: usize, len: usize, sr: u32) -> MultiChannelWave {
    let s = Array2::from_shape_fn((c, len), |_| {
        let v: f64 = StandardNormal.sample(rng);
        0.1 * v
    });
    MultiChannelWave::new(s, sr).unwrap()
}

pub fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    rng.random_range(lo..hi)
}

/// Oracle two-way dominance: which image has ≥ `margin_db` more
/// multichannel power in each STFT bin, or `None`.
pub fn dominance(
    truth: &SceneTruth,
    params: &farfield::StftParams,
    margin_db: f64,
) -> Array2<Option<usize>> {
    let specs: Vec<_> = truth
        .images
        .iter()
        .map(|w| farfield::signal::stft(w, params).unwrap())
        .collect();
    let (_, t, f) = specs[0].data.dim();
    let ratio = 10f64.powf(margin_db / 10.0);
    Array2::from_shape_fn((t, f), |(ti, fi)| {
        let p: Vec<f64> = specs
            .iter()
            .map(|s| {
                (0..s.channels())
                    .map(|c| s.data[[c, ti, fi]].norm_sqr())
                    .sum()
            })
            .collect();
        if p[0] >= ratio * p[1] && p[0] > 0.0 {
            Some(0)
        } else if p[1] >= ratio * p[0] && p[1] > 0.0 {
            Some(1)
        } else {
            None
        }
    })
}
