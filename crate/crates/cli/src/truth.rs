//! Scene ground truth written by `simulate` and read by `evaluate`.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthSource {
    pub label: String,
    /// Image WAV file, relative to the truth file.
    pub image: String,
    pub doa_deg: f64,
    pub position: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub sample_rate: u32,
    pub mixture: String,
    pub rttm: String,
    pub geometry: String,
    pub mic_positions: Vec<[f64; 3]>,
    pub sources: Vec<TruthSource>,
}
