//! Pipeline configuration: defaults, JSON file, then command-line flags.

use std::path::{Path, PathBuf};

use clap::Args;
use farfield::beamform::MvdrVariant;
use farfield::gss::{GssConfig, PsdMethod};
use farfield::localization::{LocalizationConfig, SelectionCriterion};
use farfield::{StftParams, Window};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};
use crate::io;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GssSection {
    pub context_s: f64,
    pub n_iter: usize,
    pub mask_floor: Option<f64>,
    pub activity_dilation_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PsdKind {
    Recursive,
    Batch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BeamformSection {
    pub variant: MvdrVariant,
    pub psd: PsdKind,
    /// Forgetting factor of the recursive PSD.
    pub alpha: f64,
    pub loading: f64,
    pub max_snr_db: Option<f64>,
    pub adaptive: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub stft: StftParams,
    pub gss: GssSection,
    pub beamform: BeamformSection,
    pub localization: LocalizationConfig,
    pub selection_criterion: SelectionCriterion,
    pub output_dir: PathBuf,
    /// Microphone positions in metres, one per channel.
    pub geometry: Option<Vec<[f64; 3]>>,
}

impl Default for GssSection {
    fn default() -> Self {
        let g = GssConfig::default();
        Self {
            context_s: g.context_s,
            n_iter: g.n_iter,
            mask_floor: g.mask_floor,
            activity_dilation_s: g.activity_dilation_s,
        }
    }
}

impl Default for BeamformSection {
    fn default() -> Self {
        let g = GssConfig::default();
        let alpha = match g.psd {
            PsdMethod::Recursive { alpha } => alpha,
            PsdMethod::Batch => 0.99,
        };
        Self {
            variant: g.variant,
            psd: PsdKind::Recursive,
            alpha,
            loading: g.loading,
            max_snr_db: g.max_snr_db,
            adaptive: g.adaptive,
        }
    }
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            stft: StftParams::default(),
            gss: GssSection::default(),
            beamform: BeamformSection::default(),
            localization: LocalizationConfig::default(),
            selection_criterion: SelectionCriterion::EnergyPhase,
            output_dir: PathBuf::from("out"),
            geometry: None,
        }
    }
}

impl PipelineConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        io::read_json(path)
    }

    pub fn gss_config(&self, ref_channel: Option<usize>) -> GssConfig {
        GssConfig {
            stft: self.stft,
            context_s: self.gss.context_s,
            activity_dilation_s: self.gss.activity_dilation_s,
            n_iter: self.gss.n_iter,
            mask_floor: self.gss.mask_floor,
            psd: match self.beamform.psd {
                PsdKind::Recursive => PsdMethod::Recursive {
                    alpha: self.beamform.alpha,
                },
                PsdKind::Batch => PsdMethod::Batch,
            },
            variant: self.beamform.variant,
            loading: self.beamform.loading,
            max_snr_db: self.beamform.max_snr_db,
            ref_channel,
            adaptive: self.beamform.adaptive,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.gss_config(None).validate()?;
        self.localization.validate()?;
        if let Some(g) = &self.geometry {
            if g.len() < 2 {
                return Err(CliError::input("geometry needs at least 2 microphones"));
            }
            if g.iter().flatten().any(|v| !v.is_finite()) {
                return Err(CliError::input("geometry contains non-finite coordinates"));
            }
        }
        Ok(())
    }
}

fn kebab<T: DeserializeOwned>(s: &str) -> std::result::Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|e| e.to_string())
}

/// Command-line overrides for every configuration field.
#[derive(Debug, Clone, Default, Args)]
pub struct ConfigArgs {
    /// JSON configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Geometry sidecar JSON: list of [x, y, z] metres per channel.
    #[arg(long)]
    pub geometry: Option<PathBuf>,
    #[arg(short = 'o', long)]
    pub output_dir: Option<PathBuf>,

    #[arg(long)]
    pub fft_size: Option<usize>,
    #[arg(long)]
    pub hop: Option<usize>,
    /// sqrt-hann | hann
    #[arg(long, value_parser = kebab::<Window>)]
    pub window: Option<Window>,

    #[arg(long)]
    pub context_s: Option<f64>,
    #[arg(long)]
    pub n_iter: Option<usize>,
    #[arg(long)]
    pub mask_floor: Option<f64>,
    #[arg(long)]
    pub activity_dilation_s: Option<f64>,

    /// souden-mvdr | steering-mvdr
    #[arg(long, value_parser = kebab::<MvdrVariant>)]
    pub variant: Option<MvdrVariant>,
    /// recursive | batch
    #[arg(long, value_parser = kebab::<PsdKind>)]
    pub psd: Option<PsdKind>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub loading: Option<f64>,
    #[arg(long, conflicts_with = "no_snr_floor")]
    pub max_snr_db: Option<f64>,
    /// Disable the noise PSD floor.
    #[arg(long)]
    pub no_snr_floor: bool,
    /// Per-frame beamformer weights from the recursive PSD trajectory.
    #[arg(long)]
    pub adaptive: bool,

    #[arg(long)]
    pub grid_deg: Option<f64>,
    #[arg(long, num_args = 2, value_names = ["LO", "HI"])]
    pub band_hz: Option<Vec<f64>>,
    #[arg(long)]
    pub speed_of_sound: Option<f64>,
    /// energy-phase | max-snr
    #[arg(long, value_parser = kebab::<SelectionCriterion>)]
    pub selection: Option<SelectionCriterion>,
}

impl ConfigArgs {
    /// Defaults, overlaid by the config file, overlaid by flags.
    pub fn resolve(&self) -> Result<PipelineConfig> {
        let mut c = match &self.config {
            Some(p) => PipelineConfig::from_file(p)?,
            None => PipelineConfig::default(),
        };
        if let Some(p) = &self.geometry {
            c.geometry = Some(io::read_geometry(p)?);
        }
        if let Some(v) = &self.output_dir {
            c.output_dir = v.clone();
        }
        if let Some(v) = self.fft_size {
            c.stft.fft_size = v;
        }
        if let Some(v) = self.hop {
            c.stft.hop = v;
        }
        if let Some(v) = self.window {
            c.stft.window = v;
        }
        if let Some(v) = self.context_s {
            c.gss.context_s = v;
        }
        if let Some(v) = self.n_iter {
            c.gss.n_iter = v;
        }
        if let Some(v) = self.mask_floor {
            c.gss.mask_floor = Some(v);
        }
        if let Some(v) = self.activity_dilation_s {
            c.gss.activity_dilation_s = v;
        }
        if let Some(v) = self.variant {
            c.beamform.variant = v;
        }
        if let Some(v) = self.psd {
            c.beamform.psd = v;
        }
        if let Some(v) = self.alpha {
            c.beamform.alpha = v;
        }
        if let Some(v) = self.loading {
            c.beamform.loading = v;
        }
        if let Some(v) = self.max_snr_db {
            c.beamform.max_snr_db = Some(v);
        }
        if self.no_snr_floor {
            c.beamform.max_snr_db = None;
        }
        if self.adaptive {
            c.beamform.adaptive = true;
        }
        if let Some(v) = self.grid_deg {
            c.localization.grid_deg = v;
        }
        if let Some(v) = &self.band_hz {
            c.localization.band_hz = (v[0], v[1]);
        }
        if let Some(v) = self.speed_of_sound {
            c.localization.speed_of_sound = v;
        }
        if let Some(v) = self.selection {
            c.selection_criterion = v;
        }
        c.validate()?;
        Ok(c)
    }
}
