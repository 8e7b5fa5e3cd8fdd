//! The four subcommands.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use farfield::gss::{gss_enhance, GssOutput};
use farfield::localization::{
    angular_distance, localize_sources, select_channel_energy_phase, select_channel_max_snr,
    ChannelSelection, SelectionCriterion,
};
use farfield::metrics::{si_sdr, snr_gain, Decomposition, EvalReport};
use farfield::signal::stft;
use farfield::sim::{self, SceneSpec, SignalSpec};
use farfield::{MultiChannelWave, SegmentAnnotation, Spectrogram};
use ndarray::{Array2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::error::{CliError, Result};
use crate::io;
use crate::rttm;
use crate::truth::{Truth, TruthSource};

pub const MANIFEST: &str = "manifest.json";
pub const REPORT: &str = "report.json";
pub const TIMINGS: &str = "timings.json";

/// Tolerance for RTTM segments ending past the audio.
const RTTM_SLACK_S: f64 = 1e-3;

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn check_label(label: &str) -> Result<()> {
    if label.is_empty() || label.contains(['/', '\\']) || label == "." || label == ".." {
        return Err(CliError::input(format!(
            "speaker label '{label}' cannot be used as a file name"
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------- simulate

/// Renders a scene JSON into `out_dir` and returns the files written.
pub fn simulate(scene_path: &Path, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let mut scene: SceneSpec = io::read_json(scene_path)?;
    let base = scene_path.parent().unwrap_or(Path::new("."));
    for (i, src) in scene.sources.iter_mut().enumerate() {
        if let SignalSpec::Wav { path } = &src.signal {
            let wave = io::read_wav(&base.join(path))?;
            if wave.sample_rate() != scene.sample_rate {
                return Err(CliError::input(format!(
                    "sources[{i}]: {path} is {} Hz, scene is {} Hz",
                    wave.sample_rate(),
                    scene.sample_rate
                )));
            }
            src.signal = SignalSpec::Samples {
                samples: wave.channel(0).to_vec(),
            };
        }
    }
    let truth = sim::simulate(&scene)?;
    for l in &truth.labels {
        check_label(l)?;
    }
    create_dir(out_dir)?;

    let sr = scene.sample_rate;
    let mut written = Vec::new();
    let mut put_wav = |name: &str, w: &MultiChannelWave| -> Result<String> {
        let p = out_dir.join(name);
        io::write_wav(&p, w.samples().view(), sr)?;
        written.push(p);
        Ok(name.to_string())
    };
    let mixture = put_wav("mixture.wav", &truth.mixture)?;
    let mut sources = Vec::new();
    for (i, img) in truth.images.iter().enumerate() {
        let label = &truth.labels[i];
        sources.push(TruthSource {
            label: label.clone(),
            image: put_wav(&format!("image_{label}.wav"), img)?,
            doa_deg: truth.doas_deg[i],
            position: scene.sources[i].position,
        });
    }

    let rttm_path = out_dir.join("activities.rttm");
    io::write_atomic(
        &rttm_path,
        rttm::format_rttm("mixture", &truth.activities).as_bytes(),
    )?;
    let geom_path = out_dir.join("geometry.json");
    io::write_json(&geom_path, &scene.mic_positions)?;
    let truth_path = out_dir.join("truth.json");
    io::write_json(
        &truth_path,
        &Truth {
            sample_rate: sr,
            mixture,
            rttm: "activities.rttm".into(),
            geometry: "geometry.json".into(),
            mic_positions: scene.mic_positions.clone(),
            sources,
        },
    )?;
    written.extend([rttm_path, geom_path, truth_path]);
    Ok(written)
}

// ------------------------------------------------------------ shared input

struct Inputs {
    wave: MultiChannelWave,
    annotations: Vec<SegmentAnnotation>,
    spec: Spectrogram,
}

fn load_inputs(mixture: &Path, rttm_path: &Path, config: &PipelineConfig) -> Result<Inputs> {
    let wave = io::read_wav(mixture)?;
    if wave.channels() < 2 {
        return Err(CliError::input(format!(
            "{}: need ≥ 2 channels, got {}",
            mixture.display(),
            wave.channels()
        )));
    }
    let annotations = rttm::read_rttm(rttm_path)?;
    if annotations.iter().all(|a| a.is_empty()) {
        return Err(CliError::input(format!(
            "{}: no speakers",
            rttm_path.display()
        )));
    }
    let dur = wave.duration_s();
    for a in &annotations {
        check_label(&a.speaker)?;
        if a.end() > dur + RTTM_SLACK_S {
            return Err(CliError::input(format!(
                "speaker '{}' has a segment ending at {:.3} s, beyond the {:.3} s of audio",
                a.speaker,
                a.end(),
                dur
            )));
        }
    }
    if let Some(g) = &config.geometry {
        if g.len() != wave.channels() {
            return Err(CliError::input(format!(
                "geometry has {} positions for {} channels",
                g.len(),
                wave.channels()
            )));
        }
    }
    let spec = stft(&wave, &config.stft)?;
    Ok(Inputs {
        wave,
        annotations,
        spec,
    })
}

// ---------------------------------------------------------------- localize

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DoaEntry {
    pub speaker: String,
    pub azimuth_deg: Option<f64>,
    pub score: Option<f64>,
    pub fallback: bool,
    pub error: Option<String>,
}

fn run_localization(
    inputs: &Inputs,
    config: &PipelineConfig,
    geometry: &[[f64; 3]],
) -> Result<Vec<DoaEntry>> {
    let doas = localize_sources(
        &inputs.spec,
        Some(geometry),
        &inputs.annotations,
        &config.localization,
    )?;
    Ok(doas
        .into_iter()
        .map(|d| match d.estimate {
            Ok(e) => DoaEntry {
                speaker: d.speaker,
                azimuth_deg: Some(e.azimuth_deg),
                score: Some(e.score),
                fallback: d.fallback,
                error: None,
            },
            Err(e) => DoaEntry {
                speaker: d.speaker,
                azimuth_deg: None,
                score: None,
                fallback: d.fallback,
                error: Some(e.to_string()),
            },
        })
        .collect())
}

/// Per-speaker DOA estimates; geometry is required.
pub fn localize(
    mixture: &Path,
    rttm_path: &Path,
    config: &PipelineConfig,
) -> Result<Vec<DoaEntry>> {
    config.validate()?;
    let geometry = config.geometry.clone().ok_or_else(|| {
        CliError::input(
            "missing microphone geometry: pass --geometry or set `geometry` in the config",
        )
    })?;
    let inputs = load_inputs(mixture, rttm_path, config)?;
    run_localization(&inputs, config, &geometry)
}

// ----------------------------------------------------------------- enhance

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ErrorKind {
    Input,
    Numerical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeakerEntry {
    pub speaker: String,
    pub output: Option<String>,
    pub doa_deg: Option<f64>,
    pub selection_criterion: Option<SelectionCriterion>,
    pub selected_channel: Option<usize>,
    pub selection_scores: Vec<f64>,
    /// Enhanced segments in samples of the input.
    pub segments: Vec<(usize, usize)>,
    /// Beamformer reference channel of each segment.
    pub ref_channels: Vec<usize>,
    pub warnings: Vec<String>,
    pub error: Option<String>,
    pub error_kind: Option<ErrorKind>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputInfo {
    pub mixture: String,
    pub rttm: String,
    pub sample_rate: u32,
    pub channels: usize,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub input: InputInfo,
    pub config: PipelineConfig,
    pub speakers: Vec<SpeakerEntry>,
    pub warnings: Vec<String>,
    pub failures: usize,
}

impl Manifest {
    /// The most severe per-speaker failure, if any.
    pub fn failure_kind(&self) -> Option<ErrorKind> {
        let kinds: Vec<ErrorKind> = self.speakers.iter().filter_map(|s| s.error_kind).collect();
        if kinds.contains(&ErrorKind::Numerical) {
            Some(ErrorKind::Numerical)
        } else {
            kinds.first().copied()
        }
    }
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct Timings {
    pub load_s: f64,
    pub localization_s: f64,
    pub selection_s: f64,
    pub gss_s: f64,
    pub write_s: f64,
    pub evaluation_s: f64,
    pub total_s: f64,
}

#[derive(Debug, Clone)]
pub struct EnhanceRequest {
    pub mixture: PathBuf,
    pub rttm: PathBuf,
    pub config: PipelineConfig,
    pub truth: Option<PathBuf>,
    pub write_timings: bool,
}

#[derive(Debug, Clone)]
pub struct EnhanceOutcome {
    pub manifest: Manifest,
    pub report: Option<Report>,
    pub timings: Timings,
}

fn display_name(p: &Path) -> String {
    p.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| p.display().to_string())
}

fn kind_of(e: &farfield::Error) -> ErrorKind {
    if e.is_numerical() {
        ErrorKind::Numerical
    } else {
        ErrorKind::Input
    }
}

fn select(
    inputs: &Inputs,
    config: &PipelineConfig,
    speaker: &str,
    warnings: &mut Vec<String>,
) -> std::result::Result<ChannelSelection, farfield::Error> {
    match (config.selection_criterion, &config.geometry) {
        (SelectionCriterion::EnergyPhase, Some(g)) => select_channel_energy_phase(
            &inputs.spec,
            Some(g),
            &inputs.annotations,
            speaker,
            &config.localization,
        ),
        (SelectionCriterion::EnergyPhase, None) => {
            warnings.push("no geometry: energy-phase selection replaced by max-snr".into());
            select_channel_max_snr(&inputs.spec, &inputs.annotations, speaker)
        }
        (SelectionCriterion::MaxSnr, _) => {
            select_channel_max_snr(&inputs.spec, &inputs.annotations, speaker)
        }
    }
}

/// Localization, channel selection and guided separation for every speaker.
///
/// Per-speaker failures are recorded in the manifest and do not stop the
/// other speakers. Output is deterministic for identical inputs and config.
pub fn enhance(req: &EnhanceRequest) -> Result<EnhanceOutcome> {
    let t_start = Instant::now();
    let config = &req.config;
    config.validate()?;
    let inputs = load_inputs(&req.mixture, &req.rttm, config)?;
    let out_dir = &config.output_dir;
    create_dir(out_dir)?;
    let mut timings = Timings {
        load_s: t_start.elapsed().as_secs_f64(),
        ..Default::default()
    };

    let mut warnings = Vec::new();
    let t = Instant::now();
    let doas: BTreeMap<String, DoaEntry> = match &config.geometry {
        Some(g) => run_localization(&inputs, config, g)?
            .into_iter()
            .map(|d| (d.speaker.clone(), d))
            .collect(),
        None => {
            warnings.push("no geometry: localization skipped".into());
            BTreeMap::new()
        }
    };
    timings.localization_s = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let speakers: Vec<&SegmentAnnotation> = inputs
        .annotations
        .iter()
        .filter(|a| !a.is_empty())
        .collect();
    let mut entries: Vec<SpeakerEntry> = speakers
        .iter()
        .map(|a| {
            let mut w = Vec::new();
            let sel = select(&inputs, config, &a.speaker, &mut w);
            let doa = doas.get(&a.speaker);
            if let Some(err) = doa.and_then(|d| d.error.as_ref()) {
                w.push(format!("localization failed: {err}"));
            }
            let (criterion, channel, scores) = match sel {
                Ok(s) => {
                    if s.fallback {
                        w.push("no target-only frames, selection used all active frames".into());
                    }
                    (
                        Some(s.criterion),
                        Some(s.channel_index),
                        s.per_channel_scores,
                    )
                }
                Err(e) => {
                    w.push(format!("channel selection failed: {e}"));
                    (None, None, vec![])
                }
            };
            SpeakerEntry {
                speaker: a.speaker.clone(),
                output: None,
                doa_deg: doa.and_then(|d| d.azimuth_deg),
                selection_criterion: criterion,
                selected_channel: channel,
                selection_scores: scores,
                segments: vec![],
                ref_channels: vec![],
                warnings: w,
                error: None,
                error_kind: None,
            }
        })
        .collect();
    timings.selection_s = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let results: Vec<std::result::Result<GssOutput, farfield::Error>> = entries
        .par_iter()
        .map(|e| {
            gss_enhance(
                &inputs.wave,
                &inputs.annotations,
                &e.speaker,
                &config.gss_config(e.selected_channel),
            )
        })
        .collect();
    timings.gss_s = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let sr = inputs.wave.sample_rate();
    let len = inputs.wave.len();
    for (entry, res) in entries.iter_mut().zip(results) {
        match res {
            Ok(out) => {
                let mut timeline = Array2::<f64>::zeros((1, len));
                let mut offset = 0;
                for &(s0, s1) in &out.segments {
                    let n = s1 - s0;
                    timeline
                        .index_axis_mut(Axis(0), 0)
                        .slice_mut(ndarray::s![s0..s1])
                        .assign(&ndarray::ArrayView1::from(&out.audio[offset..offset + n]));
                    offset += n;
                }
                let name = format!("{}.wav", entry.speaker);
                io::write_wav(&out_dir.join(&name), timeline.view(), sr)?;
                entry.output = Some(name);
                entry.segments = out.segments;
                entry.ref_channels = out.ref_channels;
                entry.warnings.extend(out.warnings);
            }
            Err(e) => {
                entry.error_kind = Some(kind_of(&e));
                entry.error = Some(e.to_string());
            }
        }
    }
    let failures = entries.iter().filter(|e| e.error.is_some()).count();
    let manifest = Manifest {
        input: InputInfo {
            mixture: display_name(&req.mixture),
            rttm: display_name(&req.rttm),
            sample_rate: sr,
            channels: inputs.wave.channels(),
            samples: len,
        },
        config: config.clone(),
        speakers: entries,
        warnings,
        failures,
    };
    io::write_json(&out_dir.join(MANIFEST), &manifest)?;
    timings.write_s = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let report = match &req.truth {
        Some(truth) => {
            let r = evaluate(out_dir, truth)?;
            io::write_json(&out_dir.join(REPORT), &r)?;
            Some(r)
        }
        None => None,
    };
    timings.evaluation_s = t.elapsed().as_secs_f64();
    timings.total_s = t_start.elapsed().as_secs_f64();
    if req.write_timings {
        io::write_json(&out_dir.join(TIMINGS), &timings)?;
    }
    Ok(EnhanceOutcome {
        manifest,
        report,
        timings,
    })
}

// ---------------------------------------------------------------- evaluate

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub speakers: BTreeMap<String, EvalReport>,
    /// Speakers in the manifest with no output or no truth source.
    pub skipped: Vec<String>,
    pub mean_si_sdr_improvement_db: Option<f64>,
    pub mean_snr_gain_db: Option<f64>,
}

fn gather(wave: &MultiChannelWave, channel: usize, segments: &[(usize, usize)]) -> Vec<f64> {
    let ch = wave.channel(channel);
    segments
        .iter()
        .flat_map(|&(s0, s1)| ch.slice(ndarray::s![s0..s1.min(ch.len())]).to_vec())
        .collect()
}

/// Per-segment reference channel gather, for the enhanced signal's oracle.
fn gather_refs(wave: &MultiChannelWave, refs: &[usize], segments: &[(usize, usize)]) -> Vec<f64> {
    segments
        .iter()
        .zip(refs)
        .flat_map(|(&seg, &r)| gather(wave, r, &[seg]))
        .collect()
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Scores an `enhance` output directory against simulator truth.
///
/// SI-SDR references are each source's image at the segment's beamformer
/// reference channel; the improvement is taken over the best input channel,
/// each scored against its own image.
pub fn evaluate(enhanced_dir: &Path, truth_path: &Path) -> Result<Report> {
    let manifest: Manifest = io::read_json(&enhanced_dir.join(MANIFEST))?;
    let truth: Truth = io::read_json(truth_path)?;
    let base = truth_path.parent().unwrap_or(Path::new("."));
    let mixture = io::read_wav(&base.join(&truth.mixture))?;
    if mixture.len() != manifest.input.samples || mixture.channels() != manifest.input.channels {
        return Err(CliError::input(
            "truth mixture does not match the enhanced recording",
        ));
    }

    let mut speakers = BTreeMap::new();
    let mut skipped = Vec::new();
    for entry in &manifest.speakers {
        let (Some(out), Some(src)) = (
            &entry.output,
            truth.sources.iter().find(|s| s.label == entry.speaker),
        ) else {
            skipped.push(entry.speaker.clone());
            continue;
        };
        let image = io::read_wav(&base.join(&src.image))?;
        let enhanced = io::read_wav(&enhanced_dir.join(out))?;
        let segs = &entry.segments;
        let est = gather(&enhanced, 0, segs);
        let reference = gather_refs(&image, &entry.ref_channels, segs);
        let score = si_sdr(&est, &reference)?;

        let mut best_raw = f64::NEG_INFINITY;
        let mut best_dec: Option<Decomposition> = None;
        for c in 0..mixture.channels() {
            let raw = gather(&mixture, c, segs);
            let img = gather(&image, c, segs);
            best_raw = best_raw.max(si_sdr(&raw, &img)?);
            let d = Decomposition::from_estimate(&raw, &img);
            if best_dec.as_ref().is_none_or(|b| d.snr_db() > b.snr_db()) {
                best_dec = Some(d);
            }
        }
        let gain = snr_gain(
            &Decomposition::from_estimate(&est, &reference),
            &best_dec.expect("at least two channels"),
        )?;
        let nearest = truth
            .mic_positions
            .iter()
            .enumerate()
            .min_by(|a, b| {
                sim::distance(a.1, &src.position).total_cmp(&sim::distance(b.1, &src.position))
            })
            .map(|(i, _)| i);
        speakers.insert(
            entry.speaker.clone(),
            EvalReport {
                si_sdr_db: score,
                si_sdr_improvement_db: score - best_raw,
                snr_gain_db: gain,
                doa_error_deg: entry.doa_deg.map(|d| angular_distance(d, src.doa_deg)),
                channel_selection_correct: entry.selected_channel.map(|c| Some(c) == nearest),
            },
        );
    }
    let improvements: Vec<f64> = speakers.values().map(|r| r.si_sdr_improvement_db).collect();
    let gains: Vec<f64> = speakers.values().map(|r| r.snr_gain_db).collect();
    Ok(Report {
        speakers,
        skipped,
        mean_si_sdr_improvement_db: mean(&improvements),
        mean_snr_gain_db: mean(&gains),
    })
}
