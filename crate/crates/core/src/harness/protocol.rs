use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use crate::audio::{load_wav, log_mel, segment_waveform, LogMelSpectrogram, MelFilterbank, Waveform};
use crate::model::{classify_probs, crop_to_patch_grid, ModelParams};
use crate::rng;
use crate::scalar::Scalar;
use crate::ttt::{ttt_predict, ttt_predict_at_checkpoints, SegmentPrediction, TttConfig};

use super::manifest::{Gender, ManifestEntry, Split};
use super::metrics::{bootstrap_ci, confusion_counts, macro_f, majority_vote, EvalReport, MacroF};
use super::shift::{apply_shift, ShiftSpec};
use super::{HarnessError, Result};

const BOOTSTRAP_RESAMPLES: usize = 1000;
const BOOTSTRAP_LEVEL: f64 = 0.95;

/// Manifest filter for one protocol side. Empty means "everything".
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SplitFilter {
    pub gender: Option<Gender>,
    pub dataset_tag: Option<String>,
}

impl SplitFilter {
    pub fn matches(&self, e: &ManifestEntry) -> bool {
        self.gender.map_or(true, |g| e.gender == g) && self.dataset_tag.as_ref().map_or(true, |t| &e.dataset_tag == t)
    }

    pub fn is_empty(&self) -> bool {
        self.gender.is_none() && self.dataset_tag.is_none()
    }
}

impl fmt::Display for SplitFilter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut parts = Vec::new();
        if let Some(g) = self.gender {
            parts.push(format!("gender={g:?}"));
        }
        if let Some(t) = &self.dataset_tag {
            parts.push(format!("dataset_tag={t}"));
        }
        if parts.is_empty() {
            write!(f, "(none)")
        } else {
            write!(f, "{}", parts.join(","))
        }
    }
}

/// Who actually appeared in a training corpus, counted per factor so cross
/// protocols can prove the held-out group never entered a batch.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainAudit {
    pub n_recordings: usize,
    pub n_segments: usize,
    pub gender_counts: BTreeMap<String, usize>,
    pub dataset_counts: BTreeMap<String, usize>,
}

/// Frozen-classifier evaluation or per-sample test-time training.
#[derive(Debug, Clone)]
pub enum EvalMode {
    Frozen,
    Ttt(TttConfig),
}

impl EvalMode {
    pub fn name(&self) -> &'static str {
        match self {
            EvalMode::Frozen => "frozen",
            EvalMode::Ttt(_) => "ttt",
        }
    }
}

fn filtered_split<'a>(
    manifest: &'a [ManifestEntry],
    split: Split,
    filter: &SplitFilter,
    split_name: &str,
) -> Result<Vec<&'a ManifestEntry>> {
    let selected: Vec<&ManifestEntry> = manifest
        .iter()
        .filter(|e| e.split == split && filter.matches(e))
        .collect();
    if selected.is_empty() {
        return Err(HarnessError::EmptyFilteredSplit { split: split_name.to_string(), filter: filter.to_string() });
    }
    Ok(selected)
}

/// Loads one recording and turns it into normalized, patch-grid-cropped
/// model inputs, one per 7-s segment.
fn prepare_segments<S: Scalar>(
    corpus_dir: &Path,
    entry: &ManifestEntry,
    shift: Option<(&ShiftSpec, u64)>,
    fb: &MelFilterbank,
    params: &ModelParams<S>,
) -> Result<Vec<LogMelSpectrogram<S>>> {
    let audio: Waveform<S> = load_wav(&corpus_dir.join(&entry.path))?;
    let audio = match shift {
        Some((spec, seed)) => apply_shift(&audio, spec, seed)?,
        None => audio,
    };
    let mut out = Vec::new();
    for segment in segment_waveform(&audio)? {
        let spec = log_mel(&segment, fb)?;
        let cropped = crop_to_patch_grid(&spec, &params.cfg);
        let expected = (params.grid.0 * params.cfg.patch_time, params.grid.1 * params.cfg.patch_mel);
        if (cropped.frames, cropped.mels) != expected {
            return Err(HarnessError::Arg {
                op: "prepare_segments",
                detail: format!(
                    "segment grid {}×{} does not match the model's {}×{} (frontend/model config mismatch)",
                    cropped.frames, cropped.mels, expected.0, expected.1
                ),
            });
        }
        out.push(cropped.normalize());
    }
    Ok(out)
}

/// Assembles the labeled training corpus for a split, applying the filter and
/// counting who got in. Training audio is never shifted.
pub fn build_training_corpus<S: Scalar>(
    manifest: &[ManifestEntry],
    corpus_dir: &Path,
    split: Split,
    filter: &SplitFilter,
    fb: &MelFilterbank,
    params: &ModelParams<S>,
) -> Result<(Vec<(LogMelSpectrogram<S>, usize)>, TrainAudit)> {
    let split_name = format!("{split:?}").to_lowercase();
    let entries = filtered_split(manifest, split, filter, &split_name)?;
    let mut corpus = Vec::new();
    let mut audit = TrainAudit::default();
    for entry in entries {
        let segments = prepare_segments(corpus_dir, entry, None, fb, params)?;
        audit.n_recordings += 1;
        audit.n_segments += segments.len();
        *audit.gender_counts.entry(format!("{:?}", entry.gender)).or_insert(0) += 1;
        *audit.dataset_counts.entry(entry.dataset_tag.clone()).or_insert(0) += 1;
        for s in segments {
            corpus.push((s, entry.label.index()));
        }
    }
    Ok((corpus, audit))
}

/// Unlabeled variant of [`build_training_corpus`] for pretraining.
pub fn build_eval_corpus<S: Scalar>(
    manifest: &[ManifestEntry],
    corpus_dir: &Path,
    split: Split,
    filter: &SplitFilter,
    fb: &MelFilterbank,
    params: &ModelParams<S>,
) -> Result<(Vec<LogMelSpectrogram<S>>, TrainAudit)> {
    let (labeled, audit) = build_training_corpus(manifest, corpus_dir, split, filter, fb, params)?;
    Ok((labeled.into_iter().map(|(s, _)| s).collect(), audit))
}

/// Test filter implied by a shift: cross shifts evaluate the group opposite
/// the trained one; clean and noise evaluate everything.
pub fn test_filter_for(spec: &ShiftSpec, train_filter: &SplitFilter) -> Result<SplitFilter> {
    match spec {
        ShiftSpec::Clean | ShiftSpec::Noise { .. } => Ok(SplitFilter::default()),
        ShiftSpec::GenderCross => {
            let g = train_filter.gender.ok_or_else(|| HarnessError::Arg {
                op: "test_filter_for",
                detail: "gender_cross needs a gender-filtered training run".into(),
            })?;
            Ok(SplitFilter { gender: Some(g.other()), dataset_tag: None })
        }
        ShiftSpec::DatasetCross => {
            let t = train_filter.dataset_tag.as_ref().ok_or_else(|| HarnessError::Arg {
                op: "test_filter_for",
                detail: "dataset_cross needs a dataset-filtered training run".into(),
            })?;
            let tags = super::synth::SynthConfig::dataset_tags();
            let other = if t == tags[0] { tags[1] } else { tags[0] };
            Ok(SplitFilter { gender: None, dataset_tag: Some(other.to_string()) })
        }
    }
}

/// Evaluates the test split under one shift: segments each recording, shifts
/// test audio only, predicts per segment (frozen or TTT), majority-votes per
/// recording, and reports macro-F with a bootstrap confidence interval.
///
/// TTT seeds derive from `(seed, recording id, segment index)`, so results do
/// not depend on evaluation order.
pub fn run_protocol<S: Scalar>(
    manifest: &[ManifestEntry],
    corpus_dir: &Path,
    spec: &ShiftSpec,
    params: &mut ModelParams<S>,
    mode: &EvalMode,
    test_filter: &SplitFilter,
    fb: &MelFilterbank,
    seed: u64,
) -> Result<EvalReport> {
    let entries = filtered_split(manifest, Split::Test, test_filter, "test")?;
    let mut outcomes = Vec::with_capacity(entries.len());
    for entry in entries {
        let shift_seed = rng::derive(seed, &format!("shift/{}", entry.id));
        let segments = prepare_segments(corpus_dir, entry, Some((spec, shift_seed)), fb, params)?;
        let mut preds = Vec::with_capacity(segments.len());
        for (i, segment) in segments.iter().enumerate() {
            let pred = match mode {
                EvalMode::Frozen => {
                    let probs = classify_probs(segment, params)?;
                    SegmentPrediction { label: usize::from(probs[1] > probs[0]), probs }
                }
                EvalMode::Ttt(ttt_cfg) => {
                    let cfg = TttConfig {
                        seed: rng::derive(ttt_cfg.seed ^ seed, &format!("ttt/{}/{}", entry.id, i)),
                        ..ttt_cfg.clone()
                    };
                    let (pred, _trace) = ttt_predict(segment, params, &cfg)?;
                    pred
                }
            };
            preds.push(pred);
        }
        outcomes.push((majority_vote(&preds)?, entry.label.index()));
    }
    let MacroF { f1_healthy, f1_depressed, macro_f: mf } = macro_f(&confusion_counts(&outcomes))?;
    let (ci_low, ci_high) = bootstrap_ci(&outcomes, BOOTSTRAP_RESAMPLES, BOOTSTRAP_LEVEL, rng::derive(seed, "bootstrap"))?;
    Ok(EvalReport {
        f1_healthy,
        f1_depressed,
        macro_f: mf,
        ci_low,
        ci_high,
        n_recordings: outcomes.len(),
        shift: *spec,
    })
}

/// Macro-F at several TTT step counts from a single adaptation pass per
/// segment. `checkpoints` must be sorted ascending with the maximum within
/// the configured step budget; checkpoint 0 is exactly the frozen baseline.
pub fn sweep_steps<S: Scalar>(
    manifest: &[ManifestEntry],
    corpus_dir: &Path,
    spec: &ShiftSpec,
    params: &mut ModelParams<S>,
    ttt_cfg: &TttConfig,
    checkpoints: &[usize],
    test_filter: &SplitFilter,
    fb: &MelFilterbank,
    seed: u64,
) -> Result<Vec<(usize, MacroF)>> {
    if checkpoints.is_empty() {
        return Err(HarnessError::Arg { op: "sweep_steps", detail: "no checkpoints requested".into() });
    }
    for pair in checkpoints.windows(2) {
        if pair[0] >= pair[1] {
            return Err(HarnessError::Arg { op: "sweep_steps", detail: "checkpoints must be sorted ascending and unique".into() });
        }
    }
    let entries = filtered_split(manifest, Split::Test, test_filter, "test")?;
    // per checkpoint, per recording: segment predictions
    let mut per_cp: Vec<Vec<(usize, usize)>> = vec![Vec::new(); checkpoints.len()];
    for entry in entries {
        let shift_seed = rng::derive(seed, &format!("shift/{}", entry.id));
        let segments = prepare_segments(corpus_dir, entry, Some((spec, shift_seed)), fb, params)?;
        let mut seg_preds: Vec<Vec<SegmentPrediction>> = vec![Vec::new(); checkpoints.len()];
        for (i, segment) in segments.iter().enumerate() {
            let cfg = TttConfig {
                seed: rng::derive(ttt_cfg.seed ^ seed, &format!("ttt/{}/{}", entry.id, i)),
                ..ttt_cfg.clone()
            };
            let (preds, _trace) = ttt_predict_at_checkpoints(segment, params, &cfg, checkpoints)?;
            for (c, p) in preds.into_iter().enumerate() {
                seg_preds[c].push(p);
            }
        }
        for (c, preds) in seg_preds.iter().enumerate() {
            per_cp[c].push((majority_vote(preds)?, entry.label.index()));
        }
    }
    checkpoints
        .iter()
        .zip(per_cp)
        .map(|(&steps, outcomes)| Ok((steps, macro_f(&confusion_counts(&outcomes))?)))
        .collect()
}

/// Writes a sweep as `steps,macro_f,f1_healthy,f1_depressed` CSV.
pub fn write_sweep_csv<W: std::io::Write>(rows: &[(usize, MacroF)], mut out: W) -> std::io::Result<()> {
    writeln!(out, "steps,macro_f,f1_healthy,f1_depressed")?;
    for (steps, m) in rows {
        writeln!(out, "{steps},{:.4},{:.4},{:.4}", m.macro_f, m.f1_healthy, m.f1_depressed)?;
    }
    Ok(())
}
