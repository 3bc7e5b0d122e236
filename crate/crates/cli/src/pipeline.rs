use std::collections::BTreeMap;
use std::path::Path;

use melmae::audio::{MelFilterbank, SAMPLE_RATE, SEGMENT_SECONDS, HOP_LENGTH, WIN_LENGTH};
use melmae::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, Stage};
use melmae::harness::{
    build_eval_corpus, build_training_corpus, generate_synthetic_corpus, read_manifest, run_protocol,
    sweep_steps, test_filter_for, write_report_csv, write_sweep_csv, EvalMode, ShiftSpec, Split,
    SplitFilter, TrainAudit,
};
use melmae::model::ModelParams;
use melmae::train::{pretrain_mae, train_probe, write_loss_csv};

use crate::config::RunConfig;
use crate::CliError;

type Model = ModelParams<f32>;

/// Frame/mel geometry of one 7-s segment under the fixed frontend.
fn segment_geometry(cfg: &RunConfig) -> (usize, usize) {
    let seg_samples = SEGMENT_SECONDS * SAMPLE_RATE as usize;
    let frames = 1 + (seg_samples - WIN_LENGTH) / HOP_LENGTH;
    let (frames, mels) = cfg.patch.cropped_grid(frames, cfg.frontend.mels);
    (frames, mels)
}

fn filterbank(cfg: &RunConfig) -> Result<MelFilterbank, CliError> {
    MelFilterbank::new(cfg.frontend.mels).map_err(|e| CliError::Config(e.to_string()))
}

/// Output directories are created, but their parent must already exist;
/// a missing parent is an I/O error naming the path.
fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    if let Some(parent) = dir.parent() {
        if !parent.as_os_str().is_empty() && !parent.exists() {
            return Err(CliError::Io(format!("parent directory {} does not exist", parent.display())));
        }
    }
    std::fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("cannot create {}: {e}", dir.display())))
}

/// Atomic artifact write: temp file in the target directory, then rename.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes).map_err(|e| CliError::Io(format!("cannot write {}: {e}", tmp.display())))?;
    std::fs::rename(&tmp, path).map_err(|e| CliError::Io(format!("cannot rename into {}: {e}", path.display())))
}

fn load_manifest(cfg: &RunConfig) -> Result<Vec<melmae::harness::ManifestEntry>, CliError> {
    let path = cfg.manifest_path();
    if !path.exists() {
        return Err(CliError::MissingPrerequisite {
            stage: "gen-data",
            detail: format!("manifest {} not found", path.display()),
        });
    }
    Ok(read_manifest(&path)?)
}

fn audit_metadata(metadata: &mut BTreeMap<String, String>, prefix: &str, audit: &TrainAudit) {
    metadata.insert(format!("{prefix}.recordings"), audit.n_recordings.to_string());
    metadata.insert(format!("{prefix}.segments"), audit.n_segments.to_string());
    for (g, n) in &audit.gender_counts {
        metadata.insert(format!("{prefix}.gender.{g}"), n.to_string());
    }
    for (t, n) in &audit.dataset_counts {
        metadata.insert(format!("{prefix}.dataset.{t}"), n.to_string());
    }
}

fn filter_metadata(metadata: &mut BTreeMap<String, String>, filter: &SplitFilter) {
    if let Some(g) = filter.gender {
        metadata.insert("train_filter.gender".to_string(), format!("{g:?}"));
    }
    if let Some(t) = &filter.dataset_tag {
        metadata.insert("train_filter.dataset_tag".to_string(), t.clone());
    }
}

fn filter_from_metadata(metadata: &BTreeMap<String, String>) -> Result<SplitFilter, CliError> {
    let gender = match metadata.get("train_filter.gender").map(String::as_str) {
        None => None,
        Some("F") => Some(melmae::harness::Gender::F),
        Some("M") => Some(melmae::harness::Gender::M),
        Some(other) => return Err(CliError::Config(format!("checkpoint has invalid train_filter.gender {other:?}"))),
    };
    Ok(SplitFilter { gender, dataset_tag: metadata.get("train_filter.dataset_tag").cloned() })
}

pub fn cmd_gen_data(cfg: &RunConfig) -> Result<(), CliError> {
    ensure_dir(&cfg.paths.corpus_dir)?;
    let mut synth = cfg.synth.clone();
    synth.seed = cfg.stage_seed("synth", cfg.synth.seed);
    synth.validate().map_err(|e| CliError::Config(e.to_string()))?;
    let (entries, manifest_path) = generate_synthetic_corpus(&synth, &cfg.paths.corpus_dir)?;
    let count = |s: Split| entries.iter().filter(|e| e.split == s).count();
    println!(
        "gen-data: wrote {} ({} train, {} validation, {} test recordings)",
        manifest_path.display(),
        count(Split::Train),
        count(Split::Validation),
        count(Split::Test),
    );
    Ok(())
}

pub fn cmd_pretrain(cfg: &RunConfig) -> Result<(), CliError> {
    let manifest = load_manifest(cfg)?;
    ensure_dir(&cfg.paths.checkpoint_dir)?;
    ensure_dir(&cfg.paths.report_dir)?;
    let fb = filterbank(cfg)?;
    let (frames, mels) = segment_geometry(cfg);
    let mut params: Model = ModelParams::init(&cfg.patch, frames, mels, cfg.stage_seed("init", 0))?;

    let train_filter = cfg.protocol.train_filter()?;
    let (corpus, audit) =
        build_eval_corpus(&manifest, &cfg.paths.corpus_dir, Split::Train, &train_filter, &fb, &params)?;

    let mut pretrain_cfg = cfg.pretrain.clone();
    pretrain_cfg.seed = cfg.stage_seed("pretrain", cfg.pretrain.seed);
    let curve = pretrain_mae(&corpus, &mut params, &pretrain_cfg)?;

    let mut metadata = BTreeMap::new();
    filter_metadata(&mut metadata, &train_filter);
    audit_metadata(&mut metadata, "pretrain_audit", &audit);
    let ckpt = Checkpoint { stage: Stage::Pretrained, mels: cfg.frontend.mels, params, metadata };
    save_checkpoint(&cfg.pretrained_path(), &ckpt)?;

    let mut csv = Vec::new();
    write_loss_csv(&curve, &mut csv).map_err(|e| CliError::Io(e.to_string()))?;
    write_atomic(&cfg.paths.report_dir.join("pretrain_loss.csv"), &csv)?;

    let last = curve.last().copied().unwrap_or(f64::NAN);
    println!(
        "pretrain: {} steps on {} segments, final loss {last:.4}, wrote {}",
        curve.len(),
        audit.n_segments,
        cfg.pretrained_path().display()
    );
    Ok(())
}

pub fn cmd_probe(cfg: &RunConfig, finetune_encoder: bool) -> Result<(), CliError> {
    let manifest = load_manifest(cfg)?;
    ensure_dir(&cfg.paths.report_dir)?;
    let path = cfg.pretrained_path();
    if !path.exists() {
        return Err(CliError::MissingPrerequisite {
            stage: "pretrain",
            detail: format!("checkpoint {} not found", path.display()),
        });
    }
    let ckpt: Checkpoint<f32> = load_checkpoint(&path)?;
    ckpt.ensure_stage(&path, Stage::Pretrained)
        .map_err(|e| CliError::MissingPrerequisite { stage: "pretrain", detail: e.to_string() })?;
    ckpt.ensure_matches(&path, &cfg.patch, cfg.frontend.mels)?;
    let mut params = ckpt.params;

    let fb = filterbank(cfg)?;
    let train_filter = cfg.protocol.train_filter()?;
    let (corpus, audit) =
        build_training_corpus(&manifest, &cfg.paths.corpus_dir, Split::Train, &train_filter, &fb, &params)?;

    let mut train_cfg = cfg.train.clone();
    train_cfg.seed = cfg.stage_seed("probe", cfg.train.seed);
    let curve = train_probe(&corpus, &mut params, &train_cfg, finetune_encoder)?;

    let mut metadata = ckpt.metadata;
    filter_metadata(&mut metadata, &train_filter);
    audit_metadata(&mut metadata, "probe_audit", &audit);
    metadata.insert("finetune_encoder".to_string(), finetune_encoder.to_string());
    let out = Checkpoint { stage: Stage::Probed, mels: cfg.frontend.mels, params, metadata };
    save_checkpoint(&cfg.probed_path(), &out)?;

    let mut csv = Vec::new();
    write_loss_csv(&curve, &mut csv).map_err(|e| CliError::Io(e.to_string()))?;
    write_atomic(&cfg.paths.report_dir.join("probe_loss.csv"), &csv)?;

    let last = curve.last().copied().unwrap_or(f64::NAN);
    println!(
        "probe: {} steps on {} segments (finetune_encoder={finetune_encoder}), final NLL {last:.4}, wrote {}",
        curve.len(),
        audit.n_segments,
        cfg.probed_path().display()
    );
    Ok(())
}

fn load_probed(cfg: &RunConfig) -> Result<Checkpoint<f32>, CliError> {
    let path = cfg.probed_path();
    if !path.exists() {
        return Err(CliError::MissingPrerequisite {
            stage: "probe",
            detail: format!("checkpoint {} not found", path.display()),
        });
    }
    let ckpt: Checkpoint<f32> = load_checkpoint(&path)?;
    ckpt.ensure_stage(&path, Stage::Probed)
        .map_err(|e| CliError::MissingPrerequisite { stage: "probe", detail: e.to_string() })?;
    ckpt.ensure_matches(&path, &cfg.patch, cfg.frontend.mels)?;
    Ok(ckpt)
}

fn parse_shift(s: &str) -> Result<ShiftSpec, CliError> {
    s.parse::<ShiftSpec>().map_err(CliError::Config)
}

fn shift_file_tag(spec: &ShiftSpec) -> String {
    spec.to_string().replace(':', "-").replace('.', "_")
}

pub fn cmd_eval(cfg: &RunConfig, shift: &str, ttt: bool) -> Result<(), CliError> {
    let manifest = load_manifest(cfg)?;
    ensure_dir(&cfg.paths.report_dir)?;
    let spec = parse_shift(shift)?;
    let ckpt = load_probed(cfg)?;
    let mut params = ckpt.params;
    let fb = filterbank(cfg)?;

    let train_filter = filter_from_metadata(&ckpt.metadata)?;
    let test_filter = test_filter_for(&spec, &train_filter)?;
    let mode = if ttt {
        let mut ttt_cfg = cfg.ttt.clone();
        ttt_cfg.seed = cfg.stage_seed("ttt", cfg.ttt.seed);
        EvalMode::Ttt(ttt_cfg)
    } else {
        EvalMode::Frozen
    };

    let report = run_protocol(
        &manifest,
        &cfg.paths.corpus_dir,
        &spec,
        &mut params,
        &mode,
        &test_filter,
        &fb,
        cfg.stage_seed("eval", 0),
    )?;

    let rows = vec![(spec.to_string(), mode.name().to_string(), report.clone())];
    let mut csv = Vec::new();
    write_report_csv(&rows, &mut csv).map_err(|e| CliError::Io(e.to_string()))?;
    let out = cfg.paths.report_dir.join(format!("eval_{}_{}.csv", shift_file_tag(&spec), mode.name()));
    write_atomic(&out, &csv)?;

    println!(
        "eval: shift={spec} mode={} macro_f={:.1} (f1_h={:.1}, f1_d={:.1}, ci=[{:.1}, {:.1}], n={})",
        mode.name(),
        report.macro_f,
        report.f1_healthy,
        report.f1_depressed,
        report.ci_low,
        report.ci_high,
        report.n_recordings
    );
    Ok(())
}

pub fn cmd_sweep(cfg: &RunConfig, shift: &str, checkpoints: &str) -> Result<(), CliError> {
    let manifest = load_manifest(cfg)?;
    ensure_dir(&cfg.paths.report_dir)?;
    let spec = parse_shift(shift)?;
    let ckpt = load_probed(cfg)?;
    let mut params = ckpt.params;
    let fb = filterbank(cfg)?;

    let steps: Vec<usize> = checkpoints
        .split(',')
        .map(|s| s.trim().parse::<usize>().map_err(|e| CliError::Config(format!("bad checkpoint {s:?}: {e}"))))
        .collect::<Result<_, _>>()?;

    let train_filter = filter_from_metadata(&ckpt.metadata)?;
    let test_filter = test_filter_for(&spec, &train_filter)?;
    let mut ttt_cfg = cfg.ttt.clone();
    ttt_cfg.seed = cfg.stage_seed("ttt", cfg.ttt.seed);
    if let Some(&max) = steps.last() {
        if max > ttt_cfg.steps {
            ttt_cfg.steps = max;
        }
    }

    let rows = sweep_steps(
        &manifest,
        &cfg.paths.corpus_dir,
        &spec,
        &mut params,
        &ttt_cfg,
        &steps,
        &test_filter,
        &fb,
        cfg.stage_seed("eval", 0),
    )?;

    let mut csv = Vec::new();
    write_sweep_csv(&rows, &mut csv).map_err(|e| CliError::Io(e.to_string()))?;
    let out = cfg.paths.report_dir.join(format!("sweep_{}.csv", shift_file_tag(&spec)));
    write_atomic(&out, &csv)?;

    let summary: Vec<String> = rows.iter().map(|(s, m)| format!("{s}:{:.1}", m.macro_f)).collect();
    println!("sweep: shift={spec} macro_f by steps [{}], wrote {}", summary.join(", "), out.display());
    Ok(())
}
