use rand::Rng;

use crate::rng;
use crate::ttt::SegmentPrediction;

use super::shift::ShiftSpec;
use super::{HarnessError, Result};

/// Per-class F1 and macro-F, reported ×100.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MacroF {
    pub f1_healthy: f64,
    pub f1_depressed: f64,
    pub macro_f: f64,
}

/// Evaluation summary for one (shift, mode) run.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub f1_healthy: f64,
    pub f1_depressed: f64,
    pub macro_f: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n_recordings: usize,
    pub shift: ShiftSpec,
}

/// 2×2 confusion counts, `counts[actual][predicted]`, from per-recording
/// `(predicted, actual)` outcomes.
pub fn confusion_counts(outcomes: &[(usize, usize)]) -> [[usize; 2]; 2] {
    let mut counts = [[0usize; 2]; 2];
    for &(pred, label) in outcomes {
        counts[label][pred] += 1;
    }
    counts
}

fn f1_of_class(counts: &[[usize; 2]; 2], class: usize) -> f64 {
    let tp = counts[class][class];
    let fp = counts[1 - class][class];
    let fn_ = counts[class][1 - class];
    if tp + fp + fn_ == 0 {
        // class absent from predictions and references: scored 0 by convention
        return 0.0;
    }
    if tp == 0 {
        return 0.0;
    }
    let precision = tp as f64 / (tp + fp) as f64;
    let recall = tp as f64 / (tp + fn_) as f64;
    100.0 * 2.0 * precision * recall / (precision + recall)
}

/// Arithmetic mean of the two per-class F1 scores.
pub fn combine_macro(f1_healthy: f64, f1_depressed: f64) -> f64 {
    (f1_healthy + f1_depressed) / 2.0
}

/// Per-class F1 from precision/recall plus their macro average, ×100.
pub fn macro_f(counts: &[[usize; 2]; 2]) -> Result<MacroF> {
    let total: usize = counts.iter().flatten().sum();
    if total == 0 {
        return Err(HarnessError::Arg { op: "macro_f", detail: "no predictions".into() });
    }
    let f1_healthy = f1_of_class(counts, 0);
    let f1_depressed = f1_of_class(counts, 1);
    Ok(MacroF { f1_healthy, f1_depressed, macro_f: combine_macro(f1_healthy, f1_depressed) })
}

/// Most frequent segment label; ties go to the class with the higher mean
/// probability across segments.
pub fn majority_vote(preds: &[SegmentPrediction]) -> Result<usize> {
    if preds.is_empty() {
        return Err(HarnessError::Arg { op: "majority_vote", detail: "empty prediction list".into() });
    }
    let depressed = preds.iter().filter(|p| p.label == 1).count();
    let healthy = preds.len() - depressed;
    if depressed != healthy {
        return Ok(usize::from(depressed > healthy));
    }
    let mean_p_depressed: f64 = preds.iter().map(|p| p.probs[1]).sum::<f64>() / preds.len() as f64;
    Ok(usize::from(mean_p_depressed > 0.5))
}

/// Percentile bootstrap of the macro-F statistic over recordings.
pub fn bootstrap_ci(outcomes: &[(usize, usize)], resamples: usize, level: f64, seed: u64) -> Result<(f64, f64)> {
    if outcomes.len() < 2 {
        return Err(HarnessError::Arg {
            op: "bootstrap_ci",
            detail: format!("need at least 2 recordings, got {}", outcomes.len()),
        });
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(HarnessError::Arg { op: "bootstrap_ci", detail: format!("level {level} outside (0, 1)") });
    }
    let n = outcomes.len();
    let mut rng = rng::seeded(seed);
    let mut stats = Vec::with_capacity(resamples);
    let mut resample = Vec::with_capacity(n);
    for _ in 0..resamples {
        resample.clear();
        for _ in 0..n {
            resample.push(outcomes[rng.gen_range(0..n)]);
        }
        stats.push(macro_f(&confusion_counts(&resample))?.macro_f);
    }
    stats.sort_by(f64::total_cmp);
    let alpha = (1.0 - level) / 2.0;
    Ok((percentile(&stats, alpha), percentile(&stats, 1.0 - alpha)))
}

/// Linear-interpolation percentile of a sorted slice.
fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}

/// Writes evaluation reports as CSV, one row per (shift, mode) pair.
pub fn write_report_csv<W: std::io::Write>(rows: &[(String, String, EvalReport)], mut out: W) -> std::io::Result<()> {
    writeln!(out, "shift,mode,macro_f,f1_healthy,f1_depressed,ci_low,ci_high,n_recordings")?;
    for (shift, mode, r) in rows {
        writeln!(
            out,
            "{shift},{mode},{:.4},{:.4},{:.4},{:.4},{:.4},{}",
            r.macro_f, r.f1_healthy, r.f1_depressed, r.ci_low, r.ci_high, r.n_recordings
        )?;
    }
    Ok(())
}
