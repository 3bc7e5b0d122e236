//! Shared helpers for numeric tests: the finite-difference gradient oracle
//! and tolerance comparisons. Test-only support, but exported so integration
//! tests and the acceptance suite can reuse it.

/// Central finite differences of a scalar function at `x`.
///
/// Evaluates `f` at `x ± h` per coordinate; the oracle is independent of any
/// analytic gradient path it is used to check.
pub fn finite_diff_grad<F>(mut f: F, x: &[f64], h: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut grad = vec![0.0; x.len()];
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + h;
        let fp = f(&probe);
        probe[i] = orig - h;
        let fm = f(&probe);
        probe[i] = orig;
        grad[i] = (fp - fm) / (2.0 * h);
    }
    grad
}

/// Largest elementwise relative error between two gradient vectors.
///
/// Uses `|a − b| / max(|a|, |b|, floor)` so near-zero entries are compared
/// absolutely at the `floor` scale.
pub fn max_rel_err(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    assert_eq!(analytic.len(), numeric.len(), "gradient length mismatch");
    let mut worst = 0.0f64;
    for (&a, &n) in analytic.iter().zip(numeric) {
        let scale = a.abs().max(n.abs()).max(floor);
        let rel = (a - n).abs() / scale;
        if rel > worst {
            worst = rel;
        }
    }
    worst
}

/// Deterministic uniform values in `[lo, hi)` for test inputs.
pub fn uniform_values(seed: u64, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}
