//! Central finite-difference checks of the analytic loss gradients.

use serde::Serialize;

use crate::error::Result;
use crate::loss::{
    margin_softmax_loss, margin_softmax_loss_with_margins, ClassWeights, EmbeddingBatch, MarginSpec,
};
use crate::matrix::Matrix;
use crate::rng::SeededStream;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GradCheckConfig {
    pub step: f64,
    pub rel_tol: f64,
    /// Differences below this absolute value always pass.
    pub abs_floor: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-5,
            rel_tol: 1e-5,
            abs_floor: 1e-8,
        }
    }
}

impl GradCheckConfig {
    /// Elementwise pass rule: `|a − f| ≤ max(rel_tol · max(|a|, |f|), abs_floor)`.
    pub fn accepts(&self, analytic: f64, numeric: f64) -> bool {
        let diff = (analytic - numeric).abs();
        diff <= (self.rel_tol * analytic.abs().max(numeric.abs())).max(self.abs_floor)
    }
}

/// One entry outside tolerance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FailedEntry {
    /// `true` for a class-weight entry, `false` for a feature entry.
    pub weight: bool,
    /// Row-major index into the feature or weight matrix.
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub entries: usize,
    pub failures: usize,
    pub max_abs_error: f64,
    /// Largest `|a − f| / max(|a|, |f|)` among entries above the floor.
    pub max_rel_error: f64,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub failed: Vec<FailedEntry>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }

    pub fn merge(&mut self, other: &GradCheckReport) {
        self.entries += other.entries;
        self.failures += other.failures;
        self.max_abs_error = self.max_abs_error.max(other.max_abs_error);
        self.max_rel_error = self.max_rel_error.max(other.max_rel_error);
        self.failed.extend_from_slice(&other.failed);
    }

    fn record(&mut self, cfg: &GradCheckConfig, weight: bool, index: usize, analytic: f64, numeric: f64) {
        let diff = (analytic - numeric).abs();
        self.entries += 1;
        self.max_abs_error = self.max_abs_error.max(diff);
        if diff > cfg.abs_floor {
            self.max_rel_error = self
                .max_rel_error
                .max(diff / analytic.abs().max(numeric.abs()));
        }
        if !cfg.accepts(analytic, numeric) {
            self.failures += 1;
            self.failed.push(FailedEntry {
                weight,
                index,
                analytic,
                numeric,
            });
        }
    }
}

/// Compares the given analytic gradients with central differences of
/// `loss` taken over every feature and weight entry.
pub fn check_against<F>(
    batch: &EmbeddingBatch,
    weights: &ClassWeights,
    grad_features: &Matrix,
    grad_weights: &Matrix,
    cfg: &GradCheckConfig,
    loss: F,
) -> Result<GradCheckReport>
where
    F: Fn(&EmbeddingBatch, &ClassWeights) -> Result<f64>,
{
    let h = cfg.step;
    let mut report = GradCheckReport::default();

    let mut probe = batch.clone();
    for idx in 0..probe.features.as_slice().len() {
        let orig = probe.features.as_slice()[idx];
        probe.features.as_mut_slice()[idx] = orig + h;
        let plus = loss(&probe, weights)?;
        probe.features.as_mut_slice()[idx] = orig - h;
        let minus = loss(&probe, weights)?;
        probe.features.as_mut_slice()[idx] = orig;
        report.record(cfg, false, idx, grad_features.as_slice()[idx], (plus - minus) / (2.0 * h));
    }

    let mut probe = weights.clone();
    for idx in 0..probe.weights.as_slice().len() {
        let orig = probe.weights.as_slice()[idx];
        probe.weights.as_mut_slice()[idx] = orig + h;
        let plus = loss(batch, &probe)?;
        probe.weights.as_mut_slice()[idx] = orig - h;
        let minus = loss(batch, &probe)?;
        probe.weights.as_mut_slice()[idx] = orig;
        report.record(cfg, true, idx, grad_weights.as_slice()[idx], (plus - minus) / (2.0 * h));
    }
    Ok(report)
}

/// Runs the forward pass once (drawing margins from `rng`), then checks its
/// gradients with those margins held fixed.
pub fn check_loss_gradients(
    batch: &EmbeddingBatch,
    weights: &ClassWeights,
    spec: &MarginSpec,
    cfg: &GradCheckConfig,
    rng: &mut SeededStream,
) -> Result<GradCheckReport> {
    let out = margin_softmax_loss(batch, weights, spec, rng)?;
    let margins = out.margins_used.clone();
    check_against(batch, weights, &out.grad_features, &out.grad_weights, cfg, |b, w| {
        Ok(margin_softmax_loss_with_margins(b, w, spec, &margins)?.mean_loss)
    })
}

/// Random problem with `1 ≤ n ≤ max_n`, `2 ≤ c ≤ max_c`, `2 ≤ d ≤ max_d`.
/// Every feature and weight row has a uniformly random direction and a norm
/// drawn from `[ROW_NORM_MIN, ROW_NORM_MAX]`.
pub fn random_instance(
    rng: &mut SeededStream,
    max_n: usize,
    max_c: usize,
    max_d: usize,
) -> (EmbeddingBatch, ClassWeights) {
    let n = 1 + rng.below(max_n);
    let c = 2 + rng.below(max_c - 1);
    let d = 2 + rng.below(max_d - 1);
    let features = random_rows(rng, n, d);
    let weights = random_rows(rng, c, d);
    let labels: Vec<usize> = (0..n).map(|_| rng.below(c)).collect();
    (
        EmbeddingBatch::new(Matrix::from_vec(n, d, features).unwrap(), labels).unwrap(),
        ClassWeights::new(Matrix::from_vec(c, d, weights).unwrap()).unwrap(),
    )
}

pub const ROW_NORM_MIN: f64 = 0.5;
pub const ROW_NORM_MAX: f64 = 2.0;

fn random_rows(rng: &mut SeededStream, rows: usize, d: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(rows * d);
    for _ in 0..rows {
        let dir: Vec<f64> = (0..d).map(|_| rng.standard_normal()).collect();
        let len = crate::matrix::norm(&dir);
        let r = rng.uniform_range(ROW_NORM_MIN, ROW_NORM_MAX);
        out.extend(dir.iter().map(|v| v * r / len));
    }
    out
}

/// Every loss configuration exercised by the gradient suite.
pub fn family_grid(scale: f64) -> Vec<MarginSpec> {
    let mut grid = vec![MarginSpec::plain(), MarginSpec::modified(scale)];
    grid.extend([2.0, 3.0].map(|m| MarginSpec::sphereface(m, scale)));
    grid.extend([0.45, 0.5, 0.55].map(|m| MarginSpec::arcface(m, scale)));
    grid.extend([0.3, 0.35, 0.4].map(|m| MarginSpec::cosface(m, scale)));
    for std in [0.0175, 0.05] {
        grid.push(MarginSpec::elastic_arc(0.5, std, scale));
        grid.push(MarginSpec::elastic_arc_plus(0.5, std, scale));
        grid.push(MarginSpec::elastic_cos(0.35, std, scale));
        grid.push(MarginSpec::elastic_cos_plus(0.35, std, scale));
    }
    grid
}

#[derive(Debug, Clone, Serialize)]
pub struct FamilyResult {
    pub label: String,
    pub trials: usize,
    pub report: GradCheckReport,
}

/// `trials` random instances per configuration; configuration `k` draws
/// from stream `k` of `seed`, so results do not depend on grid order.
pub fn run_suite(
    specs: &[MarginSpec],
    trials: usize,
    seed: u64,
    cfg: &GradCheckConfig,
) -> Result<Vec<FamilyResult>> {
    specs
        .iter()
        .enumerate()
        .map(|(k, spec)| {
            let mut rng = SeededStream::split(seed, k as u64);
            let mut report = GradCheckReport::default();
            for _ in 0..trials {
                let (batch, weights) = random_instance(&mut rng, 8, 8, 4);
                report.merge(&check_loss_gradients(&batch, &weights, spec, cfg, &mut rng)?);
            }
            Ok(FamilyResult {
                label: spec.label(),
                trials,
                report,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accepts_rule() {
        let cfg = GradCheckConfig::default();
        assert!(cfg.accepts(1.0, 1.0 + 5e-6));
        assert!(!cfg.accepts(1.0, 1.0 + 5e-5));
        assert!(cfg.accepts(1e-12, 5e-9));
        assert!(!cfg.accepts(0.0, 2e-8));
    }

    #[test]
    fn flipped_gradient_fails() {
        let mut rng = SeededStream::new(1);
        let (batch, weights) = random_instance(&mut rng, 4, 4, 3);
        let spec = MarginSpec::arcface(0.5, 8.0);
        let out = margin_softmax_loss(&batch, &weights, &spec, &mut rng).unwrap();
        let mut gx = out.grad_features.clone();
        gx.scale(-1.0);
        let report = check_against(
            &batch,
            &weights,
            &gx,
            &out.grad_weights,
            &GradCheckConfig::default(),
            |b, w| Ok(margin_softmax_loss_with_margins(b, w, &spec, &out.margins_used)?.mean_loss),
        )
        .unwrap();
        assert!(!report.passed());
    }

    #[test]
    fn small_suite_passes() {
        let cfg = GradCheckConfig::default();
        let results = run_suite(&family_grid(8.0), 20, 3, &cfg).unwrap();
        for r in results {
            assert!(r.report.passed(), "{}: {:?}", r.label, r.report);
        }
    }
}
