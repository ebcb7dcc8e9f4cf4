//! Margin-penalty softmax losses on the unit hypersphere.
//!
//! One forward/backward pipeline covers the whole family: the plain
//! bias-free softmax, the modified (cosine) softmax, the multiplicative,
//! additive-angular and additive-cosine margins, and their elastic and
//! elastic-plus variants where the margin is drawn per sample from a
//! Gaussian.
//!
//! ```text
//! features, weights ──normalize──▶ cos θ ──clamp──▶ margin on (i, yᵢ) ──× s──▶ cross-entropy
//! ```
//!
//! Everything runs in `f64` with reductions in fixed index order, so equal
//! inputs (and equal seeds) give bit-identical outputs.

use serde::{Deserialize, Serialize};

use crate::elastic::{assign_margins_plus, sample_margins};
use crate::error::{Error, Result};
use crate::matrix::{dot, l2_normalize_rows_with_norms, Matrix};
use crate::rng::SeededStream;

/// Cosines are clamped to `[-1 + COS_CLAMP, 1 - COS_CLAMP]` so that `acos`
/// and its derivative stay finite.
pub const COS_CLAMP: f64 = 1e-7;

/// Target entries whose unclamped `|sin θ|` falls below this are reported as
/// numerically unstable by the backward pass.
pub const SIN_INSTABILITY: f64 = 1e-6;

/// Default logit scale.
pub const DEFAULT_SCALE: f64 = 64.0;

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingBatch {
    pub features: Matrix,
    pub labels: Vec<usize>,
}

impl EmbeddingBatch {
    pub fn new(features: Matrix, labels: Vec<usize>) -> Result<Self> {
        if features.rows() == 0 {
            return Err(Error::InvalidArgument("batch must hold at least one sample".into()));
        }
        if features.cols() < 2 {
            return Err(Error::DimensionMismatch(format!(
                "embedding dimension must be >= 2, got {}",
                features.cols()
            )));
        }
        if labels.len() != features.rows() {
            return Err(Error::LengthMismatch {
                expected: features.rows(),
                actual: labels.len(),
            });
        }
        Ok(Self { features, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    fn check_against(&self, weights: &ClassWeights) -> Result<()> {
        if self.dim() != weights.dim() {
            return Err(Error::DimensionMismatch(format!(
                "features have d = {}, class weights have d = {}",
                self.dim(),
                weights.dim()
            )));
        }
        let c = weights.num_classes();
        if let Some(&bad) = self.labels.iter().find(|&&y| y >= c) {
            return Err(Error::InvalidArgument(format!(
                "label {bad} out of range for {c} classes"
            )));
        }
        Ok(())
    }
}

/// Bias-free classification head: one weight row per class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights {
    pub weights: Matrix,
}

impl ClassWeights {
    pub fn new(weights: Matrix) -> Result<Self> {
        if weights.rows() < 2 {
            return Err(Error::InvalidArgument(format!(
                "need at least 2 classes, got {}",
                weights.rows()
            )));
        }
        Ok(Self { weights })
    }

    pub fn num_classes(&self) -> usize {
        self.weights.rows()
    }

    pub fn dim(&self) -> usize {
        self.weights.cols()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MarginFamily {
    /// Raw dot-product logits, no normalization and no scale.
    PlainSoftmax,
    /// Scaled cosine logits without a margin.
    ModifiedSoftmax,
    /// `cos(m1 · θ)` on the target logit.
    Multiplicative { m1: f64 },
    /// `cos(θ + m2)` on the target logit.
    AdditiveAngular { m2: f64 },
    /// `cos θ − m3` on the target logit.
    AdditiveCosine { m3: f64 },
}

impl MarginFamily {
    pub fn name(&self) -> &'static str {
        match self {
            MarginFamily::PlainSoftmax => "plain-softmax",
            MarginFamily::ModifiedSoftmax => "modified-softmax",
            MarginFamily::Multiplicative { .. } => "multiplicative",
            MarginFamily::AdditiveAngular { .. } => "additive-angular",
            MarginFamily::AdditiveCosine { .. } => "additive-cosine",
        }
    }

    /// Nominal margin value; zero for the margin-free families.
    pub fn margin(&self) -> f64 {
        match *self {
            MarginFamily::PlainSoftmax | MarginFamily::ModifiedSoftmax => 0.0,
            MarginFamily::Multiplicative { m1 } => m1,
            MarginFamily::AdditiveAngular { m2 } => m2,
            MarginFamily::AdditiveCosine { m3 } => m3,
        }
    }
}

/// Gaussian spread around the family's nominal margin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ElasticMargin {
    pub std: f64,
    /// Optional `[lo, hi]` clamp on drawn margins. Off by default: the
    /// Gaussian is untruncated.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clamp: Option<[f64; 2]>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarginSpec {
    pub family: MarginFamily,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub elastic: Option<ElasticMargin>,
    #[serde(default)]
    pub plus: bool,
    pub scale: f64,
}

impl MarginSpec {
    pub fn plain() -> Self {
        Self::fixed(MarginFamily::PlainSoftmax, 1.0)
    }

    pub fn modified(scale: f64) -> Self {
        Self::fixed(MarginFamily::ModifiedSoftmax, scale)
    }

    pub fn sphereface(m1: f64, scale: f64) -> Self {
        Self::fixed(MarginFamily::Multiplicative { m1 }, scale)
    }

    pub fn arcface(m: f64, scale: f64) -> Self {
        Self::fixed(MarginFamily::AdditiveAngular { m2: m }, scale)
    }

    pub fn cosface(m: f64, scale: f64) -> Self {
        Self::fixed(MarginFamily::AdditiveCosine { m3: m }, scale)
    }

    pub fn elastic_arc(m: f64, std: f64, scale: f64) -> Self {
        Self::elastic(MarginFamily::AdditiveAngular { m2: m }, std, false, scale)
    }

    pub fn elastic_cos(m: f64, std: f64, scale: f64) -> Self {
        Self::elastic(MarginFamily::AdditiveCosine { m3: m }, std, false, scale)
    }

    pub fn elastic_arc_plus(m: f64, std: f64, scale: f64) -> Self {
        Self::elastic(MarginFamily::AdditiveAngular { m2: m }, std, true, scale)
    }

    pub fn elastic_cos_plus(m: f64, std: f64, scale: f64) -> Self {
        Self::elastic(MarginFamily::AdditiveCosine { m3: m }, std, true, scale)
    }

    fn fixed(family: MarginFamily, scale: f64) -> Self {
        Self {
            family,
            elastic: None,
            plus: false,
            scale,
        }
    }

    fn elastic(family: MarginFamily, std: f64, plus: bool, scale: f64) -> Self {
        Self {
            family,
            elastic: Some(ElasticMargin { std, clamp: None }),
            plus,
            scale,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(Error::InvalidSpec(format!("scale must be positive, got {}", self.scale)));
        }
        if !self.family.margin().is_finite() {
            return Err(Error::InvalidSpec("margin must be finite".into()));
        }
        if let Some(e) = &self.elastic {
            if !matches!(
                self.family,
                MarginFamily::AdditiveAngular { .. } | MarginFamily::AdditiveCosine { .. }
            ) {
                return Err(Error::InvalidSpec(format!(
                    "elastic margins require the additive-angular or additive-cosine family, not {}",
                    self.family.name()
                )));
            }
            if e.std < 0.0 || e.std.is_nan() {
                return Err(Error::NegativeSigma(e.std));
            }
            if let Some([lo, hi]) = e.clamp {
                if !(lo <= hi) {
                    return Err(Error::InvalidSpec(format!("empty margin clamp [{lo}, {hi}]")));
                }
            }
        }
        if self.plus && self.elastic.is_none() {
            return Err(Error::InvalidSpec("the plus variant requires an elastic margin".into()));
        }
        Ok(())
    }

    /// Human-readable label, e.g. `ElasticFace-Arc+ (m=0.5, sigma=0.0175)`.
    pub fn label(&self) -> String {
        let base = match (self.family, self.elastic.is_some()) {
            (MarginFamily::PlainSoftmax, _) => return "Softmax".into(),
            (MarginFamily::ModifiedSoftmax, _) => return format!("ModifiedSoftmax (s={})", self.scale),
            (MarginFamily::Multiplicative { m1 }, _) => return format!("SphereFace (m={m1})"),
            (MarginFamily::AdditiveAngular { m2 }, false) => return format!("ArcFace (m={m2})"),
            (MarginFamily::AdditiveCosine { m3 }, false) => return format!("CosFace (m={m3})"),
            (MarginFamily::AdditiveAngular { .. }, true) => "ElasticFace-Arc",
            (MarginFamily::AdditiveCosine { .. }, true) => "ElasticFace-Cos",
        };
        let std = self.elastic.map_or(0.0, |e| e.std);
        format!(
            "{base}{} (m={}, sigma={std})",
            if self.plus { "+" } else { "" },
            self.family.margin()
        )
    }
}

/// Result of [`softmax_cross_entropy`].
#[derive(Debug, Clone, PartialEq)]
pub struct CrossEntropy {
    pub mean_loss: f64,
    pub per_sample_loss: Vec<f64>,
    pub probabilities: Matrix,
    /// `p − onehot(y)` per entry, computed without cancellation on the
    /// target column.
    pub residual: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub mean_loss: f64,
    pub per_sample_loss: Vec<f64>,
    /// Clamped cosines; raw dot products for the plain softmax.
    pub cos_theta: Matrix,
    /// Logits after margin and scale.
    pub modified_logits: Matrix,
    pub probabilities: Matrix,
    pub grad_features: Matrix,
    pub grad_weights: Matrix,
    pub margins_used: Vec<f64>,
    /// Target entries with `θ + m > π` (additive-angular only), where
    /// `cos(θ + m)` stops being monotone in θ.
    pub wrapped_targets: usize,
    /// Target entries with unclamped `|sin θ|` below [`SIN_INSTABILITY`].
    pub unstable_targets: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub grad_features: Matrix,
    pub grad_weights: Matrix,
    pub unstable_targets: usize,
}

/// Entry `(i, j)` is `⟨xᵢ, Wⱼ⟩`, clamped to `[-1 + 1e-7, 1 - 1e-7]`. Both
/// inputs are expected to be row-normalized.
pub fn cosine_logits(features_norm: &Matrix, weights_norm: &Matrix) -> Result<Matrix> {
    let mut cos = features_norm.matmul_transposed(weights_norm)?;
    cos.as_mut_slice().iter_mut().for_each(|c| *c = clamp_cos(*c));
    Ok(cos)
}

#[inline]
fn clamp_cos(c: f64) -> f64 {
    c.clamp(-1.0 + COS_CLAMP, 1.0 - COS_CLAMP)
}

/// Mean softmax cross-entropy with max-shifted exponentials.
///
/// The per-sample loss is evaluated as `(max − z_y) + ln_1p(Σ_{j≠argmax} e^{z_j − max})`
/// so that nearly saturated samples keep full relative precision.
pub fn softmax_cross_entropy(logits: &Matrix, labels: &[usize]) -> Result<CrossEntropy> {
    let (n, c) = logits.shape();
    if labels.len() != n {
        return Err(Error::LengthMismatch {
            expected: n,
            actual: labels.len(),
        });
    }
    if n == 0 {
        return Err(Error::InvalidArgument("empty logits".into()));
    }
    if !logits.is_finite() {
        return Err(Error::NonFinite("logits"));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= c) {
        return Err(Error::InvalidArgument(format!("label {bad} out of range for {c} classes")));
    }

    let mut per_sample = Vec::with_capacity(n);
    let mut probabilities = Matrix::zeros(n, c);
    let mut residual = Matrix::zeros(n, c);
    let mut exps = vec![0.0; c];
    for i in 0..n {
        let z = logits.row(i);
        let y = labels[i];
        let mut top = 0;
        for j in 1..c {
            if z[j] > z[top] {
                top = j;
            }
        }
        let max = z[top];
        let mut rest = 0.0;
        for j in 0..c {
            exps[j] = (z[j] - max).exp();
            if j != top {
                rest += exps[j];
            }
        }
        let total = 1.0 + rest;
        per_sample.push((max - z[y]) + rest.ln_1p());

        let p = probabilities.row_mut(i);
        for j in 0..c {
            p[j] = exps[j] / total;
        }
        let r = residual.row_mut(i);
        r.copy_from_slice(p);
        r[y] = if y == top { -rest / total } else { p[y] - 1.0 };
    }
    let mean_loss = per_sample.iter().sum::<f64>() / n as f64;
    Ok(CrossEntropy {
        mean_loss,
        per_sample_loss: per_sample,
        probabilities,
        residual,
    })
}

/// Applies the family's margin to the target entries `(i, yᵢ)` only, using
/// `margins[i]` for sample `i`. Non-target columns are copied unchanged.
pub fn apply_margin(
    cos_theta: &Matrix,
    labels: &[usize],
    margins: &[f64],
    family: MarginFamily,
) -> Result<Matrix> {
    apply_margin_counted(cos_theta, labels, margins, family).map(|(m, _)| m)
}

fn apply_margin_counted(
    cos_theta: &Matrix,
    labels: &[usize],
    margins: &[f64],
    family: MarginFamily,
) -> Result<(Matrix, usize)> {
    if matches!(family, MarginFamily::PlainSoftmax) {
        return Err(Error::InvalidFamily("plain-softmax"));
    }
    let n = cos_theta.rows();
    if labels.len() != n {
        return Err(Error::LengthMismatch {
            expected: n,
            actual: labels.len(),
        });
    }
    if margins.len() != n {
        return Err(Error::LengthMismatch {
            expected: n,
            actual: margins.len(),
        });
    }
    if margins.iter().any(|m| !m.is_finite()) {
        return Err(Error::NonFinite("margins"));
    }
    let mut out = cos_theta.clone();
    let mut wrapped = 0;
    for (i, (&y, &m)) in labels.iter().zip(margins).enumerate() {
        let c = cos_theta[(i, y)];
        out[(i, y)] = match family {
            MarginFamily::PlainSoftmax => unreachable!(),
            MarginFamily::ModifiedSoftmax => c,
            MarginFamily::Multiplicative { .. } => (m * c.acos()).cos(),
            MarginFamily::AdditiveAngular { .. } => {
                let theta = c.acos();
                if theta + m > std::f64::consts::PI {
                    wrapped += 1;
                }
                (theta + m).cos()
            }
            MarginFamily::AdditiveCosine { .. } => c - m,
        };
    }
    Ok((out, wrapped))
}

/// Per-sample margins for one forward pass.
///
/// Fixed families repeat the nominal margin. Elastic families draw from
/// `N(m, σ²)`; the plus variant then hands the largest draws to the samples
/// with the smallest target cosine.
pub fn resolve_margins(spec: &MarginSpec, cos_target: &[f64], rng: &mut SeededStream) -> Result<Vec<f64>> {
    let n = cos_target.len();
    let m = spec.family.margin();
    let Some(elastic) = spec.elastic else {
        return Ok(vec![m; n]);
    };
    let mut drawn = sample_margins(n, m, elastic.std, rng)?.values;
    if let Some([lo, hi]) = elastic.clamp {
        drawn.iter_mut().for_each(|v| *v = v.clamp(lo, hi));
    }
    if spec.plus {
        assign_margins_plus(&drawn, cos_target)
    } else {
        Ok(drawn)
    }
}

/// Full forward and backward pass, drawing elastic margins from `rng`.
pub fn margin_softmax_loss(
    batch: &EmbeddingBatch,
    weights: &ClassWeights,
    spec: &MarginSpec,
    rng: &mut SeededStream,
) -> Result<LossOutput> {
    spec.validate()?;
    batch.check_against(weights)?;
    if matches!(spec.family, MarginFamily::PlainSoftmax) {
        return plain_forward(batch, weights);
    }
    let (x_hat, _) = l2_normalize_rows_with_norms(&batch.features)?;
    let (w_hat, _) = l2_normalize_rows_with_norms(&weights.weights)?;
    let cos = cosine_logits(&x_hat, &w_hat)?;
    let cos_target: Vec<f64> = batch.labels.iter().enumerate().map(|(i, &y)| cos[(i, y)]).collect();
    let margins = resolve_margins(spec, &cos_target, rng)?;
    finish_forward(batch, weights, spec, cos, margins)
}

/// Forward and backward pass with caller-supplied per-sample margins, used
/// as-is (no drawing, no plus assignment). Lets gradient checks hold the
/// margins constant and lets tests replay a known draw.
pub fn margin_softmax_loss_with_margins(
    batch: &EmbeddingBatch,
    weights: &ClassWeights,
    spec: &MarginSpec,
    margins: &[f64],
) -> Result<LossOutput> {
    spec.validate()?;
    batch.check_against(weights)?;
    if matches!(spec.family, MarginFamily::PlainSoftmax) {
        return plain_forward(batch, weights);
    }
    if margins.len() != batch.len() {
        return Err(Error::LengthMismatch {
            expected: batch.len(),
            actual: margins.len(),
        });
    }
    let x_hat = crate::matrix::l2_normalize_rows(&batch.features)?;
    let w_hat = crate::matrix::l2_normalize_rows(&weights.weights)?;
    let cos = cosine_logits(&x_hat, &w_hat)?;
    finish_forward(batch, weights, spec, cos, margins.to_vec())
}

fn finish_forward(
    batch: &EmbeddingBatch,
    weights: &ClassWeights,
    spec: &MarginSpec,
    cos: Matrix,
    margins: Vec<f64>,
) -> Result<LossOutput> {
    let (mut logits, wrapped) = apply_margin_counted(&cos, &batch.labels, &margins, spec.family)?;
    if wrapped > 0 {
        log::debug!("{wrapped} target angle(s) exceed pi after adding the margin; cos(theta + m) is not monotone there");
    }
    logits.scale(spec.scale);
    let ce = softmax_cross_entropy(&logits, &batch.labels)?;
    let mut out = LossOutput {
        mean_loss: ce.mean_loss,
        per_sample_loss: ce.per_sample_loss,
        cos_theta: cos,
        modified_logits: logits,
        probabilities: ce.probabilities,
        grad_features: Matrix::zeros(0, 0),
        grad_weights: Matrix::zeros(0, 0),
        margins_used: margins,
        wrapped_targets: wrapped,
        unstable_targets: 0,
    };
    let grads = backward_from_residual(&ce.residual, &out, batch, weights, spec)?;
    out.grad_features = grads.grad_features;
    out.grad_weights = grads.grad_weights;
    out.unstable_targets = grads.unstable_targets;
    Ok(out)
}

fn plain_forward(batch: &EmbeddingBatch, weights: &ClassWeights) -> Result<LossOutput> {
    let logits = batch.features.matmul_transposed(&weights.weights)?;
    let ce = softmax_cross_entropy(&logits, &batch.labels)?;
    let n = batch.len();
    let mut out = LossOutput {
        mean_loss: ce.mean_loss,
        per_sample_loss: ce.per_sample_loss,
        cos_theta: logits.clone(),
        modified_logits: logits,
        probabilities: ce.probabilities,
        grad_features: Matrix::zeros(0, 0),
        grad_weights: Matrix::zeros(0, 0),
        margins_used: vec![0.0; n],
        wrapped_targets: 0,
        unstable_targets: 0,
    };
    let spec = MarginSpec::plain();
    let grads = backward_from_residual(&ce.residual, &out, batch, weights, &spec)?;
    out.grad_features = grads.grad_features;
    out.grad_weights = grads.grad_weights;
    Ok(out)
}

/// Gradients of `mean_loss` with respect to the raw (pre-normalization)
/// features and class weights. Margins in `output.margins_used` are treated
/// as constants.
pub fn loss_backward(
    output: &LossOutput,
    batch: &EmbeddingBatch,
    weights: &ClassWeights,
    spec: &MarginSpec,
) -> Result<Gradients> {
    batch.check_against(weights)?;
    let (n, c) = output.probabilities.shape();
    if n != batch.len() || c != weights.num_classes() {
        return Err(Error::DimensionMismatch(
            "loss output does not match the batch and class weights".into(),
        ));
    }
    let mut residual = output.probabilities.clone();
    for (i, &y) in batch.labels.iter().enumerate() {
        residual[(i, y)] -= 1.0;
    }
    backward_from_residual(&residual, output, batch, weights, spec)
}

fn backward_from_residual(
    residual: &Matrix,
    output: &LossOutput,
    batch: &EmbeddingBatch,
    weights: &ClassWeights,
    spec: &MarginSpec,
) -> Result<Gradients> {
    let (n, c) = residual.shape();
    let d = batch.dim();
    let inv_n = 1.0 / n as f64;

    if matches!(spec.family, MarginFamily::PlainSoftmax) {
        let mut gx = Matrix::zeros(n, d);
        let mut gw = Matrix::zeros(c, d);
        for i in 0..n {
            let x = batch.features.row(i);
            for j in 0..c {
                let g = residual[(i, j)] * inv_n;
                let w = weights.weights.row(j);
                for k in 0..d {
                    gx[(i, k)] += g * w[k];
                    gw[(j, k)] += g * x[k];
                }
            }
        }
        return Ok(Gradients {
            grad_features: gx,
            grad_weights: gw,
            unstable_targets: 0,
        });
    }

    let (x_hat, x_norm) = l2_normalize_rows_with_norms(&batch.features)?;
    let (w_hat, w_norm) = l2_normalize_rows_with_norms(&weights.weights)?;

    // dL/dcos. The forward clamp is flat outside the band, so entries whose
    // raw cosine falls there get no gradient.
    let mut g_cos = Matrix::zeros(n, c);
    let mut unstable = 0;
    for i in 0..n {
        let y = batch.labels[i];
        for j in 0..c {
            let raw = dot(x_hat.row(i), w_hat.row(j));
            if raw == clamp_cos(raw) {
                g_cos[(i, j)] = spec.scale * residual[(i, j)] * inv_n;
            }
        }
        let cos_y = output.cos_theta[(i, y)];
        let m = output.margins_used[i];
        let slope = match spec.family {
            MarginFamily::PlainSoftmax => unreachable!(),
            MarginFamily::ModifiedSoftmax | MarginFamily::AdditiveCosine { .. } => 1.0,
            MarginFamily::AdditiveAngular { .. } | MarginFamily::Multiplicative { .. } => {
                let raw = dot(x_hat.row(i), w_hat.row(y));
                if (1.0 - raw * raw).max(0.0).sqrt() < SIN_INSTABILITY {
                    unstable += 1;
                }
                // cos_y is already clamped, so sin θ >= ~4.5e-4 here.
                let theta = cos_y.acos();
                let sin_theta = theta.sin();
                match spec.family {
                    MarginFamily::AdditiveAngular { .. } => (theta + m).sin() / sin_theta,
                    _ => m * (m * theta).sin() / sin_theta,
                }
            }
        };
        g_cos[(i, y)] *= slope;
    }

    // Through the dot products onto the unit vectors, then through the
    // normalization Jacobian (I − x̂x̂ᵀ)/‖x‖.
    let mut gx = Matrix::zeros(n, d);
    let mut gw = Matrix::zeros(c, d);
    for i in 0..n {
        let xi = x_hat.row(i);
        for j in 0..c {
            let g = g_cos[(i, j)];
            let wj = w_hat.row(j);
            for k in 0..d {
                gx[(i, k)] += g * wj[k];
                gw[(j, k)] += g * xi[k];
            }
        }
    }
    project_tangent(&mut gx, &x_hat, &x_norm);
    project_tangent(&mut gw, &w_hat, &w_norm);

    if unstable > 0 {
        log::debug!("{unstable} target(s) with |sin theta| < {SIN_INSTABILITY}; their cosine is clamped and passes no gradient");
    }
    Ok(Gradients {
        grad_features: gx,
        grad_weights: gw,
        unstable_targets: unstable,
    })
}

fn project_tangent(grad: &mut Matrix, unit: &Matrix, norms: &[f64]) {
    for i in 0..grad.rows() {
        let u = unit.row(i);
        let radial = dot(grad.row(i), u);
        let inv = 1.0 / norms[i];
        for (g, &uk) in grad.row_mut(i).iter_mut().zip(u) {
            *g = (*g - radial * uk) * inv;
        }
    }
}
