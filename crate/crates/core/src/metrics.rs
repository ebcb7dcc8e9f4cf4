//! Evaluation: pair verification accuracy with k-fold threshold selection,
//! TAR at a fixed FAR, Rank-1 identification, class geometry of 2-D
//! embeddings and Borda-count ranking of configurations.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{dot, l2_normalize_rows, norm, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pair {
    pub a: usize,
    pub b: usize,
    pub genuine: bool,
}

/// Comparison pairs and their fold assignment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairProtocol {
    pub pairs: Vec<Pair>,
    pub folds: Vec<usize>,
    pub num_folds: usize,
}

impl PairProtocol {
    /// Splits the pairs, in file order, into `k` contiguous folds of
    /// near-equal size (the first `len % k` folds get one extra pair).
    pub fn contiguous(pairs: Vec<Pair>, k: usize) -> Result<Self> {
        if k == 0 || k > pairs.len() {
            return Err(Error::InvalidArgument(format!(
                "cannot split {} pairs into {k} folds",
                pairs.len()
            )));
        }
        let n = pairs.len();
        let folds = (0..n).map(|i| i * k / n).collect();
        Ok(Self {
            pairs,
            folds,
            num_folds: k,
        })
    }

    pub fn new(pairs: Vec<Pair>, folds: Vec<usize>, num_folds: usize) -> Result<Self> {
        if folds.len() != pairs.len() {
            return Err(Error::LengthMismatch {
                expected: pairs.len(),
                actual: folds.len(),
            });
        }
        if let Some(&f) = folds.iter().find(|&&f| f >= num_folds) {
            return Err(Error::InvalidArgument(format!("fold {f} >= {num_folds}")));
        }
        Ok(Self {
            pairs,
            folds,
            num_folds,
        })
    }
}

/// Cosine score of every pair, with its genuine flag and fold.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct PairScores {
    pub scores: Vec<f64>,
    pub genuine: Vec<bool>,
    pub folds: Vec<usize>,
}

impl PairScores {
    pub fn genuine_scores(&self) -> Vec<f64> {
        self.select(true)
    }

    pub fn impostor_scores(&self) -> Vec<f64> {
        self.select(false)
    }

    fn select(&self, genuine: bool) -> Vec<f64> {
        self.scores
            .iter()
            .zip(&self.genuine)
            .filter(|(_, &g)| g == genuine)
            .map(|(&s, _)| s)
            .collect()
    }
}

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> f64 {
    dot(a, b) / (norm(a) * norm(b))
}

pub fn cosine_scores(embeddings: &Matrix, protocol: &PairProtocol) -> Result<PairScores> {
    let n = embeddings.rows();
    let mut out = PairScores::default();
    for (p, &fold) in protocol.pairs.iter().zip(&protocol.folds) {
        for index in [p.a, p.b] {
            if index >= n {
                return Err(Error::IndexOutOfRange { index, len: n });
            }
        }
        out.scores.push(cosine_similarity(embeddings.row(p.a), embeddings.row(p.b)));
        out.genuine.push(p.genuine);
        out.folds.push(fold);
    }
    Ok(out)
}

/// Best accept-if-`score > t` threshold on the given pairs.
///
/// Candidates are `-∞`, the midpoints between consecutive distinct scores,
/// and `+∞`. Among equally accurate thresholds the smallest wins.
pub fn best_threshold(scores: &[f64], genuine: &[bool]) -> (f64, f64) {
    let n = scores.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // Sweep upward: at -∞ everything is accepted, so every genuine pair is
    // correct; each group of equal scores moved below the threshold flips.
    let total_genuine = genuine.iter().filter(|&&g| g).count();
    let mut correct = total_genuine;
    let mut best = (f64::NEG_INFINITY, correct);
    let mut i = 0;
    while i < n {
        let s = scores[order[i]];
        let mut j = i;
        while j < n && scores[order[j]] == s {
            if genuine[order[j]] {
                correct -= 1;
            } else {
                correct += 1;
            }
            j += 1;
        }
        let threshold = if j < n {
            0.5 * (s + scores[order[j]])
        } else {
            f64::INFINITY
        };
        if correct > best.1 {
            best = (threshold, correct);
        }
        i = j;
    }
    (best.0, best.1 as f64 / n.max(1) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerificationResult {
    pub method: &'static str,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
    pub fold_accuracies: Vec<f64>,
    pub fold_thresholds: Vec<f64>,
}

/// For each fold: choose the accuracy-maximizing threshold on the other
/// folds, score the held-out fold with it. Returns the mean over folds.
pub fn verification_accuracy_kfold(scores: &PairScores, k: usize) -> Result<VerificationResult> {
    if k < 2 {
        return Err(Error::InvalidArgument(format!("k must be >= 2, got {k}")));
    }
    let mut fold_accuracies = Vec::with_capacity(k);
    let mut fold_thresholds = Vec::with_capacity(k);
    for fold in 0..k {
        let (mut tr_s, mut tr_g, mut te_s, mut te_g) = (vec![], vec![], vec![], vec![]);
        for ((&s, &g), &f) in scores.scores.iter().zip(&scores.genuine).zip(&scores.folds) {
            if f == fold {
                te_s.push(s);
                te_g.push(g);
            } else {
                tr_s.push(s);
                tr_g.push(g);
            }
        }
        let n_gen = tr_g.iter().filter(|&&g| g).count();
        if n_gen == 0 || n_gen == tr_g.len() || te_s.is_empty() {
            return Err(Error::DegenerateFold { fold });
        }
        let (t, _) = best_threshold(&tr_s, &tr_g);
        let correct = te_s.iter().zip(&te_g).filter(|(&s, &g)| (s > t) == g).count();
        fold_accuracies.push(correct as f64 / te_s.len() as f64);
        fold_thresholds.push(t);
    }
    let (mean, std) = crate::elastic::mean_std(&fold_accuracies);
    Ok(VerificationResult {
        method: "accuracy-maximizing threshold, k-fold",
        mean_accuracy: mean,
        std_accuracy: std,
        fold_accuracies,
        fold_thresholds,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TarResult {
    pub far_target: f64,
    pub tar: f64,
    /// Accept iff `score >= threshold`; `+∞` when nothing can be accepted.
    pub threshold: f64,
    pub far_achieved: f64,
    /// Fewer impostors than `1 / far_target`: the FAR grid is too coarse to
    /// resolve the target.
    pub insufficient_impostors: bool,
}

/// TAR at the smallest threshold whose empirical FAR does not exceed
/// `far_target`. Candidate thresholds are the observed scores and `+∞`.
pub fn tar_at_far(genuine: &[f64], impostor: &[f64], far_target: f64) -> Result<TarResult> {
    if genuine.is_empty() || impostor.is_empty() {
        return Err(Error::InvalidArgument("genuine and impostor scores must be non-empty".into()));
    }
    if !(far_target > 0.0 && far_target < 1.0) {
        return Err(Error::InvalidArgument(format!("far_target must lie in (0, 1), got {far_target}")));
    }
    let mut imp = impostor.to_vec();
    imp.sort_by(|a, b| b.total_cmp(a));
    let mut gen = genuine.to_vec();
    gen.sort_by(|a, b| b.total_cmp(a));

    let n_imp = imp.len() as f64;
    // Largest count of accepted impostors still within the target.
    let allowed = (0..=imp.len())
        .rev()
        .find(|&k| k as f64 / n_imp <= far_target)
        .unwrap_or(0);
    // #{imp >= t} <= allowed  <=>  t > imp[allowed]
    let floor = if allowed < imp.len() { Some(imp[allowed]) } else { None };
    let admissible = |t: f64| floor.map_or(true, |f| t > f);

    // Smallest admissible candidate among all observed scores.
    let threshold = gen
        .iter()
        .chain(&imp)
        .copied()
        .filter(|&t| admissible(t))
        .fold(f64::INFINITY, f64::min);
    let accepted_gen = gen.iter().filter(|&&s| s >= threshold).count();
    let accepted_imp = imp.iter().filter(|&&s| s >= threshold).count();
    Ok(TarResult {
        far_target,
        tar: accepted_gen as f64 / gen.len() as f64,
        threshold,
        far_achieved: accepted_imp as f64 / n_imp,
        insufficient_impostors: n_imp < 1.0 / far_target,
    })
}

/// Fraction of probes whose most similar gallery embedding (cosine, ties to
/// the lowest gallery index) carries the same label.
pub fn rank1(probes: &Matrix, probe_labels: &[usize], gallery: &Matrix, gallery_labels: &[usize]) -> Result<f64> {
    if gallery.rows() == 0 {
        return Err(Error::EmptyGallery);
    }
    if probes.rows() == 0 {
        return Err(Error::InvalidArgument("no probes".into()));
    }
    if probe_labels.len() != probes.rows() {
        return Err(Error::LengthMismatch {
            expected: probes.rows(),
            actual: probe_labels.len(),
        });
    }
    if gallery_labels.len() != gallery.rows() {
        return Err(Error::LengthMismatch {
            expected: gallery.rows(),
            actual: gallery_labels.len(),
        });
    }
    let sims = l2_normalize_rows(probes)?.matmul_transposed(&l2_normalize_rows(gallery)?)?;
    let correct = sims
        .iter_rows()
        .zip(probe_labels)
        .filter(|(row, &label)| {
            let mut best = 0;
            for j in 1..row.len() {
                if row[j] > row[best] {
                    best = j;
                }
            }
            gallery_labels[best] == label
        })
        .count();
    Ok(correct as f64 / probes.rows() as f64)
}

/// Class geometry of normalized 2-D embeddings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeometryReport {
    /// Unit mean direction per class.
    pub class_centers: Vec<[f64; 2]>,
    /// Polar angle of each center in degrees, `[0, 360)`.
    pub center_angles_deg: Vec<f64>,
    /// Classes in counter-clockwise order of their centers.
    pub ccw_order: Vec<usize>,
    /// Angle from each class's center to the next center counter-clockwise,
    /// indexed by class.
    pub consecutive_angles_deg: Vec<f64>,
    /// Mean over the two coordinates of the per-coordinate standard
    /// deviation of the class's normalized embeddings.
    pub per_class_std: Vec<f64>,
    pub mean_std: f64,
    pub min_consecutive_angle_deg: f64,
}

pub fn geometry_report(embeddings: &Matrix, labels: &[usize]) -> Result<GeometryReport> {
    if embeddings.cols() != 2 {
        return Err(Error::RequiresTwoD(embeddings.cols()));
    }
    if labels.len() != embeddings.rows() {
        return Err(Error::LengthMismatch {
            expected: embeddings.rows(),
            actual: labels.len(),
        });
    }
    let c = labels.iter().max().map_or(0, |m| m + 1);
    let unit = l2_normalize_rows(embeddings)?;

    let mut sums = vec![[0.0f64; 2]; c];
    let mut counts = vec![0usize; c];
    for (row, &y) in unit.iter_rows().zip(labels) {
        sums[y][0] += row[0];
        sums[y][1] += row[1];
        counts[y] += 1;
    }
    if let Some(empty) = counts.iter().position(|&n| n == 0) {
        return Err(Error::InvalidArgument(format!("class {empty} has no embeddings")));
    }

    let mut per_class_std = Vec::with_capacity(c);
    let mut class_centers = Vec::with_capacity(c);
    for k in 0..c {
        let n = counts[k] as f64;
        let mean = [sums[k][0] / n, sums[k][1] / n];
        let mut var = [0.0f64; 2];
        for (row, &y) in unit.iter_rows().zip(labels) {
            if y == k {
                var[0] += (row[0] - mean[0]).powi(2);
                var[1] += (row[1] - mean[1]).powi(2);
            }
        }
        per_class_std.push(((var[0] / n).sqrt() + (var[1] / n).sqrt()) / 2.0);
        let len = (mean[0] * mean[0] + mean[1] * mean[1]).sqrt();
        if !(len > 0.0) {
            return Err(Error::ZeroRow { row: k });
        }
        class_centers.push([mean[0] / len, mean[1] / len]);
    }

    let center_angles_deg: Vec<f64> = class_centers
        .iter()
        .map(|v| v[1].atan2(v[0]).to_degrees().rem_euclid(360.0))
        .collect();
    let mut ccw_order: Vec<usize> = (0..c).collect();
    ccw_order.sort_by(|&a, &b| center_angles_deg[a].total_cmp(&center_angles_deg[b]));

    let mut consecutive_angles_deg = vec![0.0; c];
    for (pos, &k) in ccw_order.iter().enumerate() {
        let next = ccw_order[(pos + 1) % c];
        let gap = if pos + 1 == c {
            center_angles_deg[next] + 360.0 - center_angles_deg[k]
        } else {
            center_angles_deg[next] - center_angles_deg[k]
        };
        consecutive_angles_deg[k] = gap;
    }
    let mean_std = per_class_std.iter().sum::<f64>() / c as f64;
    let min_consecutive_angle_deg = consecutive_angles_deg.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(GeometryReport {
        class_centers,
        center_angles_deg,
        ccw_order,
        consecutive_angles_deg,
        per_class_std,
        mean_std,
        min_consecutive_angle_deg,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BordaTable {
    pub configs: Vec<String>,
    pub benchmarks: Vec<String>,
    /// Half-open `[start, end)` config ranges ranked against each other.
    pub groups: Vec<(usize, usize)>,
    /// `configs × benchmarks`
    pub accuracy: Vec<Vec<f64>>,
    /// `configs × benchmarks`
    pub bc: Vec<Vec<u32>>,
    pub bc_sum: Vec<u32>,
    /// Per group, the config index with the highest BC sum (first on ties).
    pub selected: Vec<usize>,
}

/// Borda count within each group and benchmark: with `n` configs in the
/// group, a config scores `n − (#configs with strictly higher accuracy)`.
/// An exact tie therefore takes the highest count of its tied block.
pub fn borda_count(
    configs: Vec<String>,
    benchmarks: Vec<String>,
    accuracy: Vec<Vec<f64>>,
    groups: &[(usize, usize)],
) -> Result<BordaTable> {
    if accuracy.len() != configs.len() {
        return Err(Error::LengthMismatch {
            expected: configs.len(),
            actual: accuracy.len(),
        });
    }
    if let Some(row) = accuracy.iter().find(|r| r.len() != benchmarks.len()) {
        return Err(Error::LengthMismatch {
            expected: benchmarks.len(),
            actual: row.len(),
        });
    }
    let mut covered = 0;
    for &(start, end) in groups {
        if start != covered || end <= start || end > configs.len() {
            return Err(Error::InvalidArgument(format!(
                "groups must tile the configs in order; got [{start}, {end})"
            )));
        }
        covered = end;
    }
    if covered != configs.len() {
        return Err(Error::InvalidArgument("groups do not cover every config".into()));
    }

    let mut bc = vec![vec![0u32; benchmarks.len()]; configs.len()];
    for &(start, end) in groups {
        let n = (end - start) as u32;
        for b in 0..benchmarks.len() {
            for i in start..end {
                let better = (start..end).filter(|&j| accuracy[j][b] > accuracy[i][b]).count() as u32;
                bc[i][b] = n - better;
            }
        }
    }
    let bc_sum: Vec<u32> = bc.iter().map(|r| r.iter().sum()).collect();
    let selected = groups
        .iter()
        .map(|&(start, end)| {
            (start..end)
                .fold(start, |best, i| if bc_sum[i] > bc_sum[best] { i } else { best })
        })
        .collect();
    Ok(BordaTable {
        configs,
        benchmarks,
        groups: groups.to_vec(),
        accuracy,
        bc,
        bc_sum,
        selected,
    })
}

impl BordaTable {
    /// One row per config: name, then accuracy and BC per benchmark, then
    /// the BC sum and whether the config was selected in its group.
    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["config".to_string(), "group".to_string()];
        for b in &self.benchmarks {
            header.push(format!("{b}_acc"));
            header.push(format!("{b}_bc"));
        }
        header.push("bc_sum".into());
        header.push("selected".into());
        w.write_record(&header)?;
        for (g, &(start, end)) in self.groups.iter().enumerate() {
            for i in start..end {
                let mut rec = vec![self.configs[i].clone(), g.to_string()];
                for b in 0..self.benchmarks.len() {
                    rec.push(self.accuracy[i][b].to_string());
                    rec.push(self.bc[i][b].to_string());
                }
                rec.push(self.bc_sum[i].to_string());
                rec.push((self.selected[g] == i).to_string());
                w.write_record(&rec)?;
            }
        }
        w.flush().map_err(|e| Error::io("borda table", e))?;
        Ok(())
    }
}
