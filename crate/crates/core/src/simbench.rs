//! Synthetic block-sparse benchmark data and the metrics used to score
//! fits on it: association precision–recall and label accuracy.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::types::{Cutpoints, Dataset};

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub n: usize,
    pub p: usize,
    pub q: usize,
    pub k: usize,
    /// Standard deviation of the Gaussian noise on `X = GU + E`.
    pub x_noise_sd: f64,
    pub cutpoints_z: Cutpoints,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n: 200,
            p: 40,
            q: 40,
            k: 5,
            x_noise_sd: 1.0,
            cutpoints_z: Cutpoints::three_level(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTruth {
    /// 0/1 support of `G`, `p × k`.
    pub g_true: DMatrix<i64>,
    /// 0/1 support of `H`, `q × k`; the last column is empty.
    pub h_true: DMatrix<i64>,
    pub u_true: DMatrix<f64>,
    /// `[g_true·h_trueᵀ ≠ 0]`, `p × q`.
    pub link_truth: DMatrix<i64>,
    /// Latent label function before thresholding.
    pub f_true: Vec<f64>,
}

/// Block-diagonal 0/1 matrix with `blocks` consecutive runs of
/// `rows / blocks` ones. Leftover rows beyond the last full block stay zero.
fn block_design(rows: usize, cols: usize, blocks: usize) -> DMatrix<i64> {
    let size = rows / blocks;
    let mut m = DMatrix::zeros(rows, cols);
    for b in 0..blocks {
        for r in b * size..(b + 1) * size {
            m[(r, b)] = 1;
        }
    }
    m
}

/// Draws a dataset with binary labels.
///
/// `G` has `k` blocks of `p/k` ones; `H` has `k−1` blocks of `q/(k−1)`
/// ones and its last column empty, so one latent feature drives only the
/// continuous view. `U ~ N(0, I)`, `X = GU + E`, `C = HU + N(0, 1)` cut
/// into `Z`, and `f ~ N(0, UᵀU + I)` thresholded at zero into `y`.
pub fn generate(cfg: &SimConfig) -> Result<(Dataset, SyntheticTruth)> {
    let SimConfig { n, p, q, k, .. } = *cfg;
    if k < 2 || p < k || q < k - 1 || n == 0 {
        return Err(Error::InvalidDesign(format!(
            "need k ≥ 2, p ≥ k, q ≥ k−1 and n ≥ 1; got n={n} p={p} q={q} k={k}"
        )));
    }
    if !(cfg.x_noise_sd >= 0.0) || !cfg.x_noise_sd.is_finite() {
        return Err(Error::InvalidDesign(format!("noise level {} is not a finite non-negative number", cfg.x_noise_sd)));
    }
    let g_true = block_design(p, k, k);
    let h_true = block_design(q, k, k - 1);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut normal = |len: usize| -> Vec<f64> { (0..len).map(|_| StandardNormal.sample(&mut rng)).collect() };

    let u = DMatrix::from_column_slice(k, n, &normal(k * n));
    let g = g_true.map(|v| v as f64);
    let h = h_true.map(|v| v as f64);
    let x = &g * &u + DMatrix::from_column_slice(p, n, &normal(p * n)) * cfg.x_noise_sd;
    let c = &h * &u + DMatrix::from_column_slice(q, n, &normal(q * n));
    let z = c.map(|v| cfg.cutpoints_z.region(v) as i64);
    // Uᵀw + ε has covariance UᵀU + I given U.
    let w = nalgebra::DVector::from_vec(normal(k));
    let eps = normal(n);
    let f: Vec<f64> = (0..n).map(|j| u.column(j).dot(&w) + eps[j]).collect();
    let cut = Cutpoints::binary();
    let y = f.iter().map(|&v| Some(cut.region(v) as i64)).collect();
    let link_truth = (&g_true * h_true.transpose()).map(|v| (v != 0) as i64);
    Ok((
        Dataset::new(x, z, Some(y)),
        SyntheticTruth {
            g_true,
            h_true,
            u_true: u,
            link_truth,
            f_true: f,
        },
    ))
}

/// Random train/test partition of `0..n` with `round(n·test_fraction)`
/// test subjects; both halves come back sorted.
pub fn split_indices(n: usize, test_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(0.0..1.0).contains(&test_fraction) {
        return Err(Error::InvalidDesign(format!("test fraction {test_fraction} is outside [0, 1)")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_test = (n as f64 * test_fraction).round() as usize;
    let mut test = idx[..n_test].to_vec();
    let mut train = idx[n_test..].to_vec();
    test.sort_unstable();
    train.sort_unstable();
    Ok((train, test))
}

/// `|⟨G⟩⟨H⟩ᵀ|` entrywise.
pub fn association_scores(g_mean: &DMatrix<f64>, h_mean: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if g_mean.ncols() != h_mean.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "loadings have {} and {} latent columns",
            g_mean.ncols(),
            h_mean.ncols()
        )));
    }
    Ok((g_mean * h_mean.transpose()).abs())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrCurve {
    /// One point per quantile threshold, thresholds ascending.
    pub points: Vec<PrPoint>,
    /// Step-wise area under the exact curve (average precision).
    pub aupr: f64,
}

/// Precision and recall of `score ≥ t` against `truth`, at `num_thresholds`
/// score quantiles, plus the step-wise area under the full curve. A
/// threshold that selects nothing has precision one by convention.
pub fn precision_recall(scores: &DMatrix<f64>, truth: &DMatrix<i64>, num_thresholds: usize) -> Result<PrCurve> {
    if scores.shape() != truth.shape() {
        return Err(Error::DimensionMismatch(format!(
            "scores are {}x{} but truth is {}x{}",
            scores.nrows(),
            scores.ncols(),
            truth.nrows(),
            truth.ncols()
        )));
    }
    if let Some(bad) = truth.iter().find(|&&v| v != 0 && v != 1) {
        return Err(Error::Evaluation(format!("truth must be 0/1, found {bad}")));
    }
    if let Some(pos) = scores.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            what: "scores",
            row: pos % scores.nrows(),
            col: pos / scores.nrows(),
        });
    }
    let positives = truth.iter().filter(|&&v| v == 1).count();
    if positives == 0 {
        return Err(Error::Evaluation("truth has no positive entries, so recall is undefined".into()));
    }

    let mut pairs: Vec<(f64, bool)> = scores.iter().zip(truth.iter()).map(|(&s, &t)| (s, t == 1)).collect();
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
    // Average precision, treating tied scores as one step.
    let (mut tp, mut seen, mut aupr, mut i) = (0usize, 0usize, 0.0, 0);
    while i < pairs.len() {
        let s = pairs[i].0;
        let before = tp;
        while i < pairs.len() && pairs[i].0 == s {
            tp += pairs[i].1 as usize;
            seen += 1;
            i += 1;
        }
        aupr += (tp - before) as f64 * (tp as f64 / seen as f64);
    }
    let aupr = (aupr / positives as f64).min(1.0);

    let mut sorted: Vec<f64> = pairs.iter().map(|p| p.0).rev().collect();
    sorted.dedup();
    let m = num_thresholds.max(2);
    let mut points = Vec::with_capacity(m);
    for t in 0..m {
        let pos = (t as f64 / (m - 1) as f64 * (sorted.len() - 1) as f64).round() as usize;
        let threshold = sorted[pos];
        let (mut sel, mut hit) = (0usize, 0usize);
        for &(s, pos) in &pairs {
            if s >= threshold {
                sel += 1;
                hit += pos as usize;
            }
        }
        points.push(PrPoint {
            threshold,
            precision: if sel == 0 { 1.0 } else { hit as f64 / sel as f64 },
            recall: hit as f64 / positives as f64,
        });
    }
    Ok(PrCurve { points, aupr })
}

/// Fraction of agreeing entries among those with `mask` set.
pub fn accuracy(y_pred: &[i64], y_true: &[i64], mask: &[bool]) -> Result<f64> {
    if y_pred.len() != y_true.len() || y_pred.len() != mask.len() {
        return Err(Error::DimensionMismatch(format!(
            "prediction, truth and mask lengths differ: {}, {}, {}",
            y_pred.len(),
            y_true.len(),
            mask.len()
        )));
    }
    let used = mask.iter().filter(|&&m| m).count();
    if used == 0 {
        return Err(Error::Evaluation("accuracy over an empty mask".into()));
    }
    let hits = (0..mask.len()).filter(|&i| mask[i] && y_pred[i] == y_true[i]).count();
    Ok(hits as f64 / used as f64)
}

/// Most frequent label; ties go to the smaller label.
pub fn majority_vote(labels: &[i64]) -> Result<i64> {
    let mut counts = std::collections::BTreeMap::new();
    for &l in labels {
        *counts.entry(l).or_insert(0usize) += 1;
    }
    counts
        .into_iter()
        .fold(None, |best: Option<(i64, usize)>, (l, c)| match best {
            Some((_, bc)) if bc >= c => best,
            _ => Some((l, c)),
        })
        .map(|(l, _)| l)
        .ok_or_else(|| Error::Evaluation("majority vote over no labels".into()))
}
