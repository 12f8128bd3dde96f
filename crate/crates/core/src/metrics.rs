//! Evaluation metrics: client disagreement, accuracy spread, normalized
//! mutual information, and per-client test evaluation.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{forward, ModelParams};
use crate::scalar::Scalar;

/// Everything recorded about one evaluated communication round.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RoundRecord {
    /// 1-based communication round index.
    pub round: usize,
    pub algo: String,
    pub cohort: Vec<usize>,
    /// Per-cohort-member test loss under the updated global model.
    pub client_losses: Vec<f64>,
    /// Per-cohort-member test accuracy under the updated global model.
    pub client_accs: Vec<f64>,
    pub global_acc: f64,
    pub mean_client_loss: f64,
    /// Mean absolute pairwise loss difference across the cohort.
    pub cd: f64,
    /// RMS deviation of cohort accuracies from the global accuracy.
    pub sigma_acc: f64,
    /// Cohort-vs-planted cluster agreement; present on clustered runs only.
    pub nmi: Option<f64>,
    /// Aggregation weights actually used this round (cohort order).
    pub weights: Vec<f64>,
    /// Master seed of the run this record belongs to.
    pub seed: u64,
    pub wall_time_s: f64,
}

/// Mean absolute difference of losses over unordered participant pairs.
pub fn client_disagreement<T: Scalar>(losses: &[T]) -> Result<T> {
    let r = losses.len();
    if r < 2 {
        return Err(Error::contract(
            "client disagreement needs at least two participants",
        ));
    }
    let mut sum = T::zero();
    for i in 0..r {
        for j in (i + 1)..r {
            sum += (losses[i] - losses[j]).abs();
        }
    }
    let pairs = T::count(r * (r - 1) / 2);
    Ok(sum / pairs)
}

/// RMS deviation of per-client accuracies around the global accuracy.
pub fn sigma_acc<T: Scalar>(client_accs: &[T], global_acc: T) -> Result<T> {
    if client_accs.is_empty() {
        return Err(Error::contract("sigma_acc needs at least one client"));
    }
    let mean_sq = client_accs
        .iter()
        .map(|&a| {
            let d = a - global_acc;
            d * d
        })
        .sum::<T>()
        / T::count(client_accs.len());
    Ok(mean_sq.sqrt())
}

/// Entropy normalization used by [`nmi_with`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NmiNorm {
    /// Divide mutual information by `sqrt(H(a) * H(b))`.
    #[default]
    Geometric,
    /// Divide mutual information by `(H(a) + H(b)) / 2`.
    Arithmetic,
}

/// Normalized mutual information with geometric-mean normalization.
pub fn nmi(pred: &[usize], truth: &[usize]) -> Result<f64> {
    nmi_with(pred, truth, NmiNorm::Geometric)
}

/// Normalized mutual information between two labelings.
///
/// Degenerate cases: `1.0` when both partitions are single-cluster, `0.0`
/// when exactly one of them is. The result is clamped to `[0, 1]` against
/// floating-point excursions.
pub fn nmi_with(pred: &[usize], truth: &[usize], norm: NmiNorm) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::contract(format!(
            "label vectors differ in length: {} vs {}",
            pred.len(),
            truth.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::contract("nmi of empty labelings"));
    }
    let n = pred.len() as f64;
    let (pred_ids, pred_count) = compact_labels(pred);
    let (truth_ids, truth_count) = compact_labels(truth);

    if pred_count == 1 && truth_count == 1 {
        return Ok(1.0);
    }
    if pred_count == 1 || truth_count == 1 {
        return Ok(0.0);
    }

    // Contingency table over compacted ids (deterministic, no hashing).
    let mut table = vec![vec![0usize; truth_count]; pred_count];
    for (&p, &t) in pred_ids.iter().zip(&truth_ids) {
        table[p][t] += 1;
    }
    let row_sums: Vec<usize> = table.iter().map(|r| r.iter().sum()).collect();
    let col_sums: Vec<usize> = (0..truth_count)
        .map(|j| table.iter().map(|r| r[j]).sum())
        .collect();

    let mut mi = 0.0;
    for (i, row) in table.iter().enumerate() {
        for (j, &c) in row.iter().enumerate() {
            if c == 0 {
                continue;
            }
            let p_joint = c as f64 / n;
            let p_i = row_sums[i] as f64 / n;
            let p_j = col_sums[j] as f64 / n;
            mi += p_joint * (p_joint / (p_i * p_j)).ln();
        }
    }
    let h_pred = entropy(&row_sums, n);
    let h_truth = entropy(&col_sums, n);
    let denom = match norm {
        NmiNorm::Geometric => (h_pred * h_truth).sqrt(),
        NmiNorm::Arithmetic => (h_pred + h_truth) / 2.0,
    };
    Ok((mi / denom).clamp(0.0, 1.0))
}

fn entropy(counts: &[usize], n: f64) -> f64 {
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// Map arbitrary labels to a compact `0..k` range, first-seen order.
fn compact_labels(labels: &[usize]) -> (Vec<usize>, usize) {
    let mut map: Vec<usize> = Vec::new();
    let ids = labels
        .iter()
        .map(|&l| match map.iter().position(|&m| m == l) {
            Some(i) => i,
            None => {
                map.push(l);
                map.len() - 1
            }
        })
        .collect();
    (ids, map.len())
}

/// Evaluation of a model over per-client test shards and a global test set.
#[derive(Debug, Clone)]
pub struct EvalReport<T> {
    pub client_losses: Vec<T>,
    pub client_accs: Vec<T>,
    pub global_acc: T,
}

/// Per-shard mean cross-entropy and argmax accuracy, plus accuracy on the
/// global test set.
pub fn evaluate<T: Scalar>(
    params: &ModelParams<T>,
    shards: &[&Dataset<T>],
    global_test: &Dataset<T>,
) -> Result<EvalReport<T>> {
    if shards.is_empty() {
        return Err(Error::contract("evaluate needs at least one shard"));
    }
    let mut client_losses = Vec::with_capacity(shards.len());
    let mut client_accs = Vec::with_capacity(shards.len());
    for shard in shards {
        let (loss, acc) = loss_and_accuracy(params, shard)?;
        client_losses.push(loss);
        client_accs.push(acc);
    }
    let (_, global_acc) = loss_and_accuracy(params, global_test)?;
    Ok(EvalReport {
        client_losses,
        client_accs,
        global_acc,
    })
}

/// Mean cross-entropy and argmax accuracy on one dataset.
pub fn loss_and_accuracy<T: Scalar>(params: &ModelParams<T>, ds: &Dataset<T>) -> Result<(T, T)> {
    if ds.is_empty() {
        return Err(Error::contract("evaluation over an empty shard"));
    }
    let batch = ds.as_batch();
    let (logits, _) = forward(params, &batch)?;
    let classes = params.num_classes();
    let mut loss = T::zero();
    let mut hits = 0usize;
    for i in 0..ds.len() {
        let label = ds.labels[i];
        if label >= classes {
            return Err(Error::LabelOutOfRange { label, classes });
        }
        let row = logits.row(i);
        let lp = crate::model::log_softmax(row)?;
        loss -= lp[label];
        // Argmax with lowest-index tiebreak.
        let mut arg = 0;
        for (j, &v) in row.iter().enumerate() {
            if v > row[arg] {
                arg = j;
            }
        }
        if arg == label {
            hits += 1;
        }
    }
    let n = T::count(ds.len());
    Ok((loss / n, T::count(hits) / n))
}
