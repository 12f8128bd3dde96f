//! The federated round loop: cohort sampling, local (proximal) SGD,
//! activation collection, weighting, and aggregation.

use std::sync::Mutex;
use std::time::Instant;

use rand::Rng;

use crate::clustering::{equitable_weights, similarity, spectral_cluster, ActivationMatrix};
use crate::data::{ClientDataset, Dataset};
use crate::error::{Error, Result};
use crate::metrics::{client_disagreement, evaluate, nmi, sigma_acc, RoundRecord};
use crate::model::{
    activation_vector, loss, loss_and_grad, ActivationLayer, ActivationVector, ModelParams,
};
use crate::rng::{purpose, stream};
use crate::scalar::Scalar;

/// Aggregation weighting policy for the non-clustered algorithms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WeightMode {
    /// Weights proportional to shard sample counts, renormalized over the cohort.
    #[default]
    Proportional,
    /// Uniform `1/r` weights.
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algorithm {
    FedAvg,
    FedProx,
    Equitable,
    FedProxPowd,
}

impl Algorithm {
    pub const ALL: [Algorithm; 4] = [
        Algorithm::FedAvg,
        Algorithm::FedProx,
        Algorithm::Equitable,
        Algorithm::FedProxPowd,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Algorithm::FedAvg => "fedavg",
            Algorithm::FedProx => "fedprox",
            Algorithm::Equitable => "equitable",
            Algorithm::FedProxPowd => "fedprox_powd",
        }
    }
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fedavg" => Ok(Algorithm::FedAvg),
            "fedprox" => Ok(Algorithm::FedProx),
            "equitable" => Ok(Algorithm::Equitable),
            "fedprox_powd" => Ok(Algorithm::FedProxPowd),
            other => Err(Error::config(
                "algo",
                format!("unknown algorithm `{other}` (expected fedavg|fedprox|equitable|fedprox_powd)"),
            )),
        }
    }
}

/// Round-loop hyperparameters.
#[derive(Debug, Clone)]
pub struct HyperParams {
    pub algorithm: Algorithm,
    /// Learning rate eta.
    pub eta: f64,
    /// Proximal coefficient mu (ignored by plain FedAvg).
    pub mu: f64,
    /// Local epochs E per round.
    pub local_epochs: usize,
    pub batch_size: usize,
    /// Communication rounds K.
    pub rounds: usize,
    /// Cohort size r.
    pub cohort_size: usize,
    /// Cluster count C for the clustered aggregation.
    pub num_clusters: usize,
    /// Candidate pool size d for loss-biased selection.
    pub powd_candidates: usize,
    /// Samples from the front of each shard used for the activation probe.
    pub probe_size: usize,
    pub activation_layer: ActivationLayer,
    /// Cosine-normalize activation rows before the similarity product.
    pub normalize_similarity: bool,
    pub kmeans_restarts: usize,
    pub weight_mode: WeightMode,
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams {
            algorithm: Algorithm::FedAvg,
            eta: 0.1,
            mu: 0.0,
            local_epochs: 5,
            batch_size: 32,
            rounds: 50,
            cohort_size: 4,
            num_clusters: 2,
            powd_candidates: 0,
            probe_size: 64,
            activation_layer: ActivationLayer::Penultimate,
            normalize_similarity: false,
            kmeans_restarts: 20,
            weight_mode: WeightMode::Proportional,
        }
    }
}

impl HyperParams {
    /// Proximal coefficient actually applied in local updates.
    pub fn effective_mu(&self) -> f64 {
        match self.algorithm {
            Algorithm::FedAvg => 0.0,
            _ => self.mu,
        }
    }

    /// Validate against a population of `n` clients, naming the offending
    /// field in every rejection.
    pub fn validate(&self, n: usize) -> Result<()> {
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::config("eta", "learning rate must be positive and finite"));
        }
        if !(self.mu >= 0.0 && self.mu.is_finite()) {
            return Err(Error::config("mu", "proximal coefficient must be >= 0 and finite"));
        }
        if self.local_epochs == 0 {
            return Err(Error::config("epochs", "local epoch count must be >= 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "batch size must be >= 1"));
        }
        if self.cohort_size == 0 || self.cohort_size > n {
            return Err(Error::config(
                "cohort",
                format!("cohort size must be in [1, {n}], got {}", self.cohort_size),
            ));
        }
        if self.num_clusters == 0 {
            return Err(Error::config("num_clusters", "cluster count must be >= 1"));
        }
        if self.algorithm == Algorithm::Equitable && self.num_clusters > self.cohort_size {
            return Err(Error::config(
                "num_clusters",
                format!(
                    "clustered aggregation needs num_clusters <= cohort size, got {} > {}",
                    self.num_clusters, self.cohort_size
                ),
            ));
        }
        if self.algorithm == Algorithm::FedProxPowd
            && (self.powd_candidates < self.cohort_size || self.powd_candidates > n)
        {
            return Err(Error::config(
                "powd_d",
                format!(
                    "candidate count must be in [cohort, {n}], got {}",
                    self.powd_candidates
                ),
            ));
        }
        if self.probe_size == 0 {
            return Err(Error::config("probe_size", "probe size must be >= 1"));
        }
        if self.kmeans_restarts == 0 {
            return Err(Error::config("kmeans_restarts", "restart count must be >= 1"));
        }
        Ok(())
    }
}

/// One client's uplink message.
#[derive(Debug, Clone)]
pub struct ClientUpdate<T> {
    pub client_id: usize,
    pub params: ModelParams<T>,
    pub activation: ActivationVector<T>,
    pub train_loss: T,
    pub sample_count: usize,
}

/// One proximal SGD step in place:
/// `w <- w - eta * (grad + mu * (w - anchor))`.
pub fn prox_step<T: Scalar>(w: &mut [T], grad: &[T], anchor: &[T], eta: T, mu: T) {
    for ((wi, &gi), &ai) in w.iter_mut().zip(grad).zip(anchor) {
        *wi = *wi - eta * (gi + mu * (*wi - ai));
    }
}

/// Local training: E epochs of mini-batch proximal SGD anchored at the
/// downlinked global parameters, then activation + full-shard loss at the
/// final iterate.
pub fn local_update<T: Scalar>(
    shard: &ClientDataset<T>,
    global: &ModelParams<T>,
    hp: &HyperParams,
    round: usize,
    rng: &mut impl Rng,
) -> Result<ClientUpdate<T>> {
    if shard.shard.is_empty() {
        return Err(Error::contract(format!(
            "client {} has an empty shard",
            shard.client_id
        )));
    }
    let eta = T::real(hp.eta);
    let mu = T::real(hp.effective_mu());
    let anchor = global.values().to_vec();
    let mut params = global.clone();
    let n = shard.shard.len();

    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 0..hp.local_epochs {
        use rand::seq::SliceRandom;
        order.shuffle(rng);
        for (step, chunk) in order.chunks(hp.batch_size).enumerate() {
            let batch = shard.shard.batch(chunk);
            // Overflow inside the forward/backward pass is a divergence of
            // this client's trajectory, not a caller contract violation.
            let (batch_loss, grad) = match loss_and_grad(&params, &batch) {
                Ok(out) => out,
                Err(Error::NonFinite { .. }) => {
                    return Err(Error::Diverged {
                        round,
                        client: shard.client_id,
                        epoch,
                        step,
                    })
                }
                Err(other) => return Err(other),
            };
            if !batch_loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Diverged {
                    round,
                    client: shard.client_id,
                    epoch,
                    step,
                });
            }
            prox_step(params.values_mut(), &grad, &anchor, eta, mu);
            if params.values().iter().any(|v| !v.is_finite()) {
                return Err(Error::Diverged {
                    round,
                    client: shard.client_id,
                    epoch,
                    step,
                });
            }
        }
    }

    // Deterministic probe: the front of the shard, untouched by shuffling.
    let probe_len = hp.probe_size.min(n);
    let probe_indices: Vec<usize> = (0..probe_len).collect();
    let probe = shard.shard.batch(&probe_indices);
    let activation = activation_vector(&params, &probe, hp.activation_layer)?;
    let train_loss = loss(&params, &shard.shard.as_batch())?;

    Ok(ClientUpdate {
        client_id: shard.client_id,
        params,
        activation,
        train_loss,
        sample_count: shard.sample_count,
    })
}

/// Draw `r` distinct client ids uniformly without replacement; the returned
/// cohort is sorted ascending (a canonical order for downstream reductions).
pub fn sample_uniform(n: usize, r: usize, rng: &mut impl Rng) -> Result<Vec<usize>> {
    if r > n {
        return Err(Error::contract(format!(
            "cannot sample {r} distinct clients from {n}"
        )));
    }
    // Partial Fisher-Yates: the first r slots form a uniform r-subset.
    let mut ids: Vec<usize> = (0..n).collect();
    for i in 0..r {
        let j = rng.random_range(i..n);
        ids.swap(i, j);
    }
    let mut cohort = ids[..r].to_vec();
    cohort.sort_unstable();
    Ok(cohort)
}

/// Loss-biased selection: draw `d` uniform candidates, keep the `r` with
/// the highest losses (ties to the lower id). `loss_of` is consulted only
/// for candidates.
pub fn sample_powd(
    n: usize,
    d: usize,
    r: usize,
    rng: &mut impl Rng,
    mut loss_of: impl FnMut(usize) -> Result<f64>,
) -> Result<Vec<usize>> {
    if r > d {
        return Err(Error::contract(format!(
            "cannot keep {r} clients from {d} candidates"
        )));
    }
    let candidates = sample_uniform(n, d, rng)?;
    let mut scored: Vec<(usize, f64)> = Vec::with_capacity(d);
    for id in candidates {
        scored.push((id, loss_of(id)?));
    }
    // Stable sort by descending loss keeps ascending-id order among ties.
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).expect("finite candidate losses"));
    let mut cohort: Vec<usize> = scored[..r].iter().map(|&(id, _)| id).collect();
    cohort.sort_unstable();
    Ok(cohort)
}

/// Convex combination of the cohort's parameter vectors.
pub fn aggregate<T: Scalar>(updates: &[ClientUpdate<T>], weights: &[f64]) -> Result<ModelParams<T>> {
    if updates.is_empty() {
        return Err(Error::contract("aggregate needs at least one update"));
    }
    if updates.len() != weights.len() {
        return Err(Error::contract(format!(
            "{} updates but {} weights",
            updates.len(),
            weights.len()
        )));
    }
    if weights.iter().any(|&w| w < 0.0 || !w.is_finite()) {
        return Err(Error::contract("aggregation weights must be non-negative"));
    }
    let sum: f64 = weights.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::WeightSum { sum });
    }
    let dim = updates[0].params.total_dim();
    let mut acc = vec![T::zero(); dim];
    for (update, &w) in updates.iter().zip(weights) {
        if update.params.total_dim() != dim {
            return Err(Error::contract("parameter dimensions differ across updates"));
        }
        let wt = T::real(w);
        for (a, &p) in acc.iter_mut().zip(update.params.values()) {
            *a += wt * p;
        }
    }
    updates[0].params.with_values(acc)
}

/// Sample-count-proportional weights renormalized over the cohort.
pub fn proportional_weights<T: Scalar>(updates: &[ClientUpdate<T>]) -> Vec<f64> {
    let total: f64 = updates.iter().map(|u| u.sample_count as f64).sum();
    updates
        .iter()
        .map(|u| u.sample_count as f64 / total)
        .collect()
}

/// Server-side state threaded through the round loop.
#[derive(Debug, Clone)]
pub struct ServerState<T> {
    pub global: ModelParams<T>,
    pub clients: Vec<ClientDataset<T>>,
    /// Per-client test shards, same order as `clients`.
    pub test_shards: Vec<Dataset<T>>,
    pub global_test: Dataset<T>,
    /// Master seed all round streams derive from.
    pub seed: u64,
    /// Zero-based index of the next round to run.
    pub round: usize,
}

/// Execute one communication round, mutating the server state in place.
///
/// Returns a [`RoundRecord`] when `with_eval` is set; aggregation happens
/// either way. `threads` bounds the worker threads used for local updates
/// and has no observable effect on results.
pub fn run_round<T: Scalar>(
    state: &mut ServerState<T>,
    hp: &HyperParams,
    threads: usize,
    with_eval: bool,
) -> Result<Option<RoundRecord>> {
    let start = Instant::now();
    let n = state.clients.len();
    hp.validate(n)?;
    let k = state.round;

    // Cohort selection.
    let mut cohort_rng = stream(state.seed, &[purpose::COHORT, k as u64]);
    let cohort = match hp.algorithm {
        Algorithm::FedProxPowd => {
            let global = &state.global;
            let clients = &state.clients;
            sample_powd(n, hp.powd_candidates, hp.cohort_size, &mut cohort_rng, |id| {
                let shard_loss = loss(global, &clients[id].shard.as_batch())?;
                Ok(shard_loss.as_f64())
            })?
        }
        _ => sample_uniform(n, hp.cohort_size, &mut cohort_rng)?,
    };

    // Local updates (optionally in parallel; results keep cohort order).
    let updates = run_local_updates(state, hp, &cohort, threads)?;

    // Weighting.
    let mut round_nmi = None;
    let weights: Vec<f64> = match hp.algorithm {
        Algorithm::Equitable => {
            let vectors: Vec<ActivationVector<T>> =
                updates.iter().map(|u| u.activation.clone()).collect();
            let ids: Vec<usize> = updates.iter().map(|u| u.client_id).collect();
            let a = ActivationMatrix::new(ids, &vectors)?;
            let s = similarity(&a, hp.normalize_similarity)?;
            let mut cluster_rng = stream(state.seed, &[purpose::CLUSTERING, k as u64]);
            let labels =
                spectral_cluster(&s, hp.num_clusters, hp.kmeans_restarts, &mut cluster_rng)?;
            let assignment = equitable_weights(&labels, hp.num_clusters)?;
            let truth: Vec<usize> = cohort
                .iter()
                .map(|&id| state.clients[id].true_cluster)
                .collect();
            round_nmi = Some(nmi(&assignment.labels, &truth)?);
            assignment.weights
        }
        _ => match hp.weight_mode {
            WeightMode::Proportional => proportional_weights(&updates),
            WeightMode::Uniform => vec![1.0 / cohort.len() as f64; cohort.len()],
        },
    };

    state.global = aggregate(&updates, &weights)?;
    state.round += 1;

    if !with_eval {
        return Ok(None);
    }

    let shards: Vec<&Dataset<T>> = cohort.iter().map(|&id| &state.test_shards[id]).collect();
    let report = evaluate(&state.global, &shards, &state.global_test)?;
    let losses_f64: Vec<f64> = report.client_losses.iter().map(|l| l.as_f64()).collect();
    let accs_f64: Vec<f64> = report.client_accs.iter().map(|a| a.as_f64()).collect();
    let cd = if losses_f64.len() >= 2 {
        client_disagreement(&losses_f64)?
    } else {
        0.0
    };
    let spread = sigma_acc(&accs_f64, report.global_acc.as_f64())?;
    let mean_client_loss = losses_f64.iter().sum::<f64>() / losses_f64.len() as f64;

    Ok(Some(RoundRecord {
        round: k + 1,
        algo: hp.algorithm.name().to_string(),
        cohort,
        client_losses: losses_f64,
        client_accs: accs_f64,
        global_acc: report.global_acc.as_f64(),
        mean_client_loss,
        cd,
        sigma_acc: spread,
        nmi: round_nmi,
        weights,
        seed: state.seed,
        wall_time_s: start.elapsed().as_secs_f64(),
    }))
}

/// Run the cohort's local updates, serially or across `threads` workers.
/// Per-client RNG streams are derived from `(seed, round, client)`, so the
/// schedule cannot influence results; outputs are returned in cohort order
/// and the first error in cohort order wins.
fn run_local_updates<T: Scalar>(
    state: &ServerState<T>,
    hp: &HyperParams,
    cohort: &[usize],
    threads: usize,
) -> Result<Vec<ClientUpdate<T>>> {
    let k = state.round;
    let run_one = |&client_id: &usize| -> Result<ClientUpdate<T>> {
        let mut rng = stream(state.seed, &[purpose::LOCAL_SGD, k as u64, client_id as u64]);
        local_update(&state.clients[client_id], &state.global, hp, k, &mut rng)
    };

    let workers = threads.max(1).min(cohort.len().max(1));
    if workers <= 1 {
        return cohort.iter().map(&run_one).collect();
    }

    let slots: Mutex<Vec<Option<Result<ClientUpdate<T>>>>> =
        Mutex::new((0..cohort.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for w in 0..workers {
            let slots = &slots;
            let run_one = &run_one;
            scope.spawn(move || {
                for (pos, id) in cohort.iter().enumerate() {
                    if pos % workers != w {
                        continue;
                    }
                    let result = run_one(id);
                    let mut guard = slots.lock().expect("worker panicked");
                    guard[pos] = Some(result);
                }
            });
        }
    });
    let collected = slots.into_inner().expect("worker panicked");
    collected
        .into_iter()
        .map(|slot| slot.expect("every cohort slot filled"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, partition_planted, ClusterSpec, PartitionSpec};
    use crate::model::init_mlp;
    use crate::rng::stream;

    #[test]
    fn prox_step_matches_hand_computed_quadratic_trace() {
        // f(w) = (w - 1)^2 / 2, anchor 0, eta 0.1: grad at w is (w - 1).
        let mut w = [0.0f64];
        prox_step(&mut w, &[-1.0], &[0.0], 0.1, 0.0);
        assert!((w[0] - 0.1).abs() < 1e-15);

        // With mu = 1: step 1 from the anchor has zero prox pull,
        // step 2 pulls back: w = 0.1 - 0.1 * ((0.1 - 1) + 1 * (0.1 - 0)).
        let mut w = [0.0f64];
        prox_step(&mut w, &[-1.0], &[0.0], 0.1, 1.0);
        assert!((w[0] - 0.1).abs() < 1e-15);
        let grad = [w[0] - 1.0];
        prox_step(&mut w, &grad, &[0.0], 0.1, 1.0);
        assert!((w[0] - 0.18).abs() < 1e-15);
    }

    #[test]
    fn zero_mu_is_plain_sgd_bitwise() {
        let grad = [0.25f64, -0.5, 0.125];
        let anchor = [9.0f64, -3.0, 7.0];
        let mut with_prox = [1.0f64, 2.0, -3.0];
        let mut plain = with_prox;
        prox_step(&mut with_prox, &grad, &anchor, 0.1, 0.0);
        for (w, g) in plain.iter_mut().zip(&grad) {
            *w -= 0.1 * g;
        }
        for (a, b) in with_prox.iter().zip(&plain) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn uniform_sampling_covers_population_exactly() {
        let mut rng = stream(1, &[0xF1]);
        let cohort = sample_uniform(4, 4, &mut rng).unwrap();
        assert_eq!(cohort, vec![0, 1, 2, 3]);
    }

    #[test]
    fn uniform_sampling_frequencies_are_balanced() {
        let n = 10;
        let draws = 10_000;
        let mut counts = vec![0usize; n];
        let mut rng = stream(2, &[0xF2]);
        for _ in 0..draws {
            let pick = sample_uniform(n, 1, &mut rng).unwrap()[0];
            counts[pick] += 1;
        }
        // Binomial(10000, 1/10): mean 1000, sigma = 30; 3-sigma band.
        for (id, &c) in counts.iter().enumerate() {
            assert!((910..=1090).contains(&c), "client {id} drawn {c} times");
        }
    }

    #[test]
    fn uniform_samples_are_distinct() {
        let mut rng = stream(3, &[0xF3]);
        for _ in 0..200 {
            let cohort = sample_uniform(12, 5, &mut rng).unwrap();
            let mut dedup = cohort.clone();
            dedup.dedup();
            assert_eq!(dedup.len(), 5);
        }
    }

    #[test]
    fn uniform_sampling_rejects_oversized_cohort() {
        let mut rng = stream(4, &[0xF4]);
        assert!(sample_uniform(3, 4, &mut rng).is_err());
    }

    #[test]
    fn powd_keeps_highest_losses() {
        let losses = [0.1f64, 0.9, 0.5];
        let mut rng = stream(5, &[0xF5]);
        let cohort = sample_powd(3, 3, 2, &mut rng, |id| Ok(losses[id])).unwrap();
        assert_eq!(cohort, vec![1, 2]);
    }

    #[test]
    fn powd_ties_break_to_lower_ids() {
        let mut rng = stream(6, &[0xF6]);
        let cohort = sample_powd(5, 5, 3, &mut rng, |_| Ok(1.0)).unwrap();
        assert_eq!(cohort, vec![0, 1, 2]);
    }

    #[test]
    fn powd_with_full_candidates_matches_sort_oracle() {
        let losses = [0.3f64, 0.8, 0.1, 0.8, 0.6, 0.2];
        // Oracle: full sort by (loss desc, id asc).
        let mut order: Vec<usize> = (0..losses.len()).collect();
        order.sort_by(|&a, &b| {
            losses[b]
                .partial_cmp(&losses[a])
                .unwrap()
                .then(a.cmp(&b))
        });
        let mut want = order[..3].to_vec();
        want.sort_unstable();

        let mut rng = stream(7, &[0xF7]);
        let got = sample_powd(6, 6, 3, &mut rng, |id| Ok(losses[id])).unwrap();
        assert_eq!(got, want);
    }

    #[test]
    fn powd_rejects_r_above_d() {
        let mut rng = stream(8, &[0xF8]);
        assert!(sample_powd(6, 2, 3, &mut rng, |_| Ok(0.0)).is_err());
    }

    fn update_with_params(client_id: usize, values: Vec<f64>, count: usize) -> ClientUpdate<f64> {
        let params = init_mlp::<f64>(&[1, values.len()], &mut stream(0, &[]))
            .unwrap()
            .with_values(vec![0.0; 2 * values.len()])
            .unwrap();
        // Single linear layer [1, k]: k weights then k biases; store the
        // payload in the weight block.
        let dim = params.total_dim();
        let mut buf = vec![0.0; dim];
        buf[..values.len()].copy_from_slice(&values);
        ClientUpdate {
            client_id,
            params: params.with_values(buf).unwrap(),
            activation: ActivationVector { values: vec![0.0] },
            train_loss: 0.0,
            sample_count: count,
        }
    }

    #[test]
    fn one_hot_weights_select_a_single_client() {
        let updates = vec![
            update_with_params(0, vec![1.0, 2.0], 5),
            update_with_params(1, vec![-3.0, 4.0], 5),
        ];
        let out = aggregate(&updates, &[0.0, 1.0]).unwrap();
        assert_eq!(out.values(), updates[1].params.values());
    }

    #[test]
    fn equal_weights_average_parameters() {
        let updates = vec![
            update_with_params(0, vec![1.0], 5),
            update_with_params(1, vec![3.0], 5),
        ];
        let out = aggregate(&updates, &[0.5, 0.5]).unwrap();
        assert_eq!(out.values()[0], 2.0);
    }

    #[test]
    fn proportional_weights_follow_sample_counts() {
        let updates = vec![
            update_with_params(0, vec![0.0], 3200),
            update_with_params(1, vec![0.0], 4800),
        ];
        let w = proportional_weights(&updates);
        assert!((w[0] - 0.4).abs() < 1e-15);
        assert!((w[1] - 0.6).abs() < 1e-15);
    }

    #[test]
    fn weight_sum_violations_are_rejected() {
        let updates = vec![
            update_with_params(0, vec![1.0], 1),
            update_with_params(1, vec![2.0], 1),
        ];
        match aggregate(&updates, &[0.7, 0.6]) {
            Err(Error::WeightSum { sum }) => assert!((sum - 1.3).abs() < 1e-12),
            other => panic!("expected weight-sum error, got {other:?}"),
        }
    }

    /// Small synthetic federation for end-to-end round tests.
    fn tiny_state(
        clusters: &[(usize, Vec<usize>, usize)],
        classes: usize,
        seed: u64,
    ) -> ServerState<f64> {
        let dim = 8;
        let per_class = clusters
            .iter()
            .map(|(count, _, per)| count * per)
            .max()
            .unwrap()
            .max(8);
        let train: crate::data::Dataset<f64> = generate_synthetic(
            classes,
            dim,
            per_class,
            4.0,
            1.0,
            &mut stream(seed, &[purpose::DATA_TRAIN]),
        )
        .unwrap();
        let test: crate::data::Dataset<f64> = generate_synthetic(
            classes,
            dim,
            per_class,
            4.0,
            1.0,
            &mut stream(seed, &[purpose::DATA_TEST]),
        )
        .unwrap();
        let spec = PartitionSpec {
            clusters: clusters
                .iter()
                .map(|(count, labels, per)| ClusterSpec {
                    client_count: *count,
                    labels: labels.clone(),
                    samples_per_label_per_client: *per,
                })
                .collect(),
        };
        let clients =
            partition_planted(&train, &spec, &mut stream(seed, &[purpose::PARTITION_TRAIN]))
                .unwrap();
        let test_spec = spec.with_samples_per_label(4);
        let test_clients =
            partition_planted(&test, &test_spec, &mut stream(seed, &[purpose::PARTITION_TEST]))
                .unwrap();
        let global = init_mlp(&[dim, 16, classes], &mut stream(seed, &[purpose::MODEL_INIT]))
            .unwrap();
        ServerState {
            global,
            test_shards: test_clients.into_iter().map(|c| c.shard).collect(),
            clients,
            global_test: test,
            seed,
            round: 0,
        }
    }

    fn hp(algorithm: Algorithm) -> HyperParams {
        HyperParams {
            algorithm,
            eta: 0.05,
            mu: 0.01,
            local_epochs: 2,
            batch_size: 16,
            rounds: 4,
            cohort_size: 3,
            num_clusters: 2,
            powd_candidates: 4,
            probe_size: 16,
            ..HyperParams::default()
        }
    }

    #[test]
    fn local_update_with_zero_mu_matches_fedavg_update() {
        let state = tiny_state(&[(2, vec![0, 1], 10)], 2, 76);
        let mut hp_prox = hp(Algorithm::FedProx);
        hp_prox.mu = 0.0;
        let hp_avg = hp(Algorithm::FedAvg);
        let a = local_update(
            &state.clients[0],
            &state.global,
            &hp_prox,
            0,
            &mut stream(5, &[purpose::LOCAL_SGD, 0, 0]),
        )
        .unwrap();
        let b = local_update(
            &state.clients[0],
            &state.global,
            &hp_avg,
            0,
            &mut stream(5, &[purpose::LOCAL_SGD, 0, 0]),
        )
        .unwrap();
        assert!(a
            .params
            .values()
            .iter()
            .zip(b.params.values())
            .all(|(x, y)| x.to_bits() == y.to_bits()));
        assert_eq!(a.train_loss.to_bits(), b.train_loss.to_bits());
    }

    #[test]
    fn fedprox_with_zero_mu_reproduces_fedavg_bitwise() {
        let mut avg_state = tiny_state(&[(3, vec![0, 1], 10), (3, vec![2, 3], 10)], 4, 77);
        let mut prox_state = avg_state.clone();
        let mut hp_avg = hp(Algorithm::FedAvg);
        hp_avg.mu = 0.3; // ignored by fedavg
        let mut hp_prox = hp(Algorithm::FedProx);
        hp_prox.mu = 0.0;

        for _ in 0..3 {
            run_round(&mut avg_state, &hp_avg, 1, false).unwrap();
            run_round(&mut prox_state, &hp_prox, 1, false).unwrap();
        }
        let a = avg_state.global.values();
        let b = prox_state.global.values();
        assert!(a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn clustered_run_with_one_cluster_is_uniform() {
        let mut state = tiny_state(&[(4, vec![0, 1], 8), (2, vec![2, 3], 8)], 4, 78);
        let mut h = hp(Algorithm::Equitable);
        h.num_clusters = 1;
        for _ in 0..2 {
            let record = run_round(&mut state, &h, 1, true).unwrap().unwrap();
            for &w in &record.weights {
                assert_eq!(w.to_bits(), (1.0f64 / 3.0).to_bits());
            }
        }
    }

    #[test]
    fn cohort_of_one_returns_that_clients_model() {
        for algorithm in [Algorithm::FedAvg, Algorithm::Equitable] {
            let mut state = tiny_state(&[(3, vec![0, 1], 8)], 2, 79);
            let mut h = hp(algorithm);
            h.cohort_size = 1;
            h.num_clusters = 1;
            let seed = state.seed;
            let cohort =
                sample_uniform(3, 1, &mut stream(seed, &[purpose::COHORT, 0])).unwrap();
            let expected = {
                let mut rng =
                    stream(seed, &[purpose::LOCAL_SGD, 0, cohort[0] as u64]);
                local_update(&state.clients[cohort[0]], &state.global, &h, 0, &mut rng).unwrap()
            };
            run_round(&mut state, &h, 1, false).unwrap();
            assert_eq!(state.global.values(), expected.params.values());
        }
    }

    #[test]
    fn rounds_are_deterministic_across_reruns_and_threads() {
        let records = |threads: usize| {
            let mut state = tiny_state(&[(3, vec![0, 1], 10), (3, vec![2, 3], 10)], 4, 80);
            let h = hp(Algorithm::Equitable);
            let mut out = Vec::new();
            for _ in 0..3 {
                out.push(run_round(&mut state, &h, threads, true).unwrap().unwrap());
            }
            (state.global.values().to_vec(), out)
        };
        let (params_serial, recs_serial) = records(1);
        let (params_par, recs_par) = records(4);
        assert!(params_serial
            .iter()
            .zip(&params_par)
            .all(|(a, b)| a.to_bits() == b.to_bits()));
        for (a, b) in recs_serial.iter().zip(&recs_par) {
            assert_eq!(a.cohort, b.cohort);
            assert_eq!(a.global_acc.to_bits(), b.global_acc.to_bits());
            assert_eq!(a.cd.to_bits(), b.cd.to_bits());
            assert_eq!(a.weights, b.weights);
        }
    }

    #[test]
    fn aggregated_parameters_stay_in_the_cohort_hull() {
        let mut state = tiny_state(&[(4, vec![0, 1], 10), (2, vec![2, 3], 10)], 4, 81);
        let h = hp(Algorithm::FedProx);
        let seed = state.seed;
        let cohort = sample_uniform(
            state.clients.len(),
            h.cohort_size,
            &mut stream(seed, &[purpose::COHORT, 0]),
        )
        .unwrap();
        let updates: Vec<ClientUpdate<f64>> = cohort
            .iter()
            .map(|&id| {
                let mut rng = stream(seed, &[purpose::LOCAL_SGD, 0, id as u64]);
                local_update(&state.clients[id], &state.global, &h, 0, &mut rng).unwrap()
            })
            .collect();
        run_round(&mut state, &h, 1, false).unwrap();
        for j in 0..state.global.total_dim() {
            let lo = updates
                .iter()
                .map(|u| u.params.values()[j])
                .fold(f64::INFINITY, f64::min);
            let hi = updates
                .iter()
                .map(|u| u.params.values()[j])
                .fold(f64::NEG_INFINITY, f64::max);
            let v = state.global.values()[j];
            assert!(v >= lo - 1e-12 && v <= hi + 1e-12, "coordinate {j}");
        }
    }

    #[test]
    fn iid_training_loss_decreases_in_windowed_mean() {
        for algorithm in Algorithm::ALL {
            // One cluster holding every label: an IID split.
            let mut state = tiny_state(&[(6, vec![0, 1, 2, 3], 10)], 4, 82);
            let mut h = hp(algorithm);
            h.eta = 0.05;
            h.mu = 0.01;
            h.cohort_size = 3;
            h.num_clusters = 2;
            h.powd_candidates = 5;
            let mut train_means = Vec::new();
            for _ in 0..30 {
                let seed = state.seed;
                let k = state.round;
                let cohort = match algorithm {
                    Algorithm::FedProxPowd => sample_powd(
                        6,
                        h.powd_candidates,
                        h.cohort_size,
                        &mut stream(seed, &[purpose::COHORT, k as u64]),
                        |id| {
                            Ok(loss(&state.global, &state.clients[id].shard.as_batch())
                                .unwrap())
                        },
                    )
                    .unwrap(),
                    _ => sample_uniform(
                        6,
                        h.cohort_size,
                        &mut stream(seed, &[purpose::COHORT, k as u64]),
                    )
                    .unwrap(),
                };
                let mean: f64 = cohort
                    .iter()
                    .map(|&id| {
                        loss(&state.global, &state.clients[id].shard.as_batch()).unwrap()
                    })
                    .sum::<f64>()
                    / cohort.len() as f64;
                train_means.push(mean);
                run_round(&mut state, &h, 1, false).unwrap();
            }
            let window = |range: std::ops::Range<usize>| -> f64 {
                let w = &train_means[range];
                w.iter().sum::<f64>() / w.len() as f64
            };
            let w0 = window(0..10);
            let w1 = window(10..20);
            let w2 = window(20..30);
            assert!(w1 <= w0 + 1e-9, "{algorithm}: {w0} -> {w1}");
            assert!(w2 <= w1 + 1e-9, "{algorithm}: {w1} -> {w2}");
        }
    }
}
