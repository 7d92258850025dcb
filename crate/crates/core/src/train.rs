//! Objective, gradients and optimizer for QCNN training.
//!
//! The loss is the base-2 binary cross-entropy between the `|0>`
//! probabilities of the measured qubits and a per-sample [`TargetBits`]
//! code. Gradients use the two-point parameter-shift rule on those
//! probabilities and the chain rule through the cross-entropy: for a
//! rotation `R(phi) = exp(-i phi P / 2)`,
//!
//! ```text
//! d p_i / d phi = ( p_i(phi + pi/2) - p_i(phi - pi/2) ) / 2
//! ```
//!
//! exactly. A parameter that appears in several rotations (parameter
//! sharing, or the half-angle rotations inside controlled gates) collects
//! `coeff * shift-difference` from each occurrence.
//!
//! The shifted circuits are never simulated separately:
//! `R(phi +- pi/2) = R(phi) (I -+ iP) / sqrt(2)`, so the two shifted final
//! states are `(psi -+ i eta) / sqrt(2)` with `eta` the final state of the
//! circuit in which `R(phi)` is followed by `P`. The weighted shift
//! difference is then an overlap with `eta`, and all overlaps of one example
//! come out of a single reverse sweep. [`shift_gradient_reference`] runs the
//! literal two-circuit rule for comparison.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ansatz::{ModelSpec, Tweak};
use crate::error::{Error, Result};
use crate::statevec::{apply_two_raw, cross_matrix_raw, StateVector, Unitary4, C64};
use crate::{derive_seed, tol};

/// Per-parameter trainable mask for retraining the last `m` layers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FreezePlan {
    pub m: usize,
    pub n_layers: usize,
    pub mask: Vec<bool>,
}

impl FreezePlan {
    /// Freezes layers `0..n-m` of a QCNN and trains the rest.
    pub fn for_model(spec: &ModelSpec, m: usize) -> Result<Self> {
        let groups: Vec<usize> = (0..spec.n_params).map(|j| spec.layer_of_param(j)).collect();
        Self::from_groups(&groups, spec.n_layers, m)
    }

    /// `groups[j]` is the 0-based layer (group) of parameter `j`.
    pub fn from_groups(groups: &[usize], n_layers: usize, m: usize) -> Result<Self> {
        if m > n_layers {
            return Err(Error::invalid(format!("m = {m} exceeds n = {n_layers}")));
        }
        let first_trainable = n_layers - m;
        Ok(FreezePlan {
            m,
            n_layers,
            mask: groups.iter().map(|&g| g >= first_trainable).collect(),
        })
    }

    pub fn all_trainable(n_params: usize) -> Self {
        FreezePlan { m: 1, n_layers: 1, mask: vec![true; n_params] }
    }

    pub fn n_trainable(&self) -> usize {
        self.mask.iter().filter(|&&t| t).count()
    }

    pub fn is_trainable(&self, j: usize) -> bool {
        self.mask[j]
    }
}

/// Desired measurement outcome per measured qubit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TargetBits(pub Vec<u8>);

impl TargetBits {
    /// Binary label `y`: every bit equals `y`.
    pub fn for_label(y: u8, len: usize) -> Self {
        TargetBits(vec![u8::from(y != 0); len])
    }

    /// Multi-class code: the little-endian binary index of `class`
    /// (using `ceil(log2(n_classes))` bits, at least one) repeated cyclically
    /// up to `len`. For two classes this reduces to [`TargetBits::for_label`].
    pub fn for_class(class: usize, n_classes: usize, len: usize) -> Self {
        let width = code_width(n_classes);
        TargetBits((0..len).map(|i| ((class >> (i % width)) & 1) as u8).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

pub(crate) fn code_width(n_classes: usize) -> usize {
    let mut w = 1;
    while (1usize << w) < n_classes {
        w += 1;
    }
    w
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub epochs_large: usize,
    pub epochs_small: usize,
    /// Datasets of at most this size are trained full-batch for `epochs_small`.
    pub small_threshold: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: 32,
            epochs_large: 30,
            epochs_small: 200,
            small_threshold: 40,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn epochs_for(&self, n_samples: usize) -> usize {
        if n_samples <= self.small_threshold {
            self.epochs_small
        } else {
            self.epochs_large
        }
    }

    pub fn batch_for(&self, n_samples: usize) -> usize {
        if n_samples <= self.small_threshold {
            n_samples.max(1)
        } else {
            self.batch_size.max(1)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [self.learning_rate, self.beta1, self.beta2, self.epsilon];
        if positive.iter().any(|v| !(*v > 0.0)) || self.beta1 >= 1.0 || self.beta2 >= 1.0 {
            return Err(Error::invalid("learning rate, betas and epsilon must be positive (betas < 1)"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be positive"));
        }
        Ok(())
    }
}

/// One training example for a QCNN.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub features: Vec<f64>,
    pub target: TargetBits,
}

fn clamp_p(p: f64) -> f64 {
    p.clamp(tol::PROB_CLAMP, 1.0 - tol::PROB_CLAMP)
}

/// Mean over qubits of `-[b log2 p + (1-b) log2(1-p)]`.
pub fn bce_loss(p: &[f64], target: &TargetBits) -> Result<f64> {
    if p.len() != target.len() || p.is_empty() {
        return Err(Error::invalid(format!(
            "{} probabilities for {} target bits",
            p.len(),
            target.len()
        )));
    }
    Ok(bce_with_grad(p, target).0)
}

/// Loss and `dL/dp_i`; the derivative is zero where the clamp is active.
pub(crate) fn bce_with_grad(p: &[f64], target: &TargetBits) -> (f64, Vec<f64>) {
    let t = p.len() as f64;
    let ln2 = std::f64::consts::LN_2;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(p.len());
    for (&pi, &b) in p.iter().zip(&target.0) {
        let pc = clamp_p(pi);
        let active = pc == pi;
        if b == 1 {
            loss -= pc.log2();
            grad.push(if active { -1.0 / (pc * ln2 * t) } else { 0.0 });
        } else {
            loss -= (1.0 - pc).log2();
            grad.push(if active { 1.0 / ((1.0 - pc) * ln2 * t) } else { 0.0 });
        }
    }
    (loss / t, grad)
}

/// Loss of a single example at `params`.
pub fn example_loss(spec: &ModelSpec, params: &[f64], ex: &Example) -> Result<f64> {
    let state = spec.forward(params, &ex.features)?;
    bce_loss(&state.marginals_p0(&spec.measured), &ex.target)
}

/// Mean loss over `data`.
pub fn dataset_loss(spec: &ModelSpec, params: &[f64], data: &[Example]) -> Result<f64> {
    let losses: Vec<f64> = data
        .par_iter()
        .map(|ex| example_loss(spec, params, ex))
        .collect::<Result<_>>()?;
    Ok(losses.iter().sum::<f64>() / data.len().max(1) as f64)
}

/// Per-batch tables: gate unitaries, their adjoints, and for every trainable
/// rotation occurrence the gate with `P` appended after that rotation.
struct ShiftTables {
    unitaries: Vec<Unitary4>,
    adjoints: Vec<Unitary4>,
    /// Per gate: `(global parameter, coefficient, tweaked gate)`.
    tweaked: Vec<Vec<(usize, f64, Unitary4)>>,
}

impl ShiftTables {
    fn new(spec: &ModelSpec, params: &[f64], freeze: &FreezePlan) -> Self {
        let unitaries = spec.gate_unitaries(params);
        let adjoints = unitaries.iter().map(Unitary4::dagger).collect();
        let tweaked = spec
            .gates
            .iter()
            .map(|g| {
                let ansatz = spec.ansatz_for(g);
                let local = &params[g.param_offset..g.param_offset + ansatz.n_params()];
                ansatz
                    .occurrences()
                    .filter(|&(_, param, _)| freeze.is_trainable(g.param_offset + param))
                    .map(|(op, param, coeff)| {
                        (g.param_offset + param, coeff, ansatz.build(local, Some((op, Tweak::AppendPauli))))
                    })
                    .collect()
            })
            .collect();
        ShiftTables { unitaries, adjoints, tweaked }
    }
}

/// Loss and parameter-shift gradient for one example (not averaged).
///
/// With `O = sum_i dL/dp_i |0><0|_i` and `eta` as in the module docs,
/// `(p_i(+) - p_i(-)) / 2` weighted by `dL/dp_i` sums to `Im <O psi | eta>`.
/// Writing `eta = S T phi` (`phi` the state before the gate, `T` the tweaked
/// gate, `S` the remaining gates) gives `Im <S^dag O psi | T phi>`, so one
/// reverse sweep of `S^dag O psi` serves every occurrence.
fn example_loss_and_grad(spec: &ModelSpec, tables: &ShiftTables, ex: &Example) -> Result<(f64, Vec<f64>)> {
    spec.check_features(&ex.features)?;
    let n = spec.num_qubits;
    let first = tables.tweaked.iter().position(|t| !t.is_empty());

    let mut state = StateVector::product_ry(&ex.features)?;
    let mut prefixes: Vec<Option<Vec<C64>>> = vec![None; spec.gates.len()];
    for (k, (g, u)) in spec.gates.iter().zip(&tables.unitaries).enumerate() {
        if !tables.tweaked[k].is_empty() {
            prefixes[k] = Some(state.amplitudes().to_vec());
        }
        state.apply_two_unchecked(g.qubits.0, g.qubits.1, u);
    }
    let p = state.marginals_p0(&spec.measured);
    let (loss, dldp) = bce_with_grad(&p, &ex.target);
    let mut grad = vec![0.0; spec.n_params];
    let Some(first) = first else {
        return Ok((loss, grad));
    };

    let masks: Vec<usize> = spec.measured.iter().map(|&q| 1 << (n - 1 - q)).collect();
    let mut lam: Vec<C64> = state
        .amplitudes()
        .iter()
        .enumerate()
        .map(|(k, a)| {
            let w: f64 = masks.iter().zip(&dldp).filter(|(&m, _)| k & m == 0).map(|(_, d)| d).sum();
            a * w
        })
        .collect();
    for k in (first..spec.gates.len()).rev() {
        let g = &spec.gates[k];
        if let Some(phi) = prefixes[k].take() {
            let c = cross_matrix_raw(&lam, &phi, n, g.qubits.0, g.qubits.1);
            for (j, coeff, t) in &tables.tweaked[k] {
                let mut z = C64::new(0.0, 0.0);
                for (a, row) in t.0.iter().enumerate() {
                    for (b, tab) in row.iter().enumerate() {
                        z += tab * c[b][a];
                    }
                }
                grad[*j] += coeff * z.im;
            }
        }
        if k > first {
            apply_two_raw(&mut lam, n, g.qubits.0, g.qubits.1, &tables.adjoints[k]);
        }
    }
    Ok((loss, grad))
}

/// Gradient of one example's loss by the textbook two-circuit shift rule,
/// re-simulating the whole circuit at `phi +- pi/2` for every rotation.
/// Slow; kept as a reference for the fast path.
pub fn shift_gradient_reference(spec: &ModelSpec, params: &[f64], ex: &Example) -> Result<Vec<f64>> {
    spec.check_params(params)?;
    spec.check_features(&ex.features)?;
    let base = spec.gate_unitaries(params);
    let p = spec.forward(params, &ex.features)?.marginals_p0(&spec.measured);
    let (_, dldp) = bce_with_grad(&p, &ex.target);
    let half_pi = std::f64::consts::FRAC_PI_2;
    let mut grad = vec![0.0; spec.n_params];
    for (k, g) in spec.gates.iter().enumerate() {
        let ansatz = spec.ansatz_for(g);
        let local = &params[g.param_offset..g.param_offset + ansatz.n_params()];
        for (op, param, coeff) in ansatz.occurrences() {
            let run = |shift: f64| -> Result<Vec<f64>> {
                let mut state = StateVector::product_ry(&ex.features)?;
                for (k2, (g2, u2)) in spec.gates.iter().zip(&base).enumerate() {
                    if k2 == k {
                        let u = ansatz.build(local, Some((op, Tweak::Shift(shift))));
                        state.apply_two_unchecked(g2.qubits.0, g2.qubits.1, &u);
                    } else {
                        state.apply_two_unchecked(g2.qubits.0, g2.qubits.1, u2);
                    }
                }
                Ok(state.marginals_p0(&spec.measured))
            };
            let (pp, pm) = (run(half_pi)?, run(-half_pi)?);
            let dl: f64 = dldp.iter().zip(pp.iter().zip(&pm)).map(|(d, (a, b))| d * (a - b) / 2.0).sum();
            grad[g.param_offset + param] += coeff * dl;
        }
    }
    Ok(grad)
}

/// Mean loss and mean parameter-shift gradient over `batch`; frozen
/// entries are exactly zero.
pub fn loss_and_gradients(
    spec: &ModelSpec,
    params: &[f64],
    batch: &[Example],
    freeze: &FreezePlan,
) -> Result<(f64, Vec<f64>)> {
    spec.check_params(params)?;
    if freeze.mask.len() != spec.n_params {
        return Err(Error::invalid("freeze mask length does not match the model"));
    }
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    let tables = ShiftTables::new(spec, params, freeze);
    let per_example: Vec<(f64, Vec<f64>)> = batch
        .par_iter()
        .map(|ex| example_loss_and_grad(spec, &tables, ex))
        .collect::<Result<_>>()?;
    Ok(mean_in_order(per_example, spec.n_params))
}

pub fn gradients(spec: &ModelSpec, params: &[f64], batch: &[Example], freeze: &FreezePlan) -> Result<Vec<f64>> {
    Ok(loss_and_gradients(spec, params, batch, freeze)?.1)
}

/// Averages per-example results in input order so the sum is reproducible.
pub(crate) fn mean_in_order(items: Vec<(f64, Vec<f64>)>, n_params: usize) -> (f64, Vec<f64>) {
    let count = items.len() as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; n_params];
    for (l, g) in items {
        loss += l;
        for (acc, v) in grad.iter_mut().zip(g) {
            *acc += v;
        }
    }
    grad.iter_mut().for_each(|v| *v /= count);
    (loss / count, grad)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(n_params: usize) -> Self {
        AdamState { m: vec![0.0; n_params], v: vec![0.0; n_params], t: 0 }
    }
}

/// Bias-corrected Adam update. Entries with `mask[j] == false` keep both
/// their value and their moments.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, cfg: &TrainConfig, mask: &[bool]) {
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for j in 0..params.len() {
        if !mask[j] {
            continue;
        }
        let g = grads[j];
        state.m[j] = cfg.beta1 * state.m[j] + (1.0 - cfg.beta1) * g;
        state.v[j] = cfg.beta2 * state.v[j] + (1.0 - cfg.beta2) * g * g;
        let m_hat = state.m[j] / c1;
        let v_hat = state.v[j] / c2;
        params[j] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub params: Vec<f64>,
    /// Mean pre-step batch loss per epoch.
    pub loss_history: Vec<f64>,
}

/// Mini-batch Adam driver shared by the quantum and classical models.
/// `batch_fn` maps a list of example indices to `(mean loss, mean grad)`.
pub(crate) fn run_adam<F>(
    init: &[f64],
    n_examples: usize,
    cfg: &TrainConfig,
    mask: &[bool],
    epochs: usize,
    mut batch_fn: F,
) -> Result<FitResult>
where
    F: FnMut(&[f64], &[usize]) -> Result<(f64, Vec<f64>)>,
{
    cfg.validate()?;
    if n_examples == 0 {
        return Err(Error::invalid("cannot fit on an empty dataset"));
    }
    let mut params = init.to_vec();
    let mut opt = AdamState::new(params.len());
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "shuffle"));
    let batch = cfg.batch_for(n_examples);
    let mut order: Vec<usize> = (0..n_examples).collect();
    let mut history = Vec::with_capacity(epochs);
    let mut last_finite = None;
    for epoch in 0..epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0usize;
        for (b, chunk) in order.chunks(batch).enumerate() {
            let (loss, grad) = batch_fn(&params, chunk)?;
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                log::error!("non-finite loss at epoch {epoch} batch {b}; params {params:?}");
                return Err(Error::NanLoss { epoch, batch: b, last_finite });
            }
            last_finite = Some(loss);
            total += loss;
            batches += 1;
            adam_step(&mut params, &grad, &mut opt, cfg, mask);
        }
        history.push(total / batches as f64);
    }
    Ok(FitResult { params, loss_history: history })
}

/// Trains the unfrozen parameters of a QCNN with Adam.
pub fn fit(
    spec: &ModelSpec,
    init_params: &[f64],
    dataset: &[Example],
    cfg: &TrainConfig,
    freeze: &FreezePlan,
) -> Result<FitResult> {
    spec.check_params(init_params)?;
    let epochs = cfg.epochs_for(dataset.len());
    fit_epochs(spec, init_params, dataset, cfg, freeze, epochs)
}

/// [`fit`] with an explicit epoch count.
pub fn fit_epochs(
    spec: &ModelSpec,
    init_params: &[f64],
    dataset: &[Example],
    cfg: &TrainConfig,
    freeze: &FreezePlan,
    epochs: usize,
) -> Result<FitResult> {
    spec.check_params(init_params)?;
    if epochs == 0 || freeze.n_trainable() == 0 {
        return Ok(FitResult { params: init_params.to_vec(), loss_history: Vec::new() });
    }
    run_adam(init_params, dataset.len(), cfg, &freeze.mask, epochs, |params, idx| {
        let batch: Vec<Example> = idx.iter().map(|&i| dataset[i].clone()).collect();
        loss_and_gradients(spec, params, &batch, freeze)
    })
}

/// Uniform `[0, 2pi)` initialization drawn from the run seed.
pub fn init_params(n_params: usize, seed: u64) -> Vec<f64> {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "init"));
    (0..n_params).map(|_| rng.gen_range(0.0..std::f64::consts::TAU)).collect()
}
