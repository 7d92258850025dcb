//! Classical comparison networks (CCNN-A and CCNN-B).
//!
//! Both are fully connected funnels over the reduced features with `tanh`
//! hidden units and a single sigmoid output, trained with the same base-2
//! cross-entropy and Adam driver as the quantum models. A network for depth
//! `n` has exactly `n` weight layers, so the `n` freeze groups line up with
//! the quantum retraining depth `m`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::derive_seed;
use crate::error::{Error, Result};
use crate::readout::fit_linear_svm;
use crate::train::{run_adam, Example, FitResult, FreezePlan, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum CcnnVariant {
    #[serde(rename = "ccnn-a")]
    A,
    #[serde(rename = "ccnn-b")]
    B,
}

impl CcnnVariant {
    pub fn name(self) -> &'static str {
        match self {
            CcnnVariant::A => "CCNN-A",
            CcnnVariant::B => "CCNN-B",
        }
    }

    /// Published parameter budget.
    pub fn budget(self, n: usize) -> Option<usize> {
        match (self, n) {
            (CcnnVariant::A, 3) => Some(49),
            (CcnnVariant::A, 4) => Some(185),
            (CcnnVariant::B, 3) => Some(11901),
            (CcnnVariant::B, 4) => Some(22001),
            _ => None,
        }
    }
}

/// Layer widths from input to output, frozen from [`search_widths`].
const FROZEN: [(CcnnVariant, usize, &[usize]); 4] = [
    (CcnnVariant::A, 3, &[8, 4, 2, 1]),
    (CcnnVariant::A, 4, &[16, 6, 6, 5, 1]),
    (CcnnVariant::B, 3, &[8, 116, 92, 1]),
    (CcnnVariant::B, 4, &[16, 100, 100, 100, 1]),
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CcnnSpec {
    pub name: String,
    /// Widths from input to output (last entry is 1).
    pub widths: Vec<usize>,
    pub budget: usize,
}

/// Weights plus biases of a fully connected stack.
pub fn count_params(widths: &[usize]) -> usize {
    widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

/// Exhaustive search over non-increasing hidden widths in `1..=max_width`
/// (`layers - 1` hidden layers, one output) for an exact budget match.
/// Among exact matches the narrowest widest layer wins, then the
/// lexicographically smallest widths.
pub fn search_widths(input: usize, layers: usize, budget: usize, max_width: usize) -> Option<Vec<usize>> {
    fn rec(
        prefix: &mut Vec<usize>,
        hidden_left: usize,
        used: usize,
        budget: usize,
        max_width: usize,
        best: &mut Option<Vec<usize>>,
    ) {
        let prev = *prefix.last().expect("input width present");
        if hidden_left == 0 {
            if used + prev + 1 == budget {
                let mut cand = prefix.clone();
                cand.push(1);
                let key = |v: &Vec<usize>| (v[1..v.len() - 1].iter().copied().max().unwrap_or(0), v.clone());
                if best.as_ref().map_or(true, |b| key(&cand) < key(b)) {
                    *best = Some(cand);
                }
            }
            return;
        }
        let cap = if prefix.len() == 1 { max_width } else { prev.min(max_width) };
        for h in 1..=cap {
            let cost = prev * h + h;
            if used + cost > budget {
                break;
            }
            prefix.push(h);
            rec(prefix, hidden_left - 1, used + cost, budget, max_width, best);
            prefix.pop();
        }
    }
    if layers == 0 {
        return None;
    }
    let mut best = None;
    rec(&mut vec![input], layers - 1, 0, budget, max_width, &mut best);
    best
}

/// Frozen CCNN architecture for `(variant, n)`, `n` in `{3, 4}`.
pub fn build_ccnn(variant: CcnnVariant, n: usize) -> Result<CcnnSpec> {
    let budget = variant
        .budget(n)
        .ok_or_else(|| Error::invalid(format!("{} is defined for n = 3 or 4, got {n}", variant.name())))?;
    let widths = FROZEN
        .iter()
        .find(|(v, k, _)| *v == variant && *k == n)
        .map(|(_, _, w)| w.to_vec())
        .expect("table covers every budget");
    let realized = count_params(&widths);
    assert!(
        realized.abs_diff(budget) * 100 <= budget,
        "{} n={n}: {realized} parameters vs budget {budget}",
        variant.name()
    );
    if realized != budget {
        log::warn!("{} n={n}: {realized} parameters vs budget {budget}", variant.name());
    }
    Ok(CcnnSpec { name: format!("{}-{n}", variant.name()), widths, budget })
}

impl CcnnSpec {
    /// Arbitrary fully connected stack ending in one output.
    pub fn custom(widths: &[usize]) -> Result<Self> {
        if widths.len() < 2 || widths.iter().any(|&w| w == 0) || *widths.last().expect("nonempty") != 1 {
            return Err(Error::invalid("widths must be positive and end in a single output"));
        }
        Ok(CcnnSpec { name: "custom".into(), widths: widths.to_vec(), budget: count_params(widths) })
    }

    pub fn n_params(&self) -> usize {
        count_params(&self.widths)
    }

    pub fn n_layers(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    /// Layer (freeze group) of every parameter; layer `l` stores its
    /// `out x in` weights row-major followed by its biases.
    pub fn groups(&self) -> Vec<usize> {
        self.widths
            .windows(2)
            .enumerate()
            .flat_map(|(l, w)| std::iter::repeat(l).take(w[0] * w[1] + w[1]))
            .collect()
    }

    pub fn freeze_plan(&self, m: usize) -> Result<FreezePlan> {
        FreezePlan::from_groups(&self.groups(), self.n_layers(), m)
    }

    fn check(&self, params: &[f64], x: &[f64]) -> Result<()> {
        if params.len() != self.n_params() {
            return Err(Error::invalid(format!("expected {} weights, got {}", self.n_params(), params.len())));
        }
        if x.len() != self.input_dim() {
            return Err(Error::invalid(format!("expected {} features, got {}", self.input_dim(), x.len())));
        }
        Ok(())
    }

    /// Activations of every layer; the last entry holds the output logit.
    fn activations(&self, params: &[f64], x: &[f64]) -> Vec<Vec<f64>> {
        let mut acts = vec![x.to_vec()];
        let mut off = 0;
        let last = self.n_layers() - 1;
        for (l, w) in self.widths.windows(2).enumerate() {
            let (nin, nout) = (w[0], w[1]);
            let weights = &params[off..off + nin * nout];
            let bias = &params[off + nin * nout..off + nin * nout + nout];
            off += nin * nout + nout;
            let input = acts.last().expect("input present");
            let z: Vec<f64> = (0..nout)
                .map(|o| bias[o] + weights[o * nin..(o + 1) * nin].iter().zip(input).map(|(a, b)| a * b).sum::<f64>())
                .collect();
            acts.push(if l == last { z } else { z.into_iter().map(f64::tanh).collect() });
        }
        acts
    }

    /// Pre-sigmoid output.
    pub fn logit(&self, params: &[f64], x: &[f64]) -> Result<f64> {
        self.check(params, x)?;
        Ok(self.activations(params, x).last().expect("output")[0])
    }

    /// Sigmoid output, read as the probability of label 1.
    pub fn predict_proba(&self, params: &[f64], x: &[f64]) -> Result<f64> {
        Ok(sigmoid(self.logit(params, x)?))
    }

    /// Base-2 cross-entropy of one example, computed from the logit.
    pub fn example_loss(&self, params: &[f64], x: &[f64], y: u8) -> Result<f64> {
        Ok(bce2_from_logit(self.logit(params, x)?, y))
    }

    /// Loss and backpropagated gradient for one example.
    pub fn loss_and_grad(&self, params: &[f64], x: &[f64], y: u8) -> Result<(f64, Vec<f64>)> {
        self.check(params, x)?;
        let acts = self.activations(params, x);
        let z = acts.last().expect("output")[0];
        let loss = bce2_from_logit(z, y);
        let mut grad = vec![0.0; params.len()];
        let mut delta = vec![(sigmoid(z) - f64::from(y)) / std::f64::consts::LN_2];
        let offsets: Vec<usize> = self
            .widths
            .windows(2)
            .scan(0, |off, w| {
                let o = *off;
                *off += w[0] * w[1] + w[1];
                Some(o)
            })
            .collect();
        for l in (0..self.n_layers()).rev() {
            let (nin, nout) = (self.widths[l], self.widths[l + 1]);
            let off = offsets[l];
            let input = &acts[l];
            for o in 0..nout {
                for i in 0..nin {
                    grad[off + o * nin + i] = delta[o] * input[i];
                }
                grad[off + nin * nout + o] = delta[o];
            }
            if l > 0 {
                let weights = &params[off..off + nin * nout];
                delta = (0..nin)
                    .map(|i| {
                        let back: f64 = (0..nout).map(|o| weights[o * nin + i] * delta[o]).sum();
                        back * (1.0 - input[i] * input[i])
                    })
                    .collect();
            }
        }
        Ok((loss, grad))
    }

    /// Mean loss and gradient over `batch`; binary target is the first
    /// target bit of each example.
    pub fn batch_loss_and_grad(&self, params: &[f64], batch: &[&Example]) -> Result<(f64, Vec<f64>)> {
        let mut loss = 0.0;
        let mut grad = vec![0.0; params.len()];
        for ex in batch {
            let (l, g) = self.loss_and_grad(params, &ex.features, target_bit(ex)?)?;
            loss += l;
            grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
        }
        let k = batch.len() as f64;
        grad.iter_mut().for_each(|g| *g /= k);
        Ok((loss / k, grad))
    }
}

fn target_bit(ex: &Example) -> Result<u8> {
    ex.target.0.first().copied().ok_or_else(|| Error::invalid("example has an empty target"))
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `softplus(z) - y z`, in bits.
fn bce2_from_logit(z: f64, y: u8) -> f64 {
    let softplus = z.max(0.0) + (-z.abs()).exp().ln_1p();
    (softplus - f64::from(y) * z) / std::f64::consts::LN_2
}

/// Uniform `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` weights, zero biases.
pub fn init_weights(spec: &CcnnSpec, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "init"));
    let mut out = Vec::with_capacity(spec.n_params());
    for w in spec.widths.windows(2) {
        let bound = 1.0 / (w[0] as f64).sqrt();
        out.extend((0..w[0] * w[1]).map(|_| rng.gen_range(-bound..=bound)));
        out.extend(std::iter::repeat(0.0).take(w[1]));
    }
    out
}

/// Trains the unfrozen groups with Adam (epochs from `cfg`).
pub fn ccnn_fit(spec: &CcnnSpec, init: &[f64], data: &[Example], cfg: &TrainConfig, freeze: &FreezePlan) -> Result<FitResult> {
    ccnn_fit_epochs(spec, init, data, cfg, freeze, cfg.epochs_for(data.len()))
}

pub fn ccnn_fit_epochs(
    spec: &CcnnSpec,
    init: &[f64],
    data: &[Example],
    cfg: &TrainConfig,
    freeze: &FreezePlan,
    epochs: usize,
) -> Result<FitResult> {
    if init.len() != spec.n_params() || freeze.mask.len() != spec.n_params() {
        return Err(Error::invalid("weight vector or freeze mask has the wrong length"));
    }
    if epochs == 0 || freeze.n_trainable() == 0 {
        return Ok(FitResult { params: init.to_vec(), loss_history: Vec::new() });
    }
    run_adam(init, data.len(), cfg, &freeze.mask, epochs, |params, idx| {
        let batch: Vec<&Example> = idx.iter().map(|&i| &data[i]).collect();
        spec.batch_loss_and_grad(params, &batch)
    })
}

/// One-dimensional decision rule on the output logit: `w z + b >= 0 -> 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogitRule {
    pub w: f64,
    pub b: f64,
}

impl Default for LogitRule {
    fn default() -> Self {
        LogitRule { w: 1.0, b: 0.0 }
    }
}

impl LogitRule {
    pub fn decide(&self, z: f64) -> u8 {
        u8::from(self.w * z + self.b >= 0.0)
    }
}

/// Linear SVM on the output logits, mirroring the quantum readout refit.
pub fn fit_logit_rule(spec: &CcnnSpec, params: &[f64], features: &[Vec<f64>], labels: &[u8], c: f64) -> Result<LogitRule> {
    let z: Vec<[f64; 1]> = features.iter().map(|x| spec.logit(params, x).map(|z| [z])).collect::<Result<_>>()?;
    let signed: Vec<i8> = labels.iter().map(|&y| if y == 1 { 1 } else { -1 }).collect();
    let (w, b) = fit_linear_svm(&z, &signed, c)?;
    if w[0] == 0.0 {
        return Ok(LogitRule::default());
    }
    Ok(LogitRule { w: w[0], b })
}

pub fn ccnn_classify(spec: &CcnnSpec, params: &[f64], rule: &LogitRule, x: &[f64]) -> Result<u8> {
    Ok(rule.decide(spec.logit(params, x)?))
}
