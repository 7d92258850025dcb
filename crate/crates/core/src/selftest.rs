//! Quick internal consistency checks, run by the `selftest` command.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::ansatz::{build_model, conv_ansatz, ModelVariant};
use crate::baseline::{build_ccnn, CcnnVariant};
use crate::metrics::{accuracy_drop, rpr};
use crate::readout::DecisionRule;
use crate::statevec::{StateVector, Unitary4, C64};
use crate::train::{init_params, loss_and_gradients, Example, FreezePlan, TargetBits};

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, passed: bool, detail: String) -> Check {
    Check { name, passed, detail }
}

fn bit(i: usize, q: usize, n: usize) -> usize {
    (i >> (n - 1 - q)) & 1
}

/// Dense `2^n x 2^n` matrix of a two-qubit gate, built entry by entry.
pub fn dense_two_qubit(u: &Unitary4, n: usize, qa: usize, qb: usize) -> Vec<Vec<C64>> {
    let dim = 1 << n;
    let others = |i: usize| (0..n).filter(|&q| q != qa && q != qb).map(|q| bit(i, q, n)).collect::<Vec<_>>();
    (0..dim)
        .map(|i| {
            (0..dim)
                .map(|j| {
                    if others(i) != others(j) {
                        C64::new(0.0, 0.0)
                    } else {
                        u.0[2 * bit(i, qa, n) + bit(i, qb, n)][2 * bit(j, qa, n) + bit(j, qb, n)]
                    }
                })
                .collect()
        })
        .collect()
}

fn random_gate(rng: &mut ChaCha8Rng) -> Unitary4 {
    let theta: Vec<f64> = (0..15).map(|_| rng.gen_range(0.0..std::f64::consts::TAU)).collect();
    conv_ansatz(&theta).expect("15 parameters")
}

fn simulator_vs_dense(rng: &mut ChaCha8Rng) -> Check {
    let n = 3;
    let mut worst: f64 = 0.0;
    for _ in 0..5 {
        let angles: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..std::f64::consts::PI)).collect();
        let mut state = StateVector::product_ry(&angles).expect("valid angles");
        let mut dense: Vec<C64> = state.amplitudes().to_vec();
        for _ in 0..20 {
            let qa = rng.gen_range(0..n);
            let qb = (qa + rng.gen_range(1..n)) % n;
            let u = random_gate(rng);
            state.apply_two(qa, qb, &u).expect("valid gate");
            let m = dense_two_qubit(&u, n, qa, qb);
            dense = m.iter().map(|row| row.iter().zip(&dense).map(|(a, b)| a * b).sum()).collect();
        }
        for (a, b) in state.amplitudes().iter().zip(&dense) {
            worst = worst.max((a - b).norm());
        }
    }
    check("simulator matches dense evaluation", worst < 1e-12, format!("max amplitude error {worst:.2e}"))
}

fn gradient_check(rng: &mut ChaCha8Rng) -> Check {
    let mut worst: f64 = 0.0;
    for v in ModelVariant::ALL {
        let spec = build_model(v, 3).expect("valid model");
        let params = init_params(spec.n_params, rng.gen());
        let ex = Example {
            features: (0..spec.num_qubits).map(|_| rng.gen_range(0.0..std::f64::consts::PI)).collect(),
            target: TargetBits::for_label(rng.gen_range(0..2), spec.measured.len()),
        };
        let batch = [ex];
        let plan = FreezePlan::all_trainable(spec.n_params);
        let (_, g) = loss_and_gradients(&spec, &params, &batch, &plan).expect("valid inputs");
        let h = 1e-4;
        let mut fd = vec![0.0; spec.n_params];
        for (j, f) in fd.iter_mut().enumerate() {
            let mut p = params.clone();
            p[j] += h;
            let lp = loss_and_gradients(&spec, &p, &batch, &plan).expect("valid").0;
            p[j] -= 2.0 * h;
            let lm = loss_and_gradients(&spec, &p, &batch, &plan).expect("valid").0;
            *f = (lp - lm) / (2.0 * h);
        }
        let scale = fd.iter().fold(0.0f64, |a, x| a.max(x.abs())).max(1e-12);
        let err = g.iter().zip(&fd).fold(0.0f64, |a, (x, y)| a.max((x - y).abs()));
        worst = worst.max(err / scale);
    }
    check("parameter-shift matches finite differences", worst < 1e-5, format!("max relative error {worst:.2e}"))
}

fn readout_equivalence(rng: &mut ChaCha8Rng) -> Check {
    let mut agree = 0;
    for _ in 0..100 {
        let r = loop {
            let v = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
            if v.iter().map(|x| x * x).sum::<f64>() <= 1.0 {
                break v;
            }
        };
        let w = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
        let rule = DecisionRule::new(w, 0.0).expect("nonzero normal");
        agree += usize::from(rule.decide(&r) == rule.decide_by_rotation(&r));
    }
    check("sign rule equals rotate-then-measure", agree == 100, format!("{agree}/100 agree"))
}

/// Runs every check with a fixed seed.
pub fn run() -> Vec<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut out = Vec::new();

    let counts: Vec<usize> = [3, 4]
        .iter()
        .flat_map(|&n| ModelVariant::ALL.map(move |v| build_model(v, n).map_or(0, |s| s.n_params)))
        .collect();
    out.push(check(
        "QCNN parameter counts",
        counts == [45, 51, 63, 60, 68, 84],
        format!("{counts:?}"),
    ));
    let ccnn: Vec<(usize, usize)> = [(CcnnVariant::A, 3), (CcnnVariant::A, 4), (CcnnVariant::B, 3), (CcnnVariant::B, 4)]
        .iter()
        .map(|&(v, n)| build_ccnn(v, n).map_or((0, 1), |s| (s.n_params(), s.budget)))
        .collect();
    out.push(check(
        "CCNN parameter budgets",
        ccnn.iter().all(|(a, b)| a.abs_diff(*b) * 100 <= *b) && ccnn[0].0 == 49,
        format!("{ccnn:?}"),
    ));

    let unit = (0..20).map(|_| random_gate(&mut rng).unitarity_error()).fold(0.0, f64::max);
    out.push(check("convolution ansatz is unitary", unit < 1e-12, format!("max error {unit:.2e}")));
    out.push(simulator_vs_dense(&mut rng));
    out.push(gradient_check(&mut rng));
    out.push(readout_equivalence(&mut rng));

    let r = rpr(0.9675, 0.9694).unwrap_or(f64::NAN);
    let d = accuracy_drop(0.9824, 0.8620);
    out.push(check(
        "metrics reproduce published ratios",
        (r - 0.9980).abs() < 1e-4 && (d - 0.1204).abs() < 1e-9,
        format!("rpr {r:.5}, drop {d:.4}"),
    ));
    out
}
