#![allow(dead_code)]

use std::path::Path;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use aqcnn::statevec::{Unitary2, Unitary4, C64};

pub type CMat = DMatrix<C64>;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn eye(dim: usize) -> CMat {
    CMat::identity(dim, dim)
}

pub fn mat2(u: &Unitary2) -> CMat {
    CMat::from_fn(2, 2, |i, j| u.0[i][j])
}

pub fn mat4(u: &Unitary4) -> CMat {
    CMat::from_fn(4, 4, |i, j| u.0[i][j])
}

fn swap4() -> CMat {
    let mut s = CMat::zeros(4, 4);
    for (i, j) in [(0, 0), (1, 2), (2, 1), (3, 3)] {
        s[(i, j)] = C64::new(1.0, 0.0);
    }
    s
}

/// `I_{2^q} (x) g (x) I` with `g` acting on `k` consecutive qubits from `q`.
fn embed(g: &CMat, n: usize, q: usize, k: usize) -> CMat {
    eye(1 << q).kronecker(g).kronecker(&eye(1 << (n - q - k)))
}

/// Full-register matrix of a single-qubit gate, via Kronecker products.
pub fn lift1(u: &Unitary2, n: usize, q: usize) -> CMat {
    embed(&mat2(u), n, q, 1)
}

/// Full-register matrix of a two-qubit gate on `(qa, qb)` via Kronecker
/// products and a chain of adjacent SWAPs.
pub fn lift2(u: &Unitary4, n: usize, qa: usize, qb: usize) -> CMat {
    let g = mat4(u);
    if qa > qb {
        let s = swap4();
        let flipped = &s * g * &s;
        let mut back = Unitary4::identity();
        for i in 0..4 {
            for j in 0..4 {
                back.0[i][j] = flipped[(i, j)];
            }
        }
        return lift2(&back, n, qb, qa);
    }
    let mut chain = eye(1 << n);
    for k in (qa + 1..qb).rev() {
        chain = embed(&swap4(), n, k, 2) * chain;
    }
    chain.adjoint() * embed(&g, n, qa, 2) * chain
}

pub fn apply(m: &CMat, psi: &[C64]) -> Vec<C64> {
    let v = nalgebra::DVector::from_column_slice(psi);
    (m * v).iter().copied().collect()
}

/// Dense `|0..0>` followed by `Ry(angles[i])` on every qubit.
pub fn dense_product_ry(angles: &[f64]) -> Vec<C64> {
    let n = angles.len();
    let mut m = eye(1 << n);
    for (q, &a) in angles.iter().enumerate() {
        m = lift1(&Unitary2::ry(a), n, q) * m;
    }
    let mut zero = vec![C64::new(0.0, 0.0); 1 << n];
    zero[0] = C64::new(1.0, 0.0);
    apply(&m, &zero)
}

/// Haar-ish random unitary from the QR factorisation of a complex Gaussian.
pub fn random_u4(r: &mut impl Rng) -> Unitary4 {
    let g = CMat::from_fn(4, 4, |_, _| C64::new(gauss(r), gauss(r)));
    let q = g.qr().q();
    let mut u = Unitary4::identity();
    for i in 0..4 {
        for j in 0..4 {
            u.0[i][j] = q[(i, j)];
        }
    }
    u
}

pub fn random_u2(r: &mut impl Rng) -> Unitary2 {
    let g = CMat::from_fn(2, 2, |_, _| C64::new(gauss(r), gauss(r)));
    let q = g.qr().q();
    Unitary2([[q[(0, 0)], q[(0, 1)]], [q[(1, 0)], q[(1, 1)]]])
}

pub fn gauss(r: &mut impl Rng) -> f64 {
    let u1: f64 = r.gen_range(f64::EPSILON..1.0);
    let u2: f64 = r.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

pub fn max_diff(a: &[C64], b: &[C64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

fn write_images(path: &Path, images: &[Vec<u8>], side: usize) {
    let mut buf = vec![0, 0, 8, 3];
    for v in [images.len() as u32, side as u32, side as u32] {
        buf.extend_from_slice(&v.to_be_bytes());
    }
    for img in images {
        buf.extend_from_slice(img);
    }
    std::fs::write(path, buf).unwrap();
}

fn write_labels(path: &Path, labels: &[u8]) {
    let mut buf = vec![0, 0, 8, 1];
    buf.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    buf.extend_from_slice(labels);
    std::fs::write(path, buf).unwrap();
}

/// Writes small MNIST-shaped IDX files for `mnist` and `fashion` under
/// `root`: each class is a noisy blob at its own position on a 8x8 grid.
pub fn synthetic_data(root: &Path, per_class_train: usize, per_class_test: usize) {
    let side = 8;
    for (d, name) in ["mnist", "fashion"].iter().enumerate() {
        let dir = root.join(name);
        std::fs::create_dir_all(&dir).unwrap();
        let mut r = rng(100 + d as u64);
        for (stem, per_class) in [("train", per_class_train), ("t10k", per_class_test)] {
            let mut images = Vec::new();
            let mut labels = Vec::new();
            for i in 0..10 * per_class {
                let class = (i % 10) as u8;
                let (cy, cx) = ((class as usize * 3) % side, (class as usize * 5 + d) % side);
                let img: Vec<u8> = (0..side * side)
                    .map(|p| {
                        let (y, x) = (p / side, p % side);
                        let dist = (y as f64 - cy as f64).powi(2) + (x as f64 - cx as f64).powi(2);
                        let v = 220.0 * (-dist / 4.0).exp() + r.gen_range(0.0..35.0);
                        v.min(255.0) as u8
                    })
                    .collect();
                images.push(img);
                labels.push(class);
            }
            write_images(&dir.join(format!("{stem}-images-idx3-ubyte")), &images, side);
            write_labels(&dir.join(format!("{stem}-labels-idx1-ubyte")), &labels);
        }
    }
}

/// Central finite-difference gradient of one example's loss with step `h`.
/// Each perturbed circuit restarts from the cached state just before the
/// first gate that uses the perturbed parameter.
pub fn qcnn_fd_gradient(spec: &aqcnn::ansatz::ModelSpec, params: &[f64], ex: &aqcnn::train::Example, h: f64) -> Vec<f64> {
    use aqcnn::statevec::StateVector;
    let first: Vec<usize> = (0..spec.n_params)
        .map(|j| {
            spec.gates
                .iter()
                .position(|g| (g.param_offset..g.param_offset + spec.ansatz_for(g).n_params()).contains(&j))
                .expect("every parameter is used")
        })
        .collect();
    let base = spec.gate_unitaries(params);
    let mut prefixes: std::collections::BTreeMap<usize, StateVector> = std::collections::BTreeMap::new();
    let mut state = StateVector::product_ry(&ex.features).unwrap();
    for (k, (g, u)) in spec.gates.iter().zip(&base).enumerate() {
        if first.contains(&k) {
            prefixes.insert(k, state.clone());
        }
        state.apply_two(g.qubits.0, g.qubits.1, u).unwrap();
    }
    let loss_from = |k: usize, p: &[f64]| {
        let us = spec.gate_unitaries(p);
        let mut s = prefixes[&k].clone();
        for (g, u) in spec.gates[k..].iter().zip(&us[k..]) {
            s.apply_two(g.qubits.0, g.qubits.1, u).unwrap();
        }
        aqcnn::train::bce_loss(&s.marginals_p0(&spec.measured), &ex.target).unwrap()
    };
    use rayon::prelude::*;
    (0..spec.n_params)
        .into_par_iter()
        .map(|j| {
            let mut p = params.to_vec();
            p[j] += h;
            let lp = loss_from(first[j], &p);
            p[j] -= 2.0 * h;
            let lm = loss_from(first[j], &p);
            (lp - lm) / (2.0 * h)
        })
        .collect()
}

/// Worst relative error (max abs difference over max |fd|) between the
/// analytic gradient and central finite differences with step `1e-4`,
/// over `configs` random (params, example) draws.
pub fn qcnn_fd_error(spec: &aqcnn::ansatz::ModelSpec, configs: usize, seed: u64) -> f64 {
    use aqcnn::train::{loss_and_gradients, Example, FreezePlan, TargetBits};
    let mut r = rng(seed);
    let plan = FreezePlan::all_trainable(spec.n_params);
    let mut worst: f64 = 0.0;
    for _ in 0..configs {
        let params: Vec<f64> = (0..spec.n_params).map(|_| r.gen_range(-std::f64::consts::PI..std::f64::consts::PI)).collect();
        let ex = Example {
            features: (0..spec.num_qubits).map(|_| r.gen_range(0.0..std::f64::consts::PI)).collect(),
            target: TargetBits::for_label(r.gen_range(0..2), spec.measured.len()),
        };
        let (_, g) = loss_and_gradients(spec, &params, std::slice::from_ref(&ex), &plan).unwrap();
        let fd = qcnn_fd_gradient(spec, &params, &ex, 1e-4);
        let scale = fd.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1e-12);
        let err = g.iter().zip(&fd).fold(0.0f64, |a, (x, y)| a.max((x - y).abs()));
        worst = worst.max(err / scale);
    }
    worst
}

/// Independent forward pass of a fully connected tanh stack (layer `l`
/// stores `out x in` row-major weights, then biases); returns every layer's
/// activations with the raw logit last.
pub fn mlp_forward(widths: &[usize], params: &[f64], x: &[f64]) -> Vec<Vec<f64>> {
    let mut acts = vec![x.to_vec()];
    let mut off = 0;
    for (l, w) in widths.windows(2).enumerate() {
        let z: Vec<f64> = (0..w[1])
            .map(|o| params[off + w[0] * w[1] + o] + (0..w[0]).map(|i| params[off + o * w[0] + i] * acts[l][i]).sum::<f64>())
            .collect();
        off += w[0] * w[1] + w[1];
        acts.push(if l + 2 == widths.len() { z } else { z.into_iter().map(f64::tanh).collect() });
    }
    acts
}

fn mlp_loss(z: f64, y: u8) -> f64 {
    let p = 1.0 / (1.0 + (-z).exp());
    -(if y == 1 { p.log2() } else { (1.0 - p).log2() })
}

/// Central finite differences of the classical loss. A perturbed weight
/// only moves one pre-activation, so each evaluation restarts from that
/// neuron's layer.
pub fn mlp_fd_gradient(widths: &[usize], params: &[f64], x: &[f64], y: u8, h: f64) -> Vec<f64> {
    let acts = mlp_forward(widths, params, x);
    let last = widths.len() - 2;
    let tail = |l: usize, o: usize, dz: f64| -> f64 {
        let off: usize = widths.windows(2).take(l).map(|w| w[0] * w[1] + w[1]).sum();
        let (nin, nout) = (widths[l], widths[l + 1]);
        let z = params[off + nin * nout + o] + (0..nin).map(|i| params[off + o * nin + i] * acts[l][i]).sum::<f64>() + dz;
        if l == last {
            return mlp_loss(z, y);
        }
        let mut a = acts[l + 1].clone();
        a[o] = z.tanh();
        let mut off2 = off + nin * nout + nout;
        for k in l + 1..=last {
            let (ni, no) = (widths[k], widths[k + 1]);
            let zs: Vec<f64> = (0..no).map(|q| params[off2 + ni * no + q] + (0..ni).map(|i| params[off2 + q * ni + i] * a[i]).sum::<f64>()).collect();
            off2 += ni * no + no;
            a = if k == last { zs } else { zs.into_iter().map(f64::tanh).collect() };
        }
        mlp_loss(a[0], y)
    };
    let mut out = Vec::with_capacity(params.len());
    for (l, w) in widths.windows(2).enumerate() {
        let (nin, nout) = (w[0], w[1]);
        for o in 0..nout {
            for i in 0..nin {
                let d = h * acts[l][i];
                out.push((tail(l, o, d) - tail(l, o, -d)) / (2.0 * h));
            }
        }
        for o in 0..nout {
            out.push((tail(l, o, h) - tail(l, o, -h)) / (2.0 * h));
        }
    }
    out
}

/// Same check for a classical baseline network.
pub fn ccnn_fd_error(spec: &aqcnn::baseline::CcnnSpec, configs: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..configs {
        let params: Vec<f64> = (0..spec.n_params()).map(|_| r.gen_range(-0.5..0.5)).collect();
        let x: Vec<f64> = (0..spec.input_dim()).map(|_| r.gen_range(0.0..std::f64::consts::PI)).collect();
        let y = r.gen_range(0..2u8);
        let (loss, g) = spec.loss_and_grad(&params, &x, y).unwrap();
        let z = *mlp_forward(&spec.widths, &params, &x).last().unwrap().first().unwrap();
        assert!((mlp_loss(z, y) - loss).abs() < 1e-9, "oracle forward disagrees with the library");
        let fd = mlp_fd_gradient(&spec.widths, &params, &x, y, 1e-4);
        let scale = fd.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1e-12);
        let err = g.iter().zip(&fd).fold(0.0f64, |a, (x, y)| a.max((x - y).abs()));
        worst = worst.max(err / scale);
    }
    worst
}

pub fn record(task: &str, model: &str, n: usize, m: usize, size: usize, seed: u64, acc: f64) -> aqcnn::metrics::RunRecord {
    aqcnn::metrics::RunRecord {
        schema_version: aqcnn::metrics::SCHEMA_VERSION,
        run_id: format!("{task}/{model}/n{n}/m{m}/s{size}/seed{seed}"),
        task: task.into(),
        model: model.into(),
        n,
        m,
        target_size: size,
        seed,
        accuracy: acc,
        train_accuracy: acc,
        test_size: 400,
        from_scratch: m == n,
        n_trainable: 0,
        source_cache_key: None,
        config: serde_json::Value::Null,
        readout: serde_json::Value::Null,
        params: Vec::new(),
        loss_history: vec![1.0, 0.5],
        elapsed_secs: 0.0,
    }
}
