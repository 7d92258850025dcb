mod common;

use aqcnn::ansatz::{build_model, conv_ansatz, gen_pooling, zx_pooling, ModelVariant};
use aqcnn::statevec::{Unitary2, Unitary4};
use common::*;
use proptest::prelude::*;
use rand::Rng;
use std::f64::consts::{FRAC_PI_2, PI};

fn on(u: &Unitary2, wire: usize) -> CMat {
    lift1(u, 2, wire)
}

fn cnot(control: usize) -> CMat {
    lift2(&Unitary4::cnot_01(), 2, control, 1 - control)
}

/// `Rz(a)`, then `Ry(b)`, then `Rz(c)` as a matrix.
fn zyz(a: f64, b: f64, c: f64) -> Unitary2 {
    Unitary2::rz(c).mul(&Unitary2::ry(b)).mul(&Unitary2::rz(a))
}

/// `|0><0| (x) u0 + |1><1| (x) u1`, control on wire 0.
fn controlled_blocks(u0: &Unitary2, u1: &Unitary2) -> CMat {
    let mut m = CMat::zeros(4, 4);
    for i in 0..2 {
        for j in 0..2 {
            m[(i, j)] = u0.0[i][j];
            m[(2 + i, 2 + j)] = u1.0[i][j];
        }
    }
    m
}

fn diff(a: &CMat, u: &Unitary4) -> f64 {
    (a - mat4(u)).iter().map(|z| z.norm()).fold(0.0, f64::max)
}

#[test]
fn convolution_matches_explicit_product() {
    let mut r = rng(11);
    for _ in 0..20 {
        let t: Vec<f64> = (0..15).map(|_| r.gen_range(-PI..PI)).collect();
        let mut m = on(&zyz(t[0], t[1], t[2]), 0);
        m = on(&zyz(t[3], t[4], t[5]), 1) * m;
        m = cnot(0) * m;
        m = on(&Unitary2::ry(t[6]), 0) * m;
        m = on(&Unitary2::rz(t[7]), 1) * m;
        m = cnot(1) * m;
        m = on(&Unitary2::ry(t[8]), 0) * m;
        m = cnot(0) * m;
        m = on(&zyz(t[9], t[10], t[11]), 0) * m;
        m = on(&zyz(t[12], t[13], t[14]), 1) * m;
        assert!(diff(&m, &conv_ansatz(&t).unwrap()) < 1e-12);
    }
}

#[test]
fn convolution_at_zero_is_swap() {
    let u = conv_ansatz(&[0.0; 15]).unwrap();
    let swap = cnot(0) * cnot(1) * cnot(0);
    assert!(diff(&swap, &u) < 1e-14);
}

#[test]
fn zx_pooling_is_block_controlled() {
    let mut r = rng(12);
    for _ in 0..20 {
        let (a, b) = (r.gen_range(-PI..PI), r.gen_range(-PI..PI));
        let oracle = controlled_blocks(&Unitary2::rx(b), &Unitary2::rz(a));
        assert!(diff(&oracle, &zx_pooling(&[a, b]).unwrap()) < 1e-12);
    }
}

#[test]
fn zx_pooling_kicks_plus_target() {
    // Control |1>, target |+>, theta = (pi, 0): target picks up Rz(pi).
    let plus = std::f64::consts::FRAC_1_SQRT_2;
    let psi = [0.0, 0.0, plus, plus].map(|x| aqcnn::statevec::C64::new(x, 0.0));
    let out = apply(&mat4(&zx_pooling(&[PI, 0.0]).unwrap()), &psi);
    let rz = Unitary2::rz(PI);
    let expect = [rz.0[0][0] * plus, rz.0[1][1] * plus];
    assert!(max_diff(&out[2..], &expect) < 1e-12);
    assert!(out[0].norm() < 1e-12 && out[1].norm() < 1e-12);
}

#[test]
fn generalized_pooling_is_block_controlled() {
    let mut r = rng(13);
    for _ in 0..20 {
        let t: Vec<f64> = (0..6).map(|_| r.gen_range(-PI..PI)).collect();
        let oracle = controlled_blocks(&zyz(t[3], t[4], t[5]), &zyz(t[0], t[1], t[2]));
        assert!(diff(&oracle, &gen_pooling(&t).unwrap()) < 1e-12);
    }
}

#[test]
fn generalized_pooling_contains_zx() {
    // Rx(b) = Rz(-pi/2) Ry(b) Rz(pi/2).
    let mut r = rng(14);
    for _ in 0..20 {
        let (a, b) = (r.gen_range(-PI..PI), r.gen_range(-PI..PI));
        let g = gen_pooling(&[a, 0.0, 0.0, FRAC_PI_2, b, -FRAC_PI_2]).unwrap();
        assert!(g.max_abs_diff(&zx_pooling(&[a, b]).unwrap()) < 1e-10);
    }
}

#[test]
fn survivor_is_last_qubit() {
    for v in ModelVariant::ALL {
        for n in [3, 4] {
            let s = build_model(v, n).unwrap();
            assert_eq!(s.survivor, (1 << n) - 1);
            assert_eq!(s.measured.len(), (1 << n) - 1);
            assert_eq!(s.layers[0].sublayer2.last(), Some(&((1 << n) - 1, 0)));
        }
    }
}

proptest! {
    #[test]
    fn ansatz_unitaries(t in prop::collection::vec(-10.0f64..10.0, 15)) {
        prop_assert!(conv_ansatz(&t).unwrap().unitarity_error() < 1e-10);
        prop_assert!(gen_pooling(&t[..6]).unwrap().unitarity_error() < 1e-10);
        prop_assert!(zx_pooling(&t[..2]).unwrap().unitarity_error() < 1e-10);
    }
}
