//! Two-qubit ansatzes and QCNN model layouts.
//!
//! Every ansatz is stored as a short program of primitive operations on two
//! local wires (wire 0 is the first qubit of the pair). Each parameter enters
//! only through half-angle Pauli rotations `exp(-i c*theta P / 2)` with
//! `c` in `{1, 1/2, -1/2}`, which is what makes the two-point parameter-shift
//! rule exact (see [`crate::train`]). Controlled rotations are expanded into
//! two CNOTs and two half-angle rotations on the target.

use std::sync::LazyLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::statevec::{Axis, StateVector, Unitary2, Unitary4};

/// Parameters of the SU(4) convolution block.
pub const CONV_PARAMS: usize = 15;
pub const ZX_POOL_PARAMS: usize = 2;
pub const GEN_POOL_PARAMS: usize = 6;

/// Primitive operation inside an ansatz.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Op {
    /// `exp(-i coeff*theta[param] P / 2)` on `wire`.
    Rot {
        axis: Axis,
        wire: u8,
        param: usize,
        coeff: f64,
    },
    /// CNOT controlled by `control`, targeting the other wire.
    Cnot { control: u8 },
    X(u8),
    H(u8),
}

/// How a single rotation is altered when building a modified unitary.
#[derive(Debug, Clone, Copy)]
pub(crate) enum Tweak {
    /// Add a constant to the rotation angle.
    Shift(f64),
    /// Replace `R(phi)` by `R(phi) P`.
    AppendPauli,
}

#[derive(Debug, Clone)]
pub struct Ansatz {
    name: &'static str,
    n_params: usize,
    ops: Vec<Op>,
}

fn euler(ops: &mut Vec<Op>, wire: u8, first: usize) {
    for (k, axis) in [Axis::Z, Axis::Y, Axis::Z].into_iter().enumerate() {
        ops.push(Op::Rot {
            axis,
            wire,
            param: first + k,
            coeff: 1.0,
        });
    }
}

/// Controlled rotation (control wire 0, target wire 1) for control `|1>`.
fn controlled_rot(ops: &mut Vec<Op>, axis: Axis, param: usize) {
    // CR_P(t) = R_P(t/2) . CNOT . R_P(-t/2) . CNOT for P in {Y, Z};
    // X is handled by conjugating the target with H.
    let (inner, wrap) = match axis {
        Axis::X => (Axis::Z, true),
        other => (other, false),
    };
    if wrap {
        ops.push(Op::H(1));
    }
    ops.push(Op::Rot { axis: inner, wire: 1, param, coeff: 0.5 });
    ops.push(Op::Cnot { control: 0 });
    ops.push(Op::Rot { axis: inner, wire: 1, param, coeff: -0.5 });
    ops.push(Op::Cnot { control: 0 });
    if wrap {
        ops.push(Op::H(1));
    }
}

impl Ansatz {
    /// 15-parameter SU(4) block: general single-qubit layers around a
    /// three-CNOT entangling core.
    pub fn convolution() -> Self {
        let mut ops = Vec::new();
        euler(&mut ops, 0, 0);
        euler(&mut ops, 1, 3);
        ops.push(Op::Cnot { control: 0 });
        ops.push(Op::Rot { axis: Axis::Y, wire: 0, param: 6, coeff: 1.0 });
        ops.push(Op::Rot { axis: Axis::Z, wire: 1, param: 7, coeff: 1.0 });
        ops.push(Op::Cnot { control: 1 });
        ops.push(Op::Rot { axis: Axis::Y, wire: 0, param: 8, coeff: 1.0 });
        ops.push(Op::Cnot { control: 0 });
        euler(&mut ops, 0, 9);
        euler(&mut ops, 1, 12);
        Ansatz { name: "conv-su4", n_params: CONV_PARAMS, ops }
    }

    /// Controlled-`Rz(t0)` on control `|1>`, then controlled-`Rx(t1)` on
    /// control `|0>`.
    pub fn zx_pooling() -> Self {
        let mut ops = Vec::new();
        controlled_rot(&mut ops, Axis::Z, 0);
        ops.push(Op::X(0));
        controlled_rot(&mut ops, Axis::X, 1);
        ops.push(Op::X(0));
        Ansatz { name: "pool-zx", n_params: ZX_POOL_PARAMS, ops }
    }

    /// Controlled-`U(t0,t1,t2)` on control `|1>`, then controlled-`U(t3,t4,t5)`
    /// on control `|0>`, with `U(a,b,c)` the circuit `Rz(a); Ry(b); Rz(c)`.
    pub fn generalized_pooling() -> Self {
        let mut ops = Vec::new();
        for (k, axis) in [Axis::Z, Axis::Y, Axis::Z].into_iter().enumerate() {
            controlled_rot(&mut ops, axis, k);
        }
        ops.push(Op::X(0));
        for (k, axis) in [Axis::Z, Axis::Y, Axis::Z].into_iter().enumerate() {
            controlled_rot(&mut ops, axis, 3 + k);
        }
        ops.push(Op::X(0));
        Ansatz { name: "pool-generalized", n_params: GEN_POOL_PARAMS, ops }
    }

    pub fn name(&self) -> &'static str {
        self.name
    }

    pub fn n_params(&self) -> usize {
        self.n_params
    }

    pub fn ops(&self) -> &[Op] {
        &self.ops
    }

    /// `(op index, parameter, coefficient)` for every parameterised rotation.
    pub fn occurrences(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.ops.iter().enumerate().filter_map(|(k, op)| match *op {
            Op::Rot { param, coeff, .. } => Some((k, param, coeff)),
            _ => None,
        })
    }

    pub fn unitary(&self, theta: &[f64]) -> Result<Unitary4> {
        if theta.len() != self.n_params {
            return Err(Error::invalid(format!(
                "{} takes {} parameters, got {}",
                self.name,
                self.n_params,
                theta.len()
            )));
        }
        Ok(self.build(theta, None))
    }

    pub(crate) fn build(&self, theta: &[f64], tweak: Option<(usize, Tweak)>) -> Unitary4 {
        let mut u = Unitary4::identity();
        for (k, op) in self.ops.iter().enumerate() {
            u = match *op {
                Op::Rot { axis, wire, param, coeff } => {
                    let mut angle = coeff * theta[param];
                    let mut pauli = false;
                    match tweak {
                        Some((at, Tweak::Shift(s))) if at == k => angle += s,
                        Some((at, Tweak::AppendPauli)) if at == k => pauli = true,
                        _ => {}
                    }
                    let mut g = Unitary2::rotation(axis, angle);
                    if pauli {
                        g = g.mul(&Unitary2::pauli(axis));
                    }
                    u.then_single(wire, &g)
                }
                Op::Cnot { control: 0 } => Unitary4::cnot_01().mul(&u),
                Op::Cnot { .. } => Unitary4::cnot_10().mul(&u),
                Op::X(w) => u.then_single(w, &Unitary2::x()),
                Op::H(w) => u.then_single(w, &Unitary2::hadamard()),
            };
        }
        u
    }
}

pub static CONV: LazyLock<Ansatz> = LazyLock::new(Ansatz::convolution);
pub static ZX_POOL: LazyLock<Ansatz> = LazyLock::new(Ansatz::zx_pooling);
pub static GEN_POOL: LazyLock<Ansatz> = LazyLock::new(Ansatz::generalized_pooling);

pub fn conv_ansatz(theta: &[f64]) -> Result<Unitary4> {
    CONV.unitary(theta)
}

pub fn zx_pooling(theta: &[f64]) -> Result<Unitary4> {
    ZX_POOL.unitary(theta)
}

pub fn gen_pooling(theta: &[f64]) -> Result<Unitary4> {
    GEN_POOL.unitary(theta)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ModelVariant {
    /// No pooling gates; controls are still dropped from the active set.
    #[serde(rename = "qcnn-n")]
    QcnnN,
    /// ZX pooling.
    #[serde(rename = "qcnn-z")]
    QcnnZ,
    /// Generalized pooling.
    #[serde(rename = "qcnn-g")]
    QcnnG,
}

impl ModelVariant {
    pub const ALL: [ModelVariant; 3] = [ModelVariant::QcnnN, ModelVariant::QcnnZ, ModelVariant::QcnnG];

    pub fn pooling(self) -> Option<&'static Ansatz> {
        match self {
            ModelVariant::QcnnN => None,
            ModelVariant::QcnnZ => Some(&ZX_POOL),
            ModelVariant::QcnnG => Some(&GEN_POOL),
        }
    }

    pub fn pool_width(self) -> usize {
        self.pooling().map_or(0, Ansatz::n_params)
    }

    pub fn layer_width(self) -> usize {
        CONV_PARAMS + self.pool_width()
    }

    pub fn name(self) -> &'static str {
        match self {
            ModelVariant::QcnnN => "QCNN-N",
            ModelVariant::QcnnZ => "QCNN-Z",
            ModelVariant::QcnnG => "QCNN-G",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GateRole {
    ConvFirst,
    ConvSecond,
    Pool,
}

/// One placed two-qubit gate.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GateInstance {
    /// 0-based layer index.
    pub layer: usize,
    pub role: GateRole,
    /// `(first, second)`; for pooling `(control, target)`.
    pub qubits: (usize, usize),
    pub param_offset: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    /// Active qubits entering the layer, in ring order.
    pub active: Vec<usize>,
    pub sublayer1: Vec<(usize, usize)>,
    pub sublayer2: Vec<(usize, usize)>,
    /// `(control, target)`; the control leaves the active set.
    pub pooling: Vec<(usize, usize)>,
    /// Half-open range of this layer's parameters in the flat vector.
    pub param_start: usize,
    pub param_end: usize,
}

/// Complete wiring of one QCNN.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub variant: ModelVariant,
    pub n_layers: usize,
    pub num_qubits: usize,
    pub layers: Vec<LayerSpec>,
    pub survivor: usize,
    /// Every qubit except the survivor, ascending.
    pub measured: Vec<usize>,
    pub n_params: usize,
    /// Gate schedule in application order.
    pub gates: Vec<GateInstance>,
    /// False for the per-instance layout produced by [`ModelSpec::unshared`].
    pub shared: bool,
}

/// Flat vector of circuit angles in radians.
pub type ParamVector = Vec<f64>;

/// QCNN layout for `n` in `{3, 4}` (8 or 16 qubits).
pub fn build_model(variant: ModelVariant, n: usize) -> Result<ModelSpec> {
    if !(3..=4).contains(&n) {
        return Err(Error::invalid(format!("n must be 3 or 4, got {n}")));
    }
    ModelSpec::with_layers(variant, n)
}

impl ModelSpec {
    /// Same construction as [`build_model`] but for any `n` in `1..=4`;
    /// the small instances are handy for dense-matrix cross-checks.
    pub fn with_layers(variant: ModelVariant, n: usize) -> Result<ModelSpec> {
        if !(1..=4).contains(&n) {
            return Err(Error::invalid(format!("n must be in 1..=4, got {n}")));
        }
        let num_qubits = 1usize << n;
        let width = variant.layer_width();
        let mut active: Vec<usize> = (0..num_qubits).collect();
        let mut layers = Vec::with_capacity(n);
        let mut gates = Vec::new();
        for layer in 0..n {
            let len = active.len();
            let sublayer1: Vec<_> = (0..len / 2).map(|i| (active[2 * i], active[2 * i + 1])).collect();
            let sublayer2: Vec<_> = (0..len / 2)
                .map(|i| (active[2 * i + 1], active[(2 * i + 2) % len]))
                .collect();
            let pooling = sublayer1.clone();
            let start = layer * width;
            for &q in &sublayer1 {
                gates.push(GateInstance { layer, role: GateRole::ConvFirst, qubits: q, param_offset: start });
            }
            for &q in &sublayer2 {
                gates.push(GateInstance { layer, role: GateRole::ConvSecond, qubits: q, param_offset: start });
            }
            if variant.pooling().is_some() {
                for &q in &pooling {
                    gates.push(GateInstance {
                        layer,
                        role: GateRole::Pool,
                        qubits: q,
                        param_offset: start + CONV_PARAMS,
                    });
                }
            }
            let next: Vec<usize> = pooling.iter().map(|&(_, t)| t).collect();
            layers.push(LayerSpec {
                active: std::mem::replace(&mut active, next),
                sublayer1,
                sublayer2,
                pooling,
                param_start: start,
                param_end: start + width,
            });
        }
        let survivor = active[0];
        let measured = (0..num_qubits).filter(|&q| q != survivor).collect();
        Ok(ModelSpec {
            variant,
            n_layers: n,
            num_qubits,
            layers,
            survivor,
            measured,
            n_params: n * width,
            gates,
            shared: true,
        })
    }

    pub fn ansatz_for(&self, gate: &GateInstance) -> &'static Ansatz {
        match gate.role {
            GateRole::Pool => self.variant.pooling().expect("pool gate in a no-pooling model"),
            _ => &CONV,
        }
    }

    /// Layer owning parameter `j`.
    pub fn layer_of_param(&self, j: usize) -> usize {
        self.layers
            .iter()
            .position(|l| (l.param_start..l.param_end).contains(&j))
            .expect("parameter index out of range")
    }

    /// Layout with an independent parameter block for every gate instance.
    pub fn unshared(&self) -> ModelSpec {
        let mut out = self.clone();
        let mut next = 0;
        for (k, layer) in out.layers.iter_mut().enumerate() {
            layer.param_start = next;
            for gate in out.gates.iter_mut().filter(|g| g.layer == k) {
                gate.param_offset = next;
                next += match gate.role {
                    GateRole::Pool => self.variant.pool_width(),
                    _ => CONV_PARAMS,
                };
            }
            layer.param_end = next;
        }
        out.n_params = next;
        out.shared = false;
        out
    }

    /// Maps parameters of this (shared) layout onto `unshared`.
    pub fn expand_params(&self, unshared: &ModelSpec, params: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; unshared.n_params];
        for (src, dst) in self.gates.iter().zip(&unshared.gates) {
            let w = self.ansatz_for(src).n_params();
            out[dst.param_offset..dst.param_offset + w]
                .copy_from_slice(&params[src.param_offset..src.param_offset + w]);
        }
        out
    }

    pub fn check_params(&self, params: &[f64]) -> Result<()> {
        if params.len() != self.n_params {
            return Err(Error::invalid(format!(
                "model has {} parameters, got {}",
                self.n_params,
                params.len()
            )));
        }
        Ok(())
    }

    pub fn check_features(&self, features: &[f64]) -> Result<()> {
        if features.len() != self.num_qubits {
            return Err(Error::invalid(format!(
                "model takes {} features, got {}",
                self.num_qubits,
                features.len()
            )));
        }
        if let Some(x) = features.iter().find(|x| !(0.0..=std::f64::consts::PI).contains(*x)) {
            return Err(Error::invalid(format!("feature {x} outside [0, pi]")));
        }
        Ok(())
    }

    /// Unitary of every gate in schedule order.
    pub fn gate_unitaries(&self, params: &[f64]) -> Vec<Unitary4> {
        self.gates
            .iter()
            .map(|g| {
                let a = self.ansatz_for(g);
                a.build(&params[g.param_offset..g.param_offset + a.n_params()], None)
            })
            .collect()
    }

    /// Encodes `features` and runs the full circuit.
    pub fn forward(&self, params: &[f64], features: &[f64]) -> Result<StateVector> {
        self.check_params(params)?;
        self.check_features(features)?;
        let mut state = StateVector::product_ry(features)?;
        for (g, u) in self.gates.iter().zip(self.gate_unitaries(params)) {
            state.apply_two_unchecked(g.qubits.0, g.qubits.1, &u);
        }
        Ok(state)
    }

    /// Structured text form (JSON) for run provenance.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("ModelSpec serializes")
    }
}

/// Free-function form of [`ModelSpec::forward`].
pub fn forward(spec: &ModelSpec, params: &[f64], features: &[f64]) -> Result<StateVector> {
    spec.forward(params, features)
}
