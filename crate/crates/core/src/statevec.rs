//! Dense statevector simulation.
//!
//! Amplitudes are stored in a flat vector of length `2^n`. Qubit `0` is the
//! most significant bit of the basis index, so for three qubits the index of
//! `|q0 q1 q2>` is `4*q0 + 2*q1 + q2`.
//!
//! Two-qubit gates take a [`Unitary4`] whose rows and columns are ordered
//! `|a b>` with `a` the first qubit argument: index `2*a + b`.
//!
//! Rotations use the half-angle convention `R_P(theta) = exp(-i theta P / 2)`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tol;

pub type C64 = Complex64;

const ZERO: C64 = C64::new(0.0, 0.0);
const ONE: C64 = C64::new(1.0, 0.0);
const I: C64 = C64::new(0.0, 1.0);

/// Largest register the simulator accepts.
pub const MAX_QUBITS: usize = 16;

/// Pauli axis of a rotation gate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Axis {
    X,
    Y,
    Z,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Unitary2(pub [[C64; 2]; 2]);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Unitary4(pub [[C64; 4]; 4]);

impl Unitary2 {
    pub fn identity() -> Self {
        Unitary2([[ONE, ZERO], [ZERO, ONE]])
    }

    pub fn pauli(axis: Axis) -> Self {
        match axis {
            Axis::X => Unitary2([[ZERO, ONE], [ONE, ZERO]]),
            Axis::Y => Unitary2([[ZERO, -I], [I, ZERO]]),
            Axis::Z => Unitary2([[ONE, ZERO], [ZERO, -ONE]]),
        }
    }

    pub fn x() -> Self {
        Self::pauli(Axis::X)
    }

    pub fn hadamard() -> Self {
        let h = C64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
        Unitary2([[h, h], [h, -h]])
    }

    /// `exp(-i theta P / 2)` for the Pauli `P` along `axis`.
    pub fn rotation(axis: Axis, theta: f64) -> Self {
        let (s, c) = (theta / 2.0).sin_cos();
        match axis {
            Axis::X => Unitary2([
                [C64::new(c, 0.0), C64::new(0.0, -s)],
                [C64::new(0.0, -s), C64::new(c, 0.0)],
            ]),
            Axis::Y => Unitary2([
                [C64::new(c, 0.0), C64::new(-s, 0.0)],
                [C64::new(s, 0.0), C64::new(c, 0.0)],
            ]),
            Axis::Z => Unitary2([
                [C64::new(c, -s), ZERO],
                [ZERO, C64::new(c, s)],
            ]),
        }
    }

    pub fn rx(theta: f64) -> Self {
        Self::rotation(Axis::X, theta)
    }

    pub fn ry(theta: f64) -> Self {
        Self::rotation(Axis::Y, theta)
    }

    pub fn rz(theta: f64) -> Self {
        Self::rotation(Axis::Z, theta)
    }

    /// Rotation of the Bloch sphere by `angle` about the unit vector `axis`:
    /// `cos(angle/2) I - i sin(angle/2) (axis . sigma)`.
    pub fn axis_angle(axis: [f64; 3], angle: f64) -> Self {
        let (s, c) = (angle / 2.0).sin_cos();
        let [nx, ny, nz] = axis;
        Unitary2([
            [C64::new(c, -s * nz), C64::new(-s * ny, -s * nx)],
            [C64::new(s * ny, -s * nx), C64::new(c, s * nz)],
        ])
    }

    /// Matrix product `self * rhs` (apply `rhs` first).
    pub fn mul(&self, rhs: &Unitary2) -> Unitary2 {
        let mut out = [[ZERO; 2]; 2];
        for (r, row) in out.iter_mut().enumerate() {
            for (c, cell) in row.iter_mut().enumerate() {
                *cell = self.0[r][0] * rhs.0[0][c] + self.0[r][1] * rhs.0[1][c];
            }
        }
        Unitary2(out)
    }

    pub fn dagger(&self) -> Unitary2 {
        let m = &self.0;
        Unitary2([[m[0][0].conj(), m[1][0].conj()], [m[0][1].conj(), m[1][1].conj()]])
    }

    /// `self (x) rhs`, with `self` acting on the first (more significant) qubit.
    pub fn kron(&self, rhs: &Unitary2) -> Unitary4 {
        let mut out = [[ZERO; 4]; 4];
        for a in 0..2 {
            for b in 0..2 {
                for c in 0..2 {
                    for d in 0..2 {
                        out[2 * a + b][2 * c + d] = self.0[a][c] * rhs.0[b][d];
                    }
                }
            }
        }
        Unitary4(out)
    }

    /// Largest entry of `|U^dagger U - I|`.
    pub fn unitarity_error(&self) -> f64 {
        let p = self.dagger().mul(self);
        let mut worst: f64 = 0.0;
        for r in 0..2 {
            for c in 0..2 {
                let target = if r == c { ONE } else { ZERO };
                worst = worst.max((p.0[r][c] - target).norm());
            }
        }
        worst
    }

    /// Conjugates a Bloch vector: returns the Bloch vector of `U rho U^dagger`.
    pub fn rotate_bloch(&self, r: [f64; 3]) -> [f64; 3] {
        // rho = (I + r.sigma)/2, returned via the expectation values of U rho U^dagger
        let half = C64::new(0.5, 0.0);
        let rho = [
            [half * (1.0 + r[2]), C64::new(r[0], -r[1]) * 0.5],
            [C64::new(r[0], r[1]) * 0.5, half * (1.0 - r[2])],
        ];
        let u = Unitary2(rho);
        let out = self.mul(&u).mul(&self.dagger());
        [
            2.0 * out.0[0][1].re,
            -2.0 * out.0[0][1].im,
            (out.0[0][0] - out.0[1][1]).re,
        ]
    }
}

impl Unitary4 {
    pub fn identity() -> Self {
        let mut out = [[ZERO; 4]; 4];
        for (k, row) in out.iter_mut().enumerate() {
            row[k] = ONE;
        }
        Unitary4(out)
    }

    /// CNOT with the first qubit as control.
    pub fn cnot_01() -> Self {
        let mut out = [[ZERO; 4]; 4];
        out[0][0] = ONE;
        out[1][1] = ONE;
        out[2][3] = ONE;
        out[3][2] = ONE;
        Unitary4(out)
    }

    /// CNOT with the second qubit as control.
    pub fn cnot_10() -> Self {
        let mut out = [[ZERO; 4]; 4];
        out[0][0] = ONE;
        out[3][1] = ONE;
        out[2][2] = ONE;
        out[1][3] = ONE;
        Unitary4(out)
    }

    pub fn mul(&self, rhs: &Unitary4) -> Unitary4 {
        let mut out = [[ZERO; 4]; 4];
        for (r, row) in out.iter_mut().enumerate() {
            for (c, cell) in row.iter_mut().enumerate() {
                let mut acc = ZERO;
                for k in 0..4 {
                    acc += self.0[r][k] * rhs.0[k][c];
                }
                *cell = acc;
            }
        }
        Unitary4(out)
    }

    pub fn dagger(&self) -> Unitary4 {
        let mut out = [[ZERO; 4]; 4];
        for (r, row) in out.iter_mut().enumerate() {
            for (c, cell) in row.iter_mut().enumerate() {
                *cell = self.0[c][r].conj();
            }
        }
        Unitary4(out)
    }

    pub fn unitarity_error(&self) -> f64 {
        let p = self.dagger().mul(self);
        let mut worst: f64 = 0.0;
        for r in 0..4 {
            for c in 0..4 {
                let target = if r == c { ONE } else { ZERO };
                worst = worst.max((p.0[r][c] - target).norm());
            }
        }
        worst
    }

    /// Largest entrywise difference.
    pub fn max_abs_diff(&self, other: &Unitary4) -> f64 {
        let mut worst: f64 = 0.0;
        for r in 0..4 {
            for c in 0..4 {
                worst = worst.max((self.0[r][c] - other.0[r][c]).norm());
            }
        }
        worst
    }

    /// Left-multiplies a single-qubit gate acting on local wire `wire` (0 or 1).
    pub(crate) fn then_single(&self, wire: u8, u: &Unitary2) -> Unitary4 {
        let lifted = if wire == 0 {
            u.kron(&Unitary2::identity())
        } else {
            Unitary2::identity().kron(u)
        };
        lifted.mul(self)
    }
}

/// Dense `2^n` amplitude vector.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    num_qubits: usize,
    amps: Vec<C64>,
}

fn check_qubit_count(num_qubits: usize) -> Result<()> {
    if num_qubits == 0 || num_qubits > MAX_QUBITS {
        return Err(Error::invalid(format!(
            "num_qubits must be in 1..={MAX_QUBITS}, got {num_qubits}"
        )));
    }
    Ok(())
}

impl StateVector {
    /// `|0...0>` on `num_qubits` qubits.
    pub fn new(num_qubits: usize) -> Result<Self> {
        check_qubit_count(num_qubits)?;
        let mut amps = vec![ZERO; 1 << num_qubits];
        amps[0] = ONE;
        Ok(StateVector { num_qubits, amps })
    }

    pub fn from_amplitudes(num_qubits: usize, amps: Vec<C64>) -> Result<Self> {
        check_qubit_count(num_qubits)?;
        if amps.len() != 1 << num_qubits {
            return Err(Error::invalid(format!(
                "expected {} amplitudes for {num_qubits} qubits, got {}",
                1usize << num_qubits,
                amps.len()
            )));
        }
        let norm: f64 = amps.iter().map(|a| a.norm_sqr()).sum();
        if (norm - 1.0).abs() > tol::NORM {
            return Err(Error::invalid(format!("amplitudes have squared norm {norm}")));
        }
        Ok(StateVector { num_qubits, amps })
    }

    /// The product state `Ry(angles[0])|0> (x) Ry(angles[1])|0> (x) ...`.
    pub fn product_ry(angles: &[f64]) -> Result<Self> {
        check_qubit_count(angles.len())?;
        let n = angles.len();
        let mut amps = vec![ZERO; 1 << n];
        amps[0] = ONE;
        let mut filled = 1usize;
        // grow the tensor product from the least significant qubit upwards
        for &theta in angles.iter().rev() {
            let (s, c) = (theta / 2.0).sin_cos();
            for k in 0..filled {
                let a = amps[k];
                amps[k] = a * c;
                amps[k + filled] = a * s;
            }
            filled <<= 1;
        }
        Ok(StateVector { num_qubits: n, amps })
    }

    pub fn num_qubits(&self) -> usize {
        self.num_qubits
    }

    pub fn amplitudes(&self) -> &[C64] {
        &self.amps
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum()
    }

    fn mask(&self, qubit: usize) -> usize {
        1 << (self.num_qubits - 1 - qubit)
    }

    fn check_qubit(&self, qubit: usize) -> Result<()> {
        if qubit >= self.num_qubits {
            return Err(Error::invalid(format!(
                "qubit {qubit} out of range for {} qubits",
                self.num_qubits
            )));
        }
        Ok(())
    }

    pub fn apply_single(&mut self, qubit: usize, u: &Unitary2) -> Result<()> {
        self.check_qubit(qubit)?;
        if u.unitarity_error() > tol::UNITARY_CHECK {
            return Err(Error::invalid("gate is not unitary"));
        }
        self.apply_single_unchecked(qubit, u);
        Ok(())
    }

    pub(crate) fn apply_single_unchecked(&mut self, qubit: usize, u: &Unitary2) {
        let m = self.mask(qubit);
        let [[u00, u01], [u10, u11]] = u.0;
        for base in 0..self.amps.len() {
            if base & m != 0 {
                continue;
            }
            let a0 = self.amps[base];
            let a1 = self.amps[base | m];
            self.amps[base] = u00 * a0 + u01 * a1;
            self.amps[base | m] = u10 * a0 + u11 * a1;
        }
    }

    pub fn apply_two(&mut self, q_a: usize, q_b: usize, u: &Unitary4) -> Result<()> {
        self.check_qubit(q_a)?;
        self.check_qubit(q_b)?;
        if q_a == q_b {
            return Err(Error::invalid(format!("two-qubit gate on repeated qubit {q_a}")));
        }
        if u.unitarity_error() > tol::UNITARY_CHECK {
            return Err(Error::invalid("gate is not unitary"));
        }
        self.apply_two_unchecked(q_a, q_b, u);
        Ok(())
    }

    pub(crate) fn apply_two_unchecked(&mut self, q_a: usize, q_b: usize, u: &Unitary4) {
        apply_two_raw(&mut self.amps, self.num_qubits, q_a, q_b, u);
    }

    /// Probability of reading `|0>` on `qubit`.
    pub fn marginal_p0(&self, qubit: usize) -> Result<f64> {
        self.check_qubit(qubit)?;
        let m = self.mask(qubit);
        let p: f64 = self
            .amps
            .iter()
            .enumerate()
            .filter(|(k, _)| k & m == 0)
            .map(|(_, a)| a.norm_sqr())
            .sum();
        Ok(p.clamp(0.0, 1.0))
    }

    /// `marginal_p0` for every listed qubit in one pass over the amplitudes.
    pub fn marginals_p0(&self, qubits: &[usize]) -> Vec<f64> {
        marginals_p0_raw(&self.amps, self.num_qubits, qubits)
    }

    /// `(<X>, <Y>, <Z>)` of the reduced state of `qubit`.
    pub fn bloch_vector(&self, qubit: usize) -> Result<[f64; 3]> {
        self.check_qubit(qubit)?;
        let m = self.mask(qubit);
        let mut rho00 = 0.0;
        let mut rho11 = 0.0;
        let mut rho01 = ZERO;
        for base in 0..self.amps.len() {
            if base & m != 0 {
                continue;
            }
            let a0 = self.amps[base];
            let a1 = self.amps[base | m];
            rho00 += a0.norm_sqr();
            rho11 += a1.norm_sqr();
            rho01 += a0 * a1.conj();
        }
        Ok([2.0 * rho01.re, -2.0 * rho01.im, rho00 - rho11])
    }
}

/// Calls `f(i00)` for every basis index with zeros at bit positions `lo < hi`.
#[inline(always)]
fn for_each_base(len: usize, lo: u32, hi: u32, mut f: impl FnMut(usize)) {
    let (sl, sh) = (1usize << lo, 1usize << hi);
    for h in (0..len).step_by(2 * sh) {
        for l in (h..h + sh).step_by(2 * sl) {
            for i in l..l + sl {
                f(i);
            }
        }
    }
}

pub(crate) fn apply_two_raw(amps: &mut [C64], num_qubits: usize, q_a: usize, q_b: usize, u: &Unitary4) {
    let pa = (num_qubits - 1 - q_a) as u32;
    let pb = (num_qubits - 1 - q_b) as u32;
    let (lo, hi) = if pa < pb { (pa, pb) } else { (pb, pa) };
    let ma = 1usize << pa;
    let mb = 1usize << pb;
    let m = &u.0;
    for_each_base(amps.len(), lo, hi, |i00| {
        let i01 = i00 | mb;
        let i10 = i00 | ma;
        let i11 = i10 | mb;
        let a = [amps[i00], amps[i01], amps[i10], amps[i11]];
        let row = |r: usize| m[r][0] * a[0] + m[r][1] * a[1] + m[r][2] * a[2] + m[r][3] * a[3];
        amps[i00] = row(0);
        amps[i01] = row(1);
        amps[i10] = row(2);
        amps[i11] = row(3);
    });
}

/// `C[b][a] = sum_r conj(lam[r, a]) phi[r, b]` over the local basis of
/// `(q_a, q_b)`, so that `<lam| U |phi> = sum_ab U[a][b] C[b][a]` for a gate
/// `U` acting on that pair.
pub(crate) fn cross_matrix_raw(lam: &[C64], phi: &[C64], num_qubits: usize, q_a: usize, q_b: usize) -> [[C64; 4]; 4] {
    let pa = (num_qubits - 1 - q_a) as u32;
    let pb = (num_qubits - 1 - q_b) as u32;
    let (lo, hi) = if pa < pb { (pa, pb) } else { (pb, pa) };
    let ma = 1usize << pa;
    let mb = 1usize << pb;
    let mut c = [[ZERO; 4]; 4];
    for_each_base(lam.len(), lo, hi, |i00| {
        let idx = [i00, i00 | mb, i00 | ma, i00 | ma | mb];
        let l = idx.map(|i| lam[i].conj());
        let f = idx.map(|i| phi[i]);
        for (row, fb) in c.iter_mut().zip(f) {
            for (entry, la) in row.iter_mut().zip(l) {
                *entry += la * fb;
            }
        }
    });
    c
}

pub(crate) fn marginals_p0_raw(amps: &[C64], num_qubits: usize, qubits: &[usize]) -> Vec<f64> {
    let masks: Vec<usize> = qubits.iter().map(|&q| 1 << (num_qubits - 1 - q)).collect();
    let mut out = vec![0.0; qubits.len()];
    for (k, a) in amps.iter().enumerate() {
        let p = a.norm_sqr();
        for (acc, &m) in out.iter_mut().zip(&masks) {
            if k & m == 0 {
                *acc += p;
            }
        }
    }
    out
}
