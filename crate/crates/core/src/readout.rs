//! Survivor-qubit readout: Bloch vectors, a linear SVM on them, and the
//! single-qubit rotation that aligns the SVM normal with the measurement
//! axis.
//!
//! Decisions use the affine rule `w . r + b >= 0 -> label 1`. With `b = 0`
//! this coincides with rotating the survivor by [`hyperplane_to_rotation`]
//! and predicting label 1 when `p0 >= 1/2`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ansatz::ModelSpec;
use crate::error::{Error, Result};
use crate::statevec::Unitary2;

pub type BlochVector = [f64; 3];

/// Iterations of the SVM subgradient solver.
pub const SVM_ITERATIONS: usize = 5000;
pub const DEFAULT_SVM_C: f64 = 1.0;

/// Fitted hyperplane plus its alignment rotation (stored as axis/angle).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionRule {
    pub w: [f64; 3],
    pub b: f64,
    pub rotation_axis: [f64; 3],
    pub rotation_angle: f64,
}

impl DecisionRule {
    pub fn new(w: [f64; 3], b: f64) -> Result<Self> {
        let (rotation_axis, rotation_angle) = alignment_axis_angle(w)?;
        Ok(DecisionRule { w, b, rotation_axis, rotation_angle })
    }

    pub fn rotation(&self) -> Unitary2 {
        Unitary2::axis_angle(self.rotation_axis, self.rotation_angle)
    }

    /// `1` iff `w . r + b >= 0`.
    pub fn decide(&self, r: &BlochVector) -> u8 {
        u8::from(dot3(&self.w, r) + self.b >= 0.0)
    }

    /// Rotate-then-measure decision: `1` iff `p0 >= 1/2` after the alignment
    /// rotation. Ignores `b`.
    pub fn decide_by_rotation(&self, r: &BlochVector) -> u8 {
        let rotated = self.rotation().rotate_bloch(*r);
        let p0 = 0.5 * (1.0 + rotated[2]);
        u8::from(p0 >= 0.5)
    }
}

fn dot3(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Survivor Bloch vector for each feature vector.
pub fn extract_bloch(spec: &ModelSpec, params: &[f64], features: &[Vec<f64>]) -> Result<Vec<BlochVector>> {
    features
        .par_iter()
        .map(|x| spec.forward(params, x)?.bloch_vector(spec.survivor))
        .collect()
}

fn alignment_axis_angle(w: [f64; 3]) -> Result<([f64; 3], f64)> {
    let norm = dot3(&w, &w).sqrt();
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(Error::invalid("hyperplane normal must be nonzero"));
    }
    let u = [w[0] / norm, w[1] / norm, w[2] / norm];
    // axis = u x z = (u_y, -u_x, 0)
    let axis = [u[1], -u[0], 0.0];
    let s = (axis[0] * axis[0] + axis[1] * axis[1]).sqrt();
    let angle = s.atan2(u[2]);
    if s < 1e-12 {
        return Ok(if u[2] > 0.0 {
            ([0.0, 0.0, 1.0], 0.0)
        } else {
            ([1.0, 0.0, 0.0], std::f64::consts::PI)
        });
    }
    Ok(([axis[0] / s, axis[1] / s, 0.0], angle))
}

/// Rotation about `w x z` by the angle between `w` and `z`; conjugating a
/// state by it maps the direction of `w` onto `+z`. `w` parallel to `-z`
/// uses a pi rotation about `x`.
pub fn hyperplane_to_rotation(w: [f64; 3]) -> Result<Unitary2> {
    let (axis, angle) = alignment_axis_angle(w)?;
    Ok(Unitary2::axis_angle(axis, angle))
}

/// Soft-margin linear SVM, `min 1/2 |w|^2 + c * sum_i hinge(y_i (w.x_i + b))`,
/// by deterministic full-batch subgradient descent.
///
/// The features are standardized internally, the objective is rescaled by
/// `1 / (c N)` and steps follow `1/sqrt(t)`. The iterate with the lowest
/// objective is returned, mapped back to the original coordinates.
pub fn fit_linear_svm<P: AsRef<[f64]>>(points: &[P], labels: &[i8], c: f64) -> Result<(Vec<f64>, f64)> {
    if points.len() != labels.len() {
        return Err(Error::invalid("points and labels differ in length"));
    }
    if !(c > 0.0) {
        return Err(Error::invalid("SVM regularization c must be positive"));
    }
    if !labels.contains(&1) || !labels.contains(&-1) {
        return Err(Error::invalid("SVM needs both classes present"));
    }
    if labels.iter().any(|&y| y != 1 && y != -1) {
        return Err(Error::invalid("SVM labels must be +1 or -1"));
    }
    let dim = points[0].as_ref().len();
    if points.iter().any(|p| p.as_ref().len() != dim) {
        return Err(Error::invalid("points have inconsistent dimension"));
    }
    let n = points.len();
    let nf = n as f64;
    let mut mean = vec![0.0; dim];
    for p in points {
        for (m, v) in mean.iter_mut().zip(p.as_ref()) {
            *m += v / nf;
        }
    }
    let mut scale = vec![0.0; dim];
    for p in points {
        for ((s, v), m) in scale.iter_mut().zip(p.as_ref()).zip(&mean) {
            *s += (v - m) * (v - m) / nf;
        }
    }
    for s in scale.iter_mut() {
        *s = if *s > 1e-24 { s.sqrt() } else { 1.0 };
    }
    let xs: Vec<Vec<f64>> = points
        .iter()
        .map(|p| p.as_ref().iter().zip(&mean).zip(&scale).map(|((v, m), s)| (v - m) / s).collect())
        .collect();
    let ys: Vec<f64> = labels.iter().map(|&y| f64::from(y)).collect();

    let lambda = 1.0 / (c * nf);
    let mut w = vec![0.0; dim];
    let mut b = 0.0;
    let mut best = (f64::INFINITY, w.clone(), b);
    let mut gw = vec![0.0; dim];
    for t in 1..=SVM_ITERATIONS + 1 {
        gw.iter_mut().zip(&w).for_each(|(g, wi)| *g = lambda * wi);
        let mut gb = 0.0;
        let mut hinge = 0.0;
        for (x, &y) in xs.iter().zip(&ys) {
            let margin = y * (x.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() + b);
            if margin < 1.0 {
                hinge += 1.0 - margin;
                for (g, xi) in gw.iter_mut().zip(x) {
                    *g -= y * xi / nf;
                }
                gb -= y / nf;
            }
        }
        let objective = 0.5 * lambda * w.iter().map(|v| v * v).sum::<f64>() + hinge / nf;
        if objective < best.0 {
            best = (objective, w.clone(), b);
        }
        if t > SVM_ITERATIONS {
            break;
        }
        let step = 1.0 / (t as f64).sqrt();
        for (wi, g) in w.iter_mut().zip(&gw) {
            *wi -= step * g;
        }
        b -= step * gb;
    }
    let (_, ws, bs) = best;
    let w_orig: Vec<f64> = ws.iter().zip(&scale).map(|(w, s)| w / s).collect();
    let b_orig = bs - w_orig.iter().zip(&mean).map(|(w, m)| w * m).sum::<f64>();
    Ok((w_orig, b_orig))
}

/// Fits the readout rule on labelled survivor vectors (`labels` in `{0,1}`).
/// A zero normal (degenerate data) falls back to `+z`.
pub fn fit_rule(vectors: &[BlochVector], labels: &[u8], c: f64) -> Result<DecisionRule> {
    let signed: Vec<i8> = labels.iter().map(|&y| if y == 1 { 1 } else { -1 }).collect();
    let (w, b) = fit_linear_svm(vectors, &signed, c)?;
    let mut w3 = [w[0], w[1], w[2]];
    if dot3(&w3, &w3) == 0.0 {
        w3 = [0.0, 0.0, 1.0];
    }
    DecisionRule::new(w3, b)
}

/// Label for one sample: forward pass, survivor Bloch vector, affine rule.
pub fn classify(spec: &ModelSpec, params: &[f64], rule: &DecisionRule, features: &[f64]) -> Result<u8> {
    let r = spec.forward(params, features)?.bloch_vector(spec.survivor)?;
    Ok(rule.decide(&r))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symmetric_pair() {
        let pts = [[0.0, 0.0, 1.0], [0.0, 0.0, -1.0]];
        let (w, b) = fit_linear_svm(&pts, &[1, -1], 1.0).unwrap();
        assert!(w[2] > 0.0);
        assert!(w[0].abs() < 1e-9 && w[1].abs() < 1e-9);
        assert!(b.abs() < 1e-6, "{b}");
    }

    #[test]
    fn single_class_rejected() {
        let pts = [[0.0, 0.0, 1.0], [0.0, 1.0, 0.0]];
        assert!(matches!(fit_linear_svm(&pts, &[1, 1], 1.0), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn rotation_special_cases() {
        let id = hyperplane_to_rotation([0.0, 0.0, 1.0]).unwrap();
        assert!((id.0[0][0].re - 1.0).abs() < 1e-15 && id.0[0][1].norm() < 1e-15);
        let flip = hyperplane_to_rotation([0.0, 0.0, -2.0]).unwrap();
        let expect = Unitary2::rx(std::f64::consts::PI);
        for r in 0..2 {
            for c in 0..2 {
                assert!((flip.0[r][c] - expect.0[r][c]).norm() < 1e-15);
            }
        }
        assert!(hyperplane_to_rotation([0.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn plus_state_aligned_to_z() {
        let u = hyperplane_to_rotation([1.0, 0.0, 0.0]).unwrap();
        let r = u.rotate_bloch([1.0, 0.0, 0.0]);
        assert!((r[0]).abs() < 1e-10 && r[1].abs() < 1e-10 && (r[2] - 1.0).abs() < 1e-10);
    }

    #[test]
    fn tie_goes_to_one() {
        let rule = DecisionRule::new([0.0, 0.0, 1.0], 0.0).unwrap();
        assert_eq!(rule.decide(&[0.0, 0.0, 1.0]), 1);
        assert_eq!(rule.decide(&[1.0, 0.0, 0.0]), 1);
        assert_eq!(rule.decide(&[0.0, 0.0, -0.1]), 0);
    }
}
