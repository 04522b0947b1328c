//! Softmax machinery and the prediction-dependent matrix `A = I − 1πᵀ`.

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Result};

/// Floor applied to probabilities before taking a logarithm.
pub const LOG_FLOOR: f64 = 1e-300;

/// Tolerance on `Σπ = 1` accepted by [`ProbVector::new`].
pub const SIMPLEX_TOL: f64 = 1e-12;

pub fn safe_ln(p: f64) -> f64 {
    p.max(LOG_FLOOR).ln()
}

/// A predictive distribution over a vocabulary of size `V ≥ 2`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbVector(Vec<f64>);

impl ProbVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return invalid(format!("probability vector needs V >= 2, got {}", values.len()));
        }
        if values.iter().any(|p| !p.is_finite() || *p < 0.0 || *p > 1.0) {
            return invalid("probability entries must lie in [0, 1]");
        }
        let sum: f64 = values.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOL {
            return invalid(format!("probabilities sum to {sum}, not 1"));
        }
        Ok(Self(values))
    }

    /// Uniform distribution over `v` classes.
    pub fn uniform(v: usize) -> Result<Self> {
        Self::new(vec![1.0 / v as f64; v])
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, i: usize) -> f64 {
        self.0[i]
    }

    pub fn squared_norm(&self) -> f64 {
        self.0.iter().map(|p| p * p).sum()
    }

    /// Index of the largest entry, lowest index on ties.
    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }

    pub fn as_dvector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.0)
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

/// Index of the largest entry, lowest index on ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Raw logits, `V` rows by `L` predicted positions.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitMatrix(DMatrix<f64>);

impl LogitMatrix {
    pub fn new(values: DMatrix<f64>) -> Result<Self> {
        if values.ncols() == 0 {
            return invalid("logit matrix needs at least one position");
        }
        if values.iter().any(|z| !z.is_finite()) {
            return invalid("logits must be finite");
        }
        Ok(Self(values))
    }

    pub fn from_column(z: &[f64]) -> Result<Self> {
        Self::new(DMatrix::from_column_slice(z.len(), 1, z))
    }

    pub fn vocab(&self) -> usize {
        self.0.nrows()
    }

    pub fn positions(&self) -> usize {
        self.0.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn column(&self, l: usize) -> Vec<f64> {
        self.0.column(l).iter().copied().collect()
    }

    /// Column-wise softmax.
    pub fn probs(&self) -> Vec<ProbVector> {
        (0..self.positions()).map(|l| softmax_unchecked(self.0.column(l).as_slice())).collect()
    }

    /// Column-wise log-softmax as a `V × L` matrix.
    pub fn log_probs(&self) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.vocab(), self.positions());
        for l in 0..self.positions() {
            let col = log_softmax_unchecked(self.0.column(l).as_slice());
            out.column_mut(l).copy_from_slice(&col);
        }
        out
    }

    /// Column-wise softmax as a `V × L` matrix.
    pub fn prob_matrix(&self) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.vocab(), self.positions());
        for (l, p) in self.probs().iter().enumerate() {
            out.column_mut(l).copy_from_slice(p.values());
        }
        out
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }
}

fn check_finite(z: &[f64]) -> Result<()> {
    if z.is_empty() {
        return invalid("empty logit vector");
    }
    if z.iter().any(|x| !x.is_finite()) {
        return invalid("logits must be finite");
    }
    Ok(())
}

fn max_of(z: &[f64]) -> f64 {
    z.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
}

pub fn softmax(z: &[f64]) -> Result<ProbVector> {
    check_finite(z)?;
    if z.len() < 2 {
        return invalid("softmax needs V >= 2");
    }
    Ok(softmax_unchecked(z))
}

fn softmax_unchecked(z: &[f64]) -> ProbVector {
    let m = max_of(z);
    let e: Vec<f64> = z.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    ProbVector(e.into_iter().map(|x| x / s).collect())
}

pub fn log_softmax(z: &[f64]) -> Result<Vec<f64>> {
    check_finite(z)?;
    Ok(log_softmax_unchecked(z))
}

fn log_softmax_unchecked(z: &[f64]) -> Vec<f64> {
    let m = max_of(z);
    let lse = z.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
    z.iter().map(|x| x - m - lse).collect()
}

/// `A = I − 1πᵀ`, the Jacobian of `log softmax` with respect to the logits.
#[derive(Debug, Clone)]
pub struct SoftmaxJacobianA {
    matrix: DMatrix<f64>,
    source: ProbVector,
}

impl SoftmaxJacobianA {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn source(&self) -> &ProbVector {
        &self.source
    }

    /// `A·x` without forming the matrix: `x − (πᵀx)·1`.
    pub fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        let dot: f64 = self.source.values().iter().zip(x.iter()).map(|(p, v)| p * v).sum();
        x.map(|v| v - dot)
    }
}

pub fn a_matrix(pi: &ProbVector) -> SoftmaxJacobianA {
    let v = pi.len();
    let matrix = DMatrix::from_fn(v, v, |i, j| if i == j { 1.0 } else { 0.0 } - pi.get(j));
    SoftmaxJacobianA { matrix, source: pi.clone() }
}

/// `‖A‖²_F = V − 2 + V‖π‖²`, read as the peakiness of `π`.
pub fn peakiness(pi: &ProbVector) -> f64 {
    let v = pi.len() as f64;
    v - 2.0 + v * pi.squared_norm()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;
    use proptest::prelude::*;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn softmax_examples() {
        let p = softmax(&[0.0; 4]).unwrap();
        assert!(close(p.values(), &[0.25; 4], 1e-15));
        let p = softmax(&[0.0, 0.0, 2f64.ln()]).unwrap();
        assert!(close(p.values(), &[0.25, 0.25, 0.5], 1e-15));
    }

    #[test]
    fn softmax_rejects_non_finite() {
        assert!(softmax(&[0.0, f64::NAN]).is_err());
        assert!(softmax(&[f64::INFINITY, 0.0]).is_err());
        assert!(log_softmax(&[f64::NEG_INFINITY, 0.0]).is_err());
    }

    #[test]
    fn log_softmax_is_stable() {
        let l = log_softmax(&[0.0, 0.0]).unwrap();
        assert!(close(&l, &[-(2f64.ln()); 2], 1e-15));
        let l = log_softmax(&[1000.0, 0.0]).unwrap();
        assert!(l[0].abs() < 1e-300_f64.max(1e-15));
        assert!((l[1] + 1000.0).abs() < 1e-12);
    }

    #[test]
    fn log_softmax_matches_composition() {
        let mut rng = SeededRng::new(11);
        for _ in 0..200 {
            let z = rng.normal_vec(12, 3.0);
            let direct: Vec<f64> = softmax(&z).unwrap().values().iter().map(|p| p.ln()).collect();
            assert!(close(&log_softmax(&z).unwrap(), &direct, 1e-12));
        }
    }

    #[test]
    fn a_matrix_two_classes() {
        let a = a_matrix(&ProbVector::new(vec![0.5, 0.5]).unwrap());
        assert_eq!(a.matrix(), &DMatrix::from_row_slice(2, 2, &[0.5, -0.5, -0.5, 0.5]));
    }

    #[test]
    fn a_matrix_identities_against_explicit_products() {
        let mut rng = SeededRng::new(5);
        for v in [2, 7, 30] {
            let pi = ProbVector::new(rng.prob_vector(v, 2.0)).unwrap();
            let a = a_matrix(&pi);
            let ones = DVector::from_element(v, 1.0);
            assert!((a.matrix() * &ones).amax() < 1e-12);
            // πᵀA summed entrywise, independent of the matrix product routine
            for j in 0..v {
                let s: f64 = (0..v).map(|i| pi.get(i) * a.matrix()[(i, j)]).sum();
                assert!(s.abs() < 1e-12);
            }
            let x = DVector::from_vec(rng.normal_vec(v, 1.0));
            assert!((a.apply(&x) - a.matrix() * &x).amax() < 1e-12);
        }
    }

    #[test]
    fn peakiness_examples() {
        assert!((peakiness(&ProbVector::uniform(4).unwrap()) - 3.0).abs() < 1e-12);
        assert!((peakiness(&ProbVector::new(vec![0.0, 1.0, 0.0]).unwrap()) - 4.0).abs() < 1e-12);
    }

    #[test]
    fn peakiness_is_frobenius_norm_of_a() {
        let mut rng = SeededRng::new(99);
        for v in [2usize, 10, 100] {
            for _ in 0..1000 {
                let pi = ProbVector::new(rng.prob_vector(v, 2.5)).unwrap();
                let explicit = a_matrix(&pi).matrix().iter().map(|x| x * x).sum::<f64>();
                assert!((peakiness(&pi) - explicit).abs() < 1e-10, "V={v}");
            }
        }
    }

    #[test]
    fn prob_vector_validation() {
        assert!(ProbVector::new(vec![1.0]).is_err());
        assert!(ProbVector::new(vec![0.5, 0.6]).is_err());
        assert!(ProbVector::new(vec![-0.1, 1.1]).is_err());
        assert_eq!(ProbVector::new(vec![0.3, 0.7, 0.0]).unwrap().argmax(), 1);
        assert_eq!(argmax(&[0.4, 0.4, 0.2]), 0);
    }

    proptest! {
        #[test]
        fn softmax_sums_to_one(z in proptest::collection::vec(-1e4f64..1e4, 2..64)) {
            let p = softmax(&z).unwrap();
            prop_assert!((p.values().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn softmax_shift_invariant(z in proptest::collection::vec(-50.0f64..50.0, 2..32), c in -1e3f64..1e3) {
            let shifted: Vec<f64> = z.iter().map(|x| x + c).collect();
            let a = softmax(&z).unwrap();
            let b = softmax(&shifted).unwrap();
            prop_assert!(close(a.values(), b.values(), 1e-12));
        }

        #[test]
        fn softmax_shift_bit_exact_when_shift_is_exact(
            k in proptest::collection::vec(-4096i32..4096, 2..32),
            c in -100_000i32..100_000,
        ) {
            // dyadic logits and integer shifts: every addition and the max-shift are exact in f64
            let z: Vec<f64> = k.iter().map(|&k| k as f64 / 1024.0).collect();
            let shifted: Vec<f64> = z.iter().map(|x| x + c as f64).collect();
            prop_assert_eq!(softmax(&z).unwrap(), softmax(&shifted).unwrap());
        }
    }
}
