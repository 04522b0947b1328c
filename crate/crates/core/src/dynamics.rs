//! One-step influence: eNTK blocks, predicted and measured `Δlog π`, and trace metrics.
//!
//! For an update on `χ_u` with residual `G` (V × L) the first-order change of
//! `log π` on an observed input `χ_o` at position `m` is
//! `−η · A_m · Σ_l K_{m,l} · G_l`, with `K_{m,l} = J_m(χ_o) J_l(χ_u)ᵀ`.
//! Preference updates sum two such families, the rejected one weighted by the
//! residual's `rejected_sign`.

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Error, Result};
use crate::losses::ResidualMatrix;
use crate::models::{LabeledExample, ModelInput, ModelState};
use crate::prob::{a_matrix, peakiness, ProbVector, SoftmaxJacobianA};

/// `V × V` block `K(χ_o, χ_u)` at observed position `m` and updated position `l`.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelBlock {
    pub matrix: DMatrix<f64>,
    pub observed_position: usize,
    pub updated_position: usize,
}

pub fn entk_block(
    model: &ModelState,
    chi_o: &ModelInput,
    m: usize,
    chi_u: &ModelInput,
    l: usize,
) -> Result<KernelBlock> {
    if let Some(k) = model.feature_kernel(chi_o, chi_u)? {
        if m != 0 || l != 0 {
            return invalid("feature inputs have a single position");
        }
        return Ok(KernelBlock { matrix: k, observed_position: 0, updated_position: 0 });
    }
    let jo = model.logit_jacobian(chi_o, m)?;
    let ju = if chi_o == chi_u && m == l { jo.clone() } else { model.logit_jacobian(chi_u, l)? };
    Ok(KernelBlock { matrix: &jo * ju.transpose(), observed_position: m, updated_position: l })
}

/// All blocks `K_{m,l}`, indexed `[m][l]`. Each Jacobian is built once.
pub fn entk_blocks(model: &ModelState, chi_o: &ModelInput, chi_u: &ModelInput) -> Result<Vec<Vec<KernelBlock>>> {
    let jo: Vec<DMatrix<f64>> =
        (0..chi_o.positions()).map(|m| model.logit_jacobian(chi_o, m)).collect::<Result<_>>()?;
    let ju: Vec<DMatrix<f64>> = if chi_o == chi_u {
        jo.clone()
    } else {
        (0..chi_u.positions()).map(|l| model.logit_jacobian(chi_u, l)).collect::<Result<_>>()?
    };
    Ok(jo
        .iter()
        .enumerate()
        .map(|(m, a)| {
            ju.iter()
                .enumerate()
                .map(|(l, b)| KernelBlock { matrix: a * b.transpose(), observed_position: m, updated_position: l })
                .collect()
        })
        .collect())
}

/// One updating example's contribution: its kernel blocks against `χ_o`, its residual and its sign.
#[derive(Debug, Clone)]
pub struct KernelFamily {
    pub kernels: Vec<Vec<KernelBlock>>,
    pub residual: ResidualMatrix,
    pub sign: f64,
}

#[derive(Debug, Clone)]
pub struct DecompositionTerms {
    pub a: Vec<SoftmaxJacobianA>,
    pub families: Vec<KernelFamily>,
    pub eta: f64,
}

impl DecompositionTerms {
    pub fn new(pi_o: &[ProbVector], families: Vec<KernelFamily>, eta: f64) -> Result<Self> {
        if pi_o.is_empty() {
            return invalid("observed input has no positions");
        }
        let v = pi_o[0].len();
        for fam in &families {
            let g = fam.residual.matrix();
            if fam.kernels.len() != pi_o.len() || g.nrows() != v {
                return invalid("kernel rows or residual height do not match the observed input");
            }
            for row in &fam.kernels {
                if row.len() != g.ncols() || row.iter().any(|k| k.matrix.shape() != (v, v)) {
                    return invalid("kernel blocks do not match the residual shape");
                }
            }
        }
        if !eta.is_finite() {
            return invalid("eta must be finite");
        }
        Ok(Self { a: pi_o.iter().map(a_matrix).collect(), families, eta })
    }

    /// Terms for an SFT step on `update`, observed on `chi_o`.
    pub fn sft(model: &ModelState, chi_o: &ModelInput, update: &LabeledExample, eta: f64) -> Result<Self> {
        let residual = model.sft_residual(update)?;
        let kernels = entk_blocks(model, chi_o, &update.input)?;
        let pi_o = model.forward(chi_o)?.probs();
        Self::new(&pi_o, vec![KernelFamily { kernels, residual, sign: 1.0 }], eta)
    }

    /// Summed `Σ_f sign_f Σ_l K_{m,l} G_l`, one column per observed position.
    fn kernel_times_residual(&self) -> DMatrix<f64> {
        let v = self.a[0].source().len();
        let mut out = DMatrix::zeros(v, self.a.len());
        for fam in &self.families {
            let g = fam.residual.matrix();
            for (m, row) in fam.kernels.iter().enumerate() {
                for (l, k) in row.iter().enumerate() {
                    let kg = &k.matrix * g.column(l);
                    let mut col = out.column_mut(m);
                    col.axpy(fam.sign, &kg, 1.0);
                }
            }
        }
        out
    }
}

/// `Δlog π` on the observed input, `V × M`.
#[derive(Debug, Clone, PartialEq)]
pub struct DeltaLogPi(pub DMatrix<f64>);

impl DeltaLogPi {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    /// Largest `|πᵀ Δ_m|` over columns, zero to rounding for any first-order prediction.
    pub fn normalization_residual(&self, pi_o: &[ProbVector]) -> f64 {
        pi_o.iter().enumerate().map(|(m, p)| p.as_dvector().dot(&self.0.column(m)).abs()).fold(0.0, f64::max)
    }
}

pub fn predict_delta(terms: &DecompositionTerms) -> Result<DeltaLogPi> {
    let kg = terms.kernel_times_residual();
    let mut out = DMatrix::zeros(kg.nrows(), kg.ncols());
    for (m, a) in terms.a.iter().enumerate() {
        let col: DVector<f64> = a.apply(&kg.column(m).into_owned()) * (-terms.eta);
        out.set_column(m, &col);
    }
    if out.iter().any(|x| !x.is_finite()) {
        return invalid("predicted change is not finite");
    }
    Ok(DeltaLogPi(out))
}

pub fn actual_delta(before: &ModelState, after: &ModelState, chi_o: &ModelInput) -> Result<DeltaLogPi> {
    if before.kind() != after.kind() || before.dims() != after.dims() {
        return invalid("models differ in architecture");
    }
    let a = before.forward(chi_o)?.log_probs();
    let b = after.forward(chi_o)?.log_probs();
    Ok(DeltaLogPi(b - a))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrderReport {
    pub err_eta: f64,
    pub err_half_eta: f64,
    pub ratio: f64,
    /// Worst `|πᵀ · predicted|` seen across both step sizes.
    pub normalization_residual: f64,
}

/// Numeric floor below which the remainder cannot be told apart from rounding.
pub const ORDER_FLOOR: f64 = 1e-13;

/// Compares measured and predicted SFT updates at `η` and `η/2`.
pub fn order_check(model: &ModelState, update: &LabeledExample, observe: &ModelInput, eta: f64) -> Result<OrderReport> {
    let pi_o = model.forward(observe)?.probs();
    let mut terms = DecompositionTerms::sft(model, observe, update, eta)?;
    let residual = terms.families[0].residual.clone();
    let mut err = [0.0; 2];
    let mut norm_res: f64 = 0.0;
    for (i, step) in [eta, eta / 2.0].into_iter().enumerate() {
        terms.eta = step;
        let predicted = predict_delta(&terms)?;
        norm_res = norm_res.max(predicted.normalization_residual(&pi_o));
        let after = model.apply_update(std::slice::from_ref(&residual), std::slice::from_ref(&update.input), step)?;
        let actual = actual_delta(model, &after, observe)?;
        err[i] = (actual.matrix() - predicted.matrix()).norm();
    }
    if err[0] < ORDER_FLOOR || err[1] < ORDER_FLOOR {
        return Err(Error::InconclusiveScale { err: err[0].min(err[1]) });
    }
    Ok(OrderReport { err_eta: err[0], err_half_eta: err[1], ratio: err[0] / err[1], normalization_residual: norm_res })
}

/// `‖Δlog π‖²_F / (‖A_o‖²_F · ‖G_u‖²_F)`. `None` when the updating residual vanishes.
///
/// `‖A_o‖²_F` sums the per-position peakiness of the observed distributions.
pub fn lbk_metric(delta: &DeltaLogPi, pi_o: &[ProbVector], g_u: &ResidualMatrix) -> Result<Option<f64>> {
    if pi_o.len() != delta.0.ncols() {
        return invalid("one distribution per observed position is required");
    }
    let g = g_u.frobenius_sq();
    if g == 0.0 {
        return Ok(None);
    }
    let a: f64 = pi_o.iter().map(peakiness).sum();
    Ok(Some(delta.0.norm_squared() / (a * g)))
}

/// Mean of all entries of `Δlog π`.
pub fn sign_delta(delta: &DeltaLogPi) -> f64 {
    if delta.0.is_empty() {
        return 0.0;
    }
    delta.0.mean()
}

/// Jacobians of all positions stacked row-wise, `(V·M) × P`.
pub fn stacked_jacobian(model: &ModelState, chi: &ModelInput) -> Result<DMatrix<f64>> {
    let v = model.vocab();
    let mut out = DMatrix::zeros(v * chi.positions(), model.num_params());
    for m in 0..chi.positions() {
        out.rows_mut(m * v, v).copy_from(&model.logit_jacobian(chi, m)?);
    }
    Ok(out)
}

/// `‖K(χ_o, χ_u)‖_F` over all position pairs.
pub fn kernel_norm(model: &ModelState, chi_o: &ModelInput, chi_u: &ModelInput) -> Result<f64> {
    if let Some(k) = model.feature_kernel(chi_o, chi_u)? {
        return Ok(k.norm());
    }
    let jo = stacked_jacobian(model, chi_o)?;
    let ju = if chi_o == chi_u { jo.clone() } else { stacked_jacobian(model, chi_u)? };
    Ok((jo * ju.transpose()).norm())
}
