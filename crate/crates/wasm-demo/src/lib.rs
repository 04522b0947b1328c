//! Browser bindings for three small views: the one-step readout squeeze,
//! preference residual strength against the log-prob gap, and softmax peakiness.

use wasm_bindgen::prelude::*;

use gdl_core::losses::{residual_coefficients, PreferenceKind, PreferenceLogps, PreferencePair};
use gdl_core::prob::{peakiness, softmax};
use gdl_core::squeeze::{alpha_simulated, make_scenario, sgd_step_readout, ScenarioKind};

fn js_err(e: gdl_core::Error) -> JsError {
    JsError::new(&format!("{}: {e}", e.kind()))
}

/// Result of one readout step on a generated scenario.
#[wasm_bindgen]
pub struct SqueezeView {
    before: Vec<f64>,
    after: Vec<f64>,
    alpha: Vec<f64>,
    target: usize,
    eta_prime: f64,
}

#[wasm_bindgen]
impl SqueezeView {
    #[wasm_bindgen(getter)]
    pub fn before(&self) -> Vec<f64> {
        self.before.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn after(&self) -> Vec<f64> {
        self.after.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn alpha(&self) -> Vec<f64> {
        self.alpha.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn target(&self) -> usize {
        self.target
    }

    #[wasm_bindgen(getter, js_name = etaPrime)]
    pub fn eta_prime(&self) -> f64 {
        self.eta_prime
    }

    /// Classes whose probability went down.
    #[wasm_bindgen(getter)]
    pub fn decreased(&self) -> usize {
        self.alpha.iter().filter(|&&a| a < 1.0).count()
    }
}

/// `kind` is one of flat, mild, multimode, valley_target, peak_target.
#[wasm_bindgen]
pub fn squeeze(kind: &str, vocab: usize, eta: f64, seed: u64) -> Result<SqueezeView, JsError> {
    let kind: ScenarioKind = kind.parse().map_err(js_err)?;
    let sc = make_scenario(kind, vocab, 5, eta, seed).map_err(js_err)?;
    let inst = &sc.instance;
    let (_, after) = sgd_step_readout(inst).map_err(js_err)?;
    let alpha = alpha_simulated(inst).map_err(js_err)?.alpha;
    Ok(SqueezeView {
        before: inst.p.values().to_vec(),
        after: after.values().to_vec(),
        alpha,
        target: inst.y,
        eta_prime: inst.eta_prime,
    })
}

/// Chosen-side residual coefficient for `n` gaps spread over `[lo, hi]`.
///
/// The gap is placed on the policy chosen log-prob with zero reference terms.
#[wasm_bindgen(js_name = residualStrength)]
pub fn residual_strength(kind: &str, beta: f64, lo: f64, hi: f64, n: usize) -> Result<Vec<f64>, JsError> {
    let kind: PreferenceKind = kind.parse().map_err(js_err)?;
    if n < 2 || !(hi > lo) {
        return Err(JsError::new("invalid_input: need n >= 2 and hi > lo"));
    }
    let pair = PreferencePair::new(vec![0], vec![0], vec![1], beta).map_err(js_err)?;
    pair.validate().map_err(js_err)?;
    (0..n)
        .map(|i| {
            let gap = lo + (hi - lo) * i as f64 / (n - 1) as f64;
            let logps =
                PreferenceLogps { policy_chosen: gap, policy_rejected: 0.0, ref_chosen: 0.0, ref_rejected: 0.0 };
            residual_coefficients(kind, &logps, &pair).map(|(c, _, _)| c).map_err(js_err)
        })
        .collect()
}

/// Softmax of `logits / temperature`.
#[wasm_bindgen(js_name = softmaxAt)]
pub fn softmax_at(logits: Vec<f64>, temperature: f64) -> Result<Vec<f64>, JsError> {
    if !(temperature > 0.0) {
        return Err(JsError::new("invalid_input: temperature must be positive"));
    }
    let z: Vec<f64> = logits.iter().map(|x| x / temperature).collect();
    Ok(softmax(&z).map_err(js_err)?.values().to_vec())
}

/// `‖A‖²_F` of the softmax Jacobian at `logits / temperature`.
#[wasm_bindgen(js_name = peakinessAt)]
pub fn peakiness_at(logits: Vec<f64>, temperature: f64) -> Result<f64, JsError> {
    let p = softmax_at(logits, temperature)?;
    let p = gdl_core::prob::ProbVector::new(p).map_err(js_err)?;
    Ok(peakiness(&p))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn valley_squeeze_lifts_only_argmax() {
        let v = squeeze("valley_target", 50, -0.5, 0).unwrap();
        assert_eq!(v.decreased(), 49);
        assert!(v.eta_prime() < 0.0);
        assert_eq!(v.before().len(), 50);
    }

    #[test]
    fn dpo_strength_decays_with_gap() {
        let c = residual_strength("dpo", 0.5, -10.0, 10.0, 21).unwrap();
        assert!(c.windows(2).all(|w| w[1] < w[0]));
        assert!((c[10] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn peakiness_grows_as_temperature_falls() {
        let z = vec![2.0, 1.0, 0.0, -1.0];
        let hot = peakiness_at(z.clone(), 10.0).unwrap();
        let cold = peakiness_at(z, 0.1).unwrap();
        // V - 1 at uniform, 2V - 2 at a point mass
        assert!(hot < cold);
        assert!(cold <= 2.0 * 4.0 - 2.0 + 1e-9);
    }
}
