//! Equilibrium systems `f(p, q) = 0` and the built-in models.
//!
//! `p` is the vector of unknowns and `q` the parameter vector; the
//! projection onto the parameter factor, `(p, q) -> q`, is implicit in every
//! operation that drops `p`. Properness of that projection is a documented
//! property of each model below, not something the toolkit verifies.

use crate::grid::Window;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("invalid model parameter `{name}`: {reason}")]
    InvalidParameter { name: String, reason: String },
    #[error("failed to parse config: {0}")]
    Parse(#[from] serde_json::Error),
}

/// Evaluator contract for a parametrized equilibrium system.
///
/// Implementations must be pure: the same `(p, q)` always yields the same
/// values, and evaluation may happen from many threads at once.
pub trait EquilibriumSystem: Send + Sync {
    fn name(&self) -> &str;

    /// Number of unknowns (and of equations).
    fn n_p(&self) -> usize;

    /// Number of parameters.
    fn n_q(&self) -> usize;

    fn eval(&self, p: &DVector<f64>, q: &DVector<f64>) -> DVector<f64>;

    /// Jacobian with respect to the unknowns, `n_p x n_p`.
    fn jac_p(&self, p: &DVector<f64>, q: &DVector<f64>) -> DMatrix<f64>;

    /// Jacobian with respect to the parameters, `n_p x n_q`.
    fn jac_q(&self, p: &DVector<f64>, q: &DVector<f64>) -> DMatrix<f64>;

    /// Box in which all equilibria of interest are searched for.
    fn domain_box(&self) -> Option<Vec<(f64, f64)>> {
        None
    }
}

/// Central finite differences of `eval`, step `1e-6 * (1 + |coordinate|)`.
pub fn finite_difference_jacobians(
    sys: &dyn EquilibriumSystem,
    p: &DVector<f64>,
    q: &DVector<f64>,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = sys.n_p();
    let mut jp = DMatrix::zeros(n, n);
    for k in 0..n {
        let h = 1e-6 * (1.0 + p[k].abs());
        let mut a = p.clone();
        let mut b = p.clone();
        a[k] += h;
        b[k] -= h;
        let col = (sys.eval(&a, q) - sys.eval(&b, q)) / (2.0 * h);
        jp.set_column(k, &col);
    }
    let m = sys.n_q();
    let mut jq = DMatrix::zeros(n, m);
    for k in 0..m {
        let h = 1e-6 * (1.0 + q[k].abs());
        let mut a = q.clone();
        let mut b = q.clone();
        a[k] += h;
        b[k] -= h;
        let col = (sys.eval(p, &a) - sys.eval(p, &b)) / (2.0 * h);
        jq.set_column(k, &col);
    }
    (jp, jq)
}

/// `max |a - b|` relative to `1 + max |a|`.
pub fn jacobian_mismatch(analytic: &DMatrix<f64>, fd: &DMatrix<f64>) -> f64 {
    let diff = (analytic - fd).abs().max();
    diff / (1.0 + analytic.abs().max())
}

// ---------------------------------------------------------------------------
// complex square: f(p, q) = p^2 - q over the complex numbers, split into real
// and imaginary parts. The only critical equilibrium is p = 0, over q = 0.

/// `f1 = p1^2 - p2^2 - q1`, `f2 = 2 p1 p2 - q2`.
#[derive(Clone, Debug)]
pub struct ComplexSquare {
    half_width: f64,
}

pub fn make_complex_square() -> ComplexSquare {
    ComplexSquare { half_width: 3.0 }
}

impl ComplexSquare {
    pub fn with_domain_half_width(half_width: f64) -> Self {
        ComplexSquare { half_width }
    }
}

impl EquilibriumSystem for ComplexSquare {
    fn name(&self) -> &str {
        "complex_square"
    }
    fn n_p(&self) -> usize {
        2
    }
    fn n_q(&self) -> usize {
        2
    }
    fn eval(&self, p: &DVector<f64>, q: &DVector<f64>) -> DVector<f64> {
        DVector::from_vec(vec![
            p[0] * p[0] - p[1] * p[1] - q[0],
            2.0 * p[0] * p[1] - q[1],
        ])
    }
    fn jac_p(&self, p: &DVector<f64>, _q: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[2.0 * p[0], -2.0 * p[1], 2.0 * p[1], 2.0 * p[0]])
    }
    fn jac_q(&self, _p: &DVector<f64>, _q: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, -1.0])
    }
    fn domain_box(&self) -> Option<Vec<(f64, f64)>> {
        let h = self.half_width;
        Some(vec![(-h, h), (-h, h)])
    }
}

// ---------------------------------------------------------------------------
// cusp: f = p^3 + q1 p + q2. Folds along 4 q1^3 + 27 q2^2 = 0 with the cusp
// tip at the origin. Roots are bounded by 1 + max(|q1|, |q2|).

#[derive(Clone, Debug)]
pub struct Cusp {
    half_width: f64,
}

pub fn make_cusp() -> Cusp {
    Cusp { half_width: 6.0 }
}

impl Cusp {
    pub fn with_domain_half_width(half_width: f64) -> Self {
        Cusp { half_width }
    }
}

impl EquilibriumSystem for Cusp {
    fn name(&self) -> &str {
        "cusp"
    }
    fn n_p(&self) -> usize {
        1
    }
    fn n_q(&self) -> usize {
        2
    }
    fn eval(&self, p: &DVector<f64>, q: &DVector<f64>) -> DVector<f64> {
        let x = p[0];
        DVector::from_element(1, x * x * x + q[0] * x + q[1])
    }
    fn jac_p(&self, p: &DVector<f64>, q: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, 3.0 * p[0] * p[0] + q[0])
    }
    fn jac_q(&self, p: &DVector<f64>, _q: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_row_slice(1, 2, &[p[0], 1.0])
    }
    fn domain_box(&self) -> Option<Vec<(f64, f64)>> {
        Some(vec![(-self.half_width, self.half_width)])
    }
}

// ---------------------------------------------------------------------------
// Two-good, two-consumer CES exchange economy.
//
// Prices are normalized to (p, 1 - p) with p in (0, 1) the price of good 1.
// Consumer i has elasticity of substitution `sigma`, weight a_i on good 1 and
// endowment (e_i1, e_i2). The parameters are q = (e_11, e_22); e_12 and e_21
// are held fixed. f is the excess demand for good 1.

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CesParams {
    /// Elasticity of substitution shared by both consumers.
    pub sigma: f64,
    /// Weight on good 1 of consumers 1 and 2.
    pub weights: [f64; 2],
    /// Held-fixed endowments `[e_12, e_21]`.
    pub fixed_endowments: [f64; 2],
}

impl Default for CesParams {
    /// Strongly complementary goods with a home bias: three equilibria in a
    /// band around symmetric endowments.
    fn default() -> Self {
        CesParams {
            sigma: 0.2,
            weights: [0.98, 0.02],
            fixed_endowments: [0.02, 0.02],
        }
    }
}

/// Interior margin of the price domain; demand is undefined at 0 and 1.
const PRICE_MARGIN: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct CesEconomy {
    params: CesParams,
}

impl CesEconomy {
    pub fn params(&self) -> &CesParams {
        &self.params
    }

    pub fn endowments(&self, q: &DVector<f64>) -> [[f64; 2]; 2] {
        let [e12, e21] = self.params.fixed_endowments;
        [[q[0], e12], [e21, q[1]]]
    }

    /// Demand of consumer `i` for both goods at price `p`.
    pub fn demand(&self, i: usize, p: f64, q: &DVector<f64>) -> [f64; 2] {
        let s = self.params.sigma;
        let a = self.params.weights[i];
        let b = 1.0 - a;
        let e = self.endowments(q)[i];
        let w = p * e[0] + (1.0 - p) * e[1];
        let d = a.powf(s) * p.powf(1.0 - s) + b.powf(s) * (1.0 - p).powf(1.0 - s);
        [
            a.powf(s) * p.powf(-s) * w / d,
            b.powf(s) * (1.0 - p).powf(-s) * w / d,
        ]
    }

    pub fn excess_demand_good2(&self, p: f64, q: &DVector<f64>) -> f64 {
        let e = self.endowments(q);
        self.demand(0, p, q)[1] + self.demand(1, p, q)[1] - e[0][1] - e[1][1]
    }

    /// Value and price derivative of consumer `i`'s demand for good 1, plus
    /// its derivative with respect to the consumer's own wealth.
    fn good1_demand_parts(&self, i: usize, p: f64, q: &DVector<f64>) -> (f64, f64, f64) {
        let s = self.params.sigma;
        let a = self.params.weights[i];
        let b = 1.0 - a;
        let e = self.endowments(q)[i];
        let w = p * e[0] + (1.0 - p) * e[1];
        let dw = e[0] - e[1];
        let ap = a.powf(s);
        let bp = b.powf(s);
        let d = ap * p.powf(1.0 - s) + bp * (1.0 - p).powf(1.0 - s);
        let dd = (1.0 - s) * (ap * p.powf(-s) - bp * (1.0 - p).powf(-s));
        let num = ap * p.powf(-s);
        let dnum = -s * ap * p.powf(-s - 1.0);
        let x = num * w / d;
        let dx = (dnum * w * d + num * dw * d - num * w * dd) / (d * d);
        (x, dx, num / d)
    }
}

pub fn make_ces_economy(cfg: &ModelConfig) -> Result<CesEconomy, ModelError> {
    let params: CesParams = match &cfg.params {
        Value::Null => CesParams::default(),
        Value::Object(m) if m.is_empty() => CesParams::default(),
        v => serde_json::from_value(v.clone()).map_err(|e| ModelError::InvalidParameter {
            name: "params".into(),
            reason: e.to_string(),
        })?,
    };
    let bad = |name: &str, reason: &str| ModelError::InvalidParameter {
        name: name.into(),
        reason: reason.into(),
    };
    if !(params.sigma.is_finite() && params.sigma > 0.0) {
        return Err(bad("sigma", "elasticity must be finite and positive"));
    }
    if params.weights.iter().any(|&a| !(a > 0.0 && a < 1.0)) {
        return Err(bad("weights", "weights must lie strictly inside (0, 1)"));
    }
    if params
        .fixed_endowments
        .iter()
        .any(|&e| !(e.is_finite() && e >= 0.0))
    {
        return Err(bad("fixed_endowments", "endowments must be finite and non-negative"));
    }
    // Endowment coordinates swept by the window must stay positive, otherwise
    // a consumer can end up with zero wealth at a boundary price.
    if cfg.window.q1.0 <= 0.0 || cfg.window.q2.0 <= 0.0 {
        return Err(bad("window", "endowment window must lie in the positive quadrant"));
    }
    Ok(CesEconomy { params })
}

impl EquilibriumSystem for CesEconomy {
    fn name(&self) -> &str {
        "ces_economy"
    }
    fn n_p(&self) -> usize {
        1
    }
    fn n_q(&self) -> usize {
        2
    }
    fn eval(&self, p: &DVector<f64>, q: &DVector<f64>) -> DVector<f64> {
        let e = self.endowments(q);
        let z = self.demand(0, p[0], q)[0] + self.demand(1, p[0], q)[0] - e[0][0] - e[1][0];
        DVector::from_element(1, z)
    }
    fn jac_p(&self, p: &DVector<f64>, q: &DVector<f64>) -> DMatrix<f64> {
        let (_, d0, _) = self.good1_demand_parts(0, p[0], q);
        let (_, d1, _) = self.good1_demand_parts(1, p[0], q);
        DMatrix::from_element(1, 1, d0 + d1)
    }
    fn jac_q(&self, p: &DVector<f64>, q: &DVector<f64>) -> DMatrix<f64> {
        // q1 = e_11 enters consumer 1's wealth with weight p and the supply
        // of good 1 directly; q2 = e_22 enters consumer 2's wealth with 1 - p.
        let x = p[0];
        let (_, _, m0) = self.good1_demand_parts(0, x, q);
        let (_, _, m1) = self.good1_demand_parts(1, x, q);
        DMatrix::from_row_slice(1, 2, &[m0 * x - 1.0, m1 * (1.0 - x)])
    }
    fn domain_box(&self) -> Option<Vec<(f64, f64)>> {
        Some(vec![(PRICE_MARGIN, 1.0 - PRICE_MARGIN)])
    }
}

// ---------------------------------------------------------------------------
// Configuration

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    ComplexSquare,
    Cusp,
    CesEconomy,
}

impl ModelKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ModelKind::ComplexSquare => "complex_square",
            ModelKind::Cusp => "cusp",
            ModelKind::CesEconomy => "ces_economy",
        }
    }
}

/// Smallest accepted grid resolution per axis.
pub const MIN_RESOLUTION: usize = 16;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub model: ModelKind,
    #[serde(default)]
    pub params: Value,
    pub window: Window,
    /// Grid cells per axis.
    pub resolution: [usize; 2],
}

impl ModelConfig {
    pub fn new(model: ModelKind, window: Window, resolution: [usize; 2]) -> Self {
        ModelConfig {
            model,
            params: Value::Null,
            window,
            resolution,
        }
    }

    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        let cfg: ModelConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if !self.window.is_nondegenerate() {
            return Err(ModelError::InvalidConfig(format!(
                "window {} must have positive side lengths",
                self.window
            )));
        }
        if self.resolution.iter().any(|&r| r < MIN_RESOLUTION) {
            return Err(ModelError::InvalidConfig(format!(
                "resolution {:?} below the minimum of {MIN_RESOLUTION} per axis",
                self.resolution
            )));
        }
        Ok(())
    }

    pub fn with_resolution(mut self, resolution: [usize; 2]) -> Self {
        self.resolution = resolution;
        self
    }

    fn param_f64(&self, name: &str) -> Result<Option<f64>, ModelError> {
        match self.params.get(name) {
            None | Some(Value::Null) => Ok(None),
            Some(v) => v.as_f64().map(Some).ok_or_else(|| ModelError::InvalidParameter {
                name: name.into(),
                reason: "expected a number".into(),
            }),
        }
    }
}

fn max_abs_corner(w: &Window) -> f64 {
    [w.q1.0, w.q1.1, w.q2.0, w.q2.1]
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()))
}

/// Instantiate the system named by a validated config.
pub fn build_system(cfg: &ModelConfig) -> Result<Box<dyn EquilibriumSystem>, ModelError> {
    cfg.validate()?;
    let m = max_abs_corner(&cfg.window);
    Ok(match cfg.model {
        ModelKind::ComplexSquare => {
            let default = (1.0 + (m * std::f64::consts::SQRT_2).sqrt()).max(3.0);
            let h = cfg.param_f64("domain_half_width")?.unwrap_or(default);
            Box::new(ComplexSquare::with_domain_half_width(h))
        }
        ModelKind::Cusp => {
            let default = (1.0 + m).max(6.0);
            let h = cfg.param_f64("domain_half_width")?.unwrap_or(default);
            Box::new(Cusp::with_domain_half_width(h))
        }
        ModelKind::CesEconomy => Box::new(make_ces_economy(cfg)?),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(x)
    }

    #[test]
    fn complex_square_examples() {
        let s = make_complex_square();
        assert_eq!(s.eval(&v(&[1.0, 0.0]), &v(&[1.0, 0.0])), v(&[0.0, 0.0]));
        assert_eq!(s.eval(&v(&[0.0, 0.0]), &v(&[0.0, 0.0])), v(&[0.0, 0.0]));
        assert_eq!(s.jac_p(&v(&[0.0, 0.0]), &v(&[0.0, 0.0])).determinant(), 0.0);
        let r = std::f64::consts::FRAC_1_SQRT_2;
        let f = s.eval(&v(&[r, r]), &v(&[0.0, 1.0]));
        assert!(f.amax() < 1e-15);
        // det = 4 |p|^2
        let det = s.jac_p(&v(&[0.3, -1.2]), &v(&[0.0, 0.0])).determinant();
        assert!((det - 4.0 * (0.09 + 1.44)).abs() < 1e-12);
    }

    #[test]
    fn cusp_examples() {
        let s = make_cusp();
        let r3 = 3f64.sqrt();
        assert!(s.eval(&v(&[r3]), &v(&[-3.0, 0.0]))[0].abs() < 1e-14);
        assert_eq!(s.eval(&v(&[0.0]), &v(&[-3.0, 0.0]))[0], 0.0);
        assert_eq!(s.eval(&v(&[1.0]), &v(&[-3.0, 2.0]))[0], 0.0);
        assert_eq!(s.jac_p(&v(&[2.0]), &v(&[-1.0, 5.0]))[(0, 0)], 11.0);
    }

    #[test]
    fn ces_symmetric_price_is_equilibrium() {
        let cfg = ModelConfig::new(ModelKind::CesEconomy, Window::square(0.8, 1.2), [32, 32]);
        let s = make_ces_economy(&cfg).unwrap();
        let f = s.eval(&v(&[0.5]), &v(&[1.0, 1.0]));
        assert!(f[0].abs() < 1e-14, "f = {}", f[0]);
    }

    #[test]
    fn ces_walras_law() {
        let cfg = ModelConfig::new(ModelKind::CesEconomy, Window::square(0.8, 1.2), [32, 32]);
        let s = make_ces_economy(&cfg).unwrap();
        for &p in &[0.01, 0.3, 0.5, 0.77, 0.99] {
            let q = v(&[0.93, 1.11]);
            let z1 = s.eval(&v(&[p]), &q)[0];
            let z2 = s.excess_demand_good2(p, &q);
            assert!((p * z1 + (1.0 - p) * z2).abs() < 1e-12);
        }
    }

    #[test]
    fn ces_rejects_undefined_demand() {
        let mut cfg = ModelConfig::new(ModelKind::CesEconomy, Window::square(0.8, 1.2), [32, 32]);
        cfg.params = serde_json::json!({"sigma": 0.0, "weights": [0.9, 0.1], "fixed_endowments": [0.1, 0.1]});
        assert!(make_ces_economy(&cfg).is_err());
        cfg.params = serde_json::json!({"sigma": 0.2, "weights": [1.0, 0.1], "fixed_endowments": [0.1, 0.1]});
        assert!(make_ces_economy(&cfg).is_err());
        cfg.params = Value::Null;
        cfg.window = Window::square(-0.2, 1.2);
        assert!(make_ces_economy(&cfg).is_err());
    }

    #[test]
    fn config_validation() {
        let good = r#"{"model":"cusp","window":[[-4,1],[-3,3]],"resolution":[64,64]}"#;
        let cfg = ModelConfig::from_json(good).unwrap();
        assert_eq!(cfg.model, ModelKind::Cusp);
        let empty = r#"{"model":"cusp","window":[[0,0],[-3,3]],"resolution":[64,64]}"#;
        assert!(matches!(ModelConfig::from_json(empty), Err(ModelError::InvalidConfig(_))));
        let coarse = r#"{"model":"cusp","window":[[-4,1],[-3,3]],"resolution":[8,64]}"#;
        assert!(ModelConfig::from_json(coarse).is_err());
        let unknown = r#"{"model":"torus","window":[[-4,1],[-3,3]],"resolution":[64,64]}"#;
        assert!(matches!(ModelConfig::from_json(unknown), Err(ModelError::Parse(_))));
    }
}
