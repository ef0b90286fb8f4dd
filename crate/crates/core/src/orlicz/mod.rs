//! N-functions with (p, δ)-structure.
//!
//! The density is the canonical representative
//! `φ'(t) = (δ + t)^{p-2} t`, `φ(t) = ∫₀ᵗ φ'(s) ds`. Shifting by `α` gives
//! `φ'_α(t) = (δ + α + t)^{p-2} t`, so every shift of the density is again of
//! the same form with `δ` replaced by `δ + α`. All evaluations below reduce
//! to the primitive `∫₀ᵗ (s + x)^{p-2} x dx` for a total shift `s`.

mod certify;

pub use certify::{
    certify_lemmas, CertificationReport, CertifyOptions, InequalityTally, MeasuredConstant,
    FROZEN_EQUI_RATIO, FROZEN_LAGGED_WEIGHT_RATIO, FROZEN_MONOTONE_INNER_RATIO,
    FROZEN_MONOTONE_SHIFTED_RATIO, FROZEN_S_EPS_LIPSCHITZ,
};

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::ops::{Add, Mul, Neg, Sub};

/// Absolute tolerance for inequality checks on unit-scale inputs. Scaled by
/// `max(1, |lhs|, |rhs|)`.
pub const TOL_ABS: f64 = 1e-10;

pub(crate) fn scaled_tol(lhs: f64, rhs: f64) -> f64 {
    TOL_ABS * 1f64.max(lhs.abs()).max(rhs.abs())
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Vec2 { x, y }
    }

    #[inline]
    pub fn dot(self, other: Vec2) -> f64 {
        self.x * other.x + self.y * other.y
    }

    #[inline]
    pub fn norm_sq(self) -> f64 {
        self.dot(self)
    }

    #[inline]
    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    #[inline]
    fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    #[inline]
    fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }
}

impl Neg for Vec2 {
    type Output = Vec2;
    #[inline]
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

impl Mul<Vec2> for f64 {
    type Output = Vec2;
    #[inline]
    fn mul(self, v: Vec2) -> Vec2 {
        Vec2::new(self * v.x, self * v.y)
    }
}

/// Which regularization of the degenerate flux is used.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RegularizationKind {
    /// Shifted N-function `φ_ε`, weight `φ'_ε(t)/t = (δ + ε + t)^{p-2}`.
    AdditiveShift,
    /// Regularized norm `|a|_ε = (|a|² + ε²)^{1/2}`, weight `|a|_ε^{p-2}`,
    /// density `|a|_ε^p / p`. Only defined for `δ = 0`.
    QuadraticNorm,
}

/// N-function with (p, δ)-structure, `p ∈ (1, 2]`, `δ ≥ 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NFunctionPD {
    p: f64,
    delta: f64,
}

impl NFunctionPD {
    pub fn new(p: f64, delta: f64) -> Result<Self> {
        if !(p.is_finite() && p > 1.0 && p <= 2.0) {
            return Err(Error::param("p", format!("must lie in (1, 2], got {p}")));
        }
        if !(delta.is_finite() && delta >= 0.0) {
            return Err(Error::param(
                "delta",
                format!("must be finite and >= 0, got {delta}"),
            ));
        }
        Ok(NFunctionPD { p, delta })
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// Lower index: `κ₀ φ'(r) ≤ r φ''(r)`.
    pub fn kappa0(&self) -> f64 {
        self.p - 1.0
    }

    /// Upper index: `r φ''(r) ≤ κ₁ φ'(r)`.
    pub fn kappa1(&self) -> f64 {
        (self.p - 1.0).max(1.0)
    }

    pub fn phi(&self, t: f64) -> Result<f64> {
        check_arg("t", t)?;
        Ok(primitive(self.p, self.delta, t))
    }

    pub fn phi_prime(&self, t: f64) -> Result<f64> {
        check_arg("t", t)?;
        Ok(shifted_prime(self.p, self.delta, t))
    }

    /// `φ''(t) = (δ + t)^{p-3} ((p - 1) t + δ)` for `t > 0`.
    pub fn phi_second(&self, t: f64) -> Result<f64> {
        check_arg("t", t)?;
        if t == 0.0 {
            return Err(Error::Domain("phi'' is evaluated for t > 0 only".into()));
        }
        let s = self.delta + t;
        Ok(s.powf(self.p - 3.0) * ((self.p - 1.0) * t + self.delta))
    }

    /// `φ_α(t)`.
    pub fn phi_shifted(&self, alpha: f64, t: f64) -> Result<f64> {
        check_arg("alpha", alpha)?;
        check_arg("t", t)?;
        Ok(primitive(self.p, self.delta + alpha, t))
    }

    /// `φ'_α(t) = φ'(α + t) t / (α + t)`, zero at `t = 0`.
    pub fn phi_shifted_prime(&self, alpha: f64, t: f64) -> Result<f64> {
        check_arg("alpha", alpha)?;
        check_arg("t", t)?;
        Ok(shifted_prime(self.p, self.delta + alpha, t))
    }

    /// `φ'_α(t) / t`, with the `t → 0⁺` limit `(δ + α)^{p-2}` at zero
    /// (infinite when `δ + α = 0` and `p < 2`).
    pub fn shifted_weight(&self, alpha: f64, t: f64) -> f64 {
        shift_weight(self.p, self.delta + alpha, t)
    }

    /// `A_α(a) = φ'_α(|a|) a / |a|`.
    pub fn op_a(&self, alpha: f64, a: Vec2) -> Vec2 {
        let t = a.norm();
        if t == 0.0 {
            return Vec2::ZERO;
        }
        self.shifted_weight(alpha, t) * a
    }
}

fn check_arg(name: &'static str, v: f64) -> Result<()> {
    if !v.is_finite() {
        return Err(Error::Domain(format!("{name} must be finite, got {v}")));
    }
    if v < 0.0 {
        return Err(Error::Domain(format!("{name} must be >= 0, got {v}")));
    }
    Ok(())
}

/// `(s + t)^{p-2}`, the weight of the density with total shift `s`.
#[inline]
pub(crate) fn shift_weight(p: f64, s: f64, t: f64) -> f64 {
    if p == 2.0 {
        return 1.0;
    }
    (s + t).powf(p - 2.0)
}

#[inline]
pub(crate) fn shifted_prime(p: f64, s: f64, t: f64) -> f64 {
    if t == 0.0 {
        return 0.0;
    }
    shift_weight(p, s, t) * t
}

/// `∫₀ᵗ (s + x)^{p-2} x dx` for `s, t ≥ 0`.
///
/// For `t ≪ s` the closed form cancels catastrophically, so the binomial
/// series `s^{p-2} t² Σ_k C(p-2, k) (t/s)^k / (k + 2)` is used instead.
pub(crate) fn primitive(p: f64, s: f64, t: f64) -> f64 {
    if t == 0.0 {
        return 0.0;
    }
    if p == 2.0 {
        return 0.5 * t * t;
    }
    if s == 0.0 {
        return t.powf(p) / p;
    }
    let q = t / s;
    if q < 0.125 {
        let mut coeff = 1.0;
        let mut qk = 1.0;
        let mut sum = 0.0;
        for k in 0..40 {
            let term = coeff * qk / (k as f64 + 2.0);
            sum += term;
            if term.abs() < 1e-18 * sum.abs() {
                break;
            }
            coeff *= (p - 2.0 - k as f64) / (k as f64 + 1.0);
            qk *= q;
        }
        return s.powf(p - 2.0) * t * t * sum;
    }
    let st = s + t;
    let lead = (st.powf(p) - s.powf(p)) / p;
    let corr = s * (st.powf(p - 1.0) - s.powf(p - 1.0)) / (p - 1.0);
    (lead - corr).max(0.0)
}

/// `S_ε(a) = a / |a|_ε^{2-p}` with `|a|_ε = (|a|² + ε²)^{1/2}`.
pub fn op_s_eps(p: f64, eps: f64, a: Vec2) -> Vec2 {
    if p == 2.0 {
        return a;
    }
    let r2 = a.norm_sq();
    if r2 == 0.0 {
        return Vec2::ZERO;
    }
    (r2 + eps * eps).powf(0.5 * (p - 2.0)) * a
}

/// Regularized density used by the schemes: a (p, δ) N-function, a
/// regularization parameter and the way it enters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegularizedDensity {
    pub nf: NFunctionPD,
    pub eps: f64,
    pub kind: RegularizationKind,
}

impl RegularizedDensity {
    pub fn new(nf: NFunctionPD, eps: f64, kind: RegularizationKind) -> Result<Self> {
        if !(eps.is_finite() && eps >= 0.0) {
            return Err(Error::param("eps", format!("must be finite and >= 0, got {eps}")));
        }
        if kind == RegularizationKind::QuadraticNorm && nf.delta() != 0.0 {
            return Err(Error::param(
                "delta",
                "the quadratic-norm regularization is defined for delta = 0 only",
            ));
        }
        Ok(RegularizedDensity { nf, eps, kind })
    }

    pub fn p(&self) -> f64 {
        self.nf.p()
    }

    /// True when the weight stays finite at zero gradient.
    pub fn is_nondegenerate(&self) -> bool {
        self.p() == 2.0 || self.eps > 0.0 || self.nf.delta() > 0.0
    }

    /// Diffusion weight `ω(t)` multiplying the gradient, `t = |∇u|`.
    #[inline]
    pub fn weight(&self, t: f64) -> f64 {
        let p = self.p();
        if p == 2.0 {
            return 1.0;
        }
        match self.kind {
            RegularizationKind::AdditiveShift => shift_weight(p, self.nf.delta() + self.eps, t),
            RegularizationKind::QuadraticNorm => {
                (t * t + self.eps * self.eps).powf(0.5 * (p - 2.0))
            }
        }
    }

    /// Energy density `ψ(t)` with `ψ'(t) = ω(t) t`.
    ///
    /// For the quadratic norm this is `|t|_ε^p / p`, which does not vanish at
    /// zero.
    pub fn density(&self, t: f64) -> f64 {
        let p = self.p();
        match self.kind {
            RegularizationKind::AdditiveShift => primitive(p, self.nf.delta() + self.eps, t),
            RegularizationKind::QuadraticNorm => {
                if p == 2.0 {
                    0.5 * (t * t + self.eps * self.eps)
                } else {
                    (t * t + self.eps * self.eps).powf(0.5 * p) / p
                }
            }
        }
    }

    /// Flux `ω(|g|) g`.
    pub fn flux(&self, g: Vec2) -> Vec2 {
        let t = g.norm();
        if t == 0.0 {
            return Vec2::ZERO;
        }
        self.weight(t) * g
    }

    /// Jacobian of the flux, `ω I + (ω'(t)/t) g gᵀ`, as `[[xx, xy], [xy, yy]]`.
    pub fn flux_jacobian(&self, g: Vec2) -> [[f64; 2]; 2] {
        let t = g.norm();
        let w = self.weight(t);
        let p = self.p();
        let c = if p == 2.0 || t == 0.0 {
            0.0
        } else {
            match self.kind {
                RegularizationKind::AdditiveShift => {
                    let s = self.nf.delta() + self.eps + t;
                    (p - 2.0) * s.powf(p - 3.0) / t
                }
                RegularizationKind::QuadraticNorm => {
                    (p - 2.0) * (t * t + self.eps * self.eps).powf(0.5 * (p - 4.0))
                }
            }
        };
        [
            [w + c * g.x * g.x, c * g.x * g.y],
            [c * g.x * g.y, w + c * g.y * g.y],
        ]
    }
}

/// Result of a one-sided inequality check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InequalityCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

/// `|A_ε(a) - A₀(a)| ≤ (1 - κ₀) φ'(ε)`.
pub fn check_uniform_eps_bound(nf: &NFunctionPD, a: Vec2, eps: f64) -> Result<InequalityCheck> {
    if !(eps.is_finite() && eps > 0.0) {
        return Err(Error::Domain(format!("eps must be > 0, got {eps}")));
    }
    let p = nf.p();
    let t = a.norm();
    let lhs = if t == 0.0 {
        0.0
    } else {
        t * (nf.shifted_weight(0.0, t) - nf.shifted_weight(eps, t)).abs()
    };
    let rhs = (1.0 - nf.kappa0()) * shifted_prime(p, nf.delta(), eps);
    Ok(InequalityCheck {
        lhs,
        rhs,
        holds: lhs <= rhs + scaled_tol(lhs, rhs),
    })
}

/// `(φ'_ε(|a|)/|a|) b·(b-a) ≥ φ_ε(|b|) - φ_ε(|a|) + ½ (φ'_ε(|a|)/|a|) |b-a|²`.
pub fn check_orlicz_stability(nf: &NFunctionPD, a: Vec2, b: Vec2, eps: f64) -> InequalityCheck {
    let p = nf.p();
    let s = nf.delta() + eps;
    let ta = a.norm();
    let tb = b.norm();
    let w = nf.shifted_weight(eps, ta);
    let diff = b - a;
    if w.is_infinite() {
        // a = 0 with no shift: the weight blows up and dominates both sides.
        if diff.norm_sq() == 0.0 {
            return InequalityCheck {
                lhs: 0.0,
                rhs: 0.0,
                holds: true,
            };
        }
        return InequalityCheck {
            lhs: f64::INFINITY,
            rhs: f64::INFINITY,
            holds: true,
        };
    }
    let lhs = w * b.dot(diff);
    let rhs = primitive(p, s, tb) - primitive(p, s, ta) + 0.5 * w * diff.norm_sq();
    InequalityCheck {
        lhs,
        rhs,
        holds: lhs >= rhs - scaled_tol(lhs, rhs),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LaggedWeightCheck {
    pub lhs: f64,
    pub bound_unit: f64,
    pub ratio: f64,
}

/// `|(φ'_ε(|a|)/|a| - φ'_ε(|b|)/|b|) a|` against `(φ'_ε(|b|)/|b|) |a - b|`.
pub fn check_lagged_weight_estimate(
    nf: &NFunctionPD,
    a: Vec2,
    b: Vec2,
    eps: f64,
) -> Result<LaggedWeightCheck> {
    let tb = b.norm();
    if tb == 0.0 {
        return Err(Error::Degenerate("lagged-weight estimate needs b != 0".into()));
    }
    let ta = a.norm();
    let wb = nf.shifted_weight(eps, tb);
    let lhs = if ta == 0.0 {
        0.0
    } else {
        (nf.shifted_weight(eps, ta) - wb).abs() * ta
    };
    let bound_unit = wb * (a - b).norm();
    let ratio = if lhs == 0.0 { 0.0 } else { lhs / bound_unit };
    Ok(LaggedWeightCheck {
        lhs,
        bound_unit,
        ratio,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MonotonicityCheck {
    /// `(A_α(a) - A_α(b))·(a - b)`
    pub inner: f64,
    /// `(φ_α)_{|a|}(|a - b|)`
    pub shifted_phi_val: f64,
    /// `φ'_α(|a| + |b|) / (|a| + |b|) |a - b|²`
    pub quotient_form: f64,
}

impl MonotonicityCheck {
    pub fn inner_over_quotient(&self) -> f64 {
        self.inner / self.quotient_form
    }

    pub fn shifted_over_quotient(&self) -> f64 {
        self.shifted_phi_val / self.quotient_form
    }
}

pub fn check_monotonicity_equivalence(
    nf: &NFunctionPD,
    a: Vec2,
    b: Vec2,
    alpha: f64,
) -> Result<MonotonicityCheck> {
    let diff = a - b;
    let dn = diff.norm();
    if dn == 0.0 {
        return Err(Error::Degenerate("monotonicity check needs a != b".into()));
    }
    let p = nf.p();
    let s = nf.delta() + alpha;
    let ta = a.norm();
    let tb = b.norm();
    let inner = (nf.op_a(alpha, a) - nf.op_a(alpha, b)).dot(diff);
    // Shifting the shifted density by |a| adds |a| to the total shift.
    let shifted_phi_val = primitive(p, s + ta, dn);
    let quotient_form = shift_weight(p, s, ta + tb) * dn * dn;
    Ok(MonotonicityCheck {
        inner,
        shifted_phi_val,
        quotient_form,
    })
}
