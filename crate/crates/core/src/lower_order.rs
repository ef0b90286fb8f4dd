//! Lower-order coefficients `d` and the induced nonlinearity `g(s) = d(s) s`.
//!
//! The registry is closed so that the bounds `d(s) ≥ -c₇` and
//! `|d(s)| ≤ c₈ (1 + |s|^{r-2})` follow from the structure of each kind.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Spatial dimension of the finite element backend.
pub const DIM: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SchemeKind {
    Implicit,
    SemiImplicit,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LowerOrderCoeff {
    /// `d ≡ 0`: pure gradient flow.
    Zero,
    /// `d(s) = |s|^{r-2}`.
    Power { r: f64 },
    /// `d(s) = |s|^{r-2} - c`.
    ShiftedPower { r: f64, c: f64 },
}

impl LowerOrderCoeff {
    pub fn power(r: f64) -> Result<Self> {
        check_r(r)?;
        Ok(LowerOrderCoeff::Power { r })
    }

    pub fn shifted_power(r: f64, c: f64) -> Result<Self> {
        check_r(r)?;
        if !(c.is_finite() && c >= 0.0) {
            return Err(Error::param("c", format!("must be finite and >= 0, got {c}")));
        }
        Ok(LowerOrderCoeff::ShiftedPower { r, c })
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            LowerOrderCoeff::Zero => Ok(()),
            LowerOrderCoeff::Power { r } => check_r(r),
            LowerOrderCoeff::ShiftedPower { r, c } => Self::shifted_power(r, c).map(|_| ()),
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, LowerOrderCoeff::Zero)
    }

    /// Growth exponent `r`; `None` for the zero coefficient.
    pub fn exponent(&self) -> Option<f64> {
        match *self {
            LowerOrderCoeff::Zero => None,
            LowerOrderCoeff::Power { r } | LowerOrderCoeff::ShiftedPower { r, .. } => Some(r),
        }
    }

    #[inline]
    pub fn d(&self, s: f64) -> f64 {
        match *self {
            LowerOrderCoeff::Zero => 0.0,
            LowerOrderCoeff::Power { r } => s.abs().powf(r - 2.0),
            LowerOrderCoeff::ShiftedPower { r, c } => s.abs().powf(r - 2.0) - c,
        }
    }

    #[inline]
    pub fn g(&self, s: f64) -> f64 {
        self.d(s) * s
    }

    /// `g'(s) = (r - 1)|s|^{r-2} - c`.
    #[inline]
    pub fn g_prime(&self, s: f64) -> f64 {
        match *self {
            LowerOrderCoeff::Zero => 0.0,
            LowerOrderCoeff::Power { r } => (r - 1.0) * s.abs().powf(r - 2.0),
            LowerOrderCoeff::ShiftedPower { r, c } => (r - 1.0) * s.abs().powf(r - 2.0) - c,
        }
    }

    /// Lower bound constant: `d(s) ≥ -c₇`.
    pub fn c7(&self) -> f64 {
        match *self {
            LowerOrderCoeff::ShiftedPower { c, .. } => c,
            _ => 0.0,
        }
    }

    /// Growth constant: `|d(s)| ≤ c₈ (1 + |s|^{r-2})`.
    pub fn c8(&self) -> f64 {
        match *self {
            LowerOrderCoeff::ShiftedPower { c, .. } => c.max(1.0),
            _ => 1.0,
        }
    }

    /// Constant in `|g(s)| ≤ c₉ (1 + |s|^{r-1})`. From `|g| ≤ c₈(|s| + |s|^{r-1})`
    /// and `|s| ≤ 1 + |s|^{r-1}`, `c₉ = 2 c₈` suffices.
    pub fn c9(&self) -> f64 {
        2.0 * self.c8()
    }

    /// Whether `r` lies in the convergence range of the given scheme for
    /// exponent `p` in `d = 2`: `(2, 2p]` for the implicit scheme, `(2, p + 1]`
    /// for the semi-implicit scheme with `p < 2`, and `(2, 3)` for `p = 2`.
    /// The zero coefficient is always admissible.
    pub fn admissibility(&self, p: f64, scheme: SchemeKind) -> bool {
        let Some(r) = self.exponent() else {
            return true;
        };
        if r <= 2.0 {
            return false;
        }
        match scheme {
            SchemeKind::Implicit => r <= p * (DIM + 2.0) / DIM,
            SchemeKind::SemiImplicit => {
                if p == 2.0 {
                    r < 3.0
                } else {
                    r <= p * (DIM + 2.0) / (2.0 * DIM) + 1.0
                }
            }
        }
    }
}

fn check_r(r: f64) -> Result<()> {
    if !(r.is_finite() && r > 2.0) {
        return Err(Error::param("r", format!("must lie in (2, inf), got {r}")));
    }
    Ok(())
}

/// Lower end of the exponent range `p > 2d/(d + 2)` the convergence theory covers.
pub fn min_exponent() -> f64 {
    2.0 * DIM / (DIM + 2.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn d_and_g_values() {
        let zero = LowerOrderCoeff::Zero;
        assert_eq!(zero.d(5.0), 0.0);
        assert_eq!(zero.g(7.0), 0.0);
        let p25 = LowerOrderCoeff::power(2.5).unwrap();
        assert_eq!(p25.d(4.0), 2.0);
        assert_eq!(p25.g(4.0), 8.0);
        assert_eq!(p25.g(0.0), 0.0);
        let p4 = LowerOrderCoeff::power(4.0).unwrap();
        assert_eq!(p4.d(-3.0), 9.0);
        let sp = LowerOrderCoeff::shifted_power(3.0, 0.5).unwrap();
        assert_eq!(sp.d(2.0), 1.5);
        assert_eq!(sp.g(0.0), 0.0);
    }

    #[test]
    fn constructors_validate() {
        assert!(LowerOrderCoeff::power(2.0).is_err());
        assert!(LowerOrderCoeff::power(f64::NAN).is_err());
        assert!(LowerOrderCoeff::shifted_power(3.0, -1.0).is_err());
    }

    #[test]
    fn admissibility_intervals() {
        let semi = SchemeKind::SemiImplicit;
        let imp = SchemeKind::Implicit;
        assert!(LowerOrderCoeff::power(2.5).unwrap().admissibility(1.5, semi));
        assert!(!LowerOrderCoeff::power(2.6).unwrap().admissibility(1.5, semi));
        assert!(LowerOrderCoeff::power(3.0).unwrap().admissibility(1.5, imp));
        assert!(!LowerOrderCoeff::power(3.01).unwrap().admissibility(1.5, imp));
        // p = 2 in two dimensions: open interval (2, 3)
        assert!(LowerOrderCoeff::power(2.99).unwrap().admissibility(2.0, semi));
        assert!(!LowerOrderCoeff::power(3.0).unwrap().admissibility(2.0, semi));
        assert!(LowerOrderCoeff::Zero.admissibility(1.2, semi));
        assert_eq!(min_exponent(), 1.0);
    }

    proptest! {
        #[test]
        fn growth_bounds_hold(s in -50.0f64..50.0, r in 2.01f64..6.0, c in 0.0f64..4.0) {
            for coeff in [
                LowerOrderCoeff::Zero,
                LowerOrderCoeff::power(r).unwrap(),
                LowerOrderCoeff::shifted_power(r, c).unwrap(),
            ] {
                let d = coeff.d(s);
                prop_assert!(d >= -coeff.c7());
                let re = coeff.exponent().unwrap_or(r);
                prop_assert!(d.abs() <= coeff.c8() * (1.0 + s.abs().powf(re - 2.0)) * (1.0 + 1e-14));
                prop_assert!(coeff.g(s).abs() <= coeff.c9() * (1.0 + s.abs().powf(re - 1.0)) * (1.0 + 1e-14));
            }
        }

        #[test]
        fn g_is_continuous(s in -10.0f64..10.0, r in 2.01f64..5.0) {
            let coeff = LowerOrderCoeff::power(r).unwrap();
            let h = 1e-9;
            prop_assert!((coeff.g(s + h) - coeff.g(s)).abs() < 1e-5);
        }
    }
}
