//! Named analytic scalar fields used as initial data and sources.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Registry of analytic fields `(x, y, t) ↦ value` on the unit square.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case")]
pub enum ScalarField {
    Zero,
    Constant {
        value: f64,
    },
    /// `amplitude · e^{rate t} · sin(kx π x) sin(ky π y)`
    SinProduct {
        #[serde(default = "one")]
        amplitude: f64,
        #[serde(default = "one_u")]
        kx: u32,
        #[serde(default = "one_u")]
        ky: u32,
        #[serde(default)]
        rate: f64,
    },
    /// Smooth compactly supported bump `amplitude · exp(1 - 1/(1 - (r/radius)²))`.
    Bump {
        #[serde(default = "one")]
        amplitude: f64,
        #[serde(default = "half")]
        cx: f64,
        #[serde(default = "half")]
        cy: f64,
        #[serde(default = "quarter")]
        radius: f64,
    },
    /// `amplitude · x(1 - x) y(1 - y)`, the product of the two edge-vanishing
    /// quadratics.
    Bilinear {
        #[serde(default = "one")]
        amplitude: f64,
    },
}

fn one() -> f64 {
    1.0
}
fn one_u() -> u32 {
    1
}
fn half() -> f64 {
    0.5
}
fn quarter() -> f64 {
    0.25
}

impl ScalarField {
    pub fn sin_product() -> Self {
        ScalarField::SinProduct {
            amplitude: 1.0,
            kx: 1,
            ky: 1,
            rate: 0.0,
        }
    }

    pub fn eval(&self, x: f64, y: f64, t: f64) -> f64 {
        match *self {
            ScalarField::Zero => 0.0,
            ScalarField::Constant { value } => value,
            ScalarField::SinProduct {
                amplitude,
                kx,
                ky,
                rate,
            } => {
                let time = if rate == 0.0 { 1.0 } else { (rate * t).exp() };
                amplitude * time * (kx as f64 * PI * x).sin() * (ky as f64 * PI * y).sin()
            }
            ScalarField::Bump {
                amplitude,
                cx,
                cy,
                radius,
            } => {
                let r2 = ((x - cx).powi(2) + (y - cy).powi(2)) / (radius * radius);
                if r2 >= 1.0 {
                    0.0
                } else {
                    amplitude * (1.0 - 1.0 / (1.0 - r2)).exp()
                }
            }
            ScalarField::Bilinear { amplitude } => amplitude * x * (1.0 - x) * y * (1.0 - y),
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, ScalarField::Zero)
    }
}
