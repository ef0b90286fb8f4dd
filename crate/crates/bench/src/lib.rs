//! Fixtures shared by the benchmarks.

use lagflow_core::assembly::P1Space;
use lagflow_core::mesh::{interpolate_field, unit_square_mesh};
use lagflow_core::{FemFunction, NFunctionPD, RegularizationKind, RegularizedDensity, ScalarField, SchemeConfig};
use std::sync::Arc;

pub struct Fixture {
    pub space: Arc<P1Space>,
    pub u: FemFunction,
    pub cfg: SchemeConfig,
}

/// Unit-square problem with `n` subdivisions, sine-product data and `K = 10`.
pub fn fixture(n: usize, p: f64, eps: f64) -> Fixture {
    let mesh = Arc::new(unit_square_mesh(n).expect("n >= 1"));
    let u = interpolate_field(&ScalarField::sin_product(), 0.0, &mesh);
    let nf = NFunctionPD::new(p, 0.0).expect("valid exponent");
    let density = RegularizedDensity::new(nf, eps, RegularizationKind::QuadraticNorm).expect("valid eps");
    Fixture {
        space: Arc::new(P1Space::new(mesh)),
        u,
        cfg: SchemeConfig::new(density, 0.1, 10),
    }
}
