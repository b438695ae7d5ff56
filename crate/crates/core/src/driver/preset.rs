use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::basis::{PrimitiveBasis, SymMatrix};
use crate::error::{Error, Result};
use crate::fields::{GridDomain, SymField, VectorField};

pub const PRESET_NAMES: [&str; 3] = ["exact-deficit", "perturbed-deficit", "anisotropic"];

/// Problem generator parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PresetSpec {
    pub name: String,
    /// Scale `s` of the flat initial immersion `s (x, 0)`.
    #[serde(default = "default_scale")]
    pub scale: f64,
    /// Relative modulation `epsilon` of the deficit, at most `r/2`.
    #[serde(default)]
    pub epsilon: f64,
}

fn default_scale() -> f64 {
    1.0
}

impl PresetSpec {
    pub fn new(name: &str) -> Self {
        Self {
            name: name.to_string(),
            scale: 1.0,
            epsilon: 0.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Preset {
    pub g: SymField,
    pub u0: VectorField,
}

/// Builds `(g, u0)` with `g - Du0^t Du0 = delta0 (h0 + modulation)`.
pub fn make_preset(
    spec: &PresetSpec,
    basis: &PrimitiveBasis,
    delta0: f64,
    r_threshold: f64,
    grid: &GridDomain,
) -> Result<Preset> {
    let n = basis.n();
    if grid.dim() != n {
        return Err(Error::Dimension(format!(
            "{}-d grid for n = {n}",
            grid.dim()
        )));
    }
    if !PRESET_NAMES.contains(&spec.name.as_str()) {
        return Err(Error::UnknownPreset(spec.name.clone()));
    }
    if !(spec.epsilon.abs() <= 0.5 * r_threshold) {
        return Err(Error::Param(format!(
            "preset epsilon {} exceeds r/2 = {}",
            spec.epsilon,
            0.5 * r_threshold
        )));
    }
    let s = spec.scale;
    let base = SymMatrix::identity(n)
        .scaled(s * s)
        .add(&basis.h0().scaled(delta0));
    let e1 = SymMatrix::outer(&{
        let mut v = vec![0.0; n];
        v[0] = 1.0;
        v
    });
    let eps = spec.epsilon;
    let h0 = basis.h0().clone();
    let g = match spec.name.as_str() {
        "exact-deficit" => SymField::constant(grid, &base),
        "perturbed-deficit" => SymField::from_fn(grid, n, |x| {
            base.add(&h0.scaled(delta0 * eps * (2.0 * PI * x[0]).sin() * (2.0 * PI * x[1]).sin()))
        }),
        _ => SymField::from_fn(grid, n, |x| {
            base.add(&e1.scaled(delta0 * eps * (2.0 * PI * x[0]).sin()))
        }),
    };
    let u0 = VectorField::from_fn(grid, n + 1, |x, o| {
        for (k, xk) in x.iter().enumerate() {
            o[k] = s * xk;
        }
        o[n] = 0.0;
    });
    Ok(Preset { g, u0 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{induced_metric, GridField};

    fn grid() -> GridDomain {
        GridDomain::cube(2, 0.0, 1.0, 33).unwrap()
    }

    #[test]
    fn exact_deficit_is_delta_h0() {
        let b = PrimitiveBasis::new(2).unwrap();
        let p = make_preset(&PresetSpec::new("exact-deficit"), &b, 0.1, 0.5, &grid()).unwrap();
        let d = p.g.sub(&induced_metric(&p.u0).unwrap());
        let want = [0.15, 0.05, 0.15];
        for (c, w) in d.channels().iter().zip(want) {
            assert!(c.iter().all(|v| (v - w).abs() < 1e-14));
        }
    }

    #[test]
    fn perturbed_closeness_margin() {
        let b = PrimitiveBasis::new(2).unwrap();
        let r = 0.5;
        let spec = PresetSpec {
            epsilon: 0.05 * r,
            ..PresetSpec::new("perturbed-deficit")
        };
        let p = make_preset(&spec, &b, 0.1, r, &grid()).unwrap();
        let closeness =
            p.g.sub(&induced_metric(&p.u0).unwrap())
                .sub_constant(&b.h0().scaled(0.1))
                .sup_norm();
        assert!(
            closeness <= r * 0.1 - 0.5 * r * 0.1,
            "closeness {closeness}"
        );
    }

    #[test]
    fn presets_are_strictly_short() {
        let b = PrimitiveBasis::new(2).unwrap();
        for name in PRESET_NAMES {
            let spec = PresetSpec {
                epsilon: 0.25,
                ..PresetSpec::new(name)
            };
            let p = make_preset(&spec, &b, 0.1, 0.5, &grid()).unwrap();
            let d = p.g.sub(&induced_metric(&p.u0).unwrap());
            for idx in 0..d.domain().len() {
                let m = d.at(idx);
                let (a, c, e) = (m.get(0, 0), m.get(0, 1), m.get(1, 1));
                assert!(a > 0.0 && a * e - c * c > 0.0, "{name} at {idx}");
            }
        }
    }

    #[test]
    fn unknown_and_oversized() {
        let b = PrimitiveBasis::new(2).unwrap();
        assert!(matches!(
            make_preset(&PresetSpec::new("sphere"), &b, 0.1, 0.5, &grid()),
            Err(Error::UnknownPreset(_))
        ));
        let spec = PresetSpec {
            epsilon: 0.3,
            ..PresetSpec::new("anisotropic")
        };
        assert!(matches!(
            make_preset(&spec, &b, 0.1, 0.5, &grid()),
            Err(Error::Param(_))
        ));
    }
}
