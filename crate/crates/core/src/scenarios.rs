//! Bundled scenarios and the serializable descriptions of factors and
//! cross-sections shared with run configurations.

use std::f64::consts::PI;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::cross_section::{CrossSection, SpectralEntry, SpinStructure};
use crate::warp_geometry::{rotational_factor, ConformalFactor, Table, Warp};
use crate::{Error, Result};

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum FactorConfig {
    /// `f = scale · x^{−p}` on `(0, ε)`.
    PowerLaw {
        p: f64,
        #[serde(default = "one")]
        scale: f64,
        #[serde(default = "one")]
        epsilon: f64,
    },
    /// `f = 1/x`.
    Hyperbolic {
        #[serde(default = "one")]
        epsilon: f64,
    },
    Constant {
        c: f64,
        #[serde(default = "one")]
        epsilon: f64,
    },
    /// `f = e^{−t}` on `(0, ∞)`.
    Cusp,
    /// `dr² + r^{2k} dθ²` rewritten in conformal form.
    Rotational { k: f64 },
    /// CSV file with columns `x,f`.
    Tabulated { path: PathBuf, epsilon: Option<f64> },
}

impl FactorConfig {
    pub fn build(&self) -> Result<ConformalFactor> {
        match self {
            Self::PowerLaw { p, scale, epsilon } => {
                ConformalFactor::scaled_power_law(*p, *scale, *epsilon)
            }
            Self::Hyperbolic { epsilon } => ConformalFactor::hyperbolic(*epsilon),
            Self::Constant { c, epsilon } => ConformalFactor::constant(*c, *epsilon),
            Self::Cusp => Ok(ConformalFactor::cusp()),
            Self::Rotational { k } => rotational_factor(*k),
            Self::Tabulated { path, epsilon } => {
                ConformalFactor::tabulated(Table::from_csv(path)?, *epsilon)
            }
        }
    }

    /// Short flag syntax: `1/x`, `x^-P`, `const:C`, `cusp`, `rotational:K`.
    pub fn parse_flag(s: &str) -> Result<Self> {
        let num = |v: &str| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| Error::invalid(format!("bad number in factor `{s}`")))
        };
        let t = s.trim();
        if t == "1/x" || t == "hyperbolic" {
            return Ok(Self::Hyperbolic { epsilon: 1.0 });
        }
        if t == "cusp" {
            return Ok(Self::Cusp);
        }
        if let Some(p) = t.strip_prefix("x^-") {
            return Ok(Self::PowerLaw {
                p: num(p)?,
                scale: 1.0,
                epsilon: 1.0,
            });
        }
        if let Some(c) = t.strip_prefix("const:") {
            return Ok(Self::Constant {
                c: num(c)?,
                epsilon: 1.0,
            });
        }
        if let Some(k) = t.strip_prefix("rotational:") {
            return Ok(Self::Rotational { k: num(k)? });
        }
        Err(Error::invalid(format!(
            "unknown factor `{s}` (use 1/x, x^-P, const:C, cusp or rotational:K)"
        )))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CrossSectionKindConfig {
    CircleTrivial,
    CircleNontrivial,
    FlatTorus,
    UserSpectrum,
}

/// Run-config form of a cross-section. Which keys are required depends on
/// `kind`: `L` for circles, `basis` and `parity` for tori, `spectrum` and
/// `dim` for user lists. `cutoff` overrides the run's mode cutoff.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CrossSectionConfig {
    pub kind: CrossSectionKindConfig,
    #[serde(rename = "L", default, skip_serializing_if = "Option::is_none")]
    pub length: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub basis: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parity: Option<Vec<bool>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spectrum: Option<Vec<SpectralEntry>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cutoff: Option<f64>,
}

fn require<T: Clone>(v: &Option<T>, key: &str, kind: &str) -> Result<T> {
    v.clone().ok_or_else(|| Error::Config {
        path: format!("cross_section.{key}"),
        message: format!("required for kind {kind}"),
    })
}

impl CrossSectionConfig {
    pub fn circle(length: f64, spin: SpinStructure) -> Self {
        let kind = match spin {
            SpinStructure::Trivial => CrossSectionKindConfig::CircleTrivial,
            SpinStructure::Nontrivial => CrossSectionKindConfig::CircleNontrivial,
        };
        Self {
            kind,
            length: Some(length),
            basis: None,
            parity: None,
            spectrum: None,
            dim: None,
            cutoff: None,
        }
    }

    pub fn torus(basis: Vec<Vec<f64>>, parity: Vec<bool>) -> Self {
        Self {
            kind: CrossSectionKindConfig::FlatTorus,
            length: None,
            basis: Some(basis),
            parity: Some(parity),
            spectrum: None,
            dim: None,
            cutoff: None,
        }
    }

    pub fn build(&self) -> Result<CrossSection> {
        match self.kind {
            CrossSectionKindConfig::CircleTrivial => CrossSection::circle(
                require(&self.length, "L", "circle_trivial")?,
                SpinStructure::Trivial,
            ),
            CrossSectionKindConfig::CircleNontrivial => CrossSection::circle(
                require(&self.length, "L", "circle_nontrivial")?,
                SpinStructure::Nontrivial,
            ),
            CrossSectionKindConfig::FlatTorus => CrossSection::torus(
                require(&self.basis, "basis", "flat_torus")?,
                require(&self.parity, "parity", "flat_torus")?,
            ),
            CrossSectionKindConfig::UserSpectrum => CrossSection::user(
                "user",
                require(&self.dim, "dim", "user_spectrum")?,
                require(&self.spectrum, "spectrum", "user_spectrum")?,
            ),
        }
    }

    /// Short flag syntax: `circle`, `circle-trivial`, `circle-nontrivial`,
    /// `torus`, `torus-trivial` (length 2π, square tori).
    pub fn parse_flag(s: &str) -> Result<Self> {
        let square = vec![vec![2.0 * PI, 0.0], vec![0.0, 2.0 * PI]];
        Ok(match s.trim() {
            "circle" | "circle-nontrivial" => Self::circle(2.0 * PI, SpinStructure::Nontrivial),
            "circle-trivial" => Self::circle(2.0 * PI, SpinStructure::Trivial),
            "torus" => Self::torus(square, vec![true, true]),
            "torus-trivial" => Self::torus(square, vec![false, false]),
            other => {
                return Err(Error::invalid(format!(
                    "unknown cross-section `{other}` (use circle, circle-trivial, circle-nontrivial, torus or torus-trivial)"
                )))
            }
        })
    }
}

/// What a scenario is expected to show.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Expectation {
    /// Divergent factor: no L² eigenspinor in any cell.
    NoPointSpectrum,
    /// Convergent control: candidate bound states must appear.
    Control,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Scenario {
    pub name: String,
    pub description: &'static str,
    pub cross_section: CrossSectionConfig,
    pub factor: FactorConfig,
    pub rho: Option<Warp>,
    pub expectation: Expectation,
}

pub const SCENARIO_NAMES: [&str; 8] = [
    "hyperbolic-n2",
    "hyperbolic-family",
    "anghel-rotational",
    "cusp-control",
    "flat-control",
    "power-law-1",
    "power-law-1.5",
    "power-law-2",
];

pub fn scenario(name: &str) -> Result<Scenario> {
    let bounding = CrossSectionConfig::circle(2.0 * PI, SpinStructure::Nontrivial);
    let periodic = CrossSectionConfig::circle(2.0 * PI, SpinStructure::Trivial);
    let power = |p: f64| FactorConfig::PowerLaw {
        p,
        scale: 1.0,
        epsilon: 1.0,
    };
    let (description, cross_section, factor, rho, expectation) = match name {
        "hyperbolic-n2" => (
            "hyperbolic plane near infinity: (dx^2 + dθ^2)/x^2 over the bounding circle",
            bounding,
            FactorConfig::Hyperbolic { epsilon: 1.0 },
            None,
            Expectation::NoPointSpectrum,
        ),
        "hyperbolic-family" => (
            "x^-2 (dx^2 + ((1+x^2)^2/4) h_M) over a periodic circle, reparametrized to product form",
            periodic,
            FactorConfig::Hyperbolic { epsilon: 1.0 },
            Some(Warp::Hyperbolic),
            Expectation::NoPointSpectrum,
        ),
        "anghel-rotational" => (
            "dr^2 + r^4 dθ^2 written as f(x)^2 (dx^2 + dθ^2) with x = 1/r",
            bounding,
            FactorConfig::Rotational { k: 2.0 },
            None,
            Expectation::NoPointSpectrum,
        ),
        "cusp-control" => (
            "convergent control e^-t on (0, ∞) over a periodic circle",
            periodic,
            FactorConfig::Cusp,
            None,
            Expectation::Control,
        ),
        "flat-control" => (
            "convergent control f = 1 on (0, 1) over a periodic circle",
            periodic,
            FactorConfig::Constant { c: 1.0, epsilon: 1.0 },
            None,
            Expectation::Control,
        ),
        "power-law-1" => ("x^-1 over the bounding circle", bounding, power(1.0), None, Expectation::NoPointSpectrum),
        "power-law-1.5" => ("x^-1.5 over the bounding circle", bounding, power(1.5), None, Expectation::NoPointSpectrum),
        "power-law-2" => ("x^-2 over the bounding circle", bounding, power(2.0), None, Expectation::NoPointSpectrum),
        other => {
            return Err(Error::invalid(format!("unknown scenario `{other}` (known: {})", SCENARIO_NAMES.join(", "))))
        }
    };
    Ok(Scenario {
        name: name.to_string(),
        description,
        cross_section,
        factor,
        rho,
        expectation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::warp_geometry::{classify_divergence, Divergence, WarpedMetricSpec};

    #[test]
    fn every_scenario_builds_with_expected_divergence() {
        for name in SCENARIO_NAMES {
            let s = scenario(name).unwrap();
            let cs = s.cross_section.build().unwrap();
            let spec =
                WarpedMetricSpec::new(cs.dim_m + 1, cs, s.factor.build().unwrap(), s.rho.clone())
                    .unwrap();
            let expected = match s.expectation {
                Expectation::NoPointSpectrum => Divergence::Divergent,
                Expectation::Control => Divergence::Convergent,
            };
            assert_eq!(spec.divergence, expected, "{name}");
        }
        assert!(scenario("hyperbolic").is_err());
    }

    #[test]
    fn anghel_factor_is_inverse_square() {
        let f = FactorConfig::Rotational { k: 2.0 }.build().unwrap();
        for x in [0.01, 0.3, 0.9] {
            assert!((f.eval(x) - x.powi(-2)).abs() < 1e-12 * x.powi(-2));
        }
        assert_eq!(
            classify_divergence(&f).unwrap().class,
            Divergence::Divergent
        );
    }

    #[test]
    fn flags_parse() {
        assert_eq!(
            FactorConfig::parse_flag("1/x").unwrap(),
            FactorConfig::Hyperbolic { epsilon: 1.0 }
        );
        assert_eq!(
            FactorConfig::parse_flag("x^-1.5").unwrap(),
            FactorConfig::PowerLaw {
                p: 1.5,
                scale: 1.0,
                epsilon: 1.0
            }
        );
        assert!(FactorConfig::parse_flag("x^-a").is_err());
        assert_eq!(
            CrossSectionConfig::parse_flag("torus")
                .unwrap()
                .build()
                .unwrap()
                .dim_m,
            2
        );
        assert!(CrossSectionConfig::parse_flag("sphere").is_err());
    }

    #[test]
    fn strict_schema_rejects_unknown_keys() {
        let ok: FactorConfig = serde_json::from_str(r#"{"family":"power_law","p":2}"#).unwrap();
        assert_eq!(
            ok,
            FactorConfig::PowerLaw {
                p: 2.0,
                scale: 1.0,
                epsilon: 1.0
            }
        );
        assert!(
            serde_json::from_str::<FactorConfig>(r#"{"family":"power_law","p":2,"warpp":1}"#)
                .is_err()
        );
        assert!(
            serde_json::from_str::<CrossSectionConfig>(r#"{"kind":"circle_trivial","len":1}"#)
                .is_err()
        );
        let missing: CrossSectionConfig =
            serde_json::from_str(r#"{"kind":"flat_torus","basis":[[1,0],[0,1]]}"#).unwrap();
        assert!(
            matches!(missing.build(), Err(Error::Config { path, .. }) if path == "cross_section.parity")
        );
        let user: CrossSectionConfig =
            serde_json::from_str(r#"{"kind":"user_spectrum","dim":2,"spectrum":[{"lambda":-1,"multiplicity":1},{"lambda":1,"multiplicity":1}]}"#)
                .unwrap();
        assert_eq!(user.build().unwrap().dim_m, 2);
    }
}
