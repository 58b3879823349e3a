//! Boundary cross-sections `(M, h_M)` represented by the spectrum of `D_M`,
//! and the tangential operator `A` of the splitting `D_h = c⁰(∂x + A)`.
//!
//! Normalization: the circle of length `L` has Dirac eigenvalues
//! `2π(k + σ)/L`, `k ∈ ℤ`, with `σ = 0` for the trivial (periodic) spin
//! structure and `σ = 1/2` for the bounding (anti-periodic) one.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Eigenvalues closer than this are merged into one entry.
pub const MERGE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpinStructure {
    Trivial,
    Nontrivial,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CrossSectionKind {
    CircleTrivial,
    CircleNontrivial,
    FlatTorus,
    UserSpectrum,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralEntry {
    pub lambda: f64,
    pub multiplicity: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Geometry {
    Circle {
        length: f64,
        spin: SpinStructure,
    },
    /// Rows of `basis` are the lattice generators; `parity[i]` selects the
    /// anti-periodic spin structure along generator `i`.
    Torus {
        basis: Vec<Vec<f64>>,
        parity: Vec<bool>,
    },
    User {
        entries: Vec<SpectralEntry>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossSection {
    pub name: String,
    pub dim_m: usize,
    pub geometry: Geometry,
}

impl CrossSection {
    pub fn circle(length: f64, spin: SpinStructure) -> Result<Self> {
        if !(length > 0.0 && length.is_finite()) {
            return Err(Error::invalid(format!(
                "circle length must be positive, got {length}"
            )));
        }
        let name = match spin {
            SpinStructure::Trivial => "circle-trivial",
            SpinStructure::Nontrivial => "circle-nontrivial",
        };
        Ok(Self {
            name: name.into(),
            dim_m: 1,
            geometry: Geometry::Circle { length, spin },
        })
    }

    pub fn torus(basis: Vec<Vec<f64>>, parity: Vec<bool>) -> Result<Self> {
        let dim = basis.len();
        if dim == 0 || basis.iter().any(|row| row.len() != dim) {
            return Err(Error::invalid(
                "torus basis must be a square list of vectors",
            ));
        }
        if parity.len() != dim {
            return Err(Error::invalid(format!(
                "parity vector has {} entries, lattice dimension is {dim}",
                parity.len()
            )));
        }
        dual_basis(&basis)?;
        Ok(Self {
            name: format!("torus-{dim}"),
            dim_m: dim,
            geometry: Geometry::Torus { basis, parity },
        })
    }

    /// An explicit `D_M` spectrum for cross-sections without a built-in model
    /// (cusps, cones). The list must be sorted with positive multiplicities.
    pub fn user(name: &str, dim_m: usize, entries: Vec<SpectralEntry>) -> Result<Self> {
        if dim_m == 0 {
            return Err(Error::invalid("cross-section dimension must be positive"));
        }
        for e in &entries {
            if !e.lambda.is_finite() {
                return Err(Error::invalid(
                    "user spectrum contains a non-finite eigenvalue",
                ));
            }
            if e.multiplicity == 0 {
                return Err(Error::invalid("user spectrum multiplicities must be >= 1"));
            }
        }
        if entries.windows(2).any(|w| w[0].lambda > w[1].lambda) {
            return Err(Error::invalid("user spectrum must be sorted"));
        }
        Ok(Self {
            name: name.into(),
            dim_m,
            geometry: Geometry::User { entries },
        })
    }

    pub fn kind(&self) -> CrossSectionKind {
        match &self.geometry {
            Geometry::Circle {
                spin: SpinStructure::Trivial,
                ..
            } => CrossSectionKind::CircleTrivial,
            Geometry::Circle {
                spin: SpinStructure::Nontrivial,
                ..
            } => CrossSectionKind::CircleNontrivial,
            Geometry::Torus { .. } => CrossSectionKind::FlatTorus,
            Geometry::User { .. } => CrossSectionKind::UserSpectrum,
        }
    }

    /// Eigenvalues of `D_M` in `[-cutoff, cutoff]`.
    pub fn dirac_spectrum(&self, cutoff: f64) -> Result<Vec<SpectralEntry>> {
        match &self.geometry {
            Geometry::Circle { length, spin } => circle_spectrum(*length, *spin, cutoff),
            Geometry::Torus { basis, parity } => torus_spectrum(basis, parity, cutoff),
            Geometry::User { entries } => {
                check_cutoff(cutoff)?;
                Ok(merge(
                    entries
                        .iter()
                        .filter(|e| e.lambda.abs() <= cutoff + MERGE_TOL)
                        .copied()
                        .collect(),
                ))
            }
        }
    }
}

fn check_cutoff(cutoff: f64) -> Result<()> {
    if cutoff >= 0.0 && cutoff.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "cutoff must be finite and >= 0, got {cutoff}"
        )))
    }
}

/// Sorts by eigenvalue and merges entries within [`MERGE_TOL`].
pub fn merge(mut entries: Vec<SpectralEntry>) -> Vec<SpectralEntry> {
    entries.sort_by(|a, b| a.lambda.total_cmp(&b.lambda));
    let mut out: Vec<SpectralEntry> = Vec::with_capacity(entries.len());
    for e in entries {
        match out.last_mut() {
            Some(last) if (last.lambda - e.lambda).abs() <= MERGE_TOL => {
                last.multiplicity += e.multiplicity
            }
            _ => out.push(e),
        }
    }
    out
}

pub fn circle_spectrum(
    length: f64,
    spin: SpinStructure,
    cutoff: f64,
) -> Result<Vec<SpectralEntry>> {
    if !(length > 0.0 && length.is_finite()) {
        return Err(Error::invalid(format!(
            "circle length must be positive, got {length}"
        )));
    }
    check_cutoff(cutoff)?;
    let shift = match spin {
        SpinStructure::Trivial => 0.0,
        SpinStructure::Nontrivial => 0.5,
    };
    let unit = 2.0 * PI / length;
    let kmax = (cutoff / unit).ceil() as i64 + 1;
    let entries = (-kmax - 1..=kmax)
        .map(|k| unit * (k as f64 + shift))
        .filter(|l| l.abs() <= cutoff + MERGE_TOL)
        .map(|lambda| SpectralEntry {
            lambda,
            multiplicity: 1,
        })
        .collect();
    Ok(merge(entries))
}

/// Rows of the returned matrix are the dual lattice generators `b*_i`
/// with `b_i · b*_j = δ_ij`.
fn dual_basis(basis: &[Vec<f64>]) -> Result<nalgebra::DMatrix<f64>> {
    let dim = basis.len();
    let b = nalgebra::DMatrix::from_fn(dim, dim, |i, j| basis[i][j]);
    let scale = b.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let det = b.determinant();
    if !(scale > 0.0) || det.abs() <= 1e-12 * scale.powi(dim as i32) || !det.is_finite() {
        return Err(Error::invalid("torus lattice basis is degenerate"));
    }
    let inv = b
        .try_inverse()
        .ok_or_else(|| Error::invalid("torus lattice basis is degenerate"))?;
    Ok(inv.transpose())
}

/// Dirac spectrum of the flat torus `ℝ^m / Γ`: `±2π|γ* + χ|` over the dual
/// lattice, where `χ` is the half-period shift picked by `parity`. For `m ≥ 2`
/// each nonzero norm carries `rank/2` positive and `rank/2` negative
/// eigenvalues, `rank = 2^{⌊m/2⌋}`; a vanishing shifted vector gives a kernel
/// of dimension `rank`. The one-dimensional torus is the circle.
pub fn torus_spectrum(
    basis: &[Vec<f64>],
    parity: &[bool],
    cutoff: f64,
) -> Result<Vec<SpectralEntry>> {
    check_cutoff(cutoff)?;
    let dim = basis.len();
    if dim == 0 || basis.iter().any(|r| r.len() != dim) || parity.len() != dim {
        return Err(Error::invalid(
            "torus basis/parity dimensions are inconsistent",
        ));
    }
    let dual = dual_basis(basis)?;
    if dim == 1 {
        let spin = if parity[0] {
            SpinStructure::Nontrivial
        } else {
            SpinStructure::Trivial
        };
        return circle_spectrum(basis[0][0].abs(), spin, cutoff);
    }
    let rank = 1usize << (dim / 2);
    // |k + χ| ≤ ‖B‖_F · |v| bounds the coefficient box.
    let frob: f64 = basis.iter().flatten().map(|v| v * v).sum::<f64>().sqrt();
    let kmax = (frob * cutoff / (2.0 * PI)).ceil() as i64 + 1;
    let shift: Vec<f64> = parity.iter().map(|&p| if p { 0.5 } else { 0.0 }).collect();

    let mut entries = Vec::new();
    let mut coeffs = vec![-kmax; dim];
    loop {
        let mut v = vec![0.0; dim];
        for (i, &k) in coeffs.iter().enumerate() {
            let c = k as f64 + shift[i];
            for j in 0..dim {
                v[j] += c * dual[(i, j)];
            }
        }
        let norm = 2.0 * PI * v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm <= cutoff + MERGE_TOL {
            if norm <= MERGE_TOL {
                entries.push(SpectralEntry {
                    lambda: 0.0,
                    multiplicity: rank,
                });
            } else {
                entries.push(SpectralEntry {
                    lambda: norm,
                    multiplicity: rank / 2,
                });
                entries.push(SpectralEntry {
                    lambda: -norm,
                    multiplicity: rank / 2,
                });
            }
        }
        // odometer over the coefficient box
        let mut i = 0;
        loop {
            if i == dim {
                return Ok(merge(entries));
            }
            coeffs[i] += 1;
            if coeffs[i] <= kmax {
                break;
            }
            coeffs[i] = -kmax;
            i += 1;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Parity {
    Odd,
    Even,
}

/// Spectrum of `A`, truncated to `|λ| ≤ cutoff`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeSpectrum {
    pub entries: Vec<SpectralEntry>,
    pub cutoff: f64,
    pub parity_n: Parity,
}

impl ModeSpectrum {
    /// Multiset invariance under `λ ↦ −λ`.
    pub fn is_symmetric(&self) -> bool {
        self.entries.iter().all(|e| {
            self.entries.iter().any(|o| {
                (o.lambda + e.lambda).abs() <= MERGE_TOL && o.multiplicity == e.multiplicity
            })
        })
    }

    pub fn total_multiplicity(&self) -> usize {
        self.entries.iter().map(|e| e.multiplicity).sum()
    }

    pub fn kernel_multiplicity(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.lambda.abs() <= MERGE_TOL)
            .map(|e| e.multiplicity)
            .sum()
    }

    /// Distinct strictly positive eigenvalues; the negative half of the
    /// spectrum is carried by the `c⁰` pairing.
    pub fn positive_modes(&self) -> Vec<SpectralEntry> {
        self.entries
            .iter()
            .filter(|e| e.lambda > MERGE_TOL)
            .copied()
            .collect()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// `A = D_M` for odd `n`, `A = diag(D_M, −D_M)` for even `n`.
pub fn build_a(cs: &CrossSection, n: usize, cutoff: f64) -> Result<ModeSpectrum> {
    if n != cs.dim_m + 1 {
        return Err(Error::invalid(format!(
            "total dimension n = {n} does not match cross-section dimension {} + 1",
            cs.dim_m
        )));
    }
    let dm = cs.dirac_spectrum(cutoff)?;
    let (entries, parity_n) = if n % 2 == 1 {
        (dm, Parity::Odd)
    } else {
        let doubled = dm
            .iter()
            .flat_map(|e| {
                [e.lambda, -e.lambda].map(|lambda| SpectralEntry {
                    lambda,
                    multiplicity: e.multiplicity,
                })
            })
            .collect();
        (merge(doubled), Parity::Even)
    };
    let spec = ModeSpectrum {
        entries,
        cutoff,
        parity_n,
    };
    if !spec.is_symmetric() {
        return Err(Error::invalid(format!(
            "D_M spectrum of `{}` is not symmetric, which is impossible for odd n = {n}",
            cs.name
        )));
    }
    Ok(spec)
}

/// Keeps `|λ| ≤ n_max`; the finite stand-in for the spectral projection `χ(A)`.
pub fn truncate_modes(modes: &ModeSpectrum, n_max: f64) -> Result<ModeSpectrum> {
    check_cutoff(n_max)?;
    Ok(ModeSpectrum {
        entries: modes
            .entries
            .iter()
            .filter(|e| e.lambda.abs() <= n_max + MERGE_TOL)
            .copied()
            .collect(),
        cutoff: n_max.min(modes.cutoff),
        parity_n: modes.parity_n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn values(s: &[SpectralEntry]) -> Vec<f64> {
        s.iter().map(|e| e.lambda).collect()
    }

    #[test]
    fn nontrivial_circle_has_no_kernel() {
        let s = circle_spectrum(2.0 * PI, SpinStructure::Nontrivial, 0.4).unwrap();
        assert!(s.is_empty());
    }

    #[test]
    fn circle_rejects_bad_length() {
        assert!(matches!(
            circle_spectrum(0.0, SpinStructure::Trivial, 1.0),
            Err(Error::InvalidParameter(_))
        ));
        assert!(CrossSection::circle(-1.0, SpinStructure::Trivial).is_err());
    }

    #[test]
    fn trivial_torus_has_constant_spinors() {
        let s = torus_spectrum(&[vec![1.0, 0.0], vec![0.0, 1.0]], &[false, false], 0.1).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].lambda, 0.0);
        assert!(s[0].multiplicity >= 1);
    }

    #[test]
    fn degenerate_torus_is_rejected() {
        let r = torus_spectrum(&[vec![1.0, 2.0], vec![2.0, 4.0]], &[false, false], 1.0);
        assert!(matches!(r, Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn build_a_even_doubles_pairs() {
        let cs = CrossSection::circle(2.0 * PI, SpinStructure::Nontrivial).unwrap();
        let a = build_a(&cs, 2, 1.0).unwrap();
        assert_eq!(values(&a.entries), vec![-0.5, 0.5]);
        assert!(a.entries.iter().all(|e| e.multiplicity == 2));
        assert_eq!(a.parity_n, Parity::Even);

        let cs = CrossSection::circle(2.0 * PI, SpinStructure::Trivial).unwrap();
        let a = build_a(&cs, 2, 0.0).unwrap();
        assert_eq!(
            a.entries,
            vec![SpectralEntry {
                lambda: 0.0,
                multiplicity: 2
            }]
        );
    }

    #[test]
    fn build_a_odd_is_identity_on_user_spectrum() {
        let entries: Vec<_> = [-3.0, -1.0, 1.0, 3.0]
            .iter()
            .map(|&lambda| SpectralEntry {
                lambda,
                multiplicity: 1,
            })
            .collect();
        let cs = CrossSection::user("user", 2, entries.clone()).unwrap();
        let a = build_a(&cs, 3, 10.0).unwrap();
        assert_eq!(a.entries, entries);
    }

    #[test]
    fn build_a_rejects_dimension_mismatch_and_asymmetry() {
        let cs = CrossSection::circle(1.0, SpinStructure::Trivial).unwrap();
        assert!(build_a(&cs, 3, 1.0).is_err());
        let lopsided = CrossSection::user(
            "u",
            2,
            vec![SpectralEntry {
                lambda: 1.0,
                multiplicity: 1,
            }],
        )
        .unwrap();
        assert!(build_a(&lopsided, 3, 5.0).is_err());
    }

    #[test]
    fn user_spectrum_validation() {
        let unsorted = vec![
            SpectralEntry {
                lambda: 1.0,
                multiplicity: 1,
            },
            SpectralEntry {
                lambda: -1.0,
                multiplicity: 1,
            },
        ];
        assert!(CrossSection::user("u", 1, unsorted).is_err());
        assert!(CrossSection::user(
            "u",
            1,
            vec![SpectralEntry {
                lambda: 0.0,
                multiplicity: 0
            }]
        )
        .is_err());
    }

    #[test]
    fn truncation_filters() {
        let cs = CrossSection::circle(2.0 * PI, SpinStructure::Nontrivial).unwrap();
        let a = build_a(&cs, 2, 5.0).unwrap();
        let one = truncate_modes(&a, 1.0).unwrap();
        assert_eq!(values(&one.entries), vec![-0.5, 0.5]);
        assert!(truncate_modes(&a, 0.0).unwrap().is_empty());
        assert_eq!(truncate_modes(&a, 50.0).unwrap().entries, a.entries);
    }
}
