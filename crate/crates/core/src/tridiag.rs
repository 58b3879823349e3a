//! Symmetric tridiagonal eigensolvers.
//!
//! Implicit QL with Wilkinson shifts for full spectra, Sturm-count
//! bisection for eigenvalues in a window, and inverse iteration for
//! eigenvectors.

use crate::{Error, Result};

const QL_MAX_ITER: usize = 60;
const INVERSE_MAX_ITER: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct SymTridiag {
    pub diag: Vec<f64>,
    /// `off[i]` couples rows `i` and `i + 1`.
    pub off: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EigenPair {
    pub value: f64,
    pub vector: Vec<f64>,
    pub residual: f64,
    pub iterations: usize,
}

impl SymTridiag {
    pub fn new(diag: Vec<f64>, off: Vec<f64>) -> Result<Self> {
        if !diag.is_empty() && off.len() + 1 != diag.len() {
            return Err(Error::invalid(format!(
                "off-diagonal length {} does not match dimension {}",
                off.len(),
                diag.len()
            )));
        }
        if diag.iter().chain(&off).any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite matrix entry"));
        }
        Ok(Self { diag, off })
    }

    pub fn dim(&self) -> usize {
        self.diag.len()
    }

    /// Gershgorin bound on the spectral radius.
    pub fn norm_bound(&self) -> f64 {
        (0..self.dim())
            .map(|i| {
                let l = if i > 0 { self.off[i - 1].abs() } else { 0.0 };
                let r = self.off.get(i).map_or(0.0, |v| v.abs());
                self.diag[i].abs() + l + r
            })
            .fold(0.0, f64::max)
    }

    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        let n = self.dim();
        (0..n)
            .map(|i| {
                let mut s = self.diag[i] * v[i];
                if i > 0 {
                    s += self.off[i - 1] * v[i - 1];
                }
                if i + 1 < n {
                    s += self.off[i] * v[i + 1];
                }
                s
            })
            .collect()
    }

    /// All eigenvalues in increasing order.
    pub fn eigenvalues(&self) -> Result<Vec<f64>> {
        let n = self.dim();
        let mut d = self.diag.clone();
        let mut e = self.off.clone();
        e.push(0.0);
        for l in 0..n {
            let mut iter = 0;
            loop {
                let mut m = l;
                while m + 1 < n {
                    let dd = d[m].abs() + d[m + 1].abs();
                    if e[m].abs() <= f64::EPSILON * dd {
                        break;
                    }
                    m += 1;
                }
                if m == l {
                    break;
                }
                if iter == QL_MAX_ITER {
                    return Err(Error::Convergence {
                        iterations: iter,
                        row: l,
                        residual: e[l].abs(),
                    });
                }
                iter += 1;
                let mut g = (d[l + 1] - d[l]) / (2.0 * e[l]);
                let mut r = g.hypot(1.0);
                g = d[m] - d[l] + e[l] / (g + r.copysign(g));
                let (mut s, mut c, mut p) = (1.0, 1.0, 0.0);
                let mut i = m;
                let mut deflated = false;
                while i > l {
                    i -= 1;
                    let f = s * e[i];
                    let b = c * e[i];
                    r = f.hypot(g);
                    e[i + 1] = r;
                    if r == 0.0 {
                        d[i + 1] -= p;
                        e[m] = 0.0;
                        deflated = true;
                        break;
                    }
                    s = f / r;
                    c = g / r;
                    g = d[i + 1] - p;
                    r = (d[i] - g) * s + 2.0 * c * b;
                    p = s * r;
                    d[i + 1] = g + p;
                    g = c * r - b;
                }
                if deflated {
                    continue;
                }
                d[l] -= p;
                e[l] = g;
                e[m] = 0.0;
            }
        }
        d.sort_by(f64::total_cmp);
        Ok(d)
    }

    /// Number of eigenvalues strictly below `x` (Sturm sequence).
    pub fn count_below(&self, x: f64) -> usize {
        let tiny = f64::MIN_POSITIVE.sqrt() * self.norm_bound().max(1.0);
        let mut count = 0;
        let mut q = 1.0;
        for i in 0..self.dim() {
            let e2 = if i > 0 {
                self.off[i - 1] * self.off[i - 1]
            } else {
                0.0
            };
            q = self.diag[i] - x - if i > 0 { e2 / q } else { 0.0 };
            if q == 0.0 {
                q = -tiny;
            }
            if q < 0.0 {
                count += 1;
            }
        }
        count
    }

    /// Eigenvalues in `[lo, hi)` by bisection, increasing, each to absolute
    /// accuracy `tol`.
    pub fn eigenvalues_in(&self, lo: f64, hi: f64, tol: f64) -> Vec<f64> {
        let c_lo = self.count_below(lo);
        let c_hi = self.count_below(hi);
        (c_lo..c_hi)
            .map(|k| self.kth_eigenvalue(k, lo, hi, tol))
            .collect()
    }

    fn kth_eigenvalue(&self, k: usize, lo: f64, hi: f64, tol: f64) -> f64 {
        let (mut a, mut b) = (lo, hi);
        while b - a > tol.max(4.0 * f64::EPSILON * a.abs().max(b.abs())) {
            let mid = 0.5 * (a + b);
            if self.count_below(mid) > k {
                b = mid;
            } else {
                a = mid;
            }
        }
        0.5 * (a + b)
    }

    /// Unit eigenvector for the eigenvalue estimate `mu` by inverse
    /// iteration, orthogonalized against `deflate` (vectors of nearby
    /// eigenvalues already computed).
    pub fn eigenvector(&self, mu: f64, deflate: &[&[f64]]) -> Result<EigenPair> {
        let n = self.dim();
        let scale = self.norm_bound().max(f64::MIN_POSITIVE);
        let lu = ShiftedLu::factor(self, mu, scale);
        // deterministic start with no special alignment to the grid
        let mut v: Vec<f64> = (0..n)
            .map(|i| 1.0 + 0.5 * ((i as f64) * 0.7548776662).fract())
            .collect();
        orthonormalize(&mut v, deflate);
        let mut residual = f64::INFINITY;
        for it in 1..=INVERSE_MAX_ITER {
            let mut w = lu.solve(&v);
            orthonormalize(&mut w, deflate);
            v = w;
            let av = self.apply(&v);
            residual = av
                .iter()
                .zip(&v)
                .map(|(a, x)| (a - mu * x).powi(2))
                .sum::<f64>()
                .sqrt();
            if residual <= 1e-12 * scale && it >= 2 {
                return Ok(EigenPair {
                    value: mu,
                    vector: v,
                    residual,
                    iterations: it,
                });
            }
        }
        if residual <= 1e-9 * scale {
            return Ok(EigenPair {
                value: mu,
                vector: v,
                residual,
                iterations: INVERSE_MAX_ITER,
            });
        }
        Err(Error::Convergence {
            iterations: INVERSE_MAX_ITER,
            row: 0,
            residual,
        })
    }
}

fn orthonormalize(v: &mut [f64], against: &[&[f64]]) {
    for _ in 0..2 {
        for u in against {
            let dot: f64 = v.iter().zip(*u).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(*u).for_each(|(a, b)| *a -= dot * b);
        }
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
}

/// LU factorization of `T − μI` with partial pivoting (upper factor has
/// two super-diagonals).
struct ShiftedLu {
    u0: Vec<f64>,
    u1: Vec<f64>,
    u2: Vec<f64>,
    mult: Vec<f64>,
    swapped: Vec<bool>,
}

impl ShiftedLu {
    fn factor(t: &SymTridiag, mu: f64, scale: f64) -> Self {
        let n = t.dim();
        let mut u0: Vec<f64> = t.diag.iter().map(|d| d - mu).collect();
        let mut u1 = t.off.clone();
        u1.push(0.0);
        let mut u2 = vec![0.0; n];
        let mut mult = vec![0.0; n];
        let mut swapped = vec![false; n];
        let mut low = t.off.clone();
        low.push(0.0);
        for i in 0..n.saturating_sub(1) {
            if low[i].abs() > u0[i].abs() {
                swapped[i] = true;
                let (a0, a1) = (u0[i], u1[i]);
                u0[i] = low[i];
                u1[i] = u0[i + 1];
                u2[i] = u1[i + 1];
                let m = a0 / u0[i];
                mult[i] = m;
                u0[i + 1] = a1 - m * u1[i];
                u1[i + 1] = -m * u2[i];
            } else {
                let m = if u0[i] == 0.0 { 0.0 } else { low[i] / u0[i] };
                mult[i] = m;
                u0[i + 1] -= m * u1[i];
            }
        }
        let floor = f64::EPSILON * scale;
        for p in u0.iter_mut() {
            if p.abs() < floor {
                *p = floor.copysign(*p);
            }
        }
        Self {
            u0,
            u1,
            u2,
            mult,
            swapped,
        }
    }

    fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = b.len();
        let mut y = b.to_vec();
        for i in 0..n.saturating_sub(1) {
            if self.swapped[i] {
                y.swap(i, i + 1);
            }
            y[i + 1] -= self.mult[i] * y[i];
        }
        let mut x = vec![0.0; n];
        for i in (0..n).rev() {
            let mut s = y[i];
            if i + 1 < n {
                s -= self.u1[i] * x[i + 1];
            }
            if i + 2 < n {
                s -= self.u2[i] * x[i + 2];
            }
            x[i] = s / self.u0[i];
        }
        x
    }
}
