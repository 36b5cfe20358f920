//! Parameter simplices, the coordinate change `u_i = r_i^s`, and the closed-form
//! algebraic maps between edge lengths, weights and eigenvalues.
//!
//! Generator indices are zero based throughout: component `i` belongs to `a_{i+1}`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::roots::bisect;

/// Tolerance on `Σ = 1/2` for points of the two simplices.
pub const SIMPLEX_TOL: f64 = 1e-12;

/// Above this rank the partial products of `solve_weights` are formed in log scale.
const LOG_PRODUCT_RANK: usize = 8;

/// Relative threshold below which `D(u)` counts as zero.
const DETERMINANT_REL_TOL: f64 = 1e-14;

macro_rules! simplex_point {
    ($(#[$meta:meta])* $name:ident, $what:literal) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
        #[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
        pub struct $name(Vec<f64>);

        impl $name {
            /// Validates positivity and `Σ = 1/2` within [`SIMPLEX_TOL`].
            pub fn new(values: Vec<f64>) -> Result<Self> {
                check_rank(values.len())?;
                if let Some(bad) = values.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
                    return Err(Error::InvalidParameter(format!(
                        concat!($what, " must be positive, got {}"),
                        bad
                    )));
                }
                let sum: f64 = values.iter().sum();
                if (sum - 0.5).abs() > SIMPLEX_TOL {
                    return Err(Error::InvalidParameter(format!(
                        concat!($what, " must sum to 1/2, got {}"),
                        sum
                    )));
                }
                Ok(Self(values))
            }

            /// The barycentre `(1/2n, …, 1/2n)`.
            pub fn uniform(rank: usize) -> Result<Self> {
                check_rank(rank)?;
                Ok(Self(vec![0.5 / rank as f64; rank]))
            }

            /// Rescales positive values onto the simplex. Also returns how far the
            /// original sum was from 1/2.
            pub fn normalized(values: Vec<f64>) -> Result<(Self, f64)> {
                check_rank(values.len())?;
                if values.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
                    return Err(Error::InvalidParameter(
                        concat!($what, " must be positive").into(),
                    ));
                }
                let sum: f64 = values.iter().sum();
                let scaled = values.iter().map(|v| 0.5 * v / sum).collect();
                Ok((Self(scaled), sum - 0.5))
            }

            pub fn values(&self) -> &[f64] {
                &self.0
            }

            pub fn rank(&self) -> usize {
                self.0.len()
            }

            pub fn get(&self, i: usize) -> f64 {
                self.0[i]
            }
        }

        impl TryFrom<Vec<f64>> for $name {
            type Error = Error;

            fn try_from(values: Vec<f64>) -> Result<Self> {
                Self::new(values)
            }
        }

        impl From<$name> for Vec<f64> {
            fn from(point: $name) -> Vec<f64> {
                point.0
            }
        }
    };
}

simplex_point!(
    /// Edge-length parameter: generator `a_i` gets length `-log r_i`.
    EdgeLengths,
    "edge-length parameters"
);

simplex_point!(
    /// Transition weights: a step along `a_i^{±1}` has probability `p_i`.
    Weights,
    "weights"
);

impl EdgeLengths {
    /// Metric length `-log r_i` of an `a_i^{±1}` edge.
    pub fn edge_length(&self, i: usize) -> f64 {
        -self.0[i].ln()
    }
}

fn check_rank(rank: usize) -> Result<()> {
    if rank < 2 {
        return Err(Error::InvalidParameter(format!(
            "rank must be at least 2, got {rank}"
        )));
    }
    Ok(())
}

/// A point `u = H(r, s)` of the open cube, or (for the constructors that say so)
/// of its closure at 1 or the positive orthant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UVector(Vec<f64>);

impl UVector {
    /// Every component in `(0, 1)`.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        Self::checked(values, |v| v > 0.0 && v < 1.0, "(0, 1)")
    }

    /// Every component in `(0, 1]`; used for boundary solutions.
    pub fn closed(values: Vec<f64>) -> Result<Self> {
        Self::checked(values, |v| v > 0.0 && v <= 1.0, "(0, 1]")
    }

    /// Every component positive; used for extended-domain evaluation.
    pub fn extended(values: Vec<f64>) -> Result<Self> {
        Self::checked(values, |v| v > 0.0 && v.is_finite(), "(0, ∞)")
    }

    fn checked(values: Vec<f64>, ok: impl Fn(f64) -> bool, range: &str) -> Result<Self> {
        check_rank(values.len())?;
        match values.iter().find(|v| !ok(**v)) {
            Some(bad) => Err(Error::InvalidParameter(format!(
                "u components must lie in {range}, got {bad}"
            ))),
            None => Ok(Self(values)),
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn rank(&self) -> usize {
        self.0.len()
    }

    /// True when every component is strictly inside `(0, 1)`.
    pub fn is_interior(&self) -> bool {
        self.0.iter().all(|&v| v < 1.0)
    }
}

/// `H(r, s) = (r_1^s, …, r_n^s)`.
pub fn h_map(r: &EdgeLengths, s: f64) -> Result<UVector> {
    if !(s > 0.0 && s.is_finite()) {
        return Err(Error::InvalidParameter(format!("s must be positive, got {s}")));
    }
    UVector::new(r.values().iter().map(|ri| ri.powf(s)).collect())
}

/// Inverse of [`h_map`]: the unique `(r, s)` with `r_i^s = u_i` and `Σ r_i = 1/2`.
///
/// `s` is the root of the increasing map `s ↦ Σ u_i^{1/s} − 1/2`, located by
/// bisection on `[1e-9, 1e9]` down to floating-point resolution.
pub fn h_inverse(u: &UVector) -> Result<(EdgeLengths, f64)> {
    if !u.is_interior() {
        return Err(Error::InvalidParameter(
            "h_inverse needs u in the open unit cube".into(),
        ));
    }
    let excess = |s: f64| u.values().iter().map(|ui| ui.powf(1.0 / s)).sum::<f64>() - 0.5;
    let s = bisect(excess, 1e-9, 1e9, 0.0)?.mid();
    let r = u.values().iter().map(|ui| ui.powf(1.0 / s)).collect();
    Ok((EdgeLengths::new(r)?, s))
}

/// `c_i(u, p) = 1 − 2 Σ_k u_k p_k − (u_i^{-1} − u_i) p_i` on raw slices.
///
/// Works for any positive `u` and any real `p`, which the sign-pattern checks need.
pub fn c_value(u: &[f64], p: &[f64], i: usize) -> Result<f64> {
    if i >= u.len() || u.len() != p.len() {
        return Err(Error::IndexOutOfRange {
            index: i,
            rank: u.len(),
        });
    }
    if u[i] == 0.0 {
        return Err(Error::ZeroComponent { index: i });
    }
    let mix: f64 = u.iter().zip(p).map(|(uk, pk)| uk * pk).sum();
    Ok(1.0 - 2.0 * mix - (1.0 / u[i] - u[i]) * p[i])
}

/// [`c_value`] for validated inputs.
pub fn c_eval(u: &UVector, p: &Weights, i: usize) -> Result<f64> {
    if u.rank() != p.rank() {
        return Err(Error::InvalidParameter("rank mismatch between u and p".into()));
    }
    c_value(u.values(), p.values(), i)
}

/// Which part of the solution set a [`solve_weights`] result belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolutionKind {
    /// All `p_i > 0`.
    Interior,
    /// Exactly one `u_j = 1`: `p_j = 1/2`, the rest 0, `λ = 0`. Outside the open simplex.
    Boundary { index: usize },
    /// Mixed signs among `u_i^{-1} − u_i`; some weights are non-positive.
    Signed,
}

/// The unique `(p, λ)` with `c_1(u, p) = … = c_n(u, p) = λ` and `Σ p = 1/2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlgebraicSolution {
    pub weights: Vec<f64>,
    pub lambda: f64,
    pub determinant: f64,
    pub kind: SolutionKind,
}

impl AlgebraicSolution {
    /// The weights as a point of the simplex, when they are one.
    pub fn simplex_weights(&self) -> Option<Weights> {
        match self.kind {
            SolutionKind::Interior => Weights::new(self.weights.clone()).ok(),
            _ => None,
        }
    }

    /// `|c_i(u, p) − λ|` for every `i`.
    pub fn residuals(&self, u: &UVector) -> Vec<f64> {
        (0..u.rank())
            .map(|i| {
                c_value(u.values(), &self.weights, i)
                    .map(|c| (c - self.lambda).abs())
                    .unwrap_or(f64::INFINITY)
            })
            .collect()
    }
}

/// Solves the linear system `c_1 = … = c_n`, `Σ p = 1/2` for the weights.
///
/// `p_i = ∏_{k≠i} w_k / (2 D)` with `w_k = u_k^{-1} − u_k` and
/// `D = Σ_j ∏_{k≠j} w_k`. A single `u_j = 1` takes the boundary branch.
pub fn solve_weights(u: &UVector) -> Result<AlgebraicSolution> {
    let n = u.rank();
    let unit: Vec<usize> = (0..n).filter(|&i| u.values()[i] == 1.0).collect();
    let w: Vec<f64> = u.values().iter().map(|&x| 1.0 / x - x).collect();

    match unit.len() {
        0 => {}
        1 => {
            let j = unit[0];
            let mut weights = vec![0.0; n];
            weights[j] = 0.5;
            let determinant = w.iter().enumerate().filter(|&(k, _)| k != j).map(|(_, v)| v).product();
            return Ok(AlgebraicSolution {
                weights,
                lambda: 0.0,
                determinant,
                kind: SolutionKind::Boundary { index: j },
            });
        }
        _ => return Err(Error::DegenerateDeterminant { determinant: 0.0 }),
    }

    let (partials, determinant, scaled_det, scale) = if n > LOG_PRODUCT_RANK {
        scaled_partial_products(&w)
    } else {
        let partials: Vec<f64> = (0..n)
            .map(|j| (0..n).filter(|&k| k != j).map(|k| w[k]).product())
            .collect();
        let det: f64 = partials.iter().sum();
        let scale = partials.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        (partials, det, det, scale)
    };

    if !(scaled_det.abs() >= DETERMINANT_REL_TOL * scale) {
        return Err(Error::DegenerateDeterminant { determinant });
    }

    let weights: Vec<f64> = partials.iter().map(|pj| pj / (2.0 * scaled_det)).collect();
    let lambda = c_value(u.values(), &weights, 0)?;
    let kind = if weights.iter().all(|&pi| pi > 0.0) {
        SolutionKind::Interior
    } else {
        SolutionKind::Signed
    };
    Ok(AlgebraicSolution {
        weights,
        lambda,
        determinant,
        kind,
    })
}

/// Partial products `∏_{k≠j} w_k` divided by their largest magnitude, computed
/// from log magnitudes. Returns `(scaled partials, D, scaled D, 1.0)`.
fn scaled_partial_products(w: &[f64]) -> (Vec<f64>, f64, f64, f64) {
    let logs: Vec<f64> = w.iter().map(|v| v.abs().ln()).collect();
    let total_log: f64 = logs.iter().sum();
    let negatives = w.iter().filter(|v| **v < 0.0).count();
    let total_sign = if negatives % 2 == 0 { 1.0 } else { -1.0 };

    let part_logs: Vec<f64> = logs.iter().map(|l| total_log - l).collect();
    let top = part_logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let scaled: Vec<f64> = part_logs
        .iter()
        .zip(w)
        .map(|(l, wj)| total_sign * wj.signum() * (l - top).exp())
        .collect();
    let scaled_det: f64 = scaled.iter().sum();
    (scaled, scaled_det * top.exp(), scaled_det, 1.0)
}

/// `l(u) = 2 Σ_j u_j ∏_{k≠j}(1+u_k) − ∏_ℓ (1+u_ℓ)`; `λ(u) = 0 ⟺ l(u) = 0` on the open cube.
pub fn l_eval(u: &[f64]) -> f64 {
    let full: f64 = u.iter().map(|x| 1.0 + x).product();
    let mut sum = 0.0;
    for j in 0..u.len() {
        let rest: f64 = u
            .iter()
            .enumerate()
            .filter(|&(k, _)| k != j)
            .map(|(_, x)| 1.0 + x)
            .product();
        sum += u[j] * rest;
    }
    2.0 * sum - full
}

/// Expanded form of [`l_eval`]: `−1 + Σ_m (2m − 1) e_m(u)` with `e_m` the
/// elementary symmetric polynomials.
pub fn l_expanded(u: &[f64]) -> f64 {
    let mut e = vec![0.0; u.len() + 1];
    e[0] = 1.0;
    for (count, &x) in u.iter().enumerate() {
        for m in (1..=count + 1).rev() {
            e[m] += x * e[m - 1];
        }
    }
    -1.0 + (1..e.len())
        .map(|m| (2 * m - 1) as f64 * e[m])
        .sum::<f64>()
}

/// Point `γ_p(τ)` of the level curve `{p(u) = p}`: `u_i = ½(√(τ²/p_i² + 4) − τ/p_i)`.
pub fn gamma_curve(p: &Weights, tau: f64) -> Result<UVector> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::InvalidParameter(format!("tau must be positive, got {tau}")));
    }
    // 2 / (√(x² + 4) + x) is the same quantity without the cancellation.
    UVector::closed(
        p.values()
            .iter()
            .map(|pi| {
                let x = tau / pi;
                2.0 / ((x * x + 4.0).sqrt() + x)
            })
            .collect(),
    )
}

/// Value and derivative of `τ ↦ λ(γ_p(τ)) = 1 − Σ √(τ² + 4p_i²) + (n−1)τ`.
pub fn lambda_along_gamma(p: &Weights, tau: f64) -> (f64, f64) {
    let n = p.rank() as f64;
    let mut roots = 0.0;
    let mut slopes = 0.0;
    for pi in p.values() {
        let q = (tau * tau + 4.0 * pi * pi).sqrt();
        roots += q;
        slopes += tau / q;
    }
    (1.0 - roots + (n - 1.0) * tau, (n - 1.0) - slopes)
}

/// `λ(H(r, s))`, the eigenvalue of the horofunction power `j^s`.
pub fn lambda_of_h(r: &EdgeLengths, s: f64) -> Result<f64> {
    Ok(solve_weights(&h_map(r, s)?)?.lambda)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn simplex_validation() {
        assert!(EdgeLengths::new(vec![0.25, 0.25]).is_ok());
        assert!(EdgeLengths::new(vec![0.3, 0.3]).is_err());
        assert!(EdgeLengths::new(vec![0.5, 0.0]).is_err());
        assert!(Weights::new(vec![0.5]).is_err());
        let (w, off) = Weights::normalized(vec![1.0, 3.0]).unwrap();
        assert_eq!(w.values(), &[0.125, 0.375]);
        assert!(close(off, 3.5, 0.0));
    }

    #[test]
    fn h_map_examples() {
        let r = EdgeLengths::uniform(2).unwrap();
        assert_eq!(h_map(&r, 1.0).unwrap().values(), &[0.25, 0.25]);
        let u = h_map(&r, 3f64.ln() / 4f64.ln()).unwrap();
        assert!(u.values().iter().all(|x| close(*x, 1.0 / 3.0, 1e-15)));
        let r = EdgeLengths::new(vec![0.3, 0.2]).unwrap();
        let u = h_map(&r, 2.0).unwrap();
        assert!(close(u.values()[0], 0.09, 1e-15) && close(u.values()[1], 0.04, 1e-15));
        assert!(h_map(&r, 0.0).is_err());
    }

    #[test]
    fn h_inverse_examples() {
        let (r, s) = h_inverse(&UVector::new(vec![0.25, 0.25]).unwrap()).unwrap();
        assert!(close(s, 1.0, 1e-13));
        assert!(r.values().iter().all(|x| close(*x, 0.25, 1e-13)));

        let (r, s) = h_inverse(&UVector::new(vec![1.0 / 3.0, 1.0 / 3.0]).unwrap()).unwrap();
        assert!(close(s, 3f64.ln() / 4f64.ln(), 1e-13));
        assert!(r.values().iter().all(|x| close(*x, 0.25, 1e-13)));

        let (r, s) = h_inverse(&UVector::new(vec![0.09, 0.04]).unwrap()).unwrap();
        assert!(close(s, 2.0, 1e-12));
        assert!(close(r.get(0), 0.3, 1e-13) && close(r.get(1), 0.2, 1e-13));
    }

    #[test]
    fn c_examples() {
        let third = UVector::new(vec![1.0 / 3.0; 2]).unwrap();
        let p = Weights::uniform(2).unwrap();
        assert!(close(c_eval(&third, &p, 0).unwrap(), 0.0, 1e-15));

        for p in [vec![0.25, 0.25], vec![0.4, 0.1], vec![0.05, 0.45]] {
            for i in 0..2 {
                assert!(close(c_value(&[1.0, 1.0], &p, i).unwrap(), 0.0, 1e-15));
            }
        }

        let u = UVector::new(vec![1.0 / 3f64.sqrt(); 2]).unwrap();
        let c = c_eval(&u, &p, 1).unwrap();
        assert!(close(c, 1.0 - 3f64.sqrt() / 2.0, 1e-15));
        assert!((c - 0.1339746).abs() < 1e-7);
    }

    #[test]
    fn c_errors() {
        assert_eq!(
            c_value(&[0.0, 0.5], &[0.25, 0.25], 0),
            Err(Error::ZeroComponent { index: 0 })
        );
        assert!(matches!(
            c_value(&[0.5, 0.5], &[0.25, 0.25], 2),
            Err(Error::IndexOutOfRange { .. })
        ));
    }

    #[test]
    fn solve_weights_examples() {
        let sol = solve_weights(&UVector::new(vec![1.0 / 3.0; 2]).unwrap()).unwrap();
        assert_eq!(sol.kind, SolutionKind::Interior);
        assert!(sol.weights.iter().all(|p| close(*p, 0.25, 1e-15)));
        assert!(close(sol.lambda, 0.0, 1e-15));

        let u = UVector::new(vec![1.0 / 3f64.sqrt(); 2]).unwrap();
        let sol = solve_weights(&u).unwrap();
        assert!(sol.weights.iter().all(|p| close(*p, 0.25, 1e-15)));
        assert!(close(sol.lambda, 1.0 - 3f64.sqrt() / 2.0, 1e-15));

        let ones = UVector::closed(vec![1.0, 1.0]).unwrap();
        assert!(matches!(
            solve_weights(&ones),
            Err(Error::DegenerateDeterminant { .. })
        ));
    }

    #[test]
    fn boundary_branch() {
        let u = UVector::closed(vec![0.4, 1.0, 0.7]).unwrap();
        let sol = solve_weights(&u).unwrap();
        assert_eq!(sol.kind, SolutionKind::Boundary { index: 1 });
        assert_eq!(sol.weights, vec![0.0, 0.5, 0.0]);
        assert_eq!(sol.lambda, 0.0);
        assert!(sol.simplex_weights().is_none());
        assert!(sol.residuals(&u).iter().all(|r| *r < 1e-15));
    }

    #[test]
    fn cancelling_determinant_is_degenerate() {
        // w_1 = -w_2 makes D = w_2 + w_1 vanish.
        let a: f64 = 0.5;
        let w = 1.0 / a - a;
        // Solve 1/b - b = -w for b > 1.
        let b = (-(-w) + (w * w + 4.0).sqrt()) / 2.0;
        let u = UVector::extended(vec![a, b]).unwrap();
        assert!(matches!(
            solve_weights(&u),
            Err(Error::DegenerateDeterminant { .. })
        ));
    }

    #[test]
    fn log_scaled_products_match_direct() {
        let u: Vec<f64> = (0..12).map(|i| 0.05 + 0.07 * i as f64).collect();
        let sol = solve_weights(&UVector::new(u.clone()).unwrap()).unwrap();
        let w: Vec<f64> = u.iter().map(|x| 1.0 / x - x).collect();
        let inv_sum: f64 = w.iter().map(|x| 1.0 / x).sum();
        for (pi, wi) in sol.weights.iter().zip(&w) {
            assert!(close(*pi, (1.0 / wi) / (2.0 * inv_sum), 1e-14));
        }
        let uv = UVector::new(u).unwrap();
        assert!(sol.residuals(&uv).iter().all(|r| *r < 1e-12));
    }

    #[test]
    fn l_examples() {
        assert_eq!(l_eval(&[0.0, 0.0]), -1.0);
        assert!(close(l_eval(&[1.0 / 3.0, 1.0 / 3.0]), 0.0, 1e-15));
        assert_eq!(l_eval(&[1.0, 1.0]), 4.0);
        assert_eq!(l_expanded(&[1.0, 1.0]), 4.0);
        assert!(close(l_expanded(&[1.0 / 3.0, 1.0 / 3.0]), 0.0, 1e-15));
    }

    #[test]
    fn gamma_examples() {
        let p = Weights::uniform(2).unwrap();
        let tau = 1.0 / (2.0 * 3f64.sqrt());
        let u = gamma_curve(&p, tau).unwrap();
        for (ui, pi) in u.values().iter().zip(p.values()) {
            assert!(close(*ui, 1.0 / 3f64.sqrt(), 1e-15));
            assert!(close((1.0 / ui - ui) * pi, tau, 1e-15));
        }
        let u = gamma_curve(&p, 0.75).unwrap();
        assert!(u.values().iter().all(|x| close(*x, 0.5 * (13f64.sqrt() - 3.0), 1e-15)));
        assert!((u.values()[0] - 0.302776).abs() < 1e-6);

        let near_zero = gamma_curve(&p, 1e-12).unwrap();
        assert!(near_zero.values().iter().all(|x| close(*x, 1.0, 1e-11)));
    }

    #[test]
    fn lambda_gamma_examples() {
        let p = Weights::uniform(2).unwrap();
        let (v, _) = lambda_along_gamma(&p, 1e-12);
        assert!(close(v, 0.0, 1e-11));
        let (v, d) = lambda_along_gamma(&p, 1.0 / (2.0 * 3f64.sqrt()));
        assert!(close(v, 1.0 - 3f64.sqrt() / 2.0, 1e-15));
        assert!(close(d, 0.0, 1e-15));
        let (_, d) = lambda_along_gamma(&p, 1e9);
        assert!(close(d, -1.0, 1e-12));
    }

    #[test]
    fn lambda_matches_curve_formula() {
        let p = Weights::new(vec![0.1, 0.15, 0.25]).unwrap();
        for tau in [0.01, 0.1, 0.3, 1.0, 4.0] {
            let u = gamma_curve(&p, tau).unwrap();
            let sol = solve_weights(&u).unwrap();
            let (v, _) = lambda_along_gamma(&p, tau);
            assert!(close(sol.lambda, v, 1e-13), "tau {tau}: {} vs {v}", sol.lambda);
        }
    }
}
