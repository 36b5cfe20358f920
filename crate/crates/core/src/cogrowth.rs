//! The weight rule `p_*`, the generalized cogrowth formula for
//! `λ₀^G(p_*(r, δ_G(r)))`, the classical cogrowth formula, and the
//! verification and amenability harnesses built on them.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exponents::{delta_bruteforce, delta_free, delta_subgroup, DEFAULT_COUNT_CAP};
use crate::freegroup::ReducedWord;
use crate::params::{h_map, lambda_of_h, solve_weights, EdgeLengths, Weights};
use crate::spectrum::{lambda0_quotient, SpectralEstimate, DEFAULT_CELL_CAP};
use crate::subgroups::{normal_closure_exhaustion, Index, SubgroupSpec, DEFAULT_GRAPH_CAP};

/// Slack in the comparison `δ_G > δ/2`.
pub const BRANCH_SLACK: f64 = 1e-12;
/// How far `δ_G` may exceed `δ` before it is rejected.
pub const DELTA_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Branch {
    /// `δ_G > δ/2`: the formula follows `λ∘H(r, δ_G)`.
    Supercritical,
    /// `δ_G ≤ δ/2`: the formula is frozen at `λ∘H(r, δ/2)`.
    Subcritical,
}

pub fn branch(delta_free: f64, delta_sub: f64) -> Branch {
    if delta_sub > 0.5 * delta_free + BRANCH_SLACK {
        Branch::Supercritical
    } else {
        Branch::Subcritical
    }
}

/// `p∘H(r, max(s, δ(r)/2))`.
pub fn p_star(r: &EdgeLengths, s: f64) -> Result<Weights> {
    if !(s >= 0.0) || !s.is_finite() {
        return Err(Error::InvalidParameter(format!("s must be ≥ 0, got {s}")));
    }
    let half = 0.5 * delta_free(r)?.value;
    let sol = solve_weights(&h_map(r, s.max(half))?)?;
    sol.simplex_weights().ok_or(Error::DegenerateDeterminant {
        determinant: sol.determinant,
    })
}

/// Right-hand side of the cogrowth formula: `λ∘H(r, δ_G)` above `δ/2`,
/// `λ∘H(r, δ/2)` below.
pub fn cogrowth_lambda(r: &EdgeLengths, delta_sub: f64) -> Result<f64> {
    let delta = delta_free(r)?.value;
    cogrowth_lambda_with(r, delta, delta_sub)
}

fn cogrowth_lambda_with(r: &EdgeLengths, delta: f64, delta_sub: f64) -> Result<f64> {
    if !(delta_sub >= 0.0) || delta_sub > delta + DELTA_SLACK {
        return Err(Error::ExponentOutOfRange {
            delta_sub,
            delta_free: delta,
        });
    }
    let s = match branch(delta, delta_sub) {
        Branch::Supercritical => delta_sub.min(delta),
        Branch::Subcritical => 0.5 * delta,
    };
    Ok(lambda_of_h(r, s)?.max(0.0))
}

/// `1 − √(2n−1)/n`: the bottom of the spectrum of the simple random walk on
/// the `2n`-regular tree.
pub fn kesten_bottom(n: usize) -> f64 {
    1.0 - ((2 * n - 1) as f64).sqrt() / n as f64
}

/// `1 − √(2n−1)/2`, an alternative normalization of the bottom constant seen
/// in the literature. It coincides with [`kesten_bottom`] only at `n = 2`.
pub fn alternative_bottom(n: usize) -> f64 {
    1.0 - ((2 * n - 1) as f64).sqrt() / 2.0
}

/// Grigorchuk's formula in unit edge lengths: `(2n−1−e^δ)(1−e^{−δ})/(2n)`
/// for `δ > ½ log(2n−1)`, and [`kesten_bottom`] below.
pub fn grigorchuk_classic(n: usize, delta_unit: f64) -> Result<f64> {
    if n < 1 {
        return Err(Error::InvalidParameter("rank must be ≥ 1".into()));
    }
    let top = ((2 * n - 1) as f64).ln();
    if !(delta_unit >= 0.0) || delta_unit > top + DELTA_SLACK {
        return Err(Error::InvalidParameter(format!(
            "exponent {delta_unit} outside [0, log(2n−1) = {top}]"
        )));
    }
    if delta_unit > 0.5 * top {
        let e = delta_unit.exp();
        Ok(((2 * n - 1) as f64 - e) * (1.0 - 1.0 / e) / (2 * n) as f64)
    } else {
        Ok(kesten_bottom(n))
    }
}

/// Settings for [`verify_subgroup`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct VerifyConfig {
    pub depths: Vec<usize>,
    pub seed: u64,
    /// Radius for the brute-force `δ_G` cross-check, in multiples of the mean
    /// edge length; `None` skips it.
    pub bruteforce_edges: Option<f64>,
    pub cell_cap: usize,
    pub graph_cap: usize,
    pub count_cap: usize,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig {
            depths: vec![10, 20, 30],
            seed: 0,
            bruteforce_edges: None,
            cell_cap: DEFAULT_CELL_CAP,
            graph_cap: DEFAULT_GRAPH_CAP,
            count_cap: DEFAULT_COUNT_CAP,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CogrowthReport {
    pub subgroup: String,
    pub r: EdgeLengths,
    pub delta_free: f64,
    pub delta_sub: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta_bruteforce: Option<f64>,
    pub index: Index,
    pub branch: Branch,
    pub weights: Weights,
    pub formula_lambda: f64,
    pub numeric_lambda: SpectralEstimate,
    pub discrepancy: f64,
    /// `|formula − estimate|` at each truncation depth.
    pub discrepancy_by_depth: Vec<f64>,
}

impl CogrowthReport {
    pub const CSV_HEADER: [&'static str; 8] = [
        "subgroup",
        "delta",
        "delta_sub",
        "branch",
        "formula_lambda",
        "numeric_lambda",
        "discrepancy",
        "depth",
    ];

    pub fn csv_row(&self) -> [String; 8] {
        let depth = self
            .numeric_lambda
            .meta
            .depths
            .as_ref()
            .and_then(|d| d.last().copied())
            .unwrap_or(0);
        [
            self.subgroup.clone(),
            format!("{:.15e}", self.delta_free),
            format!("{:.15e}", self.delta_sub),
            match self.branch {
                Branch::Supercritical => "supercritical".into(),
                Branch::Subcritical => "subcritical".into(),
            },
            format!("{:.15e}", self.formula_lambda),
            format!("{:.15e}", self.numeric_lambda.value),
            format!("{:.15e}", self.discrepancy),
            depth.to_string(),
        ]
    }
}

/// Computes both sides of the cogrowth formula for one subgroup.
pub fn verify_subgroup(spec: &SubgroupSpec, r: &EdgeLengths, config: &VerifyConfig) -> Result<CogrowthReport> {
    let core = spec.core(config.graph_cap)?;
    if core.rank() != r.rank() {
        return Err(Error::InvalidParameter(format!(
            "subgroup has rank {} but r has rank {}",
            core.rank(),
            r.rank()
        )));
    }
    let delta = delta_free(r)?.value;
    let delta_sub = delta_subgroup(&core, r)?.value;
    if delta_sub > delta + DELTA_SLACK {
        return Err(Error::ExponentOutOfRange {
            delta_sub,
            delta_free: delta,
        });
    }
    let delta_bruteforce = match config.bruteforce_edges {
        Some(k) => {
            let mean = (0..r.rank()).map(|i| r.edge_length(i)).sum::<f64>() / r.rank() as f64;
            Some(delta_bruteforce(&core, r, k * mean, config.count_cap)?.value)
        }
        None => None,
    };
    let weights = p_star(r, delta_sub)?;
    let formula_lambda = cogrowth_lambda_with(r, delta, delta_sub)?;
    let numeric_lambda = lambda0_quotient(&core, &config.depths, &weights, config.seed, config.cell_cap)?;
    let discrepancy_by_depth = numeric_lambda
        .meta
        .per_depth
        .as_ref()
        .map(|v| v.iter().map(|x| (x - formula_lambda).abs()).collect())
        .unwrap_or_default();
    Ok(CogrowthReport {
        subgroup: spec.key(),
        r: r.clone(),
        delta_free: delta,
        delta_sub,
        delta_bruteforce,
        index: core.index(),
        branch: branch(delta, delta_sub),
        weights,
        formula_lambda,
        discrepancy: (numeric_lambda.value - formula_lambda).abs(),
        numeric_lambda,
        discrepancy_by_depth,
    })
}

/// Runs [`verify_subgroup`] over a suite in parallel; results are sorted by
/// subgroup key.
pub fn verify_suite(specs: &[SubgroupSpec], r: &EdgeLengths, config: &VerifyConfig) -> Result<Vec<CogrowthReport>> {
    let mut reports = specs
        .par_iter()
        .map(|s| verify_subgroup(s, r, config))
        .collect::<Result<Vec<_>>>()?;
    reports.sort_by(|a, b| a.subgroup.cmp(&b.subgroup));
    Ok(reports)
}

/// Five subgroups of `F_2` covering every regime of the formula: the whole
/// group, an index-2 subgroup, a cyclic subgroup, the critical `⟨a², b²⟩`,
/// and an infinite-index free subgroup of rank 2.
pub fn builtin_suite() -> Vec<SubgroupSpec> {
    [
        &["a", "b"][..],
        &["a", "bb", "baB"],
        &["a"],
        &["aa", "bb"],
        &["a", "baB"],
    ]
    .iter()
    .map(|g| SubgroupSpec::new(2, g))
    .collect()
}

/// `δ_{N_k}(r) / δ(r)` for the conjugacy-depth exhaustion `N_0 ⊂ N_1 ⊂ …` of
/// the normal closure of `generators`.
pub fn amenability_ratio(generators: &[ReducedWord], r: &EdgeLengths, k_max: usize, cap: usize) -> Result<Vec<(usize, f64)>> {
    let delta = delta_free(r)?.value;
    (0..=k_max)
        .into_par_iter()
        .map(|k| {
            let core = normal_closure_exhaustion(r.rank(), generators, k, cap)?;
            Ok((k, delta_subgroup(&core, r)?.value / delta))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn p_star_examples() {
        let r = EdgeLengths::uniform(2).unwrap();
        for s in [0.0, 0.1, 0.5, 0.79] {
            assert!(p_star(&r, s).unwrap().values().iter().all(|p| (p - 0.25).abs() < 1e-14));
        }
        let r = EdgeLengths::new(vec![0.3, 0.2]).unwrap();
        let d = delta_free(&r).unwrap().value;
        assert_eq!(p_star(&r, 0.1).unwrap(), p_star(&r, 0.5 * d).unwrap());
        let p = p_star(&r, 0.9 * d).unwrap();
        assert!((p.values().iter().sum::<f64>() - 0.5).abs() < 1e-14);
        let sol = solve_weights(&h_map(&r, 0.9 * d).unwrap()).unwrap();
        assert!(sol.residuals(&h_map(&r, 0.9 * d).unwrap()).iter().all(|x| *x < 1e-12));
    }

    #[test]
    fn formula_examples() {
        let r = EdgeLengths::uniform(2).unwrap();
        let d = delta_free(&r).unwrap().value;
        assert!(cogrowth_lambda(&r, d).unwrap().abs() < 1e-12);
        assert!((cogrowth_lambda(&r, 0.0).unwrap() - (1.0 - 3f64.sqrt() / 2.0)).abs() < 1e-12);
        assert!(matches!(cogrowth_lambda(&r, d + 1e-6), Err(Error::ExponentOutOfRange { .. })));
        let dt: f64 = 0.9;
        let expect = 0.25 * (3.0 - dt.exp()) * (1.0 - (-dt).exp());
        assert!((cogrowth_lambda(&r, dt / 4f64.ln()).unwrap() - expect).abs() < 1e-10);
    }

    #[test]
    fn classic_examples() {
        assert!(grigorchuk_classic(2, 3f64.ln()).unwrap().abs() < 1e-15);
        assert!((grigorchuk_classic(2, 0.5 * 3f64.ln()).unwrap() - (1.0 - 3f64.sqrt() / 2.0)).abs() < 1e-15);
        // (3 − e^0.9)(1 − e^−0.9)/4 = 0.0801720...
        assert!((grigorchuk_classic(2, 0.9).unwrap() - 0.080_172_0).abs() < 1e-7);
        assert_eq!(kesten_bottom(2), alternative_bottom(2));
        assert!(kesten_bottom(3) != alternative_bottom(3));
    }

    #[test]
    fn branch_rule() {
        assert_eq!(branch(0.8, 0.4), Branch::Subcritical);
        assert_eq!(branch(0.8, 0.4 + 1e-9), Branch::Supercritical);
    }

    #[test]
    fn verify_whole_group() {
        let r = EdgeLengths::uniform(2).unwrap();
        let rep = verify_subgroup(&SubgroupSpec::new(2, &["a", "b"]), &r, &VerifyConfig::default()).unwrap();
        assert_eq!(rep.branch, Branch::Supercritical);
        assert!(rep.formula_lambda.abs() < 1e-10);
        assert!(rep.discrepancy < 1e-10);
    }
}
