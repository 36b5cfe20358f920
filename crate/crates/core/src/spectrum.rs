//! Spectral radius `ρ(p)` of the weighted walk on the tree, first-passage
//! generating functions, and `λ₀^G(p)` on quotient graphs by Dirichlet
//! truncation and by Monte Carlo return counts.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exponents::delta_free;
use crate::params::{gamma_curve, h_inverse, lambda_along_gamma, EdgeLengths, UVector, Weights};
use crate::roots::{bisect, expand_upper};
use crate::subgroups::{CoreGraph, TruncatedQuotient};

pub const FIRST_PASSAGE_TOL: f64 = 1e-13;
pub const FIRST_PASSAGE_MAX_ITER: usize = 1_000_000;
pub const DIVERGENCE_LEVEL: f64 = 1.0 + 1e-9;
/// `t` within this distance of `ρ(p)` is treated as the critical value itself.
pub const CRITICAL_SNAP: f64 = 1e-12;
pub const POWER_TOL: f64 = 1e-12;
pub const POWER_WINDOW: usize = 100;
pub const POWER_MAX_ITER: usize = 100_000;
/// Default cap on the number of orbit cells in [`lambda0_quotient`].
pub const DEFAULT_CELL_CAP: usize = 5_000_000;
/// Trials per independently seeded Monte Carlo stream.
pub const MC_CHUNK: u64 = 65_536;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpectralMethod {
    ClosedFormMin,
    GammaMax,
    FirstPassage,
    TruncatedPowerIteration,
    MonteCarlo,
}

/// Which quantity `value` holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Quantity {
    /// Spectral radius `ρ`, in `(0, 1]`.
    Rho,
    /// Bottom of the spectrum `λ₀ = 1 − ρ`, in `[0, 1]`.
    Lambda0,
}

/// Method-specific details; absent fields are omitted from JSON.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SpectralMeta {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub depths: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub per_depth: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub iterations: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cells: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub extrapolated: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub monotone: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub minimizer: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cross_check: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trials: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub truncation_depth: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub returns: Option<u64>,
    /// `P̂_{2m}^{1/2m}` from the final step alone.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub raw: Option<f64>,
    /// 95% Wilson interval for `raw`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub raw_interval: Option<[f64; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fit_exponent: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SpectralEstimate {
    pub value: f64,
    pub quantity: Quantity,
    pub method: SpectralMethod,
    pub error_bound: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default)]
    pub meta: SpectralMeta,
}

fn objective(p: &[f64], t: f64) -> f64 {
    let n = p.len() as f64;
    (p.iter().map(|q| (1.0 + 4.0 * q * q * t * t).sqrt()).sum::<f64>() - (n - 1.0)) / t
}

/// Sign of the objective's derivative, up to the positive factor `1/t²`.
fn objective_slope(p: &[f64], t: f64) -> f64 {
    let n = p.len() as f64;
    (n - 1.0) - p.iter().map(|q| 1.0 / (1.0 + 4.0 * q * q * t * t).sqrt()).sum::<f64>()
}

/// `ρ(p) = min_{t>0} (Σ√(1 + 4p_i²t²) − (n−1)) / t`, cross-checked against
/// `1 − max_τ λ∘γ_p(τ)`.
pub fn rho_free(p: &Weights) -> Result<SpectralEstimate> {
    let pv = p.values();
    let n = pv.len();
    let mut meta = SpectralMeta::default();
    if n == 1 {
        // The walk on Z: ρ = 1, approached as t → ∞.
        meta.flags.push("rank-one".into());
        return Ok(SpectralEstimate {
            value: 1.0,
            quantity: Quantity::Rho,
            method: SpectralMethod::ClosedFormMin,
            error_bound: Some(0.0),
            seed: None,
            meta,
        });
    }
    let slope = |t: f64| objective_slope(pv, t);
    let hi = expand_upper(slope, 0.0, 1.0, 200)?;
    let t = bisect(slope, 0.0, hi, 0.0)?.mid();
    let value = objective(pv, t);
    let tau = tau_star(p)?;
    let via_gamma = 1.0 - lambda_along_gamma(p, tau).0;
    let gap = (value - via_gamma).abs();
    if gap > 1e-10 {
        return Err(Error::Consistency(format!(
            "minimization gives ρ = {value}, the γ-curve maximum gives {via_gamma}"
        )));
    }
    meta.minimizer = Some(t);
    meta.cross_check = Some(via_gamma);
    if pv.iter().all(|q| (q - pv[0]).abs() < 1e-15) {
        let k = (2.0 * n as f64 - 1.0).sqrt();
        meta.flags.push(format!(
            "uniform weights: ρ = √(2n−1)/n = {}; the alternative bottom constant 1 − √(2n−1)/2 = {} {}",
            k / n as f64,
            1.0 - k / 2.0,
            if n == 2 { "agrees" } else { "disagrees" }
        ));
    }
    Ok(SpectralEstimate {
        value,
        quantity: Quantity::Rho,
        method: SpectralMethod::ClosedFormMin,
        error_bound: Some(gap.max(f64::EPSILON)),
        seed: None,
        meta,
    })
}

/// `ρ(p)` as `1 − λ∘γ_p(τ*)`.
pub fn rho_gamma(p: &Weights) -> Result<SpectralEstimate> {
    let tau = tau_star(p)?;
    let (lam, _) = lambda_along_gamma(p, tau);
    Ok(SpectralEstimate {
        value: 1.0 - lam,
        quantity: Quantity::Rho,
        method: SpectralMethod::GammaMax,
        error_bound: None,
        seed: None,
        meta: SpectralMeta {
            minimizer: Some(tau),
            ..Default::default()
        },
    })
}

/// The maximizer of `λ∘γ_p`: the root of `Σ τ/√(τ² + 4p_i²) = n − 1`.
pub fn tau_star(p: &Weights) -> Result<f64> {
    let n = p.rank();
    if n == 1 {
        return Ok(0.0);
    }
    let d = |tau: f64| lambda_along_gamma(p, tau).1;
    // d(0) = n − 1 > 0 and d(∞) = −1.
    let hi = expand_upper(d, 0.0, 1.0, 200)?;
    Ok(bisect(d, 0.0, hi, 0.0)?.mid())
}

/// The edge lengths whose critical point `H(r, δ(r)/2)` is `γ_p(τ*)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct MatchedLengths {
    pub r: EdgeLengths,
    /// Exponent with `H(r, s0) = γ_p(τ*)`; equals `δ(r)/2`.
    pub s0: f64,
    pub delta: f64,
}

pub fn r_for_p(p: &Weights) -> Result<MatchedLengths> {
    let u = gamma_curve(p, tau_star(p)?)?;
    let (r, s0) = h_inverse(&u)?;
    let delta = delta_free(&r)?.value;
    if (2.0 * s0 - delta).abs() >= 1e-9 {
        return Err(Error::Consistency(format!(
            "critical exponent mismatch: 2·s0 = {} but δ(r) = {delta}",
            2.0 * s0
        )));
    }
    Ok(MatchedLengths { r, s0, delta })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FirstPassageVector {
    pub values: Vec<f64>,
    pub t: f64,
    /// Max over `i` of `|u_i − (p_i/t)(1 + u_i²) − (2/t) Σ_{k≠i} p_k u_k u_i|`.
    pub residual: f64,
    /// Iterations of the monotone scheme before the curve refinement.
    pub iterations: usize,
}

/// Residual of the first-passage system.
pub fn first_passage_residual(p: &[f64], t: f64, u: &[f64]) -> f64 {
    let total: f64 = p.iter().zip(u).map(|(q, x)| q * x).sum();
    p.iter()
        .zip(u)
        .map(|(q, x)| {
            let rhs = (q * (1.0 + x * x) + 2.0 * (total - q * x) * x) / t;
            (x - rhs).abs()
        })
        .fold(0.0, f64::max)
}

enum Iteration {
    Converged(usize),
    Diverged,
    Exhausted,
}

fn iterate_first_passage(p: &[f64], t: f64, max_iter: usize) -> Iteration {
    let mut u = vec![0.0; p.len()];
    let mut next = vec![0.0; p.len()];
    for it in 1..=max_iter {
        let total: f64 = p.iter().zip(&u).map(|(q, x)| q * x).sum();
        let mut delta = 0.0f64;
        for i in 0..p.len() {
            let x = u[i];
            next[i] = (p[i] * (1.0 + x * x) + 2.0 * (total - p[i] * x) * x) / t;
            delta = delta.max((next[i] - x).abs());
        }
        std::mem::swap(&mut u, &mut next);
        if u.iter().any(|x| !(*x <= DIVERGENCE_LEVEL)) {
            return Iteration::Diverged;
        }
        if delta < FIRST_PASSAGE_TOL {
            return Iteration::Converged(it);
        }
    }
    Iteration::Exhausted
}

/// Minimal positive solution `u(t)` of the first-passage system.
///
/// The monotone iteration from `0` decides convergence. Its limit lies on the
/// curve `γ_p` at the `τ ≥ τ*` with `λ∘γ_p(τ) = 1 − t`, which is then solved
/// directly: near `t = ρ(p)` the iteration converges only sublinearly.
pub fn first_passage(p: &Weights, t: f64) -> Result<FirstPassageVector> {
    if !(t > 0.0) || !t.is_finite() {
        return Err(Error::InvalidParameter(format!("t must be positive, got {t}")));
    }
    let pv = p.values();
    let rho = rho_free(p)?.value;
    let iterations = match iterate_first_passage(pv, t, FIRST_PASSAGE_MAX_ITER) {
        Iteration::Diverged => return Err(Error::NoConvergence { t }),
        Iteration::Converged(it) => it,
        Iteration::Exhausted => {
            if t < rho - CRITICAL_SNAP {
                return Err(Error::NoConvergence { t });
            }
            FIRST_PASSAGE_MAX_ITER
        }
    };
    if p.rank() == 1 {
        // One generator: the minimal root of u² − 2tu + 1 = 0.
        let u = t - (t * t - 1.0).max(0.0).sqrt();
        return Ok(FirstPassageVector {
            residual: first_passage_residual(pv, t, &[u]),
            values: vec![u],
            t,
            iterations,
        });
    }
    let ts = tau_star(p)?;
    let tau = if (t - rho).abs() <= CRITICAL_SNAP {
        ts
    } else {
        let target = 1.0 - t;
        let f = |tau: f64| lambda_along_gamma(p, tau).0 - target;
        let hi = expand_upper(f, ts, ts + 1.0, 200)?;
        bisect(f, ts, hi, 0.0)?.mid()
    };
    let u = gamma_curve(p, tau)?;
    let values = u.values().to_vec();
    Ok(FirstPassageVector {
        residual: first_passage_residual(pv, t, &values),
        values,
        t,
        iterations,
    })
}

/// The `t` below which the monotone iteration diverges, located by bisection
/// on the divergence test alone (no curve information).
pub fn first_passage_threshold(p: &Weights, tol: f64) -> Result<f64> {
    let pv = p.values();
    let diverges = |t: f64| matches!(iterate_first_passage(pv, t, FIRST_PASSAGE_MAX_ITER), Iteration::Diverged);
    // At t = 1 the walk is transient (n ≥ 2) and the iteration converges;
    // near t = 0 it blows up immediately.
    let (mut lo, mut hi) = (1e-3, 1.0);
    if !diverges(lo) || diverges(hi) {
        return Err(Error::Consistency("first-passage threshold is not bracketed by (0, 1]".into()));
    }
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if diverges(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// The weighted adjacency operator of a truncated quotient, reduced to orbit
/// cells of the automorphisms that permute equal-weight branches of each
/// hanging tree. Stored symmetrically as `(i, j, weight)` with `i < j` plus a
/// diagonal.
#[derive(Debug, Clone)]
pub struct LumpedOperator {
    pub diagonal: Vec<f64>,
    pub edges: Vec<(usize, usize, f64)>,
}

impl LumpedOperator {
    pub fn size(&self) -> usize {
        self.diagonal.len()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        for (i, d) in self.diagonal.iter().enumerate() {
            y[i] = d * x[i];
        }
        for &(i, j, w) in &self.edges {
            y[i] += w * x[j];
            y[j] += w * x[i];
        }
    }
}

/// Builds the lumped Dirichlet operator for the quotient truncated at `depth`.
///
/// Core vertices are their own cells. A tree vertex is determined up to
/// automorphism by its root half-edge and the sequence of weight classes of
/// the edges leading to it; a vertex reached along class `c` has
/// `2|c'| − [c' = c]` children along class `c'`. The symmetric lumped weight
/// between a parent cell and a child cell of multiplicity `k` is `p·√k`.
pub fn lumped_operator(core: &CoreGraph, p: &Weights, depth: usize, cap: usize) -> Result<LumpedOperator> {
    if p.rank() != core.rank() {
        return Err(Error::InvalidParameter(format!(
            "weights have rank {} but the core graph has rank {}",
            p.rank(),
            core.rank()
        )));
    }
    let pv = p.values();
    // Weight classes: generators with bitwise equal weights.
    let mut classes: Vec<(f64, usize)> = Vec::new();
    let mut class_of = vec![0; pv.len()];
    for (g, &q) in pv.iter().enumerate() {
        match classes.iter().position(|(w, _)| *w == q) {
            Some(c) => {
                classes[c].1 += 1;
                class_of[g] = c;
            }
            None => {
                class_of[g] = classes.len();
                classes.push((q, 1));
            }
        }
    }
    let v = core.vertex_count();
    let mut diagonal = vec![0.0; v];
    let mut edges = Vec::new();
    for (a, row) in core.slots().iter().enumerate() {
        for (s, t) in row.iter().enumerate() {
            if let Some(b) = *t {
                let w = pv[s / 2];
                if a == b {
                    diagonal[a] += w;
                } else if a < b {
                    edges.push((a, b, w));
                }
            }
        }
    }
    if depth == 0 {
        return Ok(LumpedOperator { diagonal, edges });
    }
    // Frontier of (cell index, class of the edge into it).
    let mut frontier: Vec<(usize, usize)> = Vec::new();
    for (a, s) in core.missing_half_edges() {
        let cell = diagonal.len();
        diagonal.push(0.0);
        edges.push((a, cell, pv[s / 2]));
        frontier.push((cell, class_of[s / 2]));
    }
    for _ in 1..depth {
        let mut next = Vec::with_capacity(frontier.len() * classes.len());
        for &(cell, c) in &frontier {
            for (c2, &(w, size)) in classes.iter().enumerate() {
                let k = 2 * size - (c2 == c) as usize;
                if k == 0 {
                    continue;
                }
                let child = diagonal.len();
                if child >= cap {
                    return Err(Error::ResourceCap {
                        what: "lumped quotient cells",
                        cap,
                    });
                }
                diagonal.push(0.0);
                edges.push((cell, child, w * (k as f64).sqrt()));
                next.push((child, c2));
            }
        }
        frontier = next;
    }
    Ok(LumpedOperator { diagonal, edges })
}

/// Explicit weighted adjacency of a [`TruncatedQuotient`] in the same format.
pub fn explicit_operator(tq: &TruncatedQuotient, p: &Weights) -> LumpedOperator {
    let pv = p.values();
    let mut diagonal = vec![0.0; tq.vertex_count()];
    let mut edges = Vec::new();
    for (a, row) in tq.adj.iter().enumerate() {
        for (s, t) in row.iter().enumerate() {
            if let Some(b) = *t {
                if a == b {
                    diagonal[a] += pv[s / 2];
                } else if a < b {
                    edges.push((a, b, pv[s / 2]));
                }
            }
        }
    }
    LumpedOperator { diagonal, edges }
}

/// Largest eigenvalue of a symmetric nonnegative operator by power iteration
/// from a seeded random positive vector. The estimate `‖Sx‖/‖x‖` increases
/// monotonically to `ρ(S)` even when `−ρ(S)` is also an eigenvalue.
pub fn top_eigenvalue(op: &LumpedOperator, seed: u64) -> std::result::Result<(f64, usize), (f64, usize)> {
    let m = op.size();
    if m == 0 {
        return Ok((0.0, 0));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x: Vec<f64> = (0..m).map(|_| 0.5 + rng.random::<f64>()).collect();
    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    x.iter_mut().for_each(|v| *v /= norm);
    let mut y = vec![0.0; m];
    let mut history: Vec<f64> = Vec::with_capacity(POWER_MAX_ITER);
    for it in 1..=POWER_MAX_ITER {
        op.apply(&x, &mut y);
        let norm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Ok((0.0, it));
        }
        history.push(norm);
        if it > POWER_WINDOW && (norm - history[it - 1 - POWER_WINDOW]).abs() < POWER_TOL {
            return Ok((norm, it));
        }
        for (a, b) in x.iter_mut().zip(&y) {
            *a = b / norm;
        }
    }
    Err((*history.last().unwrap(), POWER_MAX_ITER))
}

/// Aitken Δ² extrapolation of the last three terms, when well conditioned.
pub fn aitken(seq: &[f64]) -> Option<f64> {
    if seq.len() < 3 {
        return None;
    }
    let [a, b, c] = [seq[seq.len() - 3], seq[seq.len() - 2], seq[seq.len() - 1]];
    let denom = c - 2.0 * b + a;
    if denom.abs() < 1e-300 || !denom.is_finite() {
        return None;
    }
    let x = c - (c - b) * (c - b) / denom;
    x.is_finite().then_some(x)
}

/// `λ₀^G(p)` from Dirichlet truncations of the quotient at increasing depths.
pub fn lambda0_quotient(
    core: &CoreGraph,
    depths: &[usize],
    p: &Weights,
    seed: u64,
    cap: usize,
) -> Result<SpectralEstimate> {
    if depths.is_empty() || depths.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidParameter("depths must be nonempty and strictly increasing".into()));
    }
    let mut per_depth = Vec::new();
    let mut iterations = Vec::new();
    let mut cells = Vec::new();
    for &depth in depths {
        let op = lumped_operator(core, p, depth, cap)?;
        let (rho, it) = top_eigenvalue(&op, seed).map_err(|(estimate, iterations)| Error::Stagnation {
            depth,
            iterations,
            estimate: 1.0 - estimate,
        })?;
        per_depth.push((1.0 - rho).max(0.0));
        iterations.push(it);
        cells.push(op.size());
    }
    let value = *per_depth.last().unwrap();
    let monotone = per_depth.windows(2).all(|w| w[1] <= w[0] + 1e-12);
    let extrapolated = aitken(&per_depth).map(|x| x.clamp(0.0, 1.0));
    Ok(SpectralEstimate {
        value,
        quantity: Quantity::Lambda0,
        method: SpectralMethod::TruncatedPowerIteration,
        error_bound: extrapolated.map(|x| (value - x).abs()),
        seed: Some(seed),
        meta: SpectralMeta {
            depths: Some(depths.to_vec()),
            per_depth: Some(per_depth),
            iterations: Some(iterations),
            cells: Some(cells),
            extrapolated,
            monotone: Some(monotone),
            ..Default::default()
        },
    })
}

/// Step sampler over the `2n` slots.
fn cumulative_slots(p: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    let mut out: Vec<f64> = (0..2 * p.len())
        .map(|s| {
            acc += p[s / 2];
            acc
        })
        .collect();
    *out.last_mut().unwrap() = f64::INFINITY;
    out
}

/// Return counts at the base after `2, 4, …, steps` steps.
fn mc_counts(core: &CoreGraph, p: &[f64], steps: usize, trials: u64, seed: u64, depth: usize) -> Vec<u64> {
    let half = steps / 2;
    let cum = cumulative_slots(p);
    let chunks = trials.div_ceil(MC_CHUNK);
    (0..chunks)
        .into_par_iter()
        .map(|chunk| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(chunk);
            let n = MC_CHUNK.min(trials - chunk * MC_CHUNK);
            let mut counts = vec![0u64; half];
            let mut stack: Vec<usize> = Vec::with_capacity(depth + 1);
            for _ in 0..n {
                let mut v = 0usize;
                stack.clear();
                for step in 1..=steps {
                    let x: f64 = rng.random();
                    let s = cum.iter().position(|&c| x < c).unwrap();
                    match stack.last() {
                        None => match core.neighbor(v, s) {
                            Some(t) => v = t,
                            None => stack.push(s),
                        },
                        Some(&top) if top == s ^ 1 => {
                            stack.pop();
                        }
                        Some(_) => stack.push(s),
                    }
                    if stack.len() > depth {
                        break;
                    }
                    if step % 2 == 0 && v == 0 && stack.is_empty() {
                        counts[step / 2 - 1] += 1;
                    }
                }
            }
            counts
        })
        .reduce(
            || vec![0u64; half],
            |mut a, b| {
                a.iter_mut().zip(&b).for_each(|(x, y)| *x += y);
                a
            },
        )
}

fn wilson(k: u64, n: u64, z: f64) -> (f64, f64) {
    let (k, n) = (k as f64, n as f64);
    let ph = k / n;
    let denom = 1.0 + z * z / n;
    let centre = (ph + z * z / (2.0 * n)) / denom;
    let half = z * (ph * (1.0 - ph) / n + z * z / (4.0 * n * n)).sqrt() / denom;
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

/// Solves the 3×3 system `a x = b` by Gaussian elimination with pivoting.
fn solve3(mut a: [[f64; 3]; 3], mut b: [f64; 3]) -> Option<([f64; 3], [[f64; 3]; 3])> {
    let mut inv = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    for col in 0..3 {
        let piv = (col..3).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        inv.swap(col, piv);
        for row in 0..3 {
            if row != col {
                let f = a[row][col] / a[col][col];
                for k in 0..3 {
                    a[row][k] -= f * a[col][k];
                    inv[row][k] -= f * inv[col][k];
                }
                b[row] -= f * b[col];
            }
        }
    }
    let x = [b[0] / a[0][0], b[1] / a[1][1], b[2] / a[2][2]];
    for (row, d) in inv.iter_mut().zip([a[0][0], a[1][1], a[2][2]]) {
        row.iter_mut().for_each(|v| *v /= d);
    }
    Some((x, inv))
}

/// Estimates `ρ^G(p)` from Monte Carlo return counts of the walk on the
/// quotient `G\Cay(F_n)` killed beyond tree depth `depth`.
///
/// The quotient is walked implicitly: a position is a core vertex plus the
/// stack of tree slots taken since leaving the core. Trials are split into
/// chunks of [`MC_CHUNK`], each with its own ChaCha8 stream, and the integer
/// counts are summed, so the result does not depend on the thread count.
///
/// `P(X_{2k} = o)` decays like `C ρ^{2k} k^{−β}`, so the last-step root
/// `P̂_{2m}^{1/2m}` is biased low at moderate `m`. The value is a weighted
/// least-squares fit of `log P̂_{2k} = a + 2k log ρ − β log k` over
/// `k ∈ [⌈m/3⌉, m]` with weights equal to the return counts; the raw root and
/// its Wilson interval are kept in the metadata.
pub fn mc_return_rate(
    core: &CoreGraph,
    depth: usize,
    p: &Weights,
    steps: usize,
    trials: u64,
    seed: u64,
) -> Result<SpectralEstimate> {
    if steps < 2 || steps % 2 != 0 {
        return Err(Error::InvalidParameter(format!("steps must be even and ≥ 2, got {steps}")));
    }
    if trials == 0 {
        return Err(Error::InvalidParameter("trials must be positive".into()));
    }
    if p.rank() != core.rank() {
        return Err(Error::InvalidParameter("weights and core graph differ in rank".into()));
    }
    let m = steps / 2;
    let counts = mc_counts(core, p.values(), steps, trials, seed, depth);
    let last = counts[m - 1];
    let (wl, wh) = wilson(last, trials, 1.96);
    let root = |x: f64| x.powf(1.0 / steps as f64);
    if last == 0 {
        return Err(Error::NoReturns {
            trials,
            steps,
            rho_upper: root(wh),
        });
    }
    let raw = root(last as f64 / trials as f64);
    let mut meta = SpectralMeta {
        trials: Some(trials),
        steps: Some(steps),
        truncation_depth: Some(depth),
        returns: Some(last),
        raw: Some(raw),
        raw_interval: Some([root(wl), root(wh)]),
        ..Default::default()
    };
    if depth < m {
        meta.flags.push("truncation depth below steps/2: the boundary can bias returns".into());
    }

    let k0 = m.div_ceil(3).max(1);
    let points: Vec<(f64, f64, f64)> = (k0..=m)
        .filter(|&k| counts[k - 1] > 0)
        .map(|k| {
            let c = counts[k - 1] as f64;
            (k as f64, (c / trials as f64).ln(), c)
        })
        .collect();
    let fit = (points.len() >= 4)
        .then(|| {
            let mut a = [[0.0; 3]; 3];
            let mut b = [0.0; 3];
            for &(k, y, w) in &points {
                let x = [1.0, 2.0 * k, -k.ln()];
                for i in 0..3 {
                    for j in 0..3 {
                        a[i][j] += w * x[i] * x[j];
                    }
                    b[i] += w * x[i] * y;
                }
            }
            solve3(a, b)
        })
        .flatten();
    let (value, error_bound) = match fit {
        Some((x, cov)) => {
            let rho = x[1].exp();
            meta.fit_exponent = Some(x[2]);
            (rho, Some(rho * cov[1][1].max(0.0).sqrt()))
        }
        None => {
            meta.flags.push("too few return times for the decay fit; reporting the raw root".into());
            (raw, Some(0.5 * (root(wh) - root(wl))))
        }
    };
    Ok(SpectralEstimate {
        value,
        quantity: Quantity::Rho,
        method: SpectralMethod::MonteCarlo,
        error_bound,
        seed: Some(seed),
        meta,
    })
}

/// Return counts of the killed walk, exposed for diagnostics.
pub fn mc_return_counts(core: &CoreGraph, depth: usize, p: &Weights, steps: usize, trials: u64, seed: u64) -> Vec<u64> {
    mc_counts(core, p.values(), steps, trials, seed, depth)
}

/// `u_i(1)`: the probability that the walk ever reaches `a_i` from the identity.
pub fn hitting_probabilities(p: &Weights) -> Result<UVector> {
    UVector::closed(first_passage(p, 1.0)?.values)
}

/// `ρ(p)` by each deterministic tree method.
pub fn rho_methods(p: &Weights) -> Result<HashMap<SpectralMethod, f64>> {
    let mut out = HashMap::new();
    out.insert(SpectralMethod::ClosedFormMin, rho_free(p)?.value);
    out.insert(SpectralMethod::GammaMax, rho_gamma(p)?.value);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::freegroup::ReducedWord;
    use crate::subgroups::{fold, truncate_quotient, DEFAULT_GRAPH_CAP};

    fn core(gens: &[&str]) -> CoreGraph {
        let words: Vec<_> = gens.iter().map(|g| ReducedWord::parse(2, g).unwrap()).collect();
        fold(2, &words).unwrap()
    }

    #[test]
    fn rho_uniform() {
        for n in 2..=5 {
            let p = Weights::uniform(n).unwrap();
            let r = rho_free(&p).unwrap();
            let kesten = ((2 * n - 1) as f64).sqrt() / n as f64;
            assert!((r.value - kesten).abs() < 1e-10, "n = {n}");
            assert!((rho_gamma(&p).unwrap().value - kesten).abs() < 1e-10);
        }
    }

    #[test]
    fn rho_unequal() {
        let p = Weights::new(vec![0.4, 0.1]).unwrap();
        let a = rho_free(&p).unwrap().value;
        let b = rho_gamma(&p).unwrap().value;
        assert!((a - b).abs() < 1e-10);
        assert!(a > 0.0 && a < 1.0);
    }

    #[test]
    fn tau_examples() {
        let p = Weights::uniform(2).unwrap();
        assert!((tau_star(&p).unwrap() - 1.0 / (2.0 * 3f64.sqrt())).abs() < 1e-14);
        let p = Weights::new(vec![0.4, 0.1]).unwrap();
        let t = tau_star(&p).unwrap();
        assert!(lambda_along_gamma(&p, t).1.abs() < 1e-12);
        let top = lambda_along_gamma(&p, t).0;
        assert!(top > lambda_along_gamma(&p, t - 0.01).0);
        assert!(top > lambda_along_gamma(&p, t + 0.01).0);
    }

    #[test]
    fn matched_lengths() {
        let m = r_for_p(&Weights::uniform(2).unwrap()).unwrap();
        assert!(m.r.values().iter().all(|x| (x - 0.25).abs() < 1e-12));
        assert!((2.0 * m.s0 - 3f64.ln() / 4f64.ln()).abs() < 1e-9);
        let m = r_for_p(&Weights::uniform(3).unwrap()).unwrap();
        assert!(m.r.values().iter().all(|x| (x - 1.0 / 6.0).abs() < 1e-12));
        r_for_p(&Weights::new(vec![0.4, 0.1]).unwrap()).unwrap();
    }

    #[test]
    fn first_passage_examples() {
        let p = Weights::uniform(2).unwrap();
        let u = first_passage(&p, 1.0).unwrap();
        assert!(u.values.iter().all(|x| (x - 1.0 / 3.0).abs() < 1e-10));
        assert!(u.residual < 1e-12);
        let u = first_passage(&p, 3f64.sqrt() / 2.0).unwrap();
        assert!(u.values.iter().all(|x| (x - 1.0 / 3f64.sqrt()).abs() < 1e-10));
        assert!(u.residual < 1e-12);
        assert_eq!(first_passage(&p, 0.5), Err(Error::NoConvergence { t: 0.5 }));
    }

    #[test]
    fn threshold_matches_rho() {
        let p = Weights::new(vec![0.35, 0.15]).unwrap();
        let t = first_passage_threshold(&p, 1e-11).unwrap();
        assert!((t - rho_free(&p).unwrap().value).abs() < 1e-8);
    }

    #[test]
    fn lumping_matches_explicit() {
        let p = Weights::new(vec![0.3, 0.2]).unwrap();
        for gens in [&["a"][..], &[], &["aa", "bb"], &["a", "baB"]] {
            let c = core(gens);
            for depth in [0, 1, 3, 5] {
                let tq = truncate_quotient(&c, depth, DEFAULT_GRAPH_CAP).unwrap();
                let (e, _) = top_eigenvalue(&explicit_operator(&tq, &p), 1).unwrap();
                let (l, _) = top_eigenvalue(&lumped_operator(&c, &p, depth, DEFAULT_CELL_CAP).unwrap(), 1).unwrap();
                assert!((e - l).abs() < 1e-9, "{gens:?} depth {depth}: {e} vs {l}");
            }
        }
    }

    #[test]
    fn finite_quotient_has_zero_bottom() {
        let p = Weights::uniform(2).unwrap();
        for gens in [&["a", "b"][..], &["a", "bb", "baB"]] {
            let est = lambda0_quotient(&core(gens), &[5, 10], &p, 3, DEFAULT_CELL_CAP).unwrap();
            assert!(est.value.abs() < 1e-12, "{gens:?}: {}", est.value);
        }
    }

    #[test]
    fn tree_truncation_approaches_kesten() {
        let p = Weights::uniform(2).unwrap();
        let est = lambda0_quotient(&core(&[]), &[10, 20, 30], &p, 7, DEFAULT_CELL_CAP).unwrap();
        let target = 1.0 - 3f64.sqrt() / 2.0;
        assert!(est.value >= target && est.value - target < 1e-2);
        assert_eq!(est.meta.monotone, Some(true));
    }

    #[test]
    fn mc_is_reproducible_and_sane() {
        let p = Weights::uniform(2).unwrap();
        let a = mc_return_rate(&core(&[]), 12, &p, 24, 200_000, 11).unwrap();
        let b = mc_return_rate(&core(&[]), 12, &p, 24, 200_000, 11).unwrap();
        assert_eq!(a, b);
        assert!((a.value - 3f64.sqrt() / 2.0).abs() < 0.05);
        let f = mc_return_rate(&core(&["a", "bb", "baB"]), 0, &p, 200, 20_000, 5).unwrap();
        assert!((f.value - 1.0).abs() < 0.05);
    }
}
