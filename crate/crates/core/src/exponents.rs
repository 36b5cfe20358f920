//! Poincaré exponents: `δ(r)` of `F_n` from the root of `l(H(r, s)) = 0`,
//! `δ_G(r)` of a subgroup from the Perron root of its weighted
//! non-backtracking edge matrix, and an exact orbit-counting oracle.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{h_map, l_eval, EdgeLengths};
use crate::roots::{bisect, expand_upper, Bracket};
use crate::subgroups::CoreGraph;

/// Tolerance on the Collatz–Wielandt gap of the Perron iteration.
pub const PERRON_TOL: f64 = 1e-13;
pub const PERRON_MAX_ITER: usize = 100_000;
/// Spectral radii of `B(0)` at most `1 + ZERO_GROWTH_TOL` mean subexponential growth.
pub const ZERO_GROWTH_TOL: f64 = 1e-12;
/// Default cap on the number of live counting states in [`delta_bruteforce`].
pub const DEFAULT_COUNT_CAP: usize = 5_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    RootSolve,
    TransferMatrix,
    BruteForce,
}

/// Orbit counts behind a brute-force estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct OrbitCounts {
    pub radius: f64,
    /// `#{g ∈ G : d_r(o, g o) ≤ R}`, as a decimal string (it may exceed `u64`).
    pub count: String,
    pub half_radius_count: String,
    /// `log(count) / R`.
    pub naive: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ExponentResult {
    pub value: f64,
    pub method: Method,
    /// Defining equation at `value`: `l(H(r, s))` or `ρ(B(s)) − 1`.
    /// For brute force, the gap between the doubling and naive estimates.
    pub residual: f64,
    pub bracket: Option<Bracket>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub counts: Option<OrbitCounts>,
}

fn l_at(r: &EdgeLengths, s: f64) -> f64 {
    let u: Vec<f64> = r.values().iter().map(|x| x.powf(s)).collect();
    l_eval(&u)
}

/// `δ(r)` for the whole free group.
pub fn delta_free(r: &EdgeLengths) -> Result<ExponentResult> {
    if r.rank() == 1 {
        // F_1 = Z grows linearly.
        return Ok(ExponentResult {
            value: 0.0,
            method: Method::RootSolve,
            residual: l_at(r, 0.0),
            bracket: Some(Bracket { lo: 0.0, hi: 0.0 }),
            flags: vec!["rank-one".into()],
            counts: None,
        });
    }
    let f = |s: f64| l_at(r, s);
    let hi = expand_upper(f, 0.0, 1.0, 60)?;
    let bracket = bisect(f, 0.0, hi, 0.0)?;
    let value = bracket.mid();
    // h_map validates the point even though l is evaluated directly.
    h_map(r, value)?;
    Ok(ExponentResult {
        value,
        method: Method::RootSolve,
        residual: l_at(r, value),
        bracket: Some(bracket),
        flags: Vec::new(),
        counts: None,
    })
}

/// Non-backtracking transitions among directed core edges that lie on some
/// bi-infinite reduced path. Edges with no successor or no predecessor
/// cannot carry exponential growth and are pruned.
#[derive(Debug, Clone)]
pub struct TransferMatrix {
    /// Generator label of each surviving directed edge.
    labels: Vec<usize>,
    /// `successors[e]` lists the edges that may follow `e`.
    successors: Vec<Vec<usize>>,
}

impl TransferMatrix {
    pub fn new(core: &CoreGraph) -> Self {
        let edges = core.directed_edges();
        let id: HashMap<(usize, usize), usize> = edges.iter().enumerate().map(|(i, e)| (*e, i)).collect();
        let mut succ: Vec<Vec<usize>> = edges
            .iter()
            .map(|&(v, s)| {
                let t = core.neighbor(v, s).expect("directed edge has a target");
                (0..2 * core.rank())
                    .filter(|&c| c != s ^ 1)
                    .filter_map(|c| id.get(&(t, c)).copied())
                    .collect()
            })
            .collect();
        let mut alive = vec![true; edges.len()];
        loop {
            let mut indegree = vec![0usize; edges.len()];
            for (e, list) in succ.iter().enumerate() {
                if alive[e] {
                    for &f in list {
                        indegree[f] += 1;
                    }
                }
            }
            let mut changed = false;
            for e in 0..edges.len() {
                if alive[e] && (indegree[e] == 0 || succ[e].is_empty()) {
                    alive[e] = false;
                    changed = true;
                }
            }
            for list in succ.iter_mut() {
                list.retain(|&f| alive[f]);
            }
            if !changed {
                break;
            }
        }
        let remap: Vec<Option<usize>> = {
            let mut next = 0;
            alive
                .iter()
                .map(|&a| {
                    a.then(|| {
                        next += 1;
                        next - 1
                    })
                })
                .collect()
        };
        let mut labels = Vec::new();
        let mut successors = Vec::new();
        for e in 0..edges.len() {
            if alive[e] {
                labels.push(edges[e].1 / 2);
                successors.push(succ[e].iter().map(|&f| remap[f].unwrap()).collect());
            }
        }
        TransferMatrix { labels, successors }
    }

    pub fn size(&self) -> usize {
        self.labels.len()
    }

    /// Collatz–Wielandt bounds on the Perron root of `B(s)`. Iterates on
    /// `B + I` (primitive whenever `B` is irreducible) and returns early once
    /// both bounds lie on the same side of `stop_at`, if given.
    pub fn perron_bounds(&self, r: &EdgeLengths, s: f64, stop_at: Option<f64>) -> (f64, f64, usize) {
        let m = self.size();
        if m == 0 {
            return (0.0, 0.0, 0);
        }
        let w: Vec<f64> = self.labels.iter().map(|&g| r.get(g).powf(s)).collect();
        let mut x = vec![1.0; m];
        let mut y = vec![0.0; m];
        let (mut lo, mut hi) = (0.0, f64::INFINITY);
        for it in 1..=PERRON_MAX_ITER {
            // (B x)_e = Σ_{f after e} w_f x_f
            for e in 0..m {
                y[e] = x[e] + self.successors[e].iter().map(|&f| w[f] * x[f]).sum::<f64>();
            }
            let (mut a, mut b) = (f64::INFINITY, 0.0f64);
            for e in 0..m {
                let q = y[e] / x[e];
                a = a.min(q);
                b = b.max(q);
            }
            lo = f64::max(lo, a - 1.0);
            hi = f64::min(hi, b - 1.0);
            if hi - lo <= PERRON_TOL * hi.max(1.0) {
                return (lo, hi, it);
            }
            if let Some(t) = stop_at {
                if lo > t || hi < t {
                    return (lo, hi, it);
                }
            }
            let norm = y.iter().cloned().fold(0.0, f64::max);
            for e in 0..m {
                x[e] = y[e] / norm;
            }
        }
        (lo, hi, PERRON_MAX_ITER)
    }

    pub fn spectral_radius(&self, r: &EdgeLengths, s: f64) -> f64 {
        let (lo, hi, _) = self.perron_bounds(r, s, None);
        0.5 * (lo + hi)
    }
}

/// `δ_G(r)`: the `s` at which the Perron root of `B(s)` equals 1.
pub fn delta_subgroup(core: &CoreGraph, r: &EdgeLengths) -> Result<ExponentResult> {
    if r.rank() != core.rank() {
        return Err(Error::InvalidParameter(format!(
            "edge lengths have rank {} but the core graph has rank {}",
            r.rank(),
            core.rank()
        )));
    }
    let zero = |flag: &str, residual: f64| ExponentResult {
        value: 0.0,
        method: Method::TransferMatrix,
        residual,
        bracket: Some(Bracket { lo: 0.0, hi: 0.0 }),
        flags: vec![flag.to_string()],
        counts: None,
    };
    if core.edge_count() == 0 {
        return Ok(zero("trivial-subgroup", 0.0));
    }
    let b = TransferMatrix::new(core);
    if b.size() == 0 {
        return Ok(zero("no-cycles", 0.0));
    }
    let rho0 = b.spectral_radius(r, 0.0);
    if rho0 <= 1.0 + ZERO_GROWTH_TOL {
        return Ok(zero("subexponential-growth", rho0 - 1.0));
    }
    let sign = |s: f64| {
        let (lo, hi, _) = b.perron_bounds(r, s, Some(1.0));
        if lo > 1.0 {
            1.0
        } else if hi < 1.0 {
            -1.0
        } else {
            0.5 * (lo + hi) - 1.0
        }
    };
    let hi = expand_upper(sign, 0.0, 2.0, 60)?;
    let bracket = bisect(sign, 0.0, hi, 1e-13)?;
    let value = bracket.mid();
    Ok(ExponentResult {
        value,
        method: Method::TransferMatrix,
        residual: b.spectral_radius(r, value) - 1.0,
        bracket: Some(bracket),
        flags: Vec::new(),
        counts: None,
    })
}

/// Exact `N(R) = #{g ∈ G : d_r(o, g o) ≤ R}` for `R` and `R/2`, counted by
/// dynamic programming over (directed edge, letter-count vector); the count
/// vector fixes `d_r`. Reports `(log N(R) − log N(R/2)) / (R/2)`, which
/// cancels the polynomial prefactor that biases `log N(R) / R`.
pub fn delta_bruteforce(core: &CoreGraph, r: &EdgeLengths, radius: f64, cap: usize) -> Result<ExponentResult> {
    if r.rank() != core.rank() {
        return Err(Error::InvalidParameter(format!(
            "edge lengths have rank {} but the core graph has rank {}",
            r.rank(),
            core.rank()
        )));
    }
    if !(radius > 0.0) || !radius.is_finite() {
        return Err(Error::InvalidParameter(format!("radius must be positive, got {radius}")));
    }
    let full = loop_count(core, r, radius, cap)?;
    let half = loop_count(core, r, 0.5 * radius, cap)?;
    let (ln_full, ln_half) = ((full as f64).ln(), (half as f64).ln());
    let value = (ln_full - ln_half) / (0.5 * radius);
    let naive = ln_full / radius;
    Ok(ExponentResult {
        value,
        method: Method::BruteForce,
        residual: value - naive,
        bracket: None,
        flags: Vec::new(),
        counts: Some(OrbitCounts {
            radius,
            count: full.to_string(),
            half_radius_count: half.to_string(),
            naive,
        }),
    })
}

/// Reduced closed paths at the base with `d_r ≤ radius`, identity included.
pub fn loop_count(core: &CoreGraph, r: &EdgeLengths, radius: f64, cap: usize) -> Result<u128> {
    let rank = core.rank();
    let ell: Vec<f64> = (0..rank).map(|g| r.edge_length(g)).collect();
    let fits = |c: &[u16]| c.iter().zip(&ell).map(|(k, l)| *k as f64 * l).sum::<f64>() <= radius + 1e-12 * radius.max(1.0);
    let overflow = Error::ResourceCap {
        what: "orbit count",
        cap: usize::MAX,
    };

    // (vertex, slot just read, counts) -> number of reduced paths from the base.
    type Layer = HashMap<(usize, usize, Vec<u16>), u128>;
    let mut total: u128 = 1;
    let mut layer: Layer = HashMap::new();
    for s in 0..2 * rank {
        if let Some(t) = core.neighbor(0, s) {
            let mut c = vec![0u16; rank];
            c[s / 2] += 1;
            if fits(&c) {
                layer.insert((t, s, c), 1);
            }
        }
    }
    while !layer.is_empty() {
        if layer.len() > cap {
            return Err(Error::ResourceCap {
                what: "orbit counting states",
                cap,
            });
        }
        let mut next: Layer = HashMap::new();
        for ((v, last, c), n) in &layer {
            if *v == 0 {
                total = total.checked_add(*n).ok_or(overflow.clone())?;
            }
            for s in 0..2 * rank {
                if s == last ^ 1 {
                    continue;
                }
                if let Some(t) = core.neighbor(*v, s) {
                    let mut c2 = c.clone();
                    c2[s / 2] += 1;
                    if fits(&c2) {
                        let slot = next.entry((t, s, c2)).or_insert(0);
                        *slot = slot.checked_add(*n).ok_or(overflow.clone())?;
                    }
                }
            }
        }
        layer = next;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::freegroup::ReducedWord;
    use crate::subgroups::fold;

    fn core(gens: &[&str]) -> CoreGraph {
        let words: Vec<_> = gens.iter().map(|g| ReducedWord::parse(2, g).unwrap()).collect();
        fold(2, &words).unwrap()
    }

    #[test]
    fn free_uniform() {
        for n in 2..=6 {
            let r = EdgeLengths::uniform(n).unwrap();
            let d = delta_free(&r).unwrap();
            let exact = ((2 * n - 1) as f64).ln() / ((2 * n) as f64).ln();
            assert!((d.value - exact).abs() < 1e-10, "n = {n}");
            let b = d.bracket.unwrap();
            assert!(b.width() < 1e-12);
            assert!(l_at(&r, b.lo) >= 0.0 && l_at(&r, b.hi) <= 0.0);
            assert!(d.residual.abs() < 1e-10);
        }
    }

    #[test]
    fn free_unequal() {
        let r = EdgeLengths::new(vec![0.3, 0.2]).unwrap();
        let s = delta_free(&r).unwrap().value;
        // Two generators reduce l to this closed form.
        let eq = 0.3f64.powf(s) + 0.2f64.powf(s) + 3.0 * 0.06f64.powf(s);
        assert!((eq - 1.0).abs() < 1e-12);
    }

    #[test]
    fn transfer_matrix_examples() {
        let r = EdgeLengths::uniform(2).unwrap();
        let d = delta_subgroup(&core(&["a", "b"]), &r).unwrap().value;
        assert!((d - 3f64.ln() / 4f64.ln()).abs() < 1e-10);
        assert_eq!(delta_subgroup(&core(&["a"]), &r).unwrap().value, 0.0);
        assert_eq!(delta_subgroup(&core(&["abAB"]), &r).unwrap().value, 0.0);
        let d = delta_subgroup(&core(&["aa", "bb"]), &r).unwrap();
        assert!((d.value - 3f64.ln() / (2.0 * 4f64.ln())).abs() < 1e-10);
        assert!(d.residual.abs() < 1e-10);
        let e = delta_subgroup(&core(&[]), &r).unwrap();
        assert_eq!((e.value, e.flags[0].as_str()), (0.0, "trivial-subgroup"));
    }

    #[test]
    fn counts_match_closed_forms() {
        let r = EdgeLengths::uniform(2).unwrap();
        let log4 = 4f64.ln();
        // Reduced words of length ≤ k: 2·3^k − 1.
        assert_eq!(loop_count(&core(&["a", "b"]), &r, 6.0 * log4, DEFAULT_COUNT_CAP).unwrap(), 2 * 729 - 1);
        assert_eq!(loop_count(&core(&["a"]), &r, 7.0 * log4, DEFAULT_COUNT_CAP).unwrap(), 15);
    }

    #[test]
    fn bruteforce_examples() {
        let r = EdgeLengths::uniform(2).unwrap();
        let log4 = 4f64.ln();
        let d = delta_bruteforce(&core(&["a", "b"]), &r, 25.0 * log4, DEFAULT_COUNT_CAP).unwrap();
        assert!((d.value - 3f64.ln() / log4).abs() < 0.05);
        let d = delta_bruteforce(&core(&["aa", "bb"]), &r, 30.0 * log4, DEFAULT_COUNT_CAP).unwrap();
        assert!((d.value - 3f64.ln() / (2.0 * log4)).abs() < 0.05);
        let d = delta_bruteforce(&core(&["a"]), &r, 25.0 * log4, DEFAULT_COUNT_CAP).unwrap();
        assert!(d.value < 0.05);
    }

    #[test]
    fn json_shape() {
        let r = EdgeLengths::uniform(2).unwrap();
        let v = serde_json::to_value(delta_free(&r).unwrap()).unwrap();
        assert_eq!(v["method"], "root-solve");
        assert!(v["bracket"]["lo"].is_number());
    }
}
