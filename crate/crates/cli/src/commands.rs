use std::time::{SystemTime, UNIX_EPOCH};

use serde_json::{json, Value};

use cogrowth_core::cogrowth::{
    amenability_ratio, builtin_suite, cogrowth_lambda, grigorchuk_classic, p_star, verify_suite, CogrowthReport,
    VerifyConfig,
};
use cogrowth_core::exponents::{delta_bruteforce, delta_free, delta_subgroup, ExponentResult, DEFAULT_COUNT_CAP};
use cogrowth_core::params::{EdgeLengths, Weights};
use cogrowth_core::spectrum::{
    first_passage_threshold, mc_return_counts, mc_return_rate, rho_free, rho_gamma, Quantity, SpectralEstimate,
    SpectralMethod, DEFAULT_CELL_CAP,
};
use cogrowth_core::subgroups::{fold, normal_closure_exhaustion, CoreGraph, Index, SubgroupSpec, DEFAULT_GRAPH_CAP};
use cogrowth_core::freegroup::{reduce, Letter};

use crate::args::{
    listed_rank, load_subgroup, parse_lengths, parse_weights, resolve_rank, Command, DeltaArgs, FoldArgs, Lambda0Args,
    SweepCommand, VerifyArgs, WalkArgs,
};
use crate::{CliError, Output};

/// Closed-form and γ-curve values must agree to this; first passage to `AGREE_FP`.
const AGREE_CLOSED: f64 = 1e-10;
const AGREE_FP: f64 = 1e-8;

pub struct Caps {
    pub graph: usize,
    pub cells: usize,
    pub counts: usize,
}

impl Caps {
    /// `COGROWTH_MAX_STATES` overrides every state cap at once.
    pub fn from_env() -> Result<Caps, CliError> {
        match std::env::var("COGROWTH_MAX_STATES") {
            Ok(v) => {
                let cap: usize = v
                    .trim()
                    .parse()
                    .map_err(|_| CliError::Config(format!("COGROWTH_MAX_STATES is not a count: {v:?}")))?;
                Ok(Caps {
                    graph: cap,
                    cells: cap,
                    counts: cap,
                })
            }
            Err(_) => Ok(Caps {
                graph: DEFAULT_GRAPH_CAP,
                cells: DEFAULT_CELL_CAP,
                counts: DEFAULT_COUNT_CAP,
            }),
        }
    }
}

fn seed_or_fresh(seed: Option<u64>) -> u64 {
    seed.unwrap_or_else(|| {
        let nanos = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_nanos()).unwrap_or(0);
        let s = (nanos as u64) ^ ((nanos >> 64) as u64) ^ u64::from(std::process::id());
        eprintln!("seed: {s}");
        s
    })
}

fn num(x: f64) -> String {
    format!("{x:.15e}")
}

fn index_json(i: Index) -> Value {
    match i {
        Index::Finite(n) => json!(n),
        Index::Infinite => json!("infinite"),
    }
}

fn mean_edge(r: &EdgeLengths) -> f64 {
    (0..r.rank()).map(|i| r.edge_length(i)).sum::<f64>() / r.rank() as f64
}

fn spec_rank(spec: &Option<SubgroupSpec>) -> Result<Option<usize>, CliError> {
    Ok(match spec {
        Some(s) if s.rank.is_some() => Some(s.effective_rank()?),
        _ => None,
    })
}

/// Builds the core for an optional spec, declaring the resolved rank when the
/// spec leaves it open.
fn core_for(spec: Option<SubgroupSpec>, rank: usize, cap: usize) -> Result<(String, CoreGraph), CliError> {
    match spec {
        Some(mut s) => {
            if s.rank.is_none() {
                let needed = s.effective_rank()?;
                if needed > rank {
                    return Err(CliError::Config(format!("subgroup uses {needed} generators but the rank is {rank}")));
                }
                s.rank = Some(rank);
            }
            let core = s.core(cap)?;
            Ok((s.key(), core))
        }
        None => Ok(("<>".into(), fold(rank, &[])?)),
    }
}

/// Step weights from `--p`, with `p-star` taken from `--r` and `--s`.
fn weights_arg(p: &str, r: &str, s: Option<f64>, rank: usize) -> Result<Weights, CliError> {
    if p.trim() == "p-star" {
        let s = s.ok_or_else(|| CliError::Config("--p p-star needs --s".into()))?;
        let r = parse_lengths(r, rank)?;
        return Ok(p_star(&r, s)?);
    }
    parse_weights(p, rank)
}

pub fn dispatch(command: Command, caps: &Caps) -> Result<Output, CliError> {
    match command {
        Command::Delta(a) => delta(a, caps),
        Command::Lambda0(a) => lambda0(a),
        Command::Fold(a) => fold_cmd(a, caps),
        Command::Verify(a) => verify(a, caps),
        Command::Walk(a) => walk(a, caps),
        Command::Sweep(a) => sweep(a, caps),
    }
}

fn delta(a: DeltaArgs, caps: &Caps) -> Result<Output, CliError> {
    let spec = a.subgroup.as_deref().map(load_subgroup).transpose()?;
    let rank = resolve_rank(a.rank.rank, &[listed_rank(&a.r), spec_rank(&spec)?])?;
    let r = parse_lengths(&a.r, rank)?;
    let (key, core, result) = match spec {
        Some(s) => {
            let (k, core) = core_for(Some(s), rank, caps.graph)?;
            let result = delta_subgroup(&core, &r)?;
            (Some(k), Some(core), result)
        }
        None => (None, None, delta_free(&r)?),
    };
    let brute: Option<ExponentResult> = match a.bruteforce {
        Some(k) => {
            let core = match core {
                Some(c) => c,
                None => fold(rank, &(0..rank).map(|g| reduce([Letter::new(g, false)])).collect::<Vec<_>>())?,
            };
            Some(delta_bruteforce(&core, &r, k * mean_edge(&r), caps.counts)?)
        }
        None => None,
    };
    let mut rows = vec![vec![
        serde_json::to_value(result.method)
            .ok()
            .and_then(|v| v.as_str().map(String::from))
            .unwrap_or_default(),
        num(result.value),
        num(result.residual),
    ]];
    if let Some(b) = &brute {
        rows.push(vec!["brute-force".into(), num(b.value), num(b.residual)]);
    }
    Ok(Output {
        json: json!({
            "rank": rank,
            "r": r,
            "subgroup": key,
            "delta": result.value,
            "result": result,
            "bruteforce": brute,
        }),
        header: vec!["method".into(), "delta".into(), "residual".into()],
        rows,
        failure: None,
    })
}

fn as_lambda0(mut e: SpectralEstimate) -> SpectralEstimate {
    e.value = 1.0 - e.value;
    e.quantity = Quantity::Lambda0;
    e
}

fn lambda0(a: Lambda0Args) -> Result<Output, CliError> {
    let rank = resolve_rank(a.rank.rank, &[listed_rank(&a.p), listed_rank(&a.r)])?;
    let p = weights_arg(&a.p, &a.r, a.s, rank)?;
    let closed = as_lambda0(rho_free(&p)?);
    let gamma = as_lambda0(rho_gamma(&p)?);
    let threshold = first_passage_threshold(&p, 1e-11)?;
    let passage = SpectralEstimate {
        value: 1.0 - threshold,
        quantity: Quantity::Lambda0,
        method: SpectralMethod::FirstPassage,
        error_bound: Some(1e-11),
        seed: None,
        meta: Default::default(),
    };
    let gap_closed = (closed.value - gamma.value).abs();
    let gap_fp = (closed.value - passage.value).abs();
    let agree = gap_closed <= AGREE_CLOSED && gap_fp <= AGREE_FP;
    let estimates = [closed, gamma, passage];
    let rows = estimates
        .iter()
        .map(|e| {
            vec![
                serde_json::to_value(e.method).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default(),
                num(e.value),
            ]
        })
        .collect();
    Ok(Output {
        json: json!({
            "rank": rank,
            "weights": p,
            "lambda0": estimates[0].value,
            "estimates": estimates,
            "agreement": gap_closed.max(gap_fp),
            "agree": agree,
        }),
        header: vec!["method".into(), "lambda0".into()],
        rows,
        failure: (!agree).then(|| format!("methods disagree: {gap_closed:e} and {gap_fp:e}")),
    })
}

fn fold_cmd(a: FoldArgs, caps: &Caps) -> Result<Output, CliError> {
    let spec = match (&a.subgroup, &a.generators) {
        (Some(s), _) => Some(load_subgroup(s)?),
        (None, Some(g)) => Some(SubgroupSpec {
            rank: None,
            generators: g.split(',').map(|w| w.trim().to_string()).filter(|w| !w.is_empty()).collect(),
            normal_closure: false,
            conjugacy_depth: 0,
        }),
        (None, None) => None,
    };
    let implied = match &spec {
        Some(s) if a.rank.rank.is_none() => Some(s.effective_rank()?),
        _ => spec_rank(&spec)?,
    };
    let rank = resolve_rank(a.rank.rank, &[implied])?;
    let (key, core) = core_for(spec, rank, caps.graph)?;
    let rows = core
        .directed_edges()
        .into_iter()
        .filter(|(_, slot)| slot % 2 == 0)
        .map(|(v, slot)| vec![v.to_string(), core.neighbor(v, slot).unwrap_or(v).to_string(), (slot / 2).to_string()])
        .collect();
    Ok(Output {
        json: json!({
            "subgroup": key,
            "index": index_json(core.index()),
            "vertices": core.vertex_count(),
            "edges": core.edge_count(),
            "core": core,
        }),
        header: vec!["from".into(), "to".into(), "generator".into()],
        rows,
        failure: None,
    })
}

fn verify(a: VerifyArgs, caps: &Caps) -> Result<Output, CliError> {
    let mut specs: Vec<SubgroupSpec> = a.subgroup.iter().map(|s| load_subgroup(s)).collect::<Result<_, _>>()?;
    if a.suite.is_some() {
        specs.extend(builtin_suite());
    }
    if specs.is_empty() {
        return Err(CliError::Config("verify needs --suite or at least one --subgroup".into()));
    }
    let mut implied = vec![listed_rank(&a.r)];
    for s in &specs {
        implied.push(s.rank.map(|_| s.effective_rank()).transpose()?);
    }
    let rank = resolve_rank(None, &implied)?;
    for s in specs.iter_mut() {
        if s.rank.is_none() {
            s.rank = Some(rank);
        }
    }
    let r = parse_lengths(&a.r, rank)?;
    let seed = seed_or_fresh(a.seed);
    let config = VerifyConfig {
        depths: a.depths.clone(),
        seed,
        bruteforce_edges: a.bruteforce,
        cell_cap: caps.cells,
        graph_cap: caps.graph,
        count_cap: caps.counts,
    };
    let reports = verify_suite(&specs, &r, &config)?;
    let worst = reports.iter().map(|x| x.discrepancy).fold(0.0, f64::max);
    let failing: Vec<&str> = reports.iter().filter(|x| !(x.discrepancy <= a.tol)).map(|x| x.subgroup.as_str()).collect();
    Ok(Output {
        json: json!({
            "seed": seed,
            "tolerance": a.tol,
            "maxDiscrepancy": worst,
            "pass": failing.is_empty(),
            "reports": reports,
        }),
        header: CogrowthReport::CSV_HEADER.iter().map(|s| s.to_string()).collect(),
        rows: reports.iter().map(|x| x.csv_row().to_vec()).collect(),
        failure: (!failing.is_empty())
            .then(|| format!("discrepancy above {} for {}", a.tol, failing.join(" "))),
    })
}

fn walk(a: WalkArgs, caps: &Caps) -> Result<Output, CliError> {
    let spec = a.subgroup.as_deref().map(load_subgroup).transpose()?;
    let rank = resolve_rank(a.rank.rank, &[listed_rank(&a.p), listed_rank(&a.r), spec_rank(&spec)?])?;
    let p = weights_arg(&a.p, &a.r, a.s, rank)?;
    let (key, core) = core_for(spec, rank, caps.graph)?;
    let depth = a.depth.unwrap_or(a.steps / 2);
    let seed = seed_or_fresh(a.seed);
    let estimate = mc_return_rate(&core, depth, &p, a.steps, a.trials, seed)?;
    let counts = mc_return_counts(&core, depth, &p, a.steps, a.trials, seed);
    let rows = counts
        .iter()
        .enumerate()
        .map(|(k, c)| vec![(2 * (k + 1)).to_string(), c.to_string(), num(*c as f64 / a.trials as f64)])
        .collect();
    Ok(Output {
        json: json!({
            "subgroup": key,
            "weights": p,
            "depth": depth,
            "seed": seed,
            "estimate": estimate,
        }),
        header: vec!["steps".into(), "returns".into(), "probability".into()],
        rows,
        failure: None,
    })
}

fn sweep(cmd: SweepCommand, caps: &Caps) -> Result<Output, CliError> {
    match cmd {
        SweepCommand::Exhaustion { generators, rank, r, k_max } => {
            let spec = SubgroupSpec {
                rank: rank.rank,
                generators: generators.split(',').map(|w| w.trim().to_string()).collect(),
                normal_closure: true,
                conjugacy_depth: 0,
            };
            let rank = resolve_rank(rank.rank, &[listed_rank(&r), Some(spec.effective_rank()?)])?;
            let r = parse_lengths(&r, rank)?;
            let words = SubgroupSpec { rank: Some(rank), ..spec }.words()?;
            let ratios = amenability_ratio(&words, &r, k_max, caps.graph)?;
            // Core sizes are cheap to recompute and make the table easier to read.
            let sizes = (0..=k_max)
                .map(|k| normal_closure_exhaustion(rank, &words, k, caps.graph).map(|c| c.vertex_count()))
                .collect::<Result<Vec<_>, _>>()?;
            let rows = ratios
                .iter()
                .zip(&sizes)
                .map(|((k, x), v)| vec![k.to_string(), v.to_string(), num(*x)])
                .collect();
            Ok(Output {
                json: json!({
                    "generators": generators,
                    "r": r,
                    "ratios": ratios.iter().zip(&sizes).map(|((k, x), v)| json!({"k": k, "vertices": v, "ratio": x})).collect::<Vec<_>>(),
                }),
                header: vec!["k".into(), "vertices".into(), "ratio".into()],
                rows,
                failure: None,
            })
        }
        SweepCommand::Formula { rank, points } => {
            if points < 2 {
                return Err(CliError::Config("--points must be at least 2".into()));
            }
            let r = EdgeLengths::uniform(rank)?;
            let d = delta_free(&r)?.value;
            let scale = (2.0 * rank as f64).ln();
            let mut rows = Vec::with_capacity(points);
            let mut table = Vec::with_capacity(points);
            for k in 0..points {
                let ds = d * k as f64 / (points - 1) as f64;
                let unit = (ds * scale).min(((2 * rank - 1) as f64).ln());
                let formula = cogrowth_lambda(&r, ds)?;
                let classic = grigorchuk_classic(rank, unit)?;
                rows.push(vec![num(ds), num(unit), num(formula), num(classic), num((formula - classic).abs())]);
                table.push(json!({"deltaSub": ds, "deltaUnit": unit, "formula": formula, "classic": classic}));
            }
            Ok(Output {
                json: json!({"rank": rank, "deltaFree": d, "points": table}),
                header: ["delta_sub", "delta_unit", "formula", "classic", "difference"].map(String::from).to_vec(),
                rows,
                failure: None,
            })
        }
    }
}
