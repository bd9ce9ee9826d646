//! `validate`, `measure`, `ld` and `trace`.

use std::path::PathBuf;

use nalgebra::DMatrix;

use rre_gossip::analysis::{
    ld_bounds, ld_exponent_estimate, rare_event_probability, sample_invariant_measure, with_workers, EmpiricalCdf,
    EmpiricalMeasure, LdBounds, SamplingPlan, Statistic,
};
use rre_gossip::filter::{run_trajectory, Scenario};
use rre_gossip::gossip::estimate_q;
use rre_gossip::model::{check_stabilizability, check_weak_detectability, Detectability};
use rre_gossip::network::{
    check_irreducible_aperiodic, default_hitting_constants, hitting_constants, weight_table, HittingConstants,
};
use rre_gossip::riccati::{PathGraph, DEFAULT_FIXED_POINT_MAX_ITER, DEFAULT_FIXED_POINT_TOL};
use rre_gossip::seed::rng_from_seed;

use crate::config::LoadedConfig;
use crate::output::{CsvFile, RunStamp};
use crate::CliError;

/// Everything a command needs after option resolution.
pub struct Context {
    pub loaded: LoadedConfig,
    pub seed: u64,
    pub workers: usize,
    pub out_dir: PathBuf,
}

impl Context {
    fn stamp(&self) -> RunStamp {
        RunStamp {
            config_sha256: self.loaded.sha256.clone(),
            seed: self.seed,
        }
    }

    fn scenario(&self) -> Result<Scenario, CliError> {
        self.loaded.config.build_scenario(&self.loaded.base_dir)
    }
}

fn p_star(scenario: &Scenario) -> Result<DMatrix<f64>, CliError> {
    scenario
        .ops
        .centralized_fixed_point(DEFAULT_FIXED_POINT_TOL, DEFAULT_FIXED_POINT_MAX_ITER)
        .map_err(|e| CliError::Failed(format!("centralized Riccati iteration: {e}")))
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Verdict {
    Pass,
    Warn,
    Fail,
}

fn report(verdict: Verdict, name: &str, detail: &str) {
    let tag = match verdict {
        Verdict::Pass => "PASS",
        Verdict::Warn => "WARN",
        Verdict::Fail => "FAIL",
    };
    println!("{tag} {name}: {detail}");
}

pub fn validate(ctx: &Context) -> Result<(), CliError> {
    let cfg = &ctx.loaded.config;
    let scenario = ctx.scenario()?;
    let ops = &scenario.ops;
    let mut verdicts = Vec::new();
    let mut check = |v: Verdict, name: &str, detail: String| {
        report(v, name, &detail);
        verdicts.push(v);
    };

    let stab = check_stabilizability(ops.system());
    check(
        if stab.stabilizable { Verdict::Pass } else { Verdict::Fail },
        "stabilizability",
        format!("{:?}", stab.path),
    );

    let abar = scenario.matchings.mean_adjacency();
    let chain = check_irreducible_aperiodic(&abar);
    check(
        if chain.ok() { Verdict::Pass } else { Verdict::Fail },
        "mean adjacency irreducible and aperiodic",
        format!(
            "irreducible={}, period={}, components={}",
            chain.irreducible,
            chain.period,
            chain.components.len()
        ),
    );

    let mut rng = rng_from_seed(ctx.seed);
    match check_weak_detectability(
        ops.system(),
        ops.suite(),
        abar.matrix(),
        None,
        cfg.validate.detectability_trials,
        &mut rng,
    ) {
        Ok(Detectability::Satisfied { walk, min_singular }) => check(
            Verdict::Pass,
            "weak detectability",
            format!(
                "walk {:?}, min singular value {min_singular:.3e}",
                walk.iter().map(|n| n + 1).collect::<Vec<_>>()
            ),
        ),
        Ok(Detectability::Inconclusive) => {
            check(Verdict::Warn, "weak detectability", "no certifying walk found".into())
        }
        Err(e) => check(Verdict::Fail, "weak detectability", e.to_string()),
    }

    match p_star(&scenario) {
        Ok(p) => check(
            Verdict::Pass,
            "centralized fixed point",
            format!("trace {:.6}, lambda_max {:.6}", p.trace(), Statistic::LambdaMax.eval(&p)),
        ),
        Err(e) => check(Verdict::Fail, "centralized fixed point", e.to_string()),
    }

    let gamma = cfg.gamma_grid[0];
    match estimate_q(&scenario.topology, gamma, cfg.validate.q_trials, &mut rng) {
        Ok(q) => {
            let full = ops.full();
            let worst = (0..ops.n_sensors()).map(|n| q.q_hat(n, full)).fold(f64::INFINITY, f64::min);
            check(
                if worst > 0.0 { Verdict::Pass } else { Verdict::Warn },
                "full dissemination reachable",
                format!("min_n q_n(full) = {worst:.4} at rate {gamma} over {} rounds", q.trials),
            );
        }
        Err(e) => check(Verdict::Fail, "full dissemination reachable", e.to_string()),
    }

    match hitting(ctx, &scenario) {
        Ok(h) => check(
            Verdict::Pass,
            "hitting-time constants",
            format!("alpha={:.6}, beta={:.6}, L={}", h.alpha, h.beta, h.l),
        ),
        Err(e) => check(Verdict::Warn, "hitting-time constants", format!("{e}; LD bounds unavailable")),
    }

    if verdicts.contains(&Verdict::Fail) {
        return Err(CliError::Failed("validation failed".into()));
    }
    Ok(())
}

fn hitting(ctx: &Context, scenario: &Scenario) -> rre_gossip::Result<HittingConstants> {
    let chain = scenario.topology.dissemination_chain();
    match ctx.loaded.config.ld.hitting_l {
        Some(l) => hitting_constants(&chain, l),
        None => default_hitting_constants(&chain),
    }
}

fn sample_grid(ctx: &Context, scenario: &Scenario, p_star: &DMatrix<f64>) -> Result<Vec<EmpiricalMeasure>, CliError> {
    let cfg = &ctx.loaded.config;
    cfg.gamma_grid
        .iter()
        .map(|&gamma_bar| {
            let plan = SamplingPlan {
                gamma_bar,
                burn_in: cfg.burn_in,
                n_samples: cfg.n_samples,
                seed: ctx.seed,
                keep_matrices: false,
            };
            let m = with_workers(ctx.workers, || sample_invariant_measure(scenario, p_star, &plan))
                .map_err(|e| CliError::Failed(e.to_string()))?
                .map_err(|e| CliError::Failed(format!("sampling at rate {gamma_bar}: {e}")))?;
            eprintln!(
                "rate {gamma_bar}: {} samples, divergence rate {:.4}",
                m.len(),
                m.divergence_rate()
            );
            Ok(m)
        })
        .collect()
}

fn check_divergence(ctx: &Context, measures: &[EmpiricalMeasure]) -> Result<(), CliError> {
    let limit = ctx.loaded.config.max_divergence_rate;
    for m in measures {
        if m.divergence_rate() > limit {
            return Err(CliError::Failed(format!(
                "divergence rate {:.4} at rate {} exceeds {limit}; the model may violate weak detectability",
                m.divergence_rate(),
                m.gamma_bar
            )));
        }
    }
    Ok(())
}

pub fn measure(ctx: &Context) -> Result<(), CliError> {
    let scenario = ctx.scenario()?;
    let p_star = p_star(&scenario)?;
    let measures = sample_grid(ctx, &scenario, &p_star)?;
    let stamp = ctx.stamp();

    let mut dump = CsvFile::create(&ctx.out_dir, "measure.csv", "gamma_bar,sample_id,trace_norm,lmax_norm", &stamp)?;
    for m in &measures {
        let (tr, lm) = (m.normalized(Statistic::Trace), m.normalized(Statistic::LambdaMax));
        for ((s, t), l) in m.samples.iter().zip(tr).zip(lm) {
            dump.line(&format!("{},{},{t},{l}", m.gamma_bar, s.sample_id))?;
        }
    }
    let path = dump.finish()?;
    eprintln!("wrote {}", path.display());

    let mut cdf = CsvFile::create(&ctx.out_dir, "cdf.csv", "gamma_bar,stat,p,quantile", &stamp)?;
    for m in &measures {
        for stat in [Statistic::Trace, Statistic::LambdaMax] {
            let c = EmpiricalCdf::from_measure(m, stat).map_err(|e| CliError::Failed(e.to_string()))?;
            for k in 0..=100 {
                let p = k as f64 / 100.0;
                cdf.line(&format!("{},{},{p},{}", m.gamma_bar, stat.name(), c.quantile(p)))?;
            }
        }
    }
    let path = cdf.finish()?;
    eprintln!("wrote {}", path.display());
    check_divergence(ctx, &measures)
}

pub fn ld(ctx: &Context) -> Result<(), CliError> {
    let cfg = &ctx.loaded.config;
    let scenario = ctx.scenario()?;
    let p_star = p_star(&scenario)?;
    let events = cfg.rare_events(&p_star)?;
    let n = scenario.n_sensors();

    let bounds: Vec<Option<LdBounds>> = match hitting(ctx, &scenario).and_then(|h| weight_table(&h, n)) {
        Ok(table) => {
            let graph = PathGraph::from_matrix(scenario.topology.adjacency());
            events
                .iter()
                .map(|e| {
                    ld_bounds(&scenario.ops, &p_star, &table, &graph, e, &cfg.caps())
                        .map(Some)
                        .map_err(|err| CliError::Failed(format!("LD bounds: {err}")))
                })
                .collect::<Result<_, _>>()?
        }
        Err(e) => {
            eprintln!("warning: LD bounds unavailable: {e}");
            vec![None; events.len()]
        }
    };
    for (e, b) in events.iter().zip(&bounds) {
        if let Some(b) = b {
            if b.capped {
                eprintln!(
                    "warning: search caps reached for {} event (radius {}); bounds are truncated",
                    e.statistic().name(),
                    e.radius()
                );
            }
        }
    }

    let measures = sample_grid(ctx, &scenario, &p_star)?;
    let mut table = CsvFile::create(
        &ctx.out_dir,
        "exponents.csv",
        "gamma_bar,stat,epsilon,p_hat,ci_lo,ci_hi,exponent,lower_bound,upper_bound,capped",
        &ctx.stamp(),
    )?;
    let mut violations = Vec::new();
    for (event, bound) in events.iter().zip(&bounds) {
        let points = measures
            .iter()
            .map(|m| Ok((m.gamma_bar, rare_event_probability(m, event)?)))
            .collect::<rre_gossip::Result<Vec<_>>>()
            .map_err(|e| CliError::Failed(e.to_string()))?;
        let estimates = ld_exponent_estimate(&points).map_err(|e| CliError::Failed(e.to_string()))?;
        let (lo, hi, capped) = bound
            .as_ref()
            .map_or((f64::NAN, f64::NAN, false), |b| (b.lower_exponent, b.upper_exponent, b.capped));
        for ((_, p), est) in points.iter().zip(&estimates) {
            let exponent = est.exponent.unwrap_or(f64::NEG_INFINITY);
            table.line(&format!(
                "{},{},{},{},{},{},{exponent},{lo},{hi},{capped}",
                est.gamma_bar,
                event.statistic().name(),
                event.radius(),
                p.p_hat,
                p.ci_lo,
                p.ci_hi
            ))?;
            if let (Some(x), true) = (est.exponent, bound.is_some()) {
                if x < lo - 2.0 * est.sigma || x > hi + 2.0 * est.sigma {
                    violations.push(format!(
                        "{} at rate {}: exponent {x:.4} outside [{lo:.4}, {hi:.4}] ± 2·{:.4}",
                        event.statistic().name(),
                        est.gamma_bar,
                        est.sigma
                    ));
                }
            }
        }
    }
    let path = table.finish()?;
    eprintln!("wrote {}", path.display());
    check_divergence(ctx, &measures)?;
    if !violations.is_empty() {
        return Err(CliError::Failed(format!("sandwich violated: {}", violations.join("; "))));
    }
    Ok(())
}

pub fn trace(ctx: &Context) -> Result<(), CliError> {
    let cfg = &ctx.loaded.config;
    let scenario = ctx.scenario()?;
    let epochs = cfg.trace_epochs.unwrap_or(cfg.burn_in);
    let rows =
        run_trajectory(&scenario, cfg.gamma_grid[0], epochs, ctx.seed).map_err(|e| CliError::Failed(e.to_string()))?;
    let mut out = CsvFile::create(
        &ctx.out_dir,
        "trajectory.csv",
        "epoch,sensor,trace_P,lambda_max_P,err_norm",
        &ctx.stamp(),
    )?;
    for r in rows {
        out.line(&format!(
            "{},{},{},{},{}",
            r.epoch,
            r.sensor + 1,
            r.trace,
            r.lambda_max,
            r.err_norm
        ))?;
    }
    let path = out.finish()?;
    eprintln!("wrote {}", path.display());
    Ok(())
}
