//! Subcommand implementations. Each writes a human-readable report to `w`
//! and its files under `out_dir`.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use ottd_core::bounds::{bound_continuing, bound_expected, bound_nis_episodic, bound_ottd, BoundReport, NormKind};
use ottd_core::diagnostics::{self, ConditionReport, MetricReport};
use ottd_core::envs::make_baird_with_gamma;
use ottd_core::learners::{
    self, fixed_point_nis, fixed_point_otq, fixed_point_ottd, fixed_point_projected, Algorithm,
    LearnerConfig,
};
use ottd_core::mdp;
use ottd_core::numerics::Vector;
use rayon::prelude::*;

use crate::config::{default_hyper, AlgorithmName, CorrectionMode, ExperimentConfig, ProblemKind};
use crate::error::{invalid, CliError, CliResult};
use crate::plot;
use crate::results::{self, format_value, ResultRow};
use crate::setup::{collect_dataset, learner_config, prepare, uses_expected, Prepared, World};

/// Discount used by `table1` when no config is given.
pub const TABLE1_GAMMA: f64 = 0.99;
pub const TABLE1_ALGORITHMS: [AlgorithmName; 4] = [
    AlgorithmName::Otd,
    AlgorithmName::Ottd,
    AlgorithmName::Rm,
    AlgorithmName::Gtd2,
];

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn ensure_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))
}

fn report_io<T>(r: std::io::Result<T>) -> CliResult<T> {
    r.map_err(CliError::from)
}

fn fmt_vec(v: &Vector) -> String {
    const SHOWN: usize = 12;
    let mut parts: Vec<String> = v.iter().take(SHOWN).map(|x| format!("{x:.6e}")).collect();
    if v.len() > SHOWN {
        parts.push(format!("... ({} entries)", v.len()));
    }
    format!("[{}]", parts.join(", "))
}

fn opt(x: Option<f64>) -> String {
    x.map(format_value).unwrap_or_default()
}

/// Runs every algorithm over every seed and writes `results.csv` and
/// `mean.csv`. Returns the rows written.
pub fn cmd_run(cfg: &ExperimentConfig, out_dir: &Path, w: &mut dyn Write) -> CliResult<Vec<ResultRow>> {
    let world = World::build(cfg)?;
    let mut rows = Vec::new();
    for alg in cfg.algorithm_list() {
        let runs: Vec<CliResult<(u64, Vec<ResultRow>)>> = cfg
            .seeds
            .par_iter()
            .map(|&seed| {
                let prep = prepare(&world, cfg, alg, seed)?;
                let lc = learner_config(cfg, alg, &prep)?;
                let res = learners::run(
                    alg.core(),
                    &prep.system,
                    prep.otq.as_ref(),
                    &prep.theta0,
                    &lc,
                    prep.evaluation.as_ref(),
                )?;
                Ok((seed, results::rows_from_run(&cfg.experiment_id, alg.as_str(), seed, &res)))
            })
            .collect();
        for run in runs {
            let (seed, run_rows) = run?;
            let last = run_rows.last().expect("trace holds the initial point");
            report_io(writeln!(
                w,
                "{:<20} seed {:<6} {:<10} step {:<8} max value error {:<20} emsbe {}",
                alg.as_str(),
                seed,
                last.status,
                last.step,
                opt(last.max_value_error),
                format_value(last.emsbe)
            ))?;
            rows.extend(run_rows);
        }
    }
    ensure_dir(out_dir)?;
    let path = out_dir.join("results.csv");
    results::write_rows(create(&path)?, &rows)?;
    let means = results::mean_curves(&rows);
    results::write_means(create(&out_dir.join("mean.csv"))?, &means)?;
    report_io(writeln!(w, "wrote {} rows to {}", rows.len(), path.display()))?;
    Ok(rows)
}

fn print_condition(w: &mut dyn Write, r: &ConditionReport) -> CliResult<()> {
    report_io(writeln!(w, "  {r}"))
}

fn print_metric(w: &mut dyn Write, m: &MetricReport) -> CliResult<()> {
    report_io(writeln!(
        w,
        "  convergence metric {:.10} per step (full matrix {:.10}; per window of {} steps {:.10})",
        m.effective_per_step, m.full_per_step, m.steps, m.effective_per_window
    ))
}

pub fn write_table1(path: &Path, rows: &[(AlgorithmName, MetricReport)]) -> CliResult<()> {
    let mut wr = csv::Writer::from_writer(create(path)?);
    wr.write_record(["algorithm", "metric", "full_metric", "window_steps", "metric_per_window"])?;
    for (alg, m) in rows {
        wr.write_record([
            alg.as_str().to_string(),
            format_value(m.effective_per_step),
            format_value(m.full_per_step),
            m.steps.to_string(),
            format_value(m.effective_per_window),
        ])?;
    }
    wr.flush()?;
    Ok(())
}

/// Prints convergence conditions, `m̄` and the convergence metric for every
/// algorithm on the first seed. Fails with a nonexistence error when an
/// under-parameterized expected system has no projected fixed point.
pub fn cmd_diagnose(cfg: &ExperimentConfig, out_dir: &Path, w: &mut dyn Write) -> CliResult<()> {
    let world = World::build(cfg)?;
    let seed = cfg.seeds[0];
    let mut metrics = Vec::new();
    let mut missing = None;
    for alg in cfg.algorithm_list() {
        let prep = prepare(&world, cfg, alg, seed)?;
        let lc = learner_config(cfg, alg, &prep)?;
        let sys = &prep.system;
        report_io(writeln!(
            w,
            "{} (k = {}, d = {}, eta = {}, m = {})",
            alg.as_str(),
            sys.k(),
            sys.dim(),
            lc.eta,
            lc.m
        ))?;
        match alg.core() {
            Algorithm::Otd => {
                for r in diagnostics::check_otd(sys, lc.eta)? {
                    print_condition(w, &r)?;
                }
            }
            Algorithm::Ottd => {
                print_condition(w, &diagnostics::check_ottd(sys)?)?;
                let m_bar = match diagnostics::m_bar(sys, lc.eta) {
                    Ok(m) => m.to_string(),
                    Err(e) => format!("unavailable ({e})"),
                };
                report_io(writeln!(w, "  m_bar {m_bar}"))?;
            }
            Algorithm::Otq => {
                let otq = prep.otq.as_ref().expect("prepared for otq");
                let cond = diagnostics::check_otq(sys, otq)?;
                print_condition(w, &cond)?;
                let c = ((1.0 + sys.gamma * cond.value) / 2.0).max((1.0 + sys.gamma) / 2.0);
                let m_bar = match diagnostics::otq_m_bar(sys, lc.eta, c) {
                    Ok(m) => m.to_string(),
                    Err(e) => format!("unavailable ({e})"),
                };
                report_io(writeln!(w, "  m_bar {m_bar} (contraction target {c:.6})"))?;
            }
            _ => {}
        }
        if alg.core() != Algorithm::Otq {
            let it = diagnostics::iteration_matrix(alg.core(), sys, &lc)?;
            let m = diagnostics::metric_report(&it)?;
            print_metric(w, &m)?;
            metrics.push((alg, m));
        }
        if let (Some(phi), Some(env)) = (&prep.features, world.env()) {
            let p_pi = mdp::state_action_transition(&env.mdp, &env.target)?;
            let r = diagnostics::detect_nonexistence(phi.matrix(), &p_pi, &env.lambda, env.mdp.gamma())?;
            print_condition(w, &r)?;
            if !r.satisfied {
                missing = Some(r.detail.clone());
            }
        }
    }
    let algs: Vec<AlgorithmName> = metrics.iter().map(|(a, _)| *a).collect();
    if cfg.problem_kind()? == ProblemKind::Baird && TABLE1_ALGORITHMS.iter().all(|a| algs.contains(a)) {
        ensure_dir(out_dir)?;
        let rows: Vec<_> = TABLE1_ALGORITHMS
            .iter()
            .map(|a| *metrics.iter().find(|(b, _)| b == a).expect("present"))
            .collect();
        let path = out_dir.join("table1.csv");
        write_table1(&path, &rows)?;
        report_io(writeln!(w, "wrote {}", path.display()))?;
    }
    match missing {
        Some(detail) => Err(CliError::Nonexistence(format!(
            "the projected Bellman equation is singular ({detail})"
        ))),
        None => Ok(()),
    }
}

/// Convergence metrics of OTD, OTTD, RM and GTD2 on Baird's example.
pub fn cmd_table1(cfg: Option<&ExperimentConfig>, out_dir: &Path, w: &mut dyn Write) -> CliResult<Vec<(AlgorithmName, MetricReport)>> {
    let gamma = cfg.and_then(|c| c.gamma).unwrap_or(TABLE1_GAMMA);
    let b = make_baird_with_gamma(gamma)?;
    let sys = b.expected_system();
    report_io(writeln!(w, "Baird, gamma = {gamma}"))?;
    let mut rows = Vec::new();
    for alg in TABLE1_ALGORITHMS {
        let lc: LearnerConfig = match cfg {
            Some(c) => c.learner_config(alg, ProblemKind::Baird, CorrectionMode::None),
            None => default_hyper(alg, &ProblemKind::Baird, CorrectionMode::None),
        };
        let m = diagnostics::metric_report(&diagnostics::iteration_matrix(alg.core(), &sys, &lc)?)?;
        report_io(writeln!(
            w,
            "{:<6} {:.10}  (1 - metric = {:.3e})",
            alg.as_str(),
            m.effective_per_step,
            1.0 - m.effective_per_step
        ))?;
        rows.push((alg, m));
    }
    ensure_dir(out_dir)?;
    let path = out_dir.join("table1.csv");
    write_table1(&path, &rows)?;
    report_io(writeln!(w, "wrote {}", path.display()))?;
    Ok(rows)
}

/// The closed-form limit matching how `prep` was built.
fn closed_form(prep: &Prepared, lc: &LearnerConfig) -> CliResult<(Vector, String)> {
    let sys = &prep.system;
    if let Some(otq) = &prep.otq {
        let fp = fixed_point_otq(sys, otq, &prep.theta0, lc.bootstrap)?;
        let note = format!(
            "max_i |Phi_i M^+|_inf = {:.6} ({}), {} iterations",
            fp.condition_value,
            if fp.condition_satisfied { "ok" } else { "VIOLATED" },
            fp.iterations
        );
        return Ok((fp.theta, note));
    }
    if let Some(nis) = &prep.nis {
        let fp = fixed_point_nis(nis, &prep.theta0)?;
        return Ok((fp.theta, format!("|N_nis M^+|_inf = {:.6}", fp.w_inf_norm)));
    }
    if !sys.is_over_parameterized() {
        return Ok((fixed_point_projected(sys)?, "projected Bellman solution".into()));
    }
    let fp = fixed_point_ottd(sys, &prep.theta0)?;
    let note = format!(
        "|N M^+|_inf = {:.6} ({})",
        fp.w_inf_norm,
        if fp.condition_satisfied { "ok" } else { "VIOLATED" }
    );
    Ok((fp.theta, note))
}

/// Closed-form fixed point, its value error and its distance from the
/// iterate the learner reaches.
pub fn cmd_fixed_point(cfg: &ExperimentConfig, w: &mut dyn Write) -> CliResult<()> {
    let world = World::build(cfg)?;
    for alg in cfg.algorithm_list() {
        for &seed in &cfg.seeds {
            let prep = prepare(&world, cfg, alg, seed)?;
            let lc = learner_config(cfg, alg, &prep)?;
            let (theta, note) = closed_form(&prep, &lc)?;
            report_io(writeln!(w, "{} seed {seed}: {note}", alg.as_str()))?;
            report_io(writeln!(w, "  theta* {}", fmt_vec(&theta)))?;
            if let Some(ev) = &prep.evaluation {
                report_io(writeln!(w, "  max value error {}", format_value(ev.value_error(&theta))))?;
            }
            let res = learners::run(
                alg.core(),
                &prep.system,
                prep.otq.as_ref(),
                &prep.theta0,
                &lc,
                prep.evaluation.as_ref(),
            )?;
            let gap = (&res.final_state.theta - &theta).amax();
            report_io(writeln!(
                w,
                "  iterative {} after {} steps, |theta - theta*|_inf = {}",
                res.status.name(),
                res.final_state.step,
                format_value(gap)
            ))?;
        }
    }
    Ok(())
}

const BOUND_COLUMNS: [&str; 11] = [
    "experiment_id",
    "algorithm",
    "seed",
    "norm",
    "delta",
    "eps_stat",
    "eps_projection",
    "eps_approx",
    "total",
    "actual_error",
    "holds",
];

/// Error bounds for every algorithm and seed, written to `bounds.csv`.
pub fn cmd_bound(cfg: &ExperimentConfig, out_dir: &Path, w: &mut dyn Write) -> CliResult<()> {
    let world = World::build(cfg)?;
    let env = world.env().ok_or_else(|| invalid("bounds need a problem with a known MDP"))?;
    let kind = cfg.problem_kind()?;
    let mut records: Vec<Vec<String>> = Vec::new();
    for alg in cfg.algorithm_list() {
        for &seed in &cfg.seeds {
            let prep = prepare(&world, cfg, alg, seed)?;
            let ev = prep.evaluation.as_ref().expect("problems with an MDP are evaluated");
            let head = vec![cfg.experiment_id.clone(), alg.as_str().to_string(), seed.to_string()];
            if uses_expected(alg, &kind) {
                let (left, right) = bound_expected(&ev.phi, &ev.q, &env.mdp, &env.target)?;
                report_io(writeln!(
                    w,
                    "{} seed {seed}: expected-update bound {} >= actual {}",
                    alg.as_str(),
                    format_value(right),
                    format_value(left)
                ))?;
                let mut rec = head;
                rec.extend([
                    "infinity".to_string(),
                    String::new(),
                    String::new(),
                    String::new(),
                    String::new(),
                    format_value(right),
                    format_value(left),
                    (left <= right).to_string(),
                ]);
                records.push(rec);
                continue;
            }
            let model = prep.model.as_ref().expect("dataset problems build a model");
            let report: BoundReport = match (alg, cfg.correction(alg), &prep.nis) {
                (AlgorithmName::Otq, ..) | (_, CorrectionMode::Is, _) => {
                    report_io(writeln!(w, "{} seed {seed}: no error bound for this algorithm", alg.as_str()))?;
                    continue;
                }
                (_, CorrectionMode::Nis, Some(nis)) if env.terminals.is_empty() => {
                    bound_continuing(model, nis, &ev.q, &env.mdp, &env.target, cfg.delta)?
                }
                (_, CorrectionMode::Nis, Some(nis)) => bound_nis_episodic(model, nis, &ev.q, cfg.delta)?,
                _ => bound_ottd(model, &ev.q, cfg.delta)?,
            };
            report_io(writeln!(w, "{} seed {seed}:", alg.as_str()))?;
            for line in report.to_string().lines() {
                report_io(writeln!(w, "  {line}"))?;
            }
            let mut rec = head;
            rec.extend([
                match report.norm_kind {
                    NormKind::Infinity => "infinity".to_string(),
                    NormKind::DPiWeighted => "d_pi".to_string(),
                },
                report.delta.to_string(),
                format_value(report.eps_stat),
                format_value(report.eps_projection),
                format_value(report.eps_approx),
                format_value(report.total),
                opt(report.actual_error),
                report.holds().map(|h| h.to_string()).unwrap_or_default(),
            ]);
            records.push(rec);
        }
    }
    if records.is_empty() {
        return Err(invalid("none of the configured algorithms has an error bound"));
    }
    ensure_dir(out_dir)?;
    let path = out_dir.join("bounds.csv");
    let mut wr = csv::Writer::from_writer(create(&path)?);
    wr.write_record(BOUND_COLUMNS)?;
    for r in &records {
        wr.write_record(r)?;
    }
    wr.flush()?;
    report_io(writeln!(w, "wrote {}", path.display()))?;
    Ok(())
}

/// Writes the behaviour dataset of every seed as `dataset_seed<N>.csv`.
pub fn cmd_collect(cfg: &ExperimentConfig, out_dir: &Path, w: &mut dyn Write) -> CliResult<Vec<PathBuf>> {
    let world = World::build(cfg)?;
    let env = world.env().ok_or_else(|| invalid("random problems have no data to collect"))?;
    ensure_dir(out_dir)?;
    let mut paths = Vec::new();
    for &seed in &cfg.seeds {
        let ds = collect_dataset(env, cfg, seed)?;
        let path = out_dir.join(format!("dataset_seed{seed}.csv"));
        ds.write_csv(create(&path)?)?;
        report_io(writeln!(w, "wrote {} transitions to {}", ds.len(), path.display()))?;
        paths.push(path);
    }
    Ok(paths)
}

pub fn cmd_plot(results_path: &Path, out_dir: &Path, w: &mut dyn Write) -> CliResult<Vec<PathBuf>> {
    let f = File::open(results_path).map_err(|e| CliError::Io(format!("{}: {e}", results_path.display())))?;
    let rows = results::read_rows(f)?;
    let written = plot::plot_results(&rows, out_dir)?;
    for p in &written {
        report_io(writeln!(w, "wrote {}", p.display()))?;
    }
    Ok(written)
}
