//! The subcommands. Each one fills an output directory with CSVs, a plot
//! script and a manifest from which the run can be repeated.

use std::path::Path;

use coco_core::filter::GridFilter;
use coco_core::hitting::survival_closed_form;
use coco_core::measures::{drifts_under, MeasureTag};
use coco_core::model::{ModelParams, ObservationRecord, UpdateSchedule};
use coco_core::oracle::{conditional_posterior_oracle, crossing_frequency, survival_series_oracle};
use coco_core::pricing::{compensator_path, price, SurvivalReport, UpdateRecord};
use coco_core::scenario::{hidden_fundamental, stock_scenario, HiddenPath};
use rayon::prelude::*;

use crate::config::{RunConfig, RunRecord};
use crate::error::CliError;
use crate::output::{fmt_money, fmt_prob, fmt_time, header, reparse, OutputDir, PLOT_SCRIPT};

/// Largest decrease of the compensator tolerated by `compensator`.
pub const A_MONOTONICITY_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CommandKind {
    Simulate,
    Survive,
    Price,
    Compensator,
    Validate,
}

impl CommandKind {
    pub fn name(self) -> &'static str {
        match self {
            CommandKind::Simulate => "simulate",
            CommandKind::Survive => "survive",
            CommandKind::Price => "price",
            CommandKind::Compensator => "compensator",
            CommandKind::Validate => "validate",
        }
    }
}

/// One stock path on the schedule's quote times.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub index: usize,
    pub stock: Vec<ObservationRecord>,
}

pub fn load_scenarios(cfg: &RunConfig, schedule: &UpdateSchedule) -> Result<Vec<Scenario>, CliError> {
    let times = schedule.all_observation_times();
    if let Some(count) = cfg.scenarios.count {
        return (0..count as usize)
            .map(|index| {
                Ok(Scenario {
                    index,
                    stock: stock_scenario(&cfg.model, &times, cfg.seed, index as u64)?,
                })
            })
            .collect();
    }
    let path = cfg
        .scenarios
        .stock_path_file
        .as_ref()
        .ok_or_else(|| CliError::Config("no scenario source".into()))?;
    read_stock_file(path, &times)
}

fn read_stock_file(path: &Path, times: &[f64]) -> Result<Vec<Scenario>, CliError> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let headers = reader.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let (t_col, s_col) = match (col("t"), col("stock")) {
        (Some(t), Some(s)) => (t, s),
        _ => return Err(CliError::Config(format!("{}: needs columns t and stock", path.display()))),
    };
    let scenario_col = col("scenario");
    let mut scenarios: Vec<Scenario> = Vec::new();
    for record in reader.records() {
        let record = record?;
        let field = |i: usize| -> Result<f64, CliError> {
            record
                .get(i)
                .and_then(|v| v.trim().parse::<f64>().ok())
                .ok_or_else(|| CliError::Config(format!("{}: bad row {record:?}", path.display())))
        };
        let index = match scenario_col {
            Some(i) => field(i)? as usize,
            None => 0,
        };
        let obs = ObservationRecord::new(field(t_col)?, field(s_col)?)?;
        match scenarios.iter_mut().find(|s| s.index == index) {
            Some(s) => s.stock.push(obs),
            None => scenarios.push(Scenario { index, stock: vec![obs] }),
        }
    }
    if scenarios.is_empty() {
        return Err(CliError::Config(format!("{}: no rows", path.display())));
    }
    for s in &scenarios {
        let matches = s.stock.len() == times.len()
            && s.stock.iter().zip(times).all(|(o, t)| (o.time - t).abs() <= 1e-9);
        if !matches {
            return Err(CliError::Config(format!(
                "{}: scenario {} does not match the schedule's {} quote times",
                path.display(),
                s.index,
                times.len()
            )));
        }
        ObservationRecord::validate_series(&s.stock)?;
    }
    Ok(scenarios)
}

fn rho_label(rho: f64) -> String {
    format!("{rho}")
}

fn hidden_stream(scenario: usize, rho_index: usize) -> u64 {
    1000 * scenario as u64 + rho_index as u64
}

fn hidden_path(cfg: &RunConfig, s: &Scenario, r: usize) -> Result<HiddenPath, CliError> {
    let p = cfg.params_for(cfg.rho_sweep[r]);
    Ok(hidden_fundamental(&p, &s.stock, cfg.oracle.dt_fine, cfg.seed, hidden_stream(s.index, r))?)
}

/// Runs `body` for every (scenario, sweep index) pair in parallel; results come
/// back in scenario-major order.
fn over_cells<T: Send>(
    scenarios: &[Scenario],
    n_rho: usize,
    body: impl Fn(&Scenario, usize) -> Result<T, CliError> + Sync,
) -> Result<Vec<T>, CliError> {
    let cells: Vec<(usize, usize)> = (0..scenarios.len()).flat_map(|s| (0..n_rho).map(move |r| (s, r))).collect();
    cells.par_iter().map(|&(s, r)| body(&scenarios[s], r)).collect()
}

/// Quotes of the first period before its closing update.
fn first_period(stock: &[ObservationRecord], t1: f64) -> &[ObservationRecord] {
    let end = stock.partition_point(|o| o.time < t1 - 1e-9);
    &stock[..end]
}

pub struct Outcome {
    pub files: Vec<String>,
    /// Reported after the artifacts are written.
    pub failure: Option<CliError>,
}

pub fn execute(kind: CommandKind, cfg: &RunConfig, validate: bool) -> Result<Outcome, CliError> {
    cfg.validate()?;
    if cfg.model.sigma <= 0.0 && kind != CommandKind::Simulate {
        return Err(CliError::Config(format!(
            "{} needs sigma > 0; only simulate accepts a zero-volatility model",
            kind.name()
        )));
    }
    let schedule = cfg.schedule()?;
    let mut out = OutputDir::create(&cfg.output_dir)?;
    let failure = match kind {
        CommandKind::Simulate => simulate(cfg, &schedule, &mut out)?,
        CommandKind::Survive => survive(cfg, &schedule, validate, &mut out)?,
        CommandKind::Price => price_cmd(cfg, &schedule, &mut out)?,
        CommandKind::Compensator => compensator(cfg, &schedule, &mut out)?,
        CommandKind::Validate => validate_cmd(cfg, &schedule, &mut out)?,
    };
    out.write_bytes("plot.py", PLOT_SCRIPT.as_bytes())?;
    write_manifest(kind, cfg, validate, &mut out)?;
    Ok(Outcome {
        files: out.written().to_vec(),
        failure,
    })
}

fn write_manifest(kind: CommandKind, cfg: &RunConfig, validate: bool, out: &mut OutputDir) -> Result<(), CliError> {
    let mut record = cfg.clone();
    record.run = Some(RunRecord {
        command: kind.name().to_string(),
        validate,
    });
    let mut text = format!("# coco {} --config manifest.toml\n# files:\n", kind.name());
    for f in out.written() {
        text.push_str(&format!("#   {f}\n"));
    }
    text.push('\n');
    text.push_str(&record.to_toml()?);
    out.write_bytes("manifest.toml", text.as_bytes())?;
    Ok(())
}

fn simulate(cfg: &RunConfig, schedule: &UpdateSchedule, out: &mut OutputDir) -> Result<Option<CliError>, CliError> {
    let scenarios = load_scenarios(cfg, schedule)?;
    let n_rho = cfg.rho_sweep.len();
    let hidden = over_cells(&scenarios, n_rho, |s, r| hidden_path(cfg, s, r))?;
    let barrier_stock = fmt_money(cfg.model.conversion_barrier.exp());
    let barrier_u = fmt_prob(cfg.model.conversion_barrier);
    for (si, s) in scenarios.iter().enumerate() {
        let rows: Vec<Vec<String>> = s
            .stock
            .iter()
            .map(|o| vec![fmt_time(o.time), fmt_money(o.stock_price), barrier_stock.clone()])
            .collect();
        out.write_csv(
            &format!("scenario_{}_stock.csv", s.index),
            &header(&["t", "stock", "barrier_stock"]),
            &rows,
        )?;

        let mut cols = vec!["t".to_string()];
        for &rho in &cfg.rho_sweep {
            cols.push(format!("u_rho_{}", rho_label(rho)));
            cols.push(format!("converted_rho_{}", rho_label(rho)));
        }
        cols.push("barrier".into());
        let paths = &hidden[si * n_rho..(si + 1) * n_rho];
        let rows: Vec<Vec<String>> = (0..s.stock.len())
            .map(|k| {
                let mut row = vec![fmt_time(s.stock[k].time)];
                for h in paths {
                    row.push(fmt_prob(h.u[k]));
                    row.push(u8::from(h.converted[k]).to_string());
                }
                row.push(barrier_u.clone());
                row
            })
            .collect();
        out.write_csv(&format!("scenario_{}_fundamental.csv", s.index), &cols, &rows)?;
    }
    Ok(None)
}

struct SurvivalRows {
    rows: Vec<Vec<String>>,
}

fn survive(
    cfg: &RunConfig,
    schedule: &UpdateSchedule,
    validate: bool,
    out: &mut OutputDir,
) -> Result<Option<CliError>, CliError> {
    let scenarios = load_scenarios(cfg, schedule)?;
    let t1 = cfg.first_update()?;
    let n_rho = cfg.rho_sweep.len();
    let filter_cfg = cfg.filter_config();
    let cells = over_cells(&scenarios, n_rho, |s, r| {
        let rho = cfg.rho_sweep[r];
        let p = cfg.params_for(rho);
        let quotes = first_period(&s.stock, t1);
        let star = GridFilter::new(p, MeasureTag::PStar, filter_cfg)?.run_period(p.initial_fundamental, quotes, t1)?;
        let share = GridFilter::new(p, MeasureTag::PS, filter_cfg)?.run_period(p.initial_fundamental, quotes, t1)?;
        let oracle = if validate {
            let stride = cfg.oracle.checkpoint_stride;
            let checkpoints: Vec<f64> = quotes.iter().step_by(stride).map(|o| o.time).collect();
            let d = drifts_under(MeasureTag::PStar, &p);
            let series = survival_series_oracle(&p, &d, quotes, &checkpoints, t1, &cfg.oracle_config(s.index, r))?;
            Some((stride, series))
        } else {
            None
        };
        let mut rows = Vec::with_capacity(quotes.len());
        for (k, (a, b)) in star.iter().zip(&share).enumerate() {
            let rep = SurvivalReport::compute(a, b, &p, t1)?;
            let mut row = vec![
                s.index.to_string(),
                rho_label(rho),
                fmt_time(rep.t),
                fmt_prob(rep.p_survive_star),
                fmt_prob(rep.p_survive_t),
                fmt_prob(rep.p_convert_s),
            ];
            if let Some((stride, series)) = &oracle {
                if k % stride == 0 {
                    let e = series[k / stride].estimate;
                    let se = e.stderr_at(rep.p_survive_star);
                    row.push(fmt_prob(e.mean));
                    row.push(fmt_prob(se));
                    row.push(u8::from((e.mean - rep.p_survive_star).abs() <= 3.0 * se).to_string());
                } else {
                    row.extend([String::new(), String::new(), String::new()]);
                }
            }
            rows.push(row);
        }
        Ok(SurvivalRows { rows })
    })?;
    let mut cols = vec!["scenario", "rho", "t", "p_survive_star", "p_survive_t", "p_convert_s"];
    if validate {
        cols.extend(["oracle_survive", "oracle_stderr", "within_3se"]);
    }
    for (si, s) in scenarios.iter().enumerate() {
        let rows: Vec<Vec<String>> = cells[si * n_rho..(si + 1) * n_rho]
            .iter()
            .flat_map(|c| c.rows.iter().cloned())
            .collect();
        out.write_csv(&format!("scenario_{}_survival.csv", s.index), &header(&cols), &rows)?;
    }
    if validate {
        let misses: usize = cells
            .iter()
            .flat_map(|c| c.rows.iter())
            .filter(|row| row.last().map(|v| v == "0").unwrap_or(false))
            .count();
        let checked: usize = cells
            .iter()
            .flat_map(|c| c.rows.iter())
            .filter(|row| row.last().map(|v| !v.is_empty()).unwrap_or(false))
            .count();
        println!("survive --validate: {} of {checked} checkpoints within 3 standard errors", checked - misses);
    }
    Ok(None)
}

/// `pi` is recomputed from the rounded legs so that the file is self-consistent.
pub fn price_row(scenario: usize, rho: f64, t: f64, stock: f64, bond: f64, equity: f64) -> Vec<String> {
    let bond = fmt_money(bond);
    let equity = fmt_money(equity);
    let pi = fmt_money(reparse(&bond) + reparse(&equity));
    vec![
        scenario.to_string(),
        rho_label(rho),
        fmt_time(t),
        fmt_money(stock),
        bond,
        equity,
        pi,
    ]
}

fn price_cmd(cfg: &RunConfig, schedule: &UpdateSchedule, out: &mut OutputDir) -> Result<Option<CliError>, CliError> {
    let t1 = cfg.first_update()?;
    if (cfg.model.maturity - t1).abs() > 1e-9 {
        return Err(CliError::Config(format!(
            "price values the bond within the first period: maturity {} must equal the first update {t1}",
            cfg.model.maturity
        )));
    }
    let scenarios = load_scenarios(cfg, schedule)?;
    let n_rho = cfg.rho_sweep.len();
    let filter_cfg = cfg.filter_config();
    let cells = over_cells(&scenarios, n_rho, |s, r| {
        let rho = cfg.rho_sweep[r];
        let p = cfg.params_for(rho);
        let quotes = first_period(&s.stock, t1);
        let fwd = GridFilter::new(p, MeasureTag::PT, filter_cfg)?.run_period(p.initial_fundamental, quotes, t1)?;
        let share = GridFilter::new(p, MeasureTag::PS, filter_cfg)?.run_period(p.initial_fundamental, quotes, t1)?;
        fwd.iter()
            .zip(&share)
            .zip(quotes)
            .map(|((a, b), o)| {
                let q = price(a, b, &p, o.time, o.stock_price)?;
                Ok(price_row(s.index, rho, q.t, o.stock_price, q.bond_leg, q.equity_leg))
            })
            .collect::<Result<Vec<_>, CliError>>()
    })?;
    let cols = header(&["scenario", "rho", "t", "stock", "bond_leg", "equity_leg", "pi"]);
    for (si, s) in scenarios.iter().enumerate() {
        let rows: Vec<Vec<String>> = cells[si * n_rho..(si + 1) * n_rho].concat();
        out.write_csv(&format!("scenario_{}_price.csv", s.index), &cols, &rows)?;
    }
    Ok(None)
}

/// `A` is recomputed from the rounded `F` and `M`.
pub fn compensator_row(scenario: usize, rho: f64, t: f64, left_limit: bool, f: f64, m: f64) -> Vec<String> {
    let f = fmt_prob(f);
    let m = fmt_prob(m);
    let a = fmt_prob(reparse(&f) - reparse(&m));
    vec![
        scenario.to_string(),
        rho_label(rho),
        fmt_time(t),
        u8::from(left_limit).to_string(),
        f,
        m,
        a,
    ]
}

fn update_records(schedule: &UpdateSchedule, stock: &[ObservationRecord], hidden: &HiddenPath) -> Vec<UpdateRecord> {
    schedule.update_times()[1..]
        .iter()
        .map(|&t| {
            let k = stock
                .iter()
                .position(|o| (o.time - t).abs() <= 1e-9)
                .expect("update times are quote times");
            UpdateRecord {
                time: t,
                fundamental: hidden.u[k],
                converted: hidden.converted[k],
            }
        })
        .collect()
}

fn compensator(cfg: &RunConfig, schedule: &UpdateSchedule, out: &mut OutputDir) -> Result<Option<CliError>, CliError> {
    let scenarios = load_scenarios(cfg, schedule)?;
    let n_rho = cfg.rho_sweep.len();
    let filter_cfg = cfg.filter_config();
    let cells = over_cells(&scenarios, n_rho, |s, r| {
        let rho = cfg.rho_sweep[r];
        let p = cfg.params_for(rho);
        let hidden = hidden_path(cfg, s, r)?;
        let updates = update_records(schedule, &s.stock, &hidden);
        let path = compensator_path(&s.stock, &updates, &p, schedule, &filter_cfg)?;
        let rows: Vec<Vec<String>> = (0..path.len())
            .map(|i| {
                compensator_row(
                    s.index,
                    rho,
                    path.times[i],
                    path.left_limit[i],
                    path.f_values[i],
                    path.m_values[i],
                )
            })
            .collect();
        Ok((rows, path.max_a_decrease()))
    })?;
    let cols = header(&["scenario", "rho", "t", "left_limit", "F", "M", "A"]);
    let mut worst: f64 = 0.0;
    for (si, s) in scenarios.iter().enumerate() {
        let part = &cells[si * n_rho..(si + 1) * n_rho];
        let rows: Vec<Vec<String>> = part.iter().flat_map(|c| c.0.iter().cloned()).collect();
        worst = part.iter().map(|c| c.1).fold(worst, f64::max);
        out.write_csv(&format!("scenario_{}_compensator.csv", s.index), &cols, &rows)?;
    }
    if worst > A_MONOTONICITY_TOLERANCE {
        return Ok(Some(CliError::Invariant(format!(
            "compensator decreases by {worst:e} on some path (tolerance {A_MONOTONICITY_TOLERANCE:e})"
        ))));
    }
    Ok(None)
}

fn validation_row(check: &str, rho: Option<f64>, value: f64, reference: f64, stderr: f64, pass: bool) -> Vec<String> {
    vec![
        check.to_string(),
        rho.map(rho_label).unwrap_or_default(),
        fmt_prob(value),
        fmt_prob(reference),
        fmt_prob(stderr),
        u8::from(pass).to_string(),
    ]
}

/// Oracle cross-checks at the configured Monte Carlo size.
fn validate_cmd(cfg: &RunConfig, schedule: &UpdateSchedule, out: &mut OutputDir) -> Result<Option<CliError>, CliError> {
    let t1 = cfg.first_update()?;
    let scenarios = load_scenarios(cfg, schedule)?;
    let base: ModelParams = cfg.model;
    let mut rows = Vec::new();

    // Closed-form survival against bridge-corrected first passage.
    let d = drifts_under(MeasureTag::PStar, &base);
    let exact = survival_closed_form(base.initial_fundamental, base.conversion_barrier, d.mu_u, base.sigma, t1)?;
    let cf = cfg.oracle_config(0, 0);
    let est = crossing_frequency(
        base.initial_fundamental,
        base.conversion_barrier,
        d.mu_u,
        base.sigma,
        t1,
        cf.n_paths,
        cf.dt_fine,
        cf.seed,
        true,
    )?;
    let se = est.stderr_at(exact);
    rows.push(validation_row("closed_form_survival", None, 1.0 - est.mean, exact, se, (1.0 - est.mean - exact).abs() <= 3.0 * se));

    let quotes = first_period(&scenarios[0].stock, t1);
    let depth = quotes.len().min(11);
    let window = &quotes[..depth];
    let filter_cfg = cfg.filter_config();
    let per_rho = cfg
        .rho_sweep
        .par_iter()
        .enumerate()
        .map(|(r, &rho)| {
            let p = cfg.params_for(rho);
            let d = drifts_under(MeasureTag::PStar, &p);
            let oc = cfg.oracle_config(0, r);
            let mut rows = Vec::new();
            let posts = GridFilter::new(p, MeasureTag::PStar, filter_cfg)?.run_period(p.initial_fundamental, window, t1)?;
            let post = posts.last().expect("at least one quote");
            let t = window[depth - 1].time;
            if post.atom().is_none() {
                // Posterior density against the conditional histogram.
                let m = post.mean();
                let sd = post.variance().sqrt();
                let lo = (m - 5.0 * sd).max(p.conversion_barrier);
                let hi = m + 5.0 * sd;
                let edges: Vec<f64> = (0..=24).map(|b| lo + (hi - lo) * b as f64 / 24.0).collect();
                let hist = conditional_posterior_oracle(&p, &d, window, t, &edges, &oc)?;
                let dens = hist.densities();
                let n = hist.n_accepted as f64;
                let mut worst_z: f64 = 0.0;
                let mut peak: f64 = 0.0;
                for (b, e) in edges.windows(2).enumerate() {
                    let reference = post.bin_average(e[0], e[1]);
                    peak = peak.max(reference);
                    let q = reference * (e[1] - e[0]);
                    let se = (q * (1.0 - q) / n).sqrt() / (e[1] - e[0]);
                    let z = (dens[b] - reference).abs() / se.max(1e-300);
                    worst_z = worst_z.max(z);
                }
                rows.push(validation_row("posterior_max_bin_z", Some(rho), worst_z, 4.0, 0.0, worst_z <= 4.0));
            }
            let series = survival_series_oracle(&p, &d, window, &[t], t1, &oc)?;
            let analytic = coco_core::pricing::conditional_survival(post, MeasureTag::PStar, &p, t1)?;
            let e = series[0].estimate;
            let se = e.stderr_at(analytic);
            rows.push(validation_row("conditional_survival", Some(rho), e.mean, analytic, se, (e.mean - analytic).abs() <= 3.0 * se));
            Ok(rows)
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    rows.extend(per_rho.into_iter().flatten());

    out.write_csv(
        "validation.csv",
        &header(&["check", "rho", "value", "reference", "stderr", "pass"]),
        &rows,
    )?;
    let failed: Vec<String> = rows
        .iter()
        .filter(|r| r[5] == "0")
        .map(|r| format!("{} rho={}", r[0], r[1]))
        .collect();
    for r in &rows {
        println!("{:<24} rho={:<6} value={} reference={} pass={}", r[0], r[1], r[2], r[3], r[5]);
    }
    if failed.is_empty() {
        Ok(None)
    } else {
        Ok(Some(CliError::Invariant(format!("validation checks failed: {}", failed.join(", ")))))
    }
}
