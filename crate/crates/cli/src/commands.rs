//! The four subcommands. Each builds a [`Report`], then writes it to
//! `--out` or prints it.

use std::path::PathBuf;

use ivkit::approx_bias::{bias_coefficient, EXACT_TOL};
use ivkit::design::{leverage_report, partial_out, project, stack, DesignData, LeverageReport};
use ivkit::estimators::{
    estimate_prepared, resolve_for, EstimateOptions, InputMode, PreparedInputs, VarianceDivisor,
};
use ivkit::montecarlo::{density_export, generate, round_rng, run, MonteCarloSummary};
use ivkit::oracle::oracle_check;
use ivkit::{NamedEstimator, ProjectionDecomposition};
use serde_json::Value;

use crate::config::{
    check_threshold, BiasArgs, Divisor, EstimateArgs, OracleArgs, OutputArgs, SimulateArgs,
};
use crate::data::load_csv;
use crate::error::{CliError, Result};
use crate::report::{note, num, sibling, text, Report, Table};

fn emit(report: &Report, output: &OutputArgs) -> Result<Vec<PathBuf>> {
    match &output.out {
        Some(path) => report.write(path, output.format),
        None => report.print(output.format).map(|_| Vec::new()),
    }
}

fn warn(msg: &str) {
    eprintln!("warning: {msg}");
}

fn mode_name(mode: InputMode) -> &'static str {
    match mode {
        InputMode::Raw => "raw",
        InputMode::Partialled => "partialled",
    }
}

fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        None => Ok(f()),
        Some(0) => Err(CliError::Usage("--threads must be at least 1".into())),
        Some(t) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(t)
                .build()
                .map_err(|e| CliError::Usage(format!("cannot start {t} threads: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

// ---------------------------------------------------------------- simulate

pub fn simulate_summary(args: &SimulateArgs) -> Result<MonteCarloSummary> {
    let design = args
        .design
        .build()?
        .ok_or_else(|| CliError::Usage("--design is required".into()))?;
    if args.rounds == 0 {
        return Err(CliError::Usage("--rounds must be at least 1".into()));
    }
    if args.keep_estimates && args.output.out.is_none() {
        return Err(CliError::Usage("--keep-estimates needs --out".into()));
    }
    if args.bins == 0 {
        return Err(CliError::Usage("--bins must be at least 1".into()));
    }
    let names = if args.estimators.is_empty() {
        design.default_estimators()
    } else {
        args.estimators.clone()
    };
    let summary = with_threads(args.threads, || {
        run(&design, &names, args.rounds, args.seed, args.keep_estimates)
    })??;
    Ok(summary)
}

pub fn simulate_report(summary: &MonteCarloSummary) -> Report {
    let mut report = Report::new("simulate");
    report.meta("design", summary.design.clone());
    report.meta("rounds", summary.rounds);
    report.meta("seed", summary.base_seed);
    report.meta("beta_true", num(summary.beta_true));
    let cols = ["estimator", "bias", "variance", "mse", "failures"];
    let mut t = Table::new("summary", cols.map(String::from).to_vec());
    for e in &summary.estimators {
        t.push(vec![
            text(&e.label),
            num(e.bias),
            num(e.variance),
            num(e.mse),
            Value::from(e.failures),
        ]);
    }
    report.tables.push(t);
    report
}

pub fn estimates_table(summary: &MonteCarloSummary) -> Table {
    let mut cols = vec!["round".to_string()];
    cols.extend(summary.estimators.iter().map(|e| e.label.clone()));
    let mut t = Table::new("estimates", cols);
    for r in 0..summary.rounds {
        let mut row = vec![Value::from(r)];
        for e in &summary.estimators {
            row.push(e.estimates.as_ref().map_or(Value::Null, |v| num(v[r])));
        }
        t.push(row);
    }
    t
}

pub fn density_table(summary: &MonteCarloSummary, bins: usize) -> Result<Table> {
    let d = density_export(summary, bins)?;
    let mut cols = vec!["bin_left".to_string(), "bin_right".to_string()];
    cols.extend(d.labels.iter().cloned());
    let mut t = Table::new("density", cols);
    for b in 0..bins {
        let mut row = vec![num(d.edges[b]), num(d.edges[b + 1])];
        row.extend(d.counts.iter().map(|c| Value::from(c[b])));
        t.push(row);
    }
    Ok(t)
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<Vec<PathBuf>> {
    let summary = simulate_summary(args)?;
    let report = simulate_report(&summary);
    let mut files = emit(&report, &args.output)?;
    if args.keep_estimates {
        let out = args.output.out.as_ref().expect("checked above");
        for t in [estimates_table(&summary), density_table(&summary, args.bins)?] {
            let p = sibling(out, &t.name);
            let f = std::fs::File::create(&p).map_err(|e| CliError::io(&p, e))?;
            t.write_csv(f)?;
            files.push(p);
        }
    }
    if summary.estimators.iter().all(|e| e.failures == summary.rounds) {
        return Err(CliError::AllFailed);
    }
    Ok(files)
}

// ---------------------------------------------------------------- estimate

fn coefficient_columns(names: &[String]) -> Vec<String> {
    let mut cols: Vec<String> = ["estimator", "class", "parameter", "input_mode", "status"]
        .map(String::from)
        .to_vec();
    cols.extend(names.iter().map(|c| format!("beta_{c}")));
    cols.extend(names.iter().map(|c| format!("se_{c}")));
    cols.extend(
        [
            "bias_coefficient",
            "max_leverage",
            "max_leverage_row",
            "ba_flag",
            "cond",
            "note",
        ]
        .map(String::from),
    );
    cols
}

fn leverage_cells(rep: &LeverageReport) -> [Value; 3] {
    [
        num(rep.max_leverage),
        Value::from(rep.max_index + 1),
        Value::Bool(rep.ba_flag),
    ]
}

/// The report plus the number of estimators that failed.
pub fn estimate_report(args: &EstimateArgs) -> Result<(Report, usize)> {
    check_threshold(args.ba_threshold)?;
    let (path, manifest) = args.dataset.manifest()?;
    let loaded = load_csv(&path, &manifest)?;
    let data = &loaded.data;
    let coef_names = manifest.coefficient_names();
    let names = if args.estimators.is_empty() {
        NamedEstimator::ALL.to_vec()
    } else {
        args.estimators.clone()
    };
    let options = EstimateOptions {
        divisor: match args.divisor {
            Divisor::N => VarianceDivisor::N,
            Divisor::NMinusL => VarianceDivisor::NMinusL,
        },
    };

    let mut report = Report::new("estimate");
    report.meta("data", path.display().to_string());
    report.meta("n", data.n());
    report.meta("dropped_rows", loaded.dropped_rows.clone());
    if !loaded.dropped_rows.is_empty() {
        warn(&format!(
            "dropped {} rows with missing or non-finite values: {:?}",
            loaded.dropped_rows.len(),
            loaded.dropped_rows
        ));
    }

    let resolutions: Vec<_> = names.iter().map(|n| resolve_for(*n, data)).collect();
    let wants = |mode| resolutions.iter().flatten().any(|r| r.spec.input_mode == mode);
    let raw = wants(InputMode::Raw).then(|| PreparedInputs::raw(data));
    let partialled = wants(InputMode::Partialled).then(|| PreparedInputs::partialled(data));

    let width = coef_names.len();
    let mut table = Table::new("estimates", coefficient_columns(&coef_names));
    let mut failed = 0;
    let mut warnings = Vec::new();
    for (name, res) in names.iter().zip(&resolutions) {
        let mut row = vec![text(name.label())];
        let outcome = res.as_ref().map_err(Clone::clone).and_then(|res| {
            let inputs = match res.spec.input_mode {
                InputMode::Raw => raw.as_ref(),
                InputMode::Partialled => partialled.as_ref(),
            }
            .expect("mode prepared")
            .as_ref()
            .map_err(Clone::clone)?;
            let est = estimate_prepared(res.spec.family, inputs, options)?;
            let coef = bias_coefficient(
                res.spec.family,
                inputs.decomposition().leverages(),
                data.n(),
                inputs.l_effective(),
            )?;
            let lev = leverage_report(inputs.decomposition(), args.ba_threshold);
            Ok((res, est, coef, lev))
        });
        match outcome {
            Ok((res, est, coef, lev)) => {
                row.extend([
                    text(res.spec.family.class_name()),
                    num(res.spec.family.parameter()),
                    text(mode_name(res.spec.input_mode)),
                    text("ok"),
                ]);
                let cell = |v: &nalgebra::DVector<f64>, j: usize| v.get(j).map_or(Value::Null, |x| num(*x));
                row.extend((0..width).map(|j| cell(&est.beta_hat, j)));
                row.extend((0..width).map(|j| cell(&est.se, j)));
                row.push(num(coef.value));
                row.extend(leverage_cells(&lev));
                row.push(num(est.cond));
                if let Some(w) = &res.fallback {
                    warnings.push(w.clone());
                }
                row.push(note(res.fallback.clone()));
            }
            Err(e) => {
                failed += 1;
                let (class, param, mode) = match res {
                    Ok(r) => (
                        text(r.spec.family.class_name()),
                        num(r.spec.family.parameter()),
                        text(mode_name(r.spec.input_mode)),
                    ),
                    Err(_) => (Value::Null, Value::Null, Value::Null),
                };
                row.extend([class, param, mode, text("error")]);
                row.extend(std::iter::repeat_n(Value::Null, 2 * width + 5));
                row.push(text(e.to_string()));
                warn(&format!("{name}: {e}"));
            }
        }
        table.push(row);
    }
    for w in &warnings {
        warn(w);
    }
    report.meta("warnings", warnings);
    report.tables.push(table);
    Ok((report, failed))
}

pub fn cmd_estimate(args: &EstimateArgs) -> Result<Vec<PathBuf>> {
    let (report, failed) = estimate_report(args)?;
    let total = report.tables[0].rows.len();
    let files = emit(&report, &args.output)?;
    if failed == total {
        return Err(CliError::AllFailed);
    }
    Ok(files)
}

// ---------------------------------------------------------------- bias

fn leverage_row(mode: InputMode, decomp: &ProjectionDecomposition, threshold: f64) -> Vec<Value> {
    let rep = leverage_report(decomp, threshold);
    vec![
        text(mode_name(mode)),
        Value::from(decomp.n()),
        Value::from(decomp.rank()),
        num(rep.max_leverage),
        Value::from(rep.max_index + 1),
        num(rep.margin),
        Value::Bool(rep.ba_flag),
        num(rep.threshold),
    ]
}

pub fn bias_report(args: &BiasArgs) -> Result<Report> {
    check_threshold(args.ba_threshold)?;
    let design = args.design.build()?;
    let mut report = Report::new("bias");
    let (data, default_names): (DesignData, Vec<NamedEstimator>) =
        match (args.dataset.given(), design) {
            (true, Some(_)) => {
                return Err(CliError::Usage("give either --data or --design, not both".into()))
            }
            (false, None) => return Err(CliError::Usage("--data or --design is required".into())),
            (true, None) => {
                let (path, manifest) = args.dataset.manifest()?;
                let loaded = load_csv(&path, &manifest)?;
                report.meta("data", path.display().to_string());
                report.meta("dropped_rows", loaded.dropped_rows);
                (loaded.data, NamedEstimator::ALL.to_vec())
            }
            (false, Some(d)) => {
                report.meta("design", d.label());
                report.meta("seed", args.seed);
                let draw = generate(&d, &mut round_rng(args.seed, 0))?;
                (draw.data, d.default_estimators())
            }
        };
    let names = if args.estimators.is_empty() {
        default_names
    } else {
        args.estimators.clone()
    };
    report.meta("n", data.n());
    report.meta("k", data.k_total());
    report.meta("l", data.l_total());

    let raw = project(&stack(&data).z)?;
    let partialled = if data.l2() > 0 {
        Some(project(&partial_out(&data)?.z_t)?)
    } else {
        None
    };

    let cols = [
        "estimator",
        "class",
        "parameter",
        "input_mode",
        "trace_c",
        "l_effective",
        "coefficient",
        "exact_zero",
        "note",
    ];
    let mut coefs = Table::new("coefficients", cols.map(String::from).to_vec());
    for name in &names {
        let res = resolve_for(*name, &data)?;
        let (decomp, l_eff) = match res.spec.input_mode {
            InputMode::Raw => (&raw, data.l_total()),
            InputMode::Partialled => (partialled.as_ref().expect("controls present"), data.l1()),
        };
        let c = bias_coefficient(res.spec.family, decomp.leverages(), data.n(), l_eff)?;
        coefs.push(vec![
            text(name.label()),
            text(res.spec.family.class_name()),
            num(res.spec.family.parameter()),
            text(mode_name(res.spec.input_mode)),
            num(c.trace_c),
            Value::from(c.l_effective),
            num(c.value),
            Value::Bool(c.value.abs() <= EXACT_TOL),
            note(res.fallback),
        ]);
    }

    let cols = [
        "input_mode",
        "n",
        "rank",
        "max_leverage",
        "max_leverage_row",
        "margin",
        "ba_flag",
        "threshold",
    ];
    let mut lev = Table::new("leverage", cols.map(String::from).to_vec());
    lev.push(leverage_row(InputMode::Raw, &raw, args.ba_threshold));
    if let Some(p) = &partialled {
        lev.push(leverage_row(InputMode::Partialled, p, args.ba_threshold));
    }
    report.tables.push(coefs);
    report.tables.push(lev);
    Ok(report)
}

pub fn cmd_bias(args: &BiasArgs) -> Result<Vec<PathBuf>> {
    emit(&bias_report(args)?, &args.output)
}

// ---------------------------------------------------------------- oracle-check

pub fn oracle_report(args: &OracleArgs) -> Result<Report> {
    let s = args.shape();
    if s.l1 == 0 || s.k1 < s.l1 || s.n <= s.k1 + s.l2 + 1 {
        return Err(CliError::Usage(format!(
            "need L1 >= 1, K1 >= L1 and N > K1 + L2 + 1, got N={} L1={} L2={} K1={}",
            s.n, s.l1, s.l2, s.k1
        )));
    }
    let r = oracle_check(args.instances, s, args.seed)?;
    let mut report = Report::new("oracle-check");
    report.meta("n", s.n);
    report.meta("l1", s.l1);
    report.meta("l2", s.l2);
    report.meta("k1", s.k1);
    report.meta("seed", args.seed);
    report.meta("instances", args.instances);
    report.meta("max_discrepancy", r.max_discrepancy().map_or(Value::Null, num));
    report.meta("failed", r.instances.iter().filter(|o| o.error.is_some()).count());
    let cols = ["instance", "discrepancy", "error"];
    let mut t = Table::new("instances", cols.map(String::from).to_vec());
    for o in &r.instances {
        t.push(vec![
            Value::from(o.instance),
            o.discrepancy.map_or(Value::Null, num),
            note(o.error.clone()),
        ]);
    }
    report.tables.push(t);
    Ok(report)
}

pub fn cmd_oracle_check(args: &OracleArgs) -> Result<Vec<PathBuf>> {
    let report = oracle_report(args)?;
    match report.meta.get("max_discrepancy").and_then(Value::as_f64) {
        Some(d) => eprintln!("max relative discrepancy {d:e} over {} instances", args.instances),
        None => eprintln!("no instance could be compared"),
    }
    emit(&report, &args.output)
}
