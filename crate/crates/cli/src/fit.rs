use std::fs;
use std::path::{Path, PathBuf};

use serde_json::json;
use spreadlab_core::events::Severity;
use spreadlab_core::logistic::{
    fit, wald_stats, write_wald_csv, ExposureDataset, ExposureRow, FitOptions, LogisticParams, ModelSpec,
};
use spreadlab_core::meanfield::{
    fit_tau, integrate, FitTauOptions, GroupTargets, MeanFieldState, TauFit, DEFAULT_STEP,
};
use spreadlab_core::metrics::{write_report_csv, FitReport};
use spreadlab_core::policy::read_decision_log;
use spreadlab_core::traits::ProfileGrouping;

use crate::config::ExperimentConfig;
use crate::error::CliError;
use crate::io::{self, OutDir};
use crate::simulate::load_grouping;
use crate::{FitArgs, FitWhat};

/// Observed curves read back from an aggregate CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservedCurves {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub groups: Vec<Vec<f64>>,
}

pub fn read_aggregate(path: &Path) -> Result<ObservedCurves, CliError> {
    io::require(path, "aggregate curve file")?;
    let mut rdr = csv::Reader::from_path(path).map_err(CliError::other)?;
    let header = rdr.headers().map_err(CliError::other)?.clone();
    if header.get(1) != Some("mean_E") || header.get(2) != Some("std_E") {
        return Err(CliError::config(format!("{}: not an aggregate curve file", path.display())));
    }
    let ngroups = header.len() - 3;
    let mut out = ObservedCurves {
        mean: vec![],
        std: vec![],
        groups: vec![vec![]; ngroups],
    };
    for row in rdr.records() {
        let row = row.map_err(CliError::other)?;
        let num = |i: usize| -> Result<f64, CliError> {
            row[i]
                .parse()
                .map_err(|e| CliError::config(format!("{}: bad number {:?}: {e}", path.display(), &row[i])))
        };
        out.mean.push(num(1)?);
        out.std.push(num(2)?);
        for g in 0..ngroups {
            out.groups[g].push(num(3 + g)?);
        }
    }
    Ok(out)
}

fn grouping_for(args_path: Option<&PathBuf>, cfg: Option<&ExperimentConfig>) -> Result<Option<ProfileGrouping>, CliError> {
    match args_path.cloned().or_else(|| cfg.and_then(|c| c.grouping.clone())) {
        Some(p) => Ok(Some(load_grouping(&p)?)),
        None => Ok(None),
    }
}

pub fn run(args: &FitArgs, cfg: Option<&ExperimentConfig>, out: &Path, force: bool) -> Result<(), CliError> {
    let dir = OutDir::open(out, force)?;
    let grouping = grouping_for(args.grouping.as_ref(), cfg)?;
    let reports = match args.what {
        FitWhat::Meanfield => fit_meanfield(args, cfg, grouping.as_ref(), &dir)?,
        _ => fit_logistic(args, grouping, &dir)?,
    };
    print_table(&reports);
    Ok(())
}

fn print_table(reports: &[FitReport]) {
    println!("{:<24} {:>10} {:>10} {:>8}", "series", "rmse", "nrmse", "horizon");
    for r in reports {
        let nrmse = r.nrmse.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into());
        println!("{:<24} {:>10.4} {:>10} {:>8}", r.series, r.rmse, nrmse, r.horizon);
    }
}

fn fit_logistic(args: &FitArgs, grouping: Option<ProfileGrouping>, dir: &OutDir) -> Result<Vec<FitReport>, CliError> {
    let path = args.exposures.clone().unwrap_or_else(|| dir.input("exposures.csv"));
    io::require(&path, "exposures file")?;
    let records = read_decision_log(fs::File::open(&path)?)
        .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
    let data = ExposureDataset::new(
        records
            .iter()
            .filter(|r| r.iteration >= 1)
            .map(|r| ExposureRow {
                profile: r.profile_bits,
                severity: r.severity,
                engaged: r.decision,
            })
            .collect(),
    );
    if data.is_empty() {
        return Err(CliError::config(format!("{}: no post-seeding exposures", path.display())));
    }
    let (spec, name) = match args.what {
        FitWhat::LogisticFull => (ModelSpec::Full32, "full32"),
        FitWhat::LogisticLinear => (ModelSpec::Linear, "linear"),
        FitWhat::LogisticTwoGroup => {
            let g = grouping.ok_or_else(|| CliError::config("logistic-two-group needs --grouping or a config grouping"))?;
            (ModelSpec::TwoGroup(g), "two_group")
        }
        FitWhat::Meanfield => unreachable!(),
    };
    let opts = FitOptions {
        ridge: args.ridge,
        ..FitOptions::default()
    };
    let result = fit(&spec, &data, &opts)?;
    if !result.report.separation.is_empty() {
        log::warn!("quasi-separation in {:?}", result.report.separation);
    }
    io::write_json(&dir.file(&format!("logistic_{name}.json"))?, &result.to_json())?;
    let wald = wald_stats(&result.params, &data)?;
    write_wald_csv(&wald, io::create(&dir.file(&format!("wald_{name}.csv"))?)?)?;

    let report = cell_rate_report(&result.params, &data, name)?;
    write_report_csv(std::slice::from_ref(&report), io::create(&dir.file(&format!("fit_report_{name}.csv"))?)?)?;
    println!("{:<12} {:>12} {:>10} {:>10} {:>10}", "parameter", "estimate", "std_error", "z", "p");
    for w in &wald {
        println!(
            "{:<12} {:>12.4} {:>10.4} {:>10.3} {:>10.3e}",
            w.parameter, w.estimate, w.std_error, w.z_stat, w.p_value
        );
    }
    Ok(vec![report])
}

/// Predicted versus observed sharing rate over every (profile, severity) cell.
fn cell_rate_report(params: &LogisticParams, data: &ExposureDataset, name: &str) -> Result<FitReport, CliError> {
    let mut pred = Vec::new();
    let mut obs = Vec::new();
    for ((profile, severity), rate) in data.cell_rates() {
        pred.push(params.predict(profile, severity)?);
        obs.push(rate);
    }
    Ok(FitReport::new(format!("{name}_cell_rates"), &pred, &obs)?)
}

fn fit_meanfield(
    args: &FitArgs,
    cfg: Option<&ExperimentConfig>,
    grouping: Option<&ProfileGrouping>,
    dir: &OutDir,
) -> Result<Vec<FitReport>, CliError> {
    let path = args.aggregate.clone().unwrap_or_else(|| dir.input("aggregate.csv"));
    let observed = read_aggregate(&path)?;
    let k = args.k.or(cfg.map(|c| c.k)).unwrap_or(5);
    let shares = match grouping {
        Some(g) if g.num_groups() == 2 => {
            let s = g.population_shares();
            [s[0], s[1]]
        }
        Some(g) => {
            return Err(CliError::config(format!(
                "mean-field fit needs a 2-group grouping, got {} groups",
                g.num_groups()
            )))
        }
        None => [0.5, 0.5],
    };
    let mut opts = FitTauOptions::default();
    if let Some(c) = cfg {
        opts.bounds = [
            (c.tau_bounds[0][0], c.tau_bounds[0][1]),
            (c.tau_bounds[1][0], c.tau_bounds[1][1]),
        ];
    }

    let mut reports = Vec::new();
    let fit = fit_one(&observed, shares, k, &opts, args.group_curves)?;
    io::write_json(&dir.file("meanfield_fit.json")?, &fit_json(&fit, shares))?;
    let traj = integrate(&fit.params(), &fit.init, observed.mean.len() - 1, DEFAULT_STEP)?;
    traj.write_csv(io::create(&dir.file("meanfield_trajectory.csv")?)?)?;
    reports.push(FitReport::new("population", &traj.engaged(), &observed.mean)?);
    if observed.groups.len() == 2 {
        let model = traj.group_engaged(shares);
        for g in 0..2 {
            reports.push(FitReport::new(format!("group{}", g + 1), &model[g], &observed.groups[g])?);
        }
    }
    println!(
        "tau1 = {:.5}, tau2 = {:.5}, ratio = {:.2}",
        fit.tau1,
        fit.tau2,
        fit.tau2 / fit.tau1.max(f64::MIN_POSITIVE)
    );

    // Per-severity fits, when simulate wrote the split aggregates next to the input.
    if args.aggregate.is_none() {
        for s in Severity::ALL {
            let p = dir.input(&format!("aggregate_{}.csv", s.label()));
            if !p.is_file() {
                continue;
            }
            let obs = read_aggregate(&p)?;
            let f = fit_one(&obs, shares, k, &opts, args.group_curves)?;
            io::write_json(&dir.file(&format!("meanfield_fit_{}.json", s.label()))?, &fit_json(&f, shares))?;
            reports.push(FitReport::new(s.label(), &f.curve(obs.mean.len() - 1), &obs.mean)?);
        }
    }
    write_report_csv(&reports, io::create(&dir.file("fit_report_meanfield.csv")?)?)?;
    Ok(reports)
}

fn fit_one(
    observed: &ObservedCurves,
    shares: [f64; 2],
    k: usize,
    opts: &FitTauOptions,
    use_groups: bool,
) -> Result<TauFit, CliError> {
    let e0 = *observed.mean.first().ok_or_else(|| CliError::config("aggregate curve is empty"))?;
    let init = MeanFieldState::new(shares[0] * (1.0 - e0), shares[1] * (1.0 - e0), e0);
    let mut opts = opts.clone();
    if use_groups {
        if observed.groups.len() != 2 {
            return Err(CliError::config("--group-curves needs an aggregate with two group columns"));
        }
        opts.groups = Some(GroupTargets {
            shares,
            curves: [observed.groups[0].clone(), observed.groups[1].clone()],
        });
    }
    Ok(fit_tau(&observed.mean, &init, k as f64, &opts)?)
}

fn fit_json(fit: &TauFit, shares: [f64; 2]) -> serde_json::Value {
    let mut v = fit.to_json();
    v["shares"] = json!(shares);
    v
}

/// Model curve from a saved fit, integrated over `0..=t_end`.
pub fn load_fit_curves(path: &Path, t_end: usize) -> Result<(Vec<f64>, [Vec<f64>; 2]), CliError> {
    let v: serde_json::Value = io::read_json(path, "mean-field fit")?;
    let num = |x: &serde_json::Value, what: &str| {
        x.as_f64()
            .ok_or_else(|| CliError::config(format!("{}: missing {what}", path.display())))
    };
    let params = spreadlab_core::meanfield::MeanFieldParams::new(num(&v["tau1"], "tau1")?, num(&v["tau2"], "tau2")?, num(&v["k"], "k")?)?;
    let init = MeanFieldState::new(
        num(&v["init"][0], "init")?,
        num(&v["init"][1], "init")?,
        num(&v["init"][2], "init")?,
    );
    let shares = [
        v["shares"][0].as_f64().unwrap_or(0.5),
        v["shares"][1].as_f64().unwrap_or(0.5),
    ];
    let traj = integrate(&params, &init, t_end, DEFAULT_STEP)?;
    Ok((traj.engaged(), traj.group_engaged(shares)))
}
