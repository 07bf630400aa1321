use std::fs;
use std::path::{Path, PathBuf};

use log::warn;
use spreadlab_core::contagion::{AggregateCurve, SimulationRun};
use spreadlab_core::events::Severity;
use spreadlab_core::metrics::{disaggregate, write_plot_csv, write_report_csv, Disaggregation, FitReport};

use crate::config::ExperimentConfig;
use crate::error::CliError;
use crate::fit::load_fit_curves;
use crate::io::{self, OutDir};
use crate::simulate::load_grouping;
use crate::ReportArgs;

pub fn load_runs(dir: &Path) -> Result<Vec<SimulationRun>, CliError> {
    let runs_dir = dir.join("runs");
    if !runs_dir.is_dir() {
        return Err(CliError::config(format!("missing run directory {}", runs_dir.display())));
    }
    let mut paths: Vec<PathBuf> = fs::read_dir(&runs_dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<_, _>>()?;
    paths.retain(|p| p.extension().is_some_and(|x| x == "json"));
    paths.sort();
    if paths.is_empty() {
        return Err(CliError::config(format!("no run files in {}", runs_dir.display())));
    }
    paths.iter().map(|p| io::read_json(p, "run file")).collect()
}

/// Like the metrics plot CSV but with the model column left blank.
fn write_observed_only(curve: &AggregateCurve, path: &Path) -> Result<(), CliError> {
    let mut text = String::from("t,observed_mean,observed_std,model_curve\n");
    for t in 0..curve.mean.len() {
        text.push_str(&format!("{t},{},{},\n", curve.mean[t], curve.std[t]));
    }
    fs::write(path, text)?;
    Ok(())
}

pub fn run(args: &ReportArgs, cfg: Option<&ExperimentConfig>, out: &Path, force: bool) -> Result<(), CliError> {
    let dir = OutDir::open(out, force)?;
    let runs = load_runs(&dir.root)?;
    let t_end = runs[0].t_max;

    let grouping_path = args
        .grouping
        .clone()
        .or_else(|| cfg.and_then(|c| c.grouping.clone()))
        .or_else(|| Some(dir.input("grouping.json")).filter(|p| p.is_file()));
    let grouping = grouping_path.as_deref().map(load_grouping).transpose()?;

    let fit_path = dir.input("meanfield_fit.json");
    let population_fit = if fit_path.is_file() {
        Some(load_fit_curves(&fit_path, t_end)?)
    } else {
        warn!("{} not found; model columns left blank", fit_path.display());
        None
    };

    let mut figures: Vec<(String, AggregateCurve, Option<Vec<f64>>)> = Vec::new();
    let population = spreadlab_core::contagion::aggregate_runs(&runs, None)?;
    figures.push(("population".into(), population, population_fit.as_ref().map(|f| f.0.clone())));

    for (s, part) in Severity::ALL.iter().zip(disaggregate(&runs, Disaggregation::Severity)?) {
        let Some(curve) = part.curve else {
            warn!("no {} runs; skipping its figure", s.label());
            continue;
        };
        let p = dir.input(&format!("meanfield_fit_{}.json", s.label()));
        let model = if p.is_file() {
            Some(load_fit_curves(&p, t_end)?.0)
        } else {
            warn!("{} not found; model column left blank", p.display());
            None
        };
        figures.push((s.label().to_string(), curve, model));
    }

    match &grouping {
        Some(g) => {
            for (i, part) in disaggregate(&runs, Disaggregation::TraitGroup(g))?.into_iter().enumerate() {
                let Some(curve) = part.curve else {
                    warn!("{} has no agents; skipping its figure", part.label);
                    continue;
                };
                let model = match &population_fit {
                    Some(f) if g.num_groups() == 2 => Some(f.1[i].clone()),
                    _ => None,
                };
                figures.push((part.label, curve, model));
            }
        }
        None => warn!("no grouping given; skipping trait-group figures"),
    }

    let mut reports = Vec::new();
    for (label, curve, model) in &figures {
        let path = dir.file(&format!("figure_{label}.csv"))?;
        match model {
            Some(m) => {
                write_plot_csv(curve, m, io::create(&path)?)?;
                reports.push(FitReport::new(label.clone(), m, &curve.mean)?);
            }
            None => write_observed_only(curve, &path)?,
        }
    }
    write_report_csv(&reports, io::create(&dir.file("report.csv")?)?)?;
    println!("{} figure files written to {}", figures.len(), dir.root.display());
    for r in &reports {
        let nrmse = r.nrmse.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into());
        println!("{:<12} rmse {:.4}  nrmse {}", r.series, r.rmse, nrmse);
    }
    Ok(())
}
