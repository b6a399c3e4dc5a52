use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use barrier_stab_core::benchmarks::unicycle_a_bar;
use barrier_stab_core::simulator::num;
use barrier_stab_core::{
    classify_outcome, estimate_alpha0, pointwise_compatible, simulate_batch,
    verify_boundary_sbncbf, verify_compatibility_region, Branch, ControllerKind, ControllerSpec,
    EventKind, GridSpec, Memory, RegionReport, State,
};
use nalgebra::DVector;
use rayon::prelude::*;

use crate::config::{ExperimentConfig, Source};
use crate::error::CliError;
use crate::experiment::{build, grid_spec, Experiment};

pub const SUMMARY_FILE: &str = "summary.csv";
pub const CONFIG_FILE: &str = "effective_config.json";

pub fn output_dir(cfg: &ExperimentConfig) -> PathBuf {
    PathBuf::from(cfg.output_dir.as_deref().expect("resolved"))
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(CliError::io(path))
}

fn write_file(path: &Path, contents: &[u8]) -> Result<(), CliError> {
    fs::write(path, contents).map_err(CliError::io(path))
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

/// One line per run of the batch.
#[derive(Debug, Clone)]
pub struct RunLine {
    pub index: usize,
    pub status: String,
    pub converged_to_origin: bool,
    pub converged_to_level_set: bool,
    pub final_norm: f64,
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub runs: Vec<RunLine>,
    pub errors: usize,
    pub reports: Vec<(String, RegionReport)>,
}

fn summary_header(n: usize) -> Vec<String> {
    let mut h = vec![
        "run".to_string(),
        "trajectory".into(),
        "controller".into(),
        "status".into(),
    ];
    h.extend((1..=n).map(|i| format!("x0_{i}")));
    h.extend(
        [
            "x0_in_wclf_region",
            "converged_to_origin",
            "converged_to_level_set",
            "stayed_in_c_after_entry",
            "stayed_in_level_set_after_entry",
            "t_enter_c",
            "t_enter_level_set",
            "t_converged",
            "t_first_infeasible",
            "max_safety_violation",
            "worst_u1_v_increase",
            "infeasible_steps",
            "fallback_steps",
            "chattering",
            "final_norm",
            "final_v",
            "final_h",
        ]
        .map(String::from),
    );
    h
}

/// Simulates every initial state, writes one trajectory CSV per run, the
/// summary (atomically renamed into place) and any configured grid reports.
pub fn run(cfg: &ExperimentConfig, src: &Source) -> Result<RunSummary, CliError> {
    let exp = build(cfg, src)?;
    if exp.initial_states.is_empty() {
        return Err(src.error("initial_states", "no initial states configured"));
    }
    let out = output_dir(cfg);
    let runs_dir = out.join("runs");
    create_dir(&runs_dir)?;
    write_file(&out.join(CONFIG_FILE), cfg.to_pretty_json().as_bytes())?;

    let sim_cfg = cfg.sim_config();
    let results = simulate_batch(&exp.sys, &exp.spec, &exp.initial_states, &sim_cfg);
    let n = exp.sys.state_dim();
    let tmp = out.join(format!("{SUMMARY_FILE}.tmp"));
    let mut summary = csv::Writer::from_path(&tmp)?;
    summary.write_record(summary_header(n))?;
    let mut lines = Vec::new();
    let mut errors = 0;
    for (i, (x0, result)) in exp.initial_states.iter().zip(results).enumerate() {
        let file = format!("run_{i:03}.csv");
        let (traj, status) = match result {
            Ok(t) => (t, "ok".to_string()),
            Err(e) => {
                errors += 1;
                log::error!("run {i} from {:?}: {e}", x0.as_slice());
                (*e.prefix, format!("error: {}", e.kind))
            }
        };
        let path = runs_dir.join(&file);
        let mut w = BufWriter::new(File::create(&path).map_err(CliError::io(&path))?);
        traj.write_csv(&mut w)
            .and_then(|_| w.flush())
            .map_err(CliError::io(&path))?;

        let o = classify_outcome(&traj, &exp.spec, &sim_cfg);
        let mut rec = vec![
            i.to_string(),
            format!("runs/{file}"),
            exp.spec.kind().as_str().into(),
            status.clone(),
        ];
        rec.extend(x0.iter().map(|v| num(*v)));
        rec.push(exp.spec.wclf().in_feasible_region(x0).to_string());
        rec.extend([
            o.converged_to_origin.to_string(),
            o.converged_to_level_set.to_string(),
            o.stayed_in_c_after_entry.to_string(),
            o.stayed_in_level_set_after_entry.to_string(),
            opt(o.t_enter_c),
            opt(o.t_enter_level_set),
            opt(o.t_converged),
            opt(traj.first_event(EventKind::Infeasible)),
            num(o.max_safety_violation),
            opt(o.worst_u1_v_increase),
            o.infeasible_steps.to_string(),
            o.fallback_steps.to_string(),
            o.chattering.to_string(),
            num(o.final_norm),
            opt(traj.v_values.last().copied()),
            opt(traj.h_values.last().copied()),
        ]);
        summary.write_record(&rec)?;
        lines.push(RunLine {
            index: i,
            status,
            converged_to_origin: o.converged_to_origin,
            converged_to_level_set: o.converged_to_level_set,
            final_norm: o.final_norm,
        });
    }
    summary.flush().map_err(CliError::io(&tmp))?;
    drop(summary);
    let dest = out.join(SUMMARY_FILE);
    fs::rename(&tmp, &dest).map_err(CliError::io(&dest))?;

    let reports = if cfg.grids.is_empty() {
        Vec::new()
    } else {
        verify_grids(cfg, src, &exp)?
    };
    Ok(RunSummary {
        runs: lines,
        errors,
        reports,
    })
}

/// Runs the configured grid checks and writes `verify/<name>.txt` plus
/// `verify/<name>_failures.csv` for each.
pub fn verify(
    cfg: &ExperimentConfig,
    src: &Source,
) -> Result<Vec<(String, RegionReport)>, CliError> {
    if cfg.grids.is_empty() {
        return Err(src.error("grids", "no grids configured"));
    }
    let exp = build(cfg, src)?;
    let out = output_dir(cfg);
    create_dir(&out)?;
    write_file(&out.join(CONFIG_FILE), cfg.to_pretty_json().as_bytes())?;
    verify_grids(cfg, src, &exp)
}

fn verify_grids(
    cfg: &ExperimentConfig,
    src: &Source,
    exp: &Experiment,
) -> Result<Vec<(String, RegionReport)>, CliError> {
    let dir = output_dir(cfg).join("verify");
    create_dir(&dir)?;
    let (v, b, sys) = (exp.spec.wclf(), exp.spec.barrier(), &exp.sys);
    let mut reports = Vec::new();
    for (i, g) in cfg.grids.iter().enumerate() {
        let grid = grid_spec(cfg, i, src)?;
        let name = g.name.clone().expect("resolved");
        let u_bound = g.u_bound.expect("resolved");
        let runtime =
            |e: barrier_stab_core::ContractError| CliError::Runtime(format!("grid `{name}`: {e}"));
        let mut report = match g.check.as_str() {
            "boundary" => verify_boundary_sbncbf(b, sys, &grid, u_bound).map_err(runtime)?,
            _ => verify_compatibility_region(
                v,
                b,
                sys,
                &grid,
                g.c_bar.expect("resolved"),
                g.level_step.expect("resolved"),
                u_bound,
            )
            .map_err(runtime)?,
        };
        if g.estimate_alpha0 == Some(true) {
            report.estimated_alpha0 =
                Some(alpha0_bound(cfg, exp, &grid, g.c_bar.expect("resolved")).map_err(runtime)?);
        }
        let title = format!(
            "{} {} ({})",
            cfg.name.as_deref().unwrap_or(""),
            name,
            g.check
        );
        let txt = dir.join(format!("{name}.txt"));
        write_file(&txt, report.summary(&title).as_bytes())?;
        let csv_path = dir.join(format!("{name}_failures.csv"));
        let mut w = BufWriter::new(File::create(&csv_path).map_err(CliError::io(&csv_path))?);
        report
            .write_failures_csv(&mut w, sys.state_dim())
            .and_then(|_| w.flush())
            .map_err(CliError::io(&csv_path))?;
        reports.push((name, report));
    }
    Ok(reports)
}

// Candidate controller is the switching `u1` output; direction is `(ā, 0)`.
fn alpha0_bound(
    cfg: &ExperimentConfig,
    exp: &Experiment,
    grid: &GridSpec,
    c_bar: f64,
) -> Result<f64, barrier_stab_core::ContractError> {
    let u1 = ControllerSpec::new(
        ControllerKind::Switching,
        exp.spec.wclf().clone(),
        exp.spec.barrier().clone(),
    )?
    .with_c_bar(c_bar)?;
    let sys = &exp.sys;
    let select = |x: &State| u1.barrier().h(x) >= 0.0 && u1.wclf().value(x) > c_bar;
    let ku = |x: &State| {
        u1.control(sys, x, Memory::Fresh)
            .ok()
            .filter(|d| d.branch == Branch::U1)
            .map(|d| d.u)
    };
    let dir = |x: &State| DVector::from_vec(vec![unicycle_a_bar(x), 0.0]);
    estimate_alpha0(
        grid,
        select,
        ku,
        dir,
        cfg.controller.epsilon.expect("resolved"),
        cfg.barrier.delta.expect("resolved"),
    )
}

pub const REGION_LABELS: [&str; 4] = ["outside", "in-C", "compatible", "incompatible"];

/// Writes `plot/<run>_series.csv` (`t,V,h,branch`) for every run listed in the
/// summary and `plot/region_scan.csv` (`x1,x2,label`).
pub fn plot_data(cfg: &ExperimentConfig, src: &Source) -> Result<Vec<PathBuf>, CliError> {
    let out = output_dir(cfg);
    let summary_path = out.join(SUMMARY_FILE);
    if !summary_path.is_file() {
        return Err(CliError::MissingArtifact {
            path: summary_path,
            hint: "run `barrier-stab run` with this config first".into(),
        });
    }
    let plot_dir = out.join("plot");
    create_dir(&plot_dir)?;
    let mut written = Vec::new();
    let mut summary = csv::Reader::from_path(&summary_path)?;
    let col = summary
        .headers()?
        .iter()
        .position(|h| h == "trajectory")
        .ok_or_else(|| {
            CliError::Runtime(format!(
                "{}: no `trajectory` column",
                summary_path.display()
            ))
        })?;
    for rec in summary.records() {
        let rel = rec?.get(col).unwrap_or_default().to_string();
        let traj_path = out.join(&rel);
        if !traj_path.is_file() {
            return Err(CliError::MissingArtifact {
                path: traj_path,
                hint: "listed in the summary".into(),
            });
        }
        let stem = Path::new(&rel)
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("run")
            .to_string();
        let dest = plot_dir.join(format!("{stem}_series.csv"));
        series(&traj_path, &dest)?;
        written.push(dest);
    }

    let exp = build(cfg, src)?;
    let dest = plot_dir.join("region_scan.csv");
    let mut w = csv::Writer::from_path(&dest)?;
    w.write_record(["x1", "x2", "label"])?;
    for (x, label) in region_scan(cfg, &exp) {
        w.write_record([num(x[0]), num(x[1]), label.to_string()])?;
    }
    w.flush().map_err(CliError::io(&dest))?;
    written.push(dest);
    Ok(written)
}

fn series(traj: &Path, dest: &Path) -> Result<(), CliError> {
    let mut r = csv::Reader::from_path(traj)?;
    let headers = r.headers()?.clone();
    let idx = |name: &str| {
        headers.iter().position(|h| h == name).ok_or_else(|| {
            CliError::Runtime(format!("{}: missing column `{name}`", traj.display()))
        })
    };
    let cols = [idx("t")?, idx("V")?, idx("h")?, idx("branch")?];
    let mut w = csv::Writer::from_path(dest)?;
    w.write_record(["t", "V", "h", "branch"])?;
    for rec in r.records() {
        let rec = rec?;
        w.write_record(cols.iter().map(|&c| rec.get(c).unwrap_or_default()))?;
    }
    w.flush().map_err(CliError::io(dest))?;
    Ok(())
}

/// Labels every point of the configured 2-D slice.
pub fn region_scan(cfg: &ExperimentConfig, exp: &Experiment) -> Vec<(State, &'static str)> {
    let scan = cfg.region_scan.as_ref().expect("resolved");
    let u_bound = scan.u_bound.expect("resolved");
    let c_bar = exp.spec.c_bar();
    let [n1, n2] = scan.resolution;
    let coord = |axis: usize, k: usize, n: usize| {
        if n == 1 {
            scan.lower[axis]
        } else {
            scan.lower[axis] + (scan.upper[axis] - scan.lower[axis]) * k as f64 / (n - 1) as f64
        }
    };
    (0..n1 * n2)
        .into_par_iter()
        .map(|idx| {
            let mut x = vec![coord(0, idx / n2, n1), coord(1, idx % n2, n2)];
            x.extend(&scan.slice);
            let x = State::from_vec(x);
            let label = if exp.spec.barrier().h(&x) < 0.0 {
                REGION_LABELS[0]
            } else if exp.spec.wclf().value(&x) <= c_bar {
                REGION_LABELS[1]
            } else if pointwise_compatible(
                exp.spec.wclf(),
                exp.spec.barrier(),
                &exp.sys,
                &x,
                u_bound,
            ) {
                REGION_LABELS[2]
            } else {
                REGION_LABELS[3]
            };
            (x, label)
        })
        .collect()
}
