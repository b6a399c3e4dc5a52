//! Experiment configuration: JSON on disk, dot-path overrides, defaults that
//! depend on the selected system.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::CliError;

pub const SYSTEMS: [&str; 2] = ["bump", "unicycle"];
pub const CONTROLLERS: [&str; 4] = ["wclf_qp", "bncbf_qp", "switching", "relaxed"];
pub const GRID_CHECKS: [&str; 2] = ["boundary", "compatibility"];
pub const SAMPLE_REGIONS: [&str; 3] = ["any", "inside_c", "outside_c"];
pub const INCOMPATIBLE_POLICIES: [&str; 2] = ["fallback_to_u2", "error"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: Option<String>,
    pub system: String,
    #[serde(default)]
    pub bump: Option<BumpSection>,
    #[serde(default)]
    pub barrier: BarrierSection,
    #[serde(default)]
    pub controller: ControllerSection,
    #[serde(default)]
    pub sim: SimSection,
    #[serde(default)]
    pub initial_states: Vec<Vec<f64>>,
    #[serde(default)]
    pub random_initial_states: Option<RandomStates>,
    #[serde(default)]
    pub grids: Vec<GridSection>,
    #[serde(default)]
    pub region_scan: Option<RegionScan>,
    #[serde(default)]
    pub output_dir: Option<String>,
    #[serde(default)]
    pub seed: u64,
}

/// Constants of the bump example kept apart on purpose: `Λ` vanishes from
/// `lambda_cutoff` on, while the WCLF excluded set starts at `wclf_infeasible_x1`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BumpSection {
    #[serde(default)]
    pub lambda_cutoff: Option<f64>,
    #[serde(default)]
    pub wclf_infeasible_x1: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BarrierSection {
    #[serde(default)]
    pub kind: Option<String>,
    #[serde(default)]
    pub delta: Option<f64>,
    #[serde(default)]
    pub gamma: Option<f64>,
    #[serde(default)]
    pub active_tol: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerSection {
    #[serde(default)]
    pub kind: Option<String>,
    #[serde(default)]
    pub epsilon: Option<f64>,
    #[serde(default)]
    pub alpha0: Option<f64>,
    #[serde(default)]
    pub c_bar: Option<f64>,
    #[serde(default)]
    pub lambda: Option<f64>,
    #[serde(default)]
    pub hysteresis: Option<f64>,
    #[serde(default)]
    pub w_scale: Option<f64>,
    /// Heading weight of the unicycle WCLF.
    #[serde(default)]
    pub b: Option<f64>,
    #[serde(default)]
    pub on_incompatible: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    #[serde(default)]
    pub dt: Option<f64>,
    #[serde(default)]
    pub horizon: Option<f64>,
    #[serde(default)]
    pub origin_tol: Option<f64>,
    #[serde(default)]
    pub record_every: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomStates {
    pub count: usize,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    #[serde(default)]
    pub region: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    #[serde(default)]
    pub name: Option<String>,
    pub check: String,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub resolution: Vec<usize>,
    #[serde(default)]
    pub boundary_band: Option<f64>,
    #[serde(default)]
    pub c_bar: Option<f64>,
    #[serde(default)]
    pub level_step: Option<f64>,
    #[serde(default)]
    pub u_bound: Option<f64>,
    #[serde(default)]
    pub estimate_alpha0: Option<bool>,
}

/// 2-D slice through state space labeled for plotting; coordinates beyond the
/// first two are fixed to `slice`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionScan {
    pub lower: [f64; 2],
    pub upper: [f64; 2],
    pub resolution: [usize; 2],
    #[serde(default)]
    pub slice: Vec<f64>,
    #[serde(default)]
    pub u_bound: Option<f64>,
}

/// Source text kept for line lookups in error messages.
#[derive(Debug, Clone, Default)]
pub struct Source {
    pub origin: String,
    pub text: String,
}

impl Source {
    /// Line of the key at dot path `path` (array indices skipped), if present.
    pub fn line_of(&self, path: &str) -> Option<usize> {
        let mut pos = 0;
        for seg in path.split('.').filter(|s| s.parse::<usize>().is_err()) {
            pos += self.text[pos..].find(&format!("\"{seg}\""))?;
        }
        Some(self.text[..pos].matches('\n').count() + 1)
    }

    pub fn error(&self, path: &str, msg: impl std::fmt::Display) -> CliError {
        match self.line_of(path) {
            Some(line) => CliError::Config(format!("{}:{line}: {path}: {msg}", self.origin)),
            None => CliError::Config(format!("{}: {path}: {msg}", self.origin)),
        }
    }
}

/// Reads `path`, applies `overrides` (`key.path=value`) and fills defaults.
pub fn load(
    path: &Path,
    overrides: &[(String, String)],
) -> Result<(ExperimentConfig, Source), CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let src = Source {
        origin: path.display().to_string(),
        text,
    };
    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("experiment")
        .to_string();
    let cfg = parse(&src, overrides)?;
    let cfg = cfg.resolve(&stem, &src)?;
    Ok((cfg, src))
}

pub fn parse(src: &Source, overrides: &[(String, String)]) -> Result<ExperimentConfig, CliError> {
    // Parsing the untouched text first keeps serde's line/column positions.
    let parsed: ExperimentConfig = serde_json::from_str(&src.text)
        .map_err(|e| CliError::Config(format!("{}: {e}", src.origin)))?;
    if overrides.is_empty() {
        return Ok(parsed);
    }
    let mut value = serde_json::to_value(&parsed).expect("config serializes");
    for (key, raw) in overrides {
        apply_override(&mut value, key, raw)?;
    }
    serde_json::from_value(value)
        .map_err(|e| CliError::Config(format!("{} after overrides: {e}", src.origin)))
}

/// Sets the dot path `key` in `root` to `raw`, read as JSON when it parses
/// and as a string otherwise. Missing objects along the way are created.
pub fn apply_override(root: &mut Value, key: &str, raw: &str) -> Result<(), CliError> {
    let bad = |msg: String| CliError::Config(format!("override --{key}={raw}: {msg}"));
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(bad("empty path segment".into()));
    }
    let new = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut cur = root;
    for seg in key.split('.') {
        if cur.is_null() {
            *cur = Value::Object(Default::default());
        }
        cur = match cur {
            Value::Object(map) => map.entry(seg.to_string()).or_insert(Value::Null),
            Value::Array(items) => {
                let i: usize = seg
                    .parse()
                    .map_err(|_| bad(format!("`{seg}` is not an array index")))?;
                let len = items.len();
                items
                    .get_mut(i)
                    .ok_or_else(|| bad(format!("index {i} out of range (length {len})")))?
            }
            _ => return Err(bad(format!("`{seg}` descends into a scalar"))),
        };
    }
    *cur = new;
    Ok(())
}

fn one_of(src: &Source, path: &str, value: &str, allowed: &[&str]) -> Result<(), CliError> {
    if allowed.contains(&value) {
        Ok(())
    } else {
        Err(src.error(
            path,
            format!("unknown value `{value}`, expected one of {allowed:?}"),
        ))
    }
}

fn positive(src: &Source, path: &str, v: f64) -> Result<(), CliError> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(src.error(path, format!("must be positive and finite, got {v}")))
    }
}

fn nonnegative(src: &Source, path: &str, v: f64) -> Result<(), CliError> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(src.error(path, format!("must be non-negative and finite, got {v}")))
    }
}

struct SystemDefaults {
    dim: usize,
    barrier: &'static str,
    gamma: f64,
    delta: Option<f64>,
    epsilon: f64,
    alpha0: f64,
    w_scale: f64,
    b: Option<f64>,
    c_bar: f64,
    scan: RegionScan,
}

fn defaults_for(system: &str) -> SystemDefaults {
    use barrier_stab_core::benchmarks::{BumpParams, UnicycleParams};
    if system == "bump" {
        let p = BumpParams::default();
        SystemDefaults {
            dim: 2,
            barrier: "bump_half_plane",
            gamma: p.gamma.expect("default truncation"),
            delta: None,
            epsilon: p.epsilon,
            alpha0: p.alpha0,
            w_scale: p.w_scale,
            b: None,
            c_bar: 0.0,
            scan: RegionScan {
                lower: [-4.5, -4.5],
                upper: [4.5, 4.5],
                resolution: [181, 181],
                slice: Vec::new(),
                u_bound: None,
            },
        }
    } else {
        let p = UnicycleParams::default();
        SystemDefaults {
            dim: 3,
            barrier: "unicycle_heading_disk",
            gamma: p.gamma.expect("default truncation"),
            delta: Some(p.delta),
            epsilon: p.epsilon,
            alpha0: p.alpha0,
            w_scale: p.w_scale,
            b: Some(p.b),
            c_bar: p.c_bar(),
            scan: RegionScan {
                lower: [-3.0, -3.0],
                upper: [3.0, 3.0],
                resolution: [121, 121],
                slice: vec![0.0],
                u_bound: None,
            },
        }
    }
}

impl ExperimentConfig {
    pub fn state_dim(&self) -> usize {
        defaults_for(&self.system).dim
    }

    /// Fills every defaulted field and validates names, ranges and dimensions.
    pub fn resolve(mut self, fallback_name: &str, src: &Source) -> Result<Self, CliError> {
        one_of(src, "system", &self.system, &SYSTEMS)?;
        let d = defaults_for(&self.system);
        let bump = self.system == "bump";

        let name = self
            .name
            .get_or_insert_with(|| fallback_name.to_string())
            .clone();
        if name.is_empty() || name.contains(['/', '\\']) {
            return Err(src.error("name", "must be a non-empty plain file name"));
        }
        self.output_dir.get_or_insert_with(|| format!("out/{name}"));

        if bump {
            let s = self.bump.get_or_insert_with(Default::default);
            let cutoff = *s
                .lambda_cutoff
                .get_or_insert(barrier_stab_core::dynamics::BUMP_CUTOFF);
            let x1 = *s
                .wclf_infeasible_x1
                .get_or_insert(barrier_stab_core::benchmarks::BUMP_INFEASIBLE_X1);
            positive(src, "bump.lambda_cutoff", cutoff)?;
            positive(src, "bump.wclf_infeasible_x1", x1)?;
        } else if self.bump.is_some() {
            return Err(src.error("bump", "only valid for system `bump`"));
        }

        let b = &mut self.barrier;
        let kind = b.kind.get_or_insert_with(|| d.barrier.to_string()).clone();
        one_of(src, "barrier.kind", &kind, &[d.barrier])?;
        positive(src, "barrier.gamma", *b.gamma.get_or_insert(d.gamma))?;
        nonnegative(
            src,
            "barrier.active_tol",
            *b.active_tol
                .get_or_insert(barrier_stab_core::certificates::DEFAULT_ACTIVE_TOL),
        )?;
        match d.delta {
            Some(delta) => positive(src, "barrier.delta", *b.delta.get_or_insert(delta))?,
            None if b.delta.is_some() => {
                return Err(src.error("barrier.delta", "only valid for system `unicycle`"))
            }
            None => {}
        }

        let c = &mut self.controller;
        let kind = c.kind.get_or_insert_with(|| "switching".into()).clone();
        one_of(src, "controller.kind", &kind, &CONTROLLERS)?;
        positive(
            src,
            "controller.epsilon",
            *c.epsilon.get_or_insert(d.epsilon),
        )?;
        positive(src, "controller.alpha0", *c.alpha0.get_or_insert(d.alpha0))?;
        nonnegative(src, "controller.c_bar", *c.c_bar.get_or_insert(d.c_bar))?;
        positive(src, "controller.lambda", *c.lambda.get_or_insert(100.0))?;
        nonnegative(
            src,
            "controller.hysteresis",
            *c.hysteresis
                .get_or_insert(barrier_stab_core::controllers::DEFAULT_HYSTERESIS),
        )?;
        positive(
            src,
            "controller.w_scale",
            *c.w_scale.get_or_insert(d.w_scale),
        )?;
        match d.b {
            Some(b) => positive(src, "controller.b", *c.b.get_or_insert(b))?,
            None if c.b.is_some() => {
                return Err(src.error("controller.b", "only valid for system `unicycle`"))
            }
            None => {}
        }
        let policy = c
            .on_incompatible
            .get_or_insert_with(|| "fallback_to_u2".into())
            .clone();
        one_of(
            src,
            "controller.on_incompatible",
            &policy,
            &INCOMPATIBLE_POLICIES,
        )?;

        let s = &mut self.sim;
        let base = barrier_stab_core::SimConfig::default();
        s.dt.get_or_insert(base.dt);
        s.horizon.get_or_insert(base.horizon);
        s.origin_tol.get_or_insert(base.origin_tol);
        s.record_every.get_or_insert(base.record_every);
        self.sim_config()
            .validate()
            .map_err(|e| src.error("sim", e))?;

        for (i, x) in self.initial_states.iter().enumerate() {
            let path = format!("initial_states.{i}");
            if x.len() != d.dim {
                return Err(src.error(
                    &path,
                    format!("expected {} coordinates, got {}", d.dim, x.len()),
                ));
            }
            if x.iter().any(|v| !v.is_finite()) {
                return Err(src.error(&path, "coordinates must be finite"));
            }
        }
        if let Some(r) = &mut self.random_initial_states {
            let region = r.region.get_or_insert_with(|| "any".into()).clone();
            one_of(
                src,
                "random_initial_states.region",
                &region,
                &SAMPLE_REGIONS,
            )?;
            check_box(src, "random_initial_states", &r.lower, &r.upper, d.dim)?;
        }

        let c_bar = self.controller.c_bar.expect("filled above");
        for (i, g) in self.grids.iter_mut().enumerate() {
            let path = format!("grids.{i}");
            one_of(src, &format!("{path}.check"), &g.check, &GRID_CHECKS)?;
            let name = g
                .name
                .get_or_insert_with(|| format!("grid{i}_{}", g.check))
                .clone();
            if name.is_empty() || name.contains(['/', '\\']) {
                return Err(src.error(
                    &format!("{path}.name"),
                    "must be a non-empty plain file name",
                ));
            }
            check_box(src, &path, &g.lower, &g.upper, d.dim)?;
            if g.resolution.len() != d.dim || g.resolution.contains(&0) {
                return Err(src.error(
                    &format!("{path}.resolution"),
                    format!("expected {} positive counts", d.dim),
                ));
            }
            nonnegative(
                src,
                &format!("{path}.boundary_band"),
                *g.boundary_band.get_or_insert(0.05),
            )?;
            nonnegative(src, &format!("{path}.c_bar"), *g.c_bar.get_or_insert(c_bar))?;
            positive(
                src,
                &format!("{path}.level_step"),
                *g.level_step.get_or_insert(0.01),
            )?;
            positive(
                src,
                &format!("{path}.u_bound"),
                *g.u_bound
                    .get_or_insert(barrier_stab_core::verifier::DEFAULT_VERIFY_U_BOUND),
            )?;
            let alpha = *g.estimate_alpha0.get_or_insert(false);
            if alpha && (bump || g.check != "compatibility") {
                return Err(src.error(
                    &format!("{path}.estimate_alpha0"),
                    "only available for unicycle compatibility grids",
                ));
            }
        }
        let mut names: Vec<&String> = self.grids.iter().filter_map(|g| g.name.as_ref()).collect();
        names.sort();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(src.error("grids", "grid names must be unique"));
        }

        let scan = self.region_scan.get_or_insert(d.scan);
        if scan.slice.len() != d.dim - 2 {
            return Err(src.error(
                "region_scan.slice",
                format!("expected {} values", d.dim - 2),
            ));
        }
        check_box(src, "region_scan", &scan.lower, &scan.upper, 2)?;
        if scan.resolution.contains(&0) {
            return Err(src.error("region_scan.resolution", "counts must be positive"));
        }
        positive(
            src,
            "region_scan.u_bound",
            *scan
                .u_bound
                .get_or_insert(barrier_stab_core::verifier::DEFAULT_VERIFY_U_BOUND),
        )?;
        Ok(self)
    }

    /// Simulation settings; only valid after [`ExperimentConfig::resolve`].
    pub fn sim_config(&self) -> barrier_stab_core::SimConfig {
        let s = &self.sim;
        barrier_stab_core::SimConfig {
            dt: s.dt.expect("resolved"),
            horizon: s.horizon.expect("resolved"),
            origin_tol: s.origin_tol.expect("resolved"),
            record_every: s.record_every.expect("resolved"),
        }
    }

    pub fn to_pretty_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }
}

fn check_box(
    src: &Source,
    path: &str,
    lower: &[f64],
    upper: &[f64],
    dim: usize,
) -> Result<(), CliError> {
    if lower.len() != dim || upper.len() != dim {
        return Err(src.error(
            &format!("{path}.lower"),
            format!("bounds need {dim} coordinates"),
        ));
    }
    if lower
        .iter()
        .zip(upper)
        .any(|(l, u)| !(l.is_finite() && u.is_finite() && l < u))
    {
        return Err(src.error(
            &format!("{path}.lower"),
            "need finite bounds with lower < upper",
        ));
    }
    Ok(())
}
