//! Flat, typed key-value run configuration with section headers.
//!
//! Unknown keys are errors: silently ignoring a misspelled physics constant is
//! how wrong science gets published.

use abf::model::PotentialTable;
use abf::{BiChannelSystem, Exclusion, Grid, InitialCondition, PotentialSpec};
use anyhow::{anyhow, bail, Context, Result};
use std::collections::BTreeMap;
use std::path::Path;

#[derive(Debug, Clone, PartialEq)]
pub enum RunMode {
    Pde,
    Sde,
    Both,
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub name: String,
    // potential + model
    pub family: String,
    pub amplitude: f64,
    pub separation: f64,
    pub width: f64,
    pub exclusion: Vec<(f64, f64)>,
    pub table_paths: Option<(String, String)>,
    pub lambda: f64,
    // grid
    pub n_x: usize,
    pub n_y: usize,
    pub l: Option<f64>,
    // run
    pub mode: RunMode,
    pub t_end: f64,
    pub dt: Option<f64>,
    pub record_every: usize,
    pub snapshot_every: usize,
    // initial
    pub init: InitialCondition,
    // sde
    pub n_walkers: usize,
    pub sde_dt: f64,
    pub n_bins: usize,
    pub n_min: u64,
    pub n_ramp: u64,
    pub seed: u64,
    pub apply_bias: bool,
    pub sde_record_every: usize,
    // diagnostics
    pub fit_window_fraction: f64,
    // spectral
    pub epsilon_fraction: f64,
    pub beta_scan: Option<(f64, f64, usize)>,
    // output
    pub out_dir: String,
}

impl RunConfig {
    pub fn system(&self) -> Result<BiChannelSystem> {
        let exclusion = if self.exclusion.is_empty() {
            Exclusion::empty()
        } else {
            Exclusion::from_arcs(self.exclusion.clone())
        };
        let spec = match self.family.as_str() {
            "gaussian-channel" => PotentialSpec::GaussianChannel {
                amplitude: self.amplitude,
                separation: self.separation,
                width: self.width,
                exclusion,
            },
            "tabulated" => {
                let (p0, p1) = self
                    .table_paths
                    .as_ref()
                    .ok_or_else(|| anyhow!("tabulated potential needs table0/table1 paths"))?;
                PotentialSpec::Tabulated {
                    table0: PotentialTable::read(p0).context("reading table0")?,
                    table1: PotentialTable::read(p1).context("reading table1")?,
                    exclusion,
                }
            }
            other => bail!("unknown potential family {other:?}"),
        };
        Ok(BiChannelSystem::new(spec, self.lambda)?)
    }

    pub fn grid(&self, system: &BiChannelSystem) -> Result<Grid> {
        let l = self.l.unwrap_or_else(|| system.default_l());
        Ok(Grid::new(self.n_x, self.n_y, l)?)
    }

    /// Is this the constant-switching scenario (empty exclusion)?
    pub fn remark2_mode(&self) -> bool {
        self.exclusion.is_empty()
    }
}

/// Named presets; the acceptance suite is one `run` per preset.
pub fn preset(name: &str) -> Result<RunConfig> {
    let base = RunConfig {
        name: name.to_string(),
        family: "gaussian-channel".into(),
        amplitude: 0.5,
        separation: 2.0,
        width: 1.0,
        exclusion: vec![(0.25, 0.75)],
        table_paths: None,
        lambda: 5.0,
        n_x: 128,
        n_y: 128,
        l: None,
        mode: RunMode::Pde,
        t_end: 7.5,
        dt: None,
        record_every: 1300,
        snapshot_every: 0,
        init: InitialCondition::Channel0Bump {
            center: 0.0,
            y_offset: 0.0,
        },
        n_walkers: 50_000,
        sde_dt: 1e-3,
        n_bins: 64,
        n_min: 10,
        n_ramp: 100,
        seed: 42,
        apply_bias: true,
        sde_record_every: 200,
        fit_window_fraction: 0.5,
        epsilon_fraction: 0.05,
        beta_scan: None,
        out_dir: "out".into(),
    };
    match name {
        "bichannel-default" => Ok(base),
        "remark2-lambda" => Ok(RunConfig {
            amplitude: 0.25,
            separation: 0.0,
            exclusion: vec![],
            lambda: 1.0,
            n_x: 64,
            n_y: 64,
            t_end: 7.0,
            record_every: 320,
            init: InitialCondition::Channel0Bump {
                center: 0.0,
                y_offset: 0.5,
            },
            ..base
        }),
        "heat-only" => Ok(RunConfig {
            amplitude: 0.0,
            separation: 0.0,
            lambda: 0.0,
            n_x: 256,
            n_y: 8,
            l: Some(6.5),
            t_end: 0.1,
            record_every: 160,
            init: InitialCondition::Cosine { amplitude: 0.5 },
            ..base
        }),
        "doublewell-lsi" => Ok(RunConfig {
            // the beta scan of the double-well conditional; no PDE run
            beta_scan: Some((4.0, 10.0, 7)),
            t_end: 0.0,
            ..base
        }),
        other => bail!(
            "unknown preset {other:?} (available: bichannel-default, remark2-lambda, \
             heat-only, doublewell-lsi)"
        ),
    }
}

/// Parses the configuration file format. Every key must be consumed.
pub fn parse_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    let mut sections: BTreeMap<String, Vec<(String, String)>> = BTreeMap::new();
    let mut current = String::from("");
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
            current = name.trim().to_string();
            sections.entry(current.clone()).or_default();
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| anyhow!("line {}: expected `key = value`, got {raw:?}", lineno + 1))?;
        sections
            .entry(current.clone())
            .or_default()
            .push((key.trim().to_string(), value.trim().to_string()));
    }

    let mut cfg = preset("bichannel-default")?;
    cfg.name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "config".into());

    let known_sections = [
        "potential",
        "model",
        "grid",
        "run",
        "initial",
        "sde",
        "diagnostics",
        "spectral",
        "output",
    ];
    for section in sections.keys() {
        if !section.is_empty() && !known_sections.contains(&section.as_str()) {
            bail!("unknown section [{section}]");
        }
    }

    let mut init_kind: Option<String> = None;
    let mut init_vals: BTreeMap<String, f64> = BTreeMap::new();

    for (section, pairs) in &sections {
        for (key, value) in pairs {
            let full = format!("[{section}] {key}");
            let fv = || -> Result<f64> {
                value
                    .parse::<f64>()
                    .map_err(|e| anyhow!("{full}: bad number {value:?}: {e}"))
            };
            let uv = || -> Result<usize> {
                value
                    .parse::<usize>()
                    .map_err(|e| anyhow!("{full}: bad integer {value:?}: {e}"))
            };
            match (section.as_str(), key.as_str()) {
                ("potential", "family") => cfg.family = value.clone(),
                ("potential", "amplitude") => cfg.amplitude = fv()?,
                ("potential", "separation") => cfg.separation = fv()?,
                ("potential", "width") => cfg.width = fv()?,
                ("potential", "exclusion") => {
                    cfg.exclusion = parse_arcs(value).with_context(|| full.clone())?
                }
                ("potential", "table0") => {
                    let (_, p1) = cfg.table_paths.clone().unwrap_or_default();
                    cfg.table_paths = Some((value.clone(), p1));
                }
                ("potential", "table1") => {
                    let (p0, _) = cfg.table_paths.clone().unwrap_or_default();
                    cfg.table_paths = Some((p0, value.clone()));
                }
                ("model", "lambda") => cfg.lambda = fv()?,
                ("grid", "n_x") => cfg.n_x = uv()?,
                ("grid", "n_y") => cfg.n_y = uv()?,
                ("grid", "l") => {
                    cfg.l = if value == "auto" { None } else { Some(fv()?) }
                }
                ("run", "mode") => {
                    cfg.mode = match value.as_str() {
                        "pde" => RunMode::Pde,
                        "sde" => RunMode::Sde,
                        "both" => RunMode::Both,
                        other => bail!("{full}: unknown mode {other:?}"),
                    }
                }
                ("run", "t_end") => cfg.t_end = fv()?,
                ("run", "dt") => cfg.dt = if value == "auto" { None } else { Some(fv()?) },
                ("run", "record_every") => cfg.record_every = uv()?,
                ("run", "snapshot_every") => cfg.snapshot_every = uv()?,
                ("initial", "kind") => init_kind = Some(value.clone()),
                ("initial", k @ ("center" | "y_offset" | "amplitude" | "x0" | "x1" | "y0"
                    | "y1" | "channel")) => {
                    init_vals.insert(k.to_string(), fv()?);
                }
                ("sde", "n_walkers") => cfg.n_walkers = uv()?,
                ("sde", "dt") => cfg.sde_dt = fv()?,
                ("sde", "n_bins") => cfg.n_bins = uv()?,
                ("sde", "n_min") => cfg.n_min = uv()? as u64,
                ("sde", "n_ramp") => cfg.n_ramp = uv()? as u64,
                ("sde", "seed") => {
                    cfg.seed = value
                        .parse::<u64>()
                        .map_err(|e| anyhow!("{full}: bad seed {value:?}: {e}"))?
                }
                ("sde", "apply_bias") => {
                    cfg.apply_bias = value
                        .parse::<bool>()
                        .map_err(|e| anyhow!("{full}: bad bool {value:?}: {e}"))?
                }
                ("sde", "record_every") => cfg.sde_record_every = uv()?,
                ("diagnostics", "fit_window_fraction") => cfg.fit_window_fraction = fv()?,
                ("spectral", "epsilon_fraction") => cfg.epsilon_fraction = fv()?,
                ("spectral", "beta_scan") => {
                    cfg.beta_scan = Some(parse_scan(value).with_context(|| full.clone())?)
                }
                ("output", "dir") => cfg.out_dir = value.clone(),
                _ => bail!("unknown key {full}"),
            }
        }
    }

    if let Some(kind) = init_kind {
        let get = |k: &str, default: f64| init_vals.get(k).copied().unwrap_or(default);
        cfg.init = match kind.as_str() {
            "stationary" => InitialCondition::Stationary,
            "channel0-bump" => InitialCondition::Channel0Bump {
                center: get("center", 0.0),
                y_offset: get("y_offset", 0.0),
            },
            "cosine" => InitialCondition::Cosine {
                amplitude: get("amplitude", 0.5),
            },
            "box" => InitialCondition::Box {
                x0: get("x0", 0.4),
                x1: get("x1", 0.6),
                y0: get("y0", -1.0),
                y1: get("y1", 1.0),
                channel: get("channel", 0.0) as usize,
            },
            "shifted-stationary" => InitialCondition::ShiftedStationary {
                y_offset: get("y_offset", 0.5),
                x_amplitude: get("amplitude", 0.0),
            },
            other => bail!("unknown initial kind {other:?}"),
        };
    }
    Ok(cfg)
}

fn parse_arcs(value: &str) -> Result<Vec<(f64, f64)>> {
    if value == "empty" {
        return Ok(vec![]);
    }
    value
        .split(',')
        .map(|arc| {
            let (a, b) = arc
                .trim()
                .split_once(':')
                .ok_or_else(|| anyhow!("expected a:b arcs, got {arc:?}"))?;
            Ok((a.trim().parse::<f64>()?, b.trim().parse::<f64>()?))
        })
        .collect()
}

fn parse_scan(value: &str) -> Result<(f64, f64, usize)> {
    let parts: Vec<&str> = value.split(':').collect();
    if parts.len() != 3 {
        bail!("expected start:end:count, got {value:?}");
    }
    Ok((
        parts[0].trim().parse()?,
        parts[1].trim().parse()?,
        parts[2].trim().parse()?,
    ))
}
