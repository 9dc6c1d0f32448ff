//! Run configuration: one TOML document per experiment.

use std::path::Path;

use pe_decomp::decomp::ConditionCOptions;
use pe_decomp::{Axis, CoordinateMode, GameDefinition, GameSpec, SolveParams, StateBox};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

const BUNDLED: [(&str, &str); 3] = [
    ("example1", include_str!("../configs/example1.toml")),
    ("test1", include_str!("../configs/test1.toml")),
    ("test2", include_str!("../configs/test2.toml")),
];

pub fn bundled_names() -> Vec<&'static str> {
    BUNDLED.iter().map(|(n, _)| *n).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub counts: Vec<usize>,
}

impl GridSpec {
    pub fn axes(&self) -> Result<Vec<Axis>, CliError> {
        if self.lower.len() != self.upper.len() || self.lower.len() != self.counts.len() {
            return Err(CliError::Config(
                "grid lower, upper and counts must have the same length".into(),
            ));
        }
        Ok(self
            .lower
            .iter()
            .zip(&self.upper)
            .zip(&self.counts)
            .map(|((lo, hi), n)| Axis::new(*lo, *hi, *n))
            .collect())
    }

    fn concat(parts: &[&GridSpec]) -> GridSpec {
        GridSpec {
            lower: parts.iter().flat_map(|g| g.lower.clone()).collect(),
            upper: parts.iter().flat_map(|g| g.upper.clone()).collect(),
            counts: parts.iter().flat_map(|g| g.counts.clone()).collect(),
        }
    }

    pub fn bounds(&self) -> StateBox {
        StateBox::new(self.lower.clone(), self.upper.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolveSection {
    /// One grid per sub-game, or a single grid shared by all of them.
    pub sub_grids: Vec<GridSpec>,
    /// Grid for the direct solve; derived from the sub-grids when omitted.
    pub full_grid: Option<GridSpec>,
    pub params: SolveParams,
}

impl Default for SolveSection {
    fn default() -> Self {
        SolveSection {
            sub_grids: Vec::new(),
            full_grid: None,
            params: SolveParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecomposeSection {
    pub condition_c: ConditionCOptions,
    pub delta: Option<f64>,
}

impl Default for DecomposeSection {
    fn default() -> Self {
        DecomposeSection {
            condition_c: ConditionCOptions::default(),
            delta: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CheckSection {
    pub hypothesis_samples: usize,
    /// Box for the pursuer-advantage check; the full grid box by default.
    pub region: Option<GridBox>,
}

impl Default for CheckSection {
    fn default() -> Self {
        CheckSection {
            hypothesis_samples: pe_decomp::model::DEFAULT_HYPOTHESIS_SAMPLES,
            region: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridBox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Play {
    Optimal,
    Frozen,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ValueChoice {
    Envelope,
    Direct,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateSection {
    pub starts: Vec<Vec<f64>>,
    pub dt: f64,
    /// Defaults to three times the predicted capture time, within [1, 100].
    pub horizon: Option<f64>,
    pub pursuers: Play,
    pub evader: Play,
    /// 1-based pursuers held still.
    pub idle_pursuers: Vec<usize>,
    pub value: ValueChoice,
}

impl Default for SimulateSection {
    fn default() -> Self {
        SimulateSection {
            starts: Vec::new(),
            dt: 1e-3,
            horizon: None,
            pursuers: Play::Optimal,
            evader: Play::Optimal,
            idle_pursuers: Vec::new(),
            value: ValueChoice::Envelope,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LevelSetSection {
    /// 1-based state coordinates spanning the slice.
    pub axes: [usize; 2],
    /// Full state supplying the coordinates off the slice.
    pub fixed: Option<Vec<f64>>,
    pub levels: Vec<f64>,
    pub resolution: usize,
    /// Slice window; the envelope's domain by default.
    pub window: Option<GridBox>,
}

impl Default for LevelSetSection {
    fn default() -> Self {
        LevelSetSection {
            axes: [1, 2],
            fixed: None,
            levels: vec![0.2, 0.4, 0.6, 0.8, 0.9],
            resolution: 151,
            window: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: String,
    pub grid_dumps: bool,
    pub trajectories: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            dir: "out".into(),
            grid_dumps: true,
            trajectories: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub game: GameDefinition,
    #[serde(default)]
    pub solve: SolveSection,
    #[serde(default)]
    pub decompose: DecomposeSection,
    #[serde(default)]
    pub check: CheckSection,
    #[serde(default)]
    pub simulate: SimulateSection,
    #[serde(default)]
    pub levelsets: LevelSetSection,
    #[serde(default)]
    pub output: OutputSection,
}

/// Reads a config file, or a bundled config by name when no such file
/// exists.
pub fn load(arg: &str) -> Result<RunConfig, CliError> {
    let text = if Path::new(arg).exists() {
        std::fs::read_to_string(arg).map_err(|e| CliError::Io(format!("{arg}: {e}")))?
    } else if let Some((_, text)) = BUNDLED.iter().find(|(n, _)| *n == arg) {
        text.to_string()
    } else {
        return Err(CliError::Config(format!(
            "no config file {arg:?} and no bundled config of that name (bundled: {})",
            bundled_names().join(", ")
        )));
    };
    parse(&text)
}

pub fn parse(text: &str) -> Result<RunConfig, CliError> {
    toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
}

/// A validated configuration with derived grids filled in.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub config: RunConfig,
    pub spec: GameSpec,
}

impl Resolved {
    pub fn new(mut config: RunConfig) -> Result<Self, CliError> {
        let spec = GameSpec::new(config.game.clone()).map_err(|e| CliError::Config(e.to_string()))?;
        let (m, n) = (spec.pursuers(), spec.space_dim());
        let sub_dim = match spec.mode() {
            CoordinateMode::Relative => n,
            CoordinateMode::Absolute => 2 * n,
        };
        let grids = &config.solve.sub_grids;
        if grids.is_empty() {
            return Err(CliError::Config("solve.sub_grids must list at least one grid".into()));
        }
        if grids.len() != 1 && grids.len() != m {
            return Err(CliError::Config(format!(
                "solve.sub_grids has {} entries; expected 1 or {m}",
                grids.len()
            )));
        }
        for g in grids {
            if g.axes()?.len() != sub_dim {
                return Err(CliError::Config(format!("each sub-grid needs {sub_dim} axes")));
            }
        }
        if config.solve.full_grid.is_none() {
            let sub = |i: usize| &grids[if grids.len() == 1 { 0 } else { i }];
            let full = match spec.mode() {
                CoordinateMode::Relative => GridSpec::concat(&(0..m).map(sub).collect::<Vec<_>>()),
                CoordinateMode::Absolute => {
                    // pursuer halves of each sub-grid, then the evader half of the first
                    let mut parts: Vec<GridSpec> = (0..m)
                        .map(|i| {
                            let g = sub(i);
                            GridSpec {
                                lower: g.lower[..n].to_vec(),
                                upper: g.upper[..n].to_vec(),
                                counts: g.counts[..n].to_vec(),
                            }
                        })
                        .collect();
                    let g = sub(0);
                    parts.push(GridSpec {
                        lower: g.lower[n..].to_vec(),
                        upper: g.upper[n..].to_vec(),
                        counts: g.counts[n..].to_vec(),
                    });
                    GridSpec::concat(&parts.iter().collect::<Vec<_>>())
                }
            };
            config.solve.full_grid = Some(full);
        }
        let d = spec.state_dim();
        if config.solve.full_grid.as_ref().expect("filled above").axes()?.len() != d {
            return Err(CliError::Config(format!("solve.full_grid needs {d} axes")));
        }
        for (k, s) in config.simulate.starts.iter().enumerate() {
            if s.len() != d {
                return Err(CliError::Config(format!(
                    "simulate.starts[{k}] has {} coordinates; the state has {d}",
                    s.len()
                )));
            }
        }
        if !(config.simulate.dt > 0.0) {
            return Err(CliError::Config("simulate.dt must be positive".into()));
        }
        if let Some(&bad) = config.simulate.idle_pursuers.iter().find(|&&i| i == 0 || i > m) {
            return Err(CliError::Config(format!("simulate.idle_pursuers: no pursuer {bad}")));
        }
        let ls = &config.levelsets;
        if ls.axes.iter().any(|&a| a == 0 || a > d) || ls.axes[0] == ls.axes[1] {
            return Err(CliError::Config(format!(
                "levelsets.axes must be two distinct coordinates in 1..={d}"
            )));
        }
        if ls.fixed.as_ref().is_some_and(|f| f.len() != d) {
            return Err(CliError::Config(format!("levelsets.fixed needs {d} coordinates")));
        }
        if ls.resolution < 2 {
            return Err(CliError::Config("levelsets.resolution must be at least 2".into()));
        }
        if let Some(r) = &config.check.region {
            if r.lower.len() != d || r.upper.len() != d {
                return Err(CliError::Config(format!("check.region needs {d} coordinates")));
            }
        }
        Ok(Resolved { config, spec })
    }

    pub fn full_grid(&self) -> &GridSpec {
        self.config.solve.full_grid.as_ref().expect("resolved")
    }

    pub fn check_region(&self) -> StateBox {
        match &self.config.check.region {
            Some(r) => StateBox::new(r.lower.clone(), r.upper.clone()),
            None => self.full_grid().bounds(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_configs_resolve() {
        for name in bundled_names() {
            let r = Resolved::new(load(name).unwrap()).unwrap();
            assert!(r.full_grid().axes().unwrap().len() == r.spec.state_dim(), "{name}");
        }
    }

    #[test]
    fn derived_full_grid() {
        let r = Resolved::new(load("test1").unwrap()).unwrap();
        assert_eq!(r.full_grid().counts, vec![501; 5]);
        let r = Resolved::new(load("test2").unwrap()).unwrap();
        assert_eq!(r.full_grid().counts.len(), 8);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = load_text("example1") + "\n[output]\ncolour = \"red\"\n";
        assert!(matches!(parse(&text), Err(CliError::Config(_))));
        let text = load_text("example1").replace("[game]", "[game]\nspeed = 3");
        assert!(matches!(parse(&text), Err(CliError::Config(_))));
    }

    #[test]
    fn bad_start_dimension() {
        let mut c = load("example1").unwrap();
        c.simulate.starts = vec![vec![1.0]];
        assert!(matches!(Resolved::new(c), Err(CliError::Config(_))));
    }

    #[test]
    fn missing_config() {
        assert!(matches!(load("no-such-config"), Err(CliError::Config(_))));
    }

    fn load_text(name: &str) -> String {
        BUNDLED.iter().find(|(n, _)| *n == name).unwrap().1.to_string()
    }
}
