//! Subcommand pipelines and artifact writing.

use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;

use pe_decomp::decomp::{
    decompose, solve_decomposed_with, DecomposeOptions, DecomposedSolution, EnvelopeValue,
};
use pe_decomp::model::check_hypothesis_h_seeded;
use pe_decomp::sim::{default_horizon, kruzhkov_inverse, simulate, SimParams, Termination};
use pe_decomp::solver::{check_budget, solve_within_budget, Solved};
use pe_decomp::strategy::{
    EvaderPolicy, FeedbackStrategy, FixedControls, IdlePursuers, PursuerPolicy, ValueSource,
};
use pe_decomp::{StateBox, TensorGrid, ValueField};
use serde::Serialize;
use serde_json::{json, Map, Value};

use crate::config::{Play, Resolved, ValueChoice};
use crate::contour::{write_polylines, Lattice};
use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    Check,
    Solve,
    Decompose,
    Simulate,
    Levelsets,
}

pub struct Options {
    pub out: PathBuf,
    pub budget: u128,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
}

/// Accumulates reports and writes the metadata document.
pub struct Run {
    pub command: Command,
    pub resolved: Resolved,
    pub opts: Options,
    reports: Map<String, Value>,
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("reports serialize")
}

impl Run {
    pub fn new(command: Command, mut resolved: Resolved, opts: Options) -> Self {
        if let Some(seed) = opts.seed {
            resolved.config.decompose.condition_c.seed = seed;
        }
        resolved.config.output.dir = opts.out.display().to_string();
        Run {
            command,
            resolved,
            opts,
            reports: Map::new(),
        }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.opts.out.join(name)
    }

    fn report(&mut self, key: &str, value: Value) {
        self.reports.insert(key.to_string(), value);
    }

    /// Writes `metadata.json`, recording `error` if the run failed.
    pub fn finish(&self, error: Option<&CliError>) -> Result<(), CliError> {
        std::fs::create_dir_all(&self.opts.out)?;
        let doc = json!({
            "version": env!("CARGO_PKG_VERSION"),
            "command": self.command,
            "config": to_value(&self.resolved.config),
            "options": {
                "budget": self.opts.budget.to_string(),
                "seed": self.opts.seed,
                "threads": self.opts.threads,
            },
            "reports": Value::Object(self.reports.clone()),
            "error": error.map(|e| json!({"kind": e.kind(), "exit_code": e.exit_code(), "message": e.message()})),
        });
        let file = File::create(self.path("metadata.json"))?;
        serde_json::to_writer_pretty(BufWriter::new(file), &doc).map_err(|e| CliError::Io(e.to_string()))?;
        Ok(())
    }

    pub fn execute(&mut self) -> Result<(), CliError> {
        std::fs::create_dir_all(&self.opts.out)?;
        match self.command {
            Command::Check => self.check(),
            Command::Solve => self.solve_direct().map(|_| ()),
            Command::Decompose => self.solve_envelope().map(|_| ()),
            Command::Simulate => self.simulate(),
            Command::Levelsets => self.levelsets(),
        }
    }

    fn check(&mut self) -> Result<(), CliError> {
        let spec = &self.resolved.spec;
        let cfg = &self.resolved.config;
        let region = self.resolved.check_region();
        let hyp = check_hypothesis_h_seeded(spec, &region, cfg.check.hypothesis_samples.max(1), self.opts.seed.unwrap_or(0))
            .map_err(|e| CliError::Other(e.to_string()))?;
        let decomposition = match decompose(spec) {
            Ok(subs) => json!({
                "decomposable": true,
                "subproblems": subs.iter().map(|s| json!({
                    "pursuer": s.index + 1,
                    "state_dim": s.spec.state_dim(),
                    "embedding": s.embedding.iter().map(|k| k + 1).collect::<Vec<_>>(),
                })).collect::<Vec<_>>(),
            }),
            Err(e) => json!({"decomposable": false, "reason": e.to_string()}),
        };
        let axes = self.resolved.full_grid().axes()?;
        let nodes = TensorGrid::count_nodes(&axes);
        let direct = json!({
            "nodes": nodes.to_string(),
            "within_budget": check_budget(&axes, self.opts.budget).is_ok(),
        });
        let passed = hyp.passed;
        let min_margin = hyp.min_margin;
        let decomposable = decomposition["decomposable"] == json!(true);
        let reason = decomposition["reason"].as_str().unwrap_or_default().to_string();
        self.report("hypothesis", to_value(&hyp));
        self.report("decomposition", decomposition);
        self.report("direct_solve", direct);
        if !passed {
            return Err(CliError::Hypothesis(format!(
                "pursuer-advantage check failed: minimum margin {min_margin:.6}"
            )));
        }
        if !decomposable {
            return Err(CliError::Decomposition(reason));
        }
        Ok(())
    }

    fn write_field(&self, name: &str, field: &ValueField) -> Result<(), CliError> {
        if self.resolved.config.output.grid_dumps {
            field.write_dump(BufWriter::new(File::create(self.path(name))?))?;
        }
        Ok(())
    }

    fn solve_direct(&mut self) -> Result<Solved, CliError> {
        let axes = self.resolved.full_grid().axes()?;
        let params = &self.resolved.config.solve.params;
        let solved = solve_within_budget(&self.resolved.spec, params, &axes, self.opts.budget)?;
        self.write_field("value_full.grid", &solved.field)?;
        self.report("solve", to_value(&solved.report));
        if !solved.report.converged {
            return Err(CliError::NotConverged(format!(
                "direct solve stopped after {} iterations with residual {:.3e}",
                solved.report.iterations, solved.report.residual
            )));
        }
        Ok(solved)
    }

    fn solve_envelope(&mut self) -> Result<DecomposedSolution, CliError> {
        let cfg = &self.resolved.config;
        let mut grids = Vec::new();
        for g in &cfg.solve.sub_grids {
            let axes = g.axes()?;
            check_budget(&axes, self.opts.budget)?;
            grids.push(TensorGrid::new(axes)?);
        }
        let opts = DecomposeOptions {
            condition_c: cfg.decompose.condition_c.clone(),
            delta: cfg.decompose.delta,
        };
        let dec = solve_decomposed_with(&self.resolved.spec, &cfg.solve.params, &grids, &opts)?;
        for (sub, part) in dec.subproblems.iter().zip(dec.envelope.parts()) {
            self.write_field(&format!("value_sub{}.grid", sub.index + 1), &part.field)?;
        }
        let subs: Vec<Value> = dec
            .subproblems
            .iter()
            .zip(&dec.reports)
            .map(|(s, r)| {
                json!({
                    "pursuer": s.index + 1,
                    "embedding": s.embedding.iter().map(|k| k + 1).collect::<Vec<_>>(),
                    "file": format!("value_sub{}.grid", s.index + 1),
                    "solve": to_value(r),
                })
            })
            .collect();
        self.report("subproblems", Value::Array(subs));
        self.report(
            "envelope",
            json!({"delta": dec.envelope.delta(), "bounds": to_value(&dec.envelope.bounds())}),
        );
        let mut cc = to_value(&dec.condition_c);
        if let Some(active) = cc.pointer_mut("/witness/active").and_then(Value::as_array_mut) {
            for k in active.iter_mut() {
                *k = json!(k.as_u64().unwrap_or(0) + 1);
            }
        }
        self.report("condition_c", cc);
        if !dec.condition_c.passed {
            eprintln!(
                "warning: sampled convexity condition violated at {} of {} multi-active points (worst {:.3e}); see metadata",
                dec.condition_c.violations, dec.condition_c.multi_active_points, dec.condition_c.worst_violation
            );
        }
        Ok(dec)
    }

    fn simulate(&mut self) -> Result<(), CliError> {
        let value = self.resolved.config.simulate.value;
        let (direct, dec) = match value {
            ValueChoice::Envelope => (None, Some(self.solve_envelope()?)),
            ValueChoice::Direct => (Some(self.solve_direct()?), None),
        };
        let (source, region) = match (&direct, &dec) {
            (Some(s), _) => (ValueSource::Field(&s.field), s.field.grid().bounds()),
            (_, Some(d)) => (ValueSource::Envelope(&d.envelope), envelope_box(&d.envelope)?),
            _ => unreachable!("one value source is always built"),
        };
        let spec = &self.resolved.spec;
        let sim = &self.resolved.config.simulate;
        let feedback = FeedbackStrategy::new(spec, source);
        let frozen = FixedControls::zero(spec);
        let pursuer_base: &dyn PursuerPolicy = match sim.pursuers {
            Play::Optimal => &feedback,
            Play::Frozen => &frozen,
        };
        let idle = IdlePursuers {
            inner: pursuer_base,
            idle: sim.idle_pursuers.iter().map(|i| i - 1).collect(),
        };
        let evader: &dyn EvaderPolicy = match sim.evader {
            Play::Optimal => &feedback,
            Play::Frozen => &frozen,
        };
        let mut records = Vec::new();
        for (k, x0) in sim.starts.iter().enumerate() {
            let v0 = source.value(x0);
            let horizon = sim.horizon.unwrap_or_else(|| default_horizon(v0));
            let params = SimParams {
                dt: sim.dt,
                horizon,
                region: Some(region.clone()),
            };
            let tr = simulate(spec, &idle, evader, x0, &params)?;
            let file = format!("trajectory_{}.csv", k + 1);
            if self.resolved.config.output.trajectories {
                tr.write_csv(spec, BufWriter::new(File::create(self.path(&file))?))?;
            }
            let predicted = kruzhkov_inverse(v0.clamp(0.0, 1.0)).unwrap_or(f64::INFINITY);
            records.push(json!({
                "start": x0,
                "file": file,
                "value": v0,
                "predicted_capture_time": if predicted.is_finite() { json!(predicted) } else { Value::Null },
                "horizon": horizon,
                "termination": termination_record(&tr.termination),
                "left_box": tr.left_box,
                "steps": tr.steps.len(),
            }));
        }
        self.report("trajectories", Value::Array(records));
        Ok(())
    }

    fn levelsets(&mut self) -> Result<(), CliError> {
        let dec = self.solve_envelope()?;
        let ls = self.resolved.config.levelsets.clone();
        let bounds = envelope_box(&dec.envelope)?;
        let [a, b] = ls.axes.map(|k| k - 1);
        let (lo, hi) = match &ls.window {
            Some(w) if w.lower.len() == 2 && w.upper.len() == 2 => ([w.lower[0], w.lower[1]], [w.upper[0], w.upper[1]]),
            Some(_) => return Err(CliError::Config("levelsets.window needs two coordinates".into())),
            None => ([bounds.lower[a], bounds.lower[b]], [bounds.upper[a], bounds.upper[b]]),
        };
        let n = ls.resolution;
        let xs: Vec<f64> = (0..n).map(|i| lo[0] + (hi[0] - lo[0]) * i as f64 / (n - 1) as f64).collect();
        let ys: Vec<f64> = (0..n).map(|j| lo[1] + (hi[1] - lo[1]) * j as f64 / (n - 1) as f64).collect();
        let mut x = ls.fixed.clone().unwrap_or_else(|| bounds.center());
        let mut values = Vec::with_capacity(n * n);
        for yj in &ys {
            for xi in &xs {
                x[a] = *xi;
                x[b] = *yj;
                values.push(dec.envelope.value(&x));
            }
        }
        let lattice = Lattice { x: &xs, y: &ys, values: &values };
        let lines: Vec<_> = ls.levels.iter().flat_map(|l| lattice.contour(*l)).collect();
        let names = [format!("x{}", a + 1), format!("x{}", b + 1)];
        write_polylines(
            BufWriter::new(File::create(self.path("levelsets.csv"))?),
            [names[0].as_str(), names[1].as_str()],
            &lines,
        )?;
        self.report(
            "levelsets",
            json!({
                "file": "levelsets.csv",
                "axes": [a + 1, b + 1],
                "levels": ls.levels,
                "polylines": lines.len(),
                "closed": lines.iter().filter(|l| l.is_closed()).count(),
                "window": {"lower": lo, "upper": hi},
            }),
        );
        Ok(())
    }
}

// Pursuers are numbered from 1 in everything the CLI writes.
fn termination_record(t: &Termination) -> Value {
    match t {
        Termination::Captured { pursuer, time } => {
            json!({"status": "captured", "pursuer": pursuer + 1, "time": time})
        }
        Termination::Escaped { horizon } => json!({"status": "escaped", "horizon": horizon}),
    }
}

fn envelope_box(env: &EnvelopeValue) -> Result<StateBox, CliError> {
    env.bounds()
        .ok_or_else(|| CliError::Config("sub-grids do not cover a common box".into()))
}
