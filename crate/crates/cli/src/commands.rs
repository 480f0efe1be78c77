use std::fs;

use serde::Serialize;

use osc_hawkes::action::{class_costs, fw_weights, quasipotential_v, quasipotential_v_warm, ActionError, CostMatrix, QpOptions};
use osc_hawkes::control::{steer, stlc_certificate, stlc_reach_scaling, ControlError, StlcCertificate, ScalingFit};
use osc_hawkes::experiments::{
    exit_time_study, occupation_study, weak_error_study, ExitOptions, ExperimentError, OccupationOptions, Region, StudyResult,
    WeakOptions,
};
use osc_hawkes::hawkes::simulate_hawkes_from;
use osc_hawkes::io::{self, IoError};
use osc_hawkes::limit::{default_trials, find_equilibrium, find_limit_cycles, CycleOptions, Equilibrium, LimitError, LimitSet};
use osc_hawkes::rng::{stream, streams};
use osc_hawkes::sde::simulate_sde;
use osc_hawkes::{make_model, Config, ConfigError, Model, ModelError, State};

use crate::manifest::RunManifest;
use crate::{Command, Common, Failure};

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Validation(e.to_string())
    }
}

impl From<ModelError> for Failure {
    fn from(e: ModelError) -> Self {
        Failure::Validation(e.to_string())
    }
}

impl From<IoError> for Failure {
    fn from(e: IoError) -> Self {
        Failure::Validation(e.to_string())
    }
}

impl From<LimitError> for Failure {
    fn from(e: LimitError) -> Self {
        Failure::Numerical(e.to_string())
    }
}

impl From<ControlError> for Failure {
    fn from(e: ControlError) -> Self {
        match e {
            ControlError::IllConditioned(_) | ControlError::Verification { .. } => Failure::Numerical(e.to_string()),
            _ => Failure::Validation(e.to_string()),
        }
    }
}

impl From<ActionError> for Failure {
    fn from(e: ActionError) -> Self {
        match e {
            ActionError::Infeasible(_) => Failure::Numerical(e.to_string()),
            _ => Failure::Validation(e.to_string()),
        }
    }
}

impl From<ExperimentError> for Failure {
    fn from(e: ExperimentError) -> Self {
        match e {
            ExperimentError::NoOrbit | ExperimentError::Capped { .. } | ExperimentError::Noise { .. } | ExperimentError::Hawkes(_) => {
                Failure::Numerical(e.to_string())
            }
            _ => Failure::Validation(e.to_string()),
        }
    }
}

/// Benchmark model parameters plus the run-level defaults.
fn defaults() -> Config {
    let m = Model::benchmark();
    let mut c = Config::default();
    for (k, name) in [(m.k12(), "1"), (m.k21(), "2")] {
        c.set(format!("c{name}"), k.c);
        c.set(format!("nu{name}"), k.nu);
        c.set(format!("n{name}"), k.n);
    }
    for (f, name) in [(m.f1(), "f1"), (m.f2(), "f2")] {
        c.set(format!("{name}.fmin"), f.fmin);
        c.set(format!("{name}.fmax"), f.fmax);
        c.set(format!("{name}.slope"), f.slope);
        c.set(format!("{name}.center"), f.center);
    }
    c.set("p1", m.p1());
    c.set("p2", m.p2());
    c.set("seed", 1);
    c
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

/// Resolved config: defaults, then the config file, then flags.
fn resolve(common: &Common, cmd: &Command) -> Result<Config, Failure> {
    let mut c = defaults();
    if let Some(p) = &common.config {
        c.merge(&Config::load(p)?);
    }
    if let Some(s) = common.seed {
        c.set("seed", s);
    }
    if let Some(dt) = common.dt {
        c.set("dt", dt);
    }
    let mut over = |k: &str, v: Option<String>| {
        if let Some(v) = v {
            c.set(k, v);
        }
    };
    match cmd {
        Command::SimulateHawkes { n, horizon } | Command::SimulateSde { n, horizon } => {
            over("N", n.map(|v| v.to_string()));
            over("horizon", horizon.map(|v| v.to_string()));
        }
        Command::Steer { from, to, horizon } => {
            over("from", from.as_deref().map(join));
            over("to", to.as_deref().map(join));
            over("horizon", horizon.map(|v| v.to_string()));
        }
        Command::CertifyStlc { delta } => over("deltas", delta.as_deref().map(join)),
        Command::Quasipotential { from, to } => {
            over("from", from.as_deref().map(join));
            over("to", to.as_deref().map(join));
        }
        Command::ExitTimes { ns, replicas } => {
            over("ns", ns.as_deref().map(join));
            over("replicas", replicas.map(|v| v.to_string()));
        }
        Command::Occupation { ns, replicas, horizon } => {
            over("ns", ns.as_deref().map(join));
            over("replicas", replicas.map(|v| v.to_string()));
            over("horizon", horizon.map(|v| v.to_string()));
        }
        Command::WeakError { ns, replicas, t } => {
            over("ns", ns.as_deref().map(join));
            over("replicas", replicas.map(|v| v.to_string()));
            over("t", t.map(|v| v.to_string()));
        }
        Command::LimitAnalysis | Command::ClassCosts | Command::FwWeights { .. } => {}
    }
    Ok(c)
}

fn outputs(cmd: &Command) -> &'static [&'static str] {
    match cmd {
        Command::SimulateHawkes { .. } => &["events.csv", "path.csv"],
        Command::SimulateSde { .. } => &["path.csv"],
        Command::LimitAnalysis => &["limit.json"],
        Command::Steer { .. } => &["steer.json", "control.csv"],
        Command::CertifyStlc { .. } => &["stlc.json"],
        Command::Quasipotential { .. } => &["quasipotential.json", "control.csv"],
        Command::ClassCosts => &["costs.json"],
        Command::FwWeights { .. } => &["weights.json"],
        Command::ExitTimes { .. } | Command::Occupation { .. } | Command::WeakError { .. } => &["study.json", "rows.csv"],
    }
}

struct Ctx {
    model: Model,
    config: Config,
    seed: u64,
    refine: bool,
    out: std::path::PathBuf,
}

impl Ctx {
    fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<(), Failure> {
        Ok(io::write_json(io::create(&self.out.join(name))?, value)?)
    }

    fn dt(&self, default: f64) -> Result<f64, Failure> {
        let dt = self.config.f64_or("dt", default)?;
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Failure::Validation(format!("dt must be positive (got {dt})")));
        }
        Ok(dt)
    }

    fn state(&self, key: &str, default: impl FnOnce() -> Result<State, Failure>) -> Result<State, Failure> {
        if self.config.get(key).is_none() {
            return default();
        }
        let x = self.config.f64_list(key)?;
        self.model.check_dim(&x)?;
        Ok(x)
    }

    fn equilibrium(&self) -> Result<Equilibrium, Failure> {
        Ok(find_equilibrium(&self.model)?)
    }

    fn limit_set(&self) -> Result<LimitSet, Failure> {
        let eq = self.equilibrium()?;
        let opts = if self.refine { CycleOptions::default().refined() } else { CycleOptions::default() };
        let trials = default_trials(&self.model, &eq, 4, self.seed);
        Ok(find_limit_cycles(&self.model, &trials, &opts)?)
    }

    fn anchor(&self) -> Result<State, Failure> {
        let ls = self.limit_set()?;
        ls.orbits.first().map(|o| o.anchor.clone()).ok_or_else(|| Failure::Numerical("no periodic orbit in the limit set".into()))
    }

    fn population(&self) -> Result<(u64, u64), Failure> {
        let n = self.config.u64("N").or_else(|e| match e {
            ConfigError::Missing(_) => Ok(100),
            e => Err(e),
        })?;
        let (a, b) = (self.model.p1() * n as f64, self.model.p2() * n as f64);
        if (a - a.round()).abs() > 1e-9 || (b - b.round()).abs() > 1e-9 || a.round() < 1.0 || b.round() < 1.0 {
            return Err(Failure::Validation(format!("N = {n} does not split into integer population sizes")));
        }
        Ok((a.round() as u64, b.round() as u64))
    }

    fn qp_options(&self) -> QpOptions {
        QpOptions { seed: self.seed, ..Default::default() }
    }

    fn write_study(&self, r: &StudyResult) -> Result<(), Failure> {
        self.write_json("study.json", r)?;
        r.write_rows(io::create(&self.out.join("rows.csv"))?).map_err(|e| Failure::Validation(e.to_string()))?;
        for w in &r.warnings {
            log::warn!("{w}");
        }
        Ok(())
    }

    fn replicas(&self, default: u64) -> Result<u64, Failure> {
        let r = self.config.u64("replicas").or_else(|e| match e {
            ConfigError::Missing(_) => Ok(default),
            e => Err(e),
        })?;
        Ok(if self.refine { 4 * r } else { r })
    }
}

pub fn execute(common: &Common, cmd: &Command) -> Result<(), Failure> {
    let config = resolve(common, cmd)?;
    let model = make_model(&config)?;
    let seed = config.u64("seed")?;
    let mut inputs = Vec::new();
    if let Command::FwWeights { costs: Some(p) } = cmd {
        inputs.push(fs::read(p).map_err(|e| Failure::Validation(format!("cannot read {}: {e}", p.display())))?);
    }
    fs::create_dir_all(&common.out).map_err(|e| Failure::Validation(format!("cannot create {}: {e}", common.out.display())))?;
    let manifest = RunManifest::new(cmd.name(), &config, seed, common.refine, &inputs, &common.out, outputs(cmd));
    let ctx = Ctx { model, config, seed, refine: common.refine, out: common.out.clone() };
    ctx.write_json("manifest.json", &manifest)?;
    log::info!("{} {}", manifest.subcommand, manifest.input_hash);
    match cmd {
        Command::SimulateHawkes { .. } => simulate_hawkes_cmd(&ctx),
        Command::SimulateSde { .. } => simulate_sde_cmd(&ctx),
        Command::LimitAnalysis => ctx.write_json("limit.json", &ctx.limit_set()?),
        Command::Steer { .. } => steer_cmd(&ctx),
        Command::CertifyStlc { .. } => stlc_cmd(&ctx),
        Command::Quasipotential { .. } => quasipotential_cmd(&ctx),
        Command::ClassCosts => ctx.write_json("costs.json", &costs_cmd(&ctx)?),
        Command::FwWeights { .. } => {
            let costs = match inputs.first() {
                Some(bytes) => serde_json::from_slice::<CostMatrix>(bytes).map_err(|e| Failure::Validation(format!("cost matrix: {e}")))?,
                None => costs_cmd(&ctx)?,
            };
            ctx.write_json("weights.json", &fw_weights(&costs)?)
        }
        Command::ExitTimes { .. } => exit_cmd(&ctx),
        Command::Occupation { .. } => occupation_cmd(&ctx),
        Command::WeakError { .. } => weak_cmd(&ctx),
    }
}

fn zeros(m: &Model) -> Result<State, Failure> {
    Ok(vec![0.0; m.dim()])
}

fn simulate_hawkes_cmd(ctx: &Ctx) -> Result<(), Failure> {
    let (n1, n2) = ctx.population()?;
    let horizon = ctx.config.f64_or("horizon", 10.0)?;
    let x0 = ctx.state("x0", || zeros(&ctx.model))?;
    let dt = ctx.dt(0.01)?;
    let mut rng = stream(ctx.seed, streams::HAWKES, 0);
    let (events, path) = simulate_hawkes_from(&ctx.model, n1, n2, &x0, horizon, &mut rng)
        .map_err(|e| Failure::Validation(e.to_string()))?;
    io::write_events(io::create(&ctx.out.join("events.csv"))?, &events)?;
    io::write_path(io::create(&ctx.out.join("path.csv"))?, &path.resample(&ctx.model, dt))?;
    Ok(())
}

fn simulate_sde_cmd(ctx: &Ctx) -> Result<(), Failure> {
    let (n1, n2) = ctx.population()?;
    let horizon = ctx.config.f64_or("horizon", 10.0)?;
    let x0 = ctx.state("x0", || zeros(&ctx.model))?;
    let dt = ctx.dt(0.01)? / if ctx.refine { 2.0 } else { 1.0 };
    let path = simulate_sde(&ctx.model, (n1 + n2) as f64, &x0, horizon, dt, ctx.seed)?;
    io::write_path(io::create(&ctx.out.join("path.csv"))?, &path)?;
    Ok(())
}

#[derive(Serialize)]
struct SteerReport {
    from: State,
    to: State,
    horizon: f64,
    dt: f64,
    achieved: State,
    residual: f64,
    action: f64,
}

const STEER_TOL: f64 = 1e-4;

fn steer_cmd(ctx: &Ctx) -> Result<(), Failure> {
    let from = ctx.state("from", || Ok(ctx.equilibrium()?.point))?;
    let to = ctx.state("to", || ctx.anchor())?;
    let horizon = ctx.config.f64_or("horizon", 2.0)?;
    let dt = ctx.dt(1e-3)? / if ctx.refine { 10.0 } else { 1.0 };
    let s = steer(&ctx.model, &from, &to, horizon, dt)?;
    let report = SteerReport { from, to, horizon, dt, achieved: s.achieved.clone(), residual: s.residual, action: s.action };
    ctx.write_json("steer.json", &report)?;
    io::write_control(io::create(&ctx.out.join("control.csv"))?, &s.control)?;
    if !(s.residual <= STEER_TOL) {
        return Err(ControlError::Verification { residual: s.residual, tol: STEER_TOL }.into());
    }
    Ok(())
}

#[derive(Serialize)]
struct StlcReport {
    delta: f64,
    phases: Vec<StlcCertificate>,
    scaling: ScalingFit,
}

fn stlc_cmd(ctx: &Ctx) -> Result<(), Failure> {
    let ls = ctx.limit_set()?;
    let orbit = ls.orbits.first().ok_or_else(|| Failure::Numerical("no periodic orbit in the limit set".into()))?;
    let mut deltas = if ctx.config.get("deltas").is_some() { ctx.config.f64_list("deltas")? } else { vec![0.4, 0.2, 0.1, 0.05] };
    if ctx.refine {
        let last = deltas.iter().cloned().fold(f64::INFINITY, f64::min);
        deltas.push(0.5 * last);
    }
    let delta = ctx.config.f64_or("delta", 0.1)?;
    let bound = ctx.config.f64_or("control_bound", 10.0)?;
    let phases = orbit
        .phase_points(&ctx.model, ctx.config.usize_or("phases", 4)?)
        .iter()
        .map(|p| stlc_certificate(&ctx.model, p, delta, bound))
        .collect::<Result<Vec<_>, _>>()?;
    let scaling = stlc_reach_scaling(&ctx.model, &orbit.anchor, &deltas, bound)?;
    let degenerate = phases.iter().filter(|c| !(c.min_singular_value > 0.0)).count();
    ctx.write_json("stlc.json", &StlcReport { delta, phases, scaling })?;
    if degenerate > 0 {
        return Err(Failure::Numerical(format!("variational matrix singular at {degenerate} phase points")));
    }
    Ok(())
}

fn quasipotential_cmd(ctx: &Ctx) -> Result<(), Failure> {
    let from = ctx.state("from", || ctx.anchor())?;
    let to = ctx.state("to", || Ok(ctx.equilibrium()?.point))?;
    let opts = ctx.qp_options();
    let mut r = quasipotential_v(&ctx.model, &from, &to, &opts)?;
    if ctx.refine {
        r = quasipotential_v_warm(&ctx.model, &from, &to, &opts.refined(), &r)?;
    }
    ctx.write_json("quasipotential.json", &r)?;
    io::write_control(io::create(&ctx.out.join("control.csv"))?, &r.control)?;
    Ok(())
}

fn costs_cmd(ctx: &Ctx) -> Result<CostMatrix, Failure> {
    let ls = ctx.limit_set()?;
    if ls.orbits.is_empty() {
        return Err(Failure::Numerical("no periodic orbit in the limit set".into()));
    }
    let opts = ctx.qp_options();
    let mut costs = class_costs(&ctx.model, &ls, &opts)?;
    if ctx.refine {
        let fine = class_costs(&ctx.model, &ls, &opts.refined())?;
        for (row, frow) in costs.entries.iter_mut().zip(&fine.entries) {
            for (a, b) in row.iter_mut().zip(frow) {
                *a = a.min(*b);
            }
        }
    }
    Ok(costs)
}

fn exit_cmd(ctx: &Ctx) -> Result<(), Failure> {
    let d = ExitOptions::default();
    let opts = ExitOptions {
        ns: if ctx.config.get("ns").is_some() { ctx.config.f64_list("ns")? } else { d.ns.clone() },
        eps: ctx.config.f64_or("eps", d.eps)?,
        eps_bar: ctx.config.f64_or("eps_bar", d.eps_bar)?,
        cap: ctx.config.f64_or("cap", d.cap)?,
        replicas: ctx.replicas(d.replicas)?,
        dt: ctx.dt(d.dt)?,
        seed: ctx.seed,
    };
    let ls = ctx.limit_set()?;
    ctx.write_study(&exit_time_study(&ctx.model, &ls, &opts)?)
}

fn occupation_cmd(ctx: &Ctx) -> Result<(), Failure> {
    let d = OccupationOptions::default();
    let ls = ctx.limit_set()?;
    let radius = ctx.config.f64_or("region_radius", 0.1)?;
    let opts = OccupationOptions {
        ns: if ctx.config.get("ns").is_some() { ctx.config.f64_list("ns")? } else { d.ns.clone() },
        regions: vec![Region { center: ls.equilibrium.point.clone(), radius }],
        eps: ctx.config.f64_or("eps", d.eps)?,
        horizon: ctx.config.f64_or("horizon", d.horizon)?,
        burn_in_periods: ctx.config.f64_or("burn_in_periods", d.burn_in_periods)?,
        replicas: ctx.replicas(d.replicas)?,
        dt: ctx.dt(d.dt)?,
        seed: ctx.seed,
    };
    ctx.write_study(&occupation_study(&ctx.model, &ls, &opts)?)
}

fn weak_cmd(ctx: &Ctx) -> Result<(), Failure> {
    let d = WeakOptions::default();
    let ns = if ctx.config.get("ns").is_some() {
        ctx.config
            .f64_list("ns")?
            .into_iter()
            .map(|v| if v >= 1.0 && v.fract() == 0.0 { Ok(v as u64) } else { Err(Failure::Validation(format!("ns entry {v} is not a positive integer"))) })
            .collect::<Result<Vec<_>, _>>()?
    } else {
        d.ns.clone()
    };
    let opts = WeakOptions {
        ns,
        x0: ctx.state("x0", || Ok(ctx.equilibrium()?.point))?,
        t: ctx.config.f64_or("t", d.t)?,
        statistic: None,
        replicas: ctx.replicas(d.replicas)?,
        dt: ctx.dt(d.dt)?,
        richardson: d.richardson,
        seed: ctx.seed,
    };
    ctx.write_study(&weak_error_study(&ctx.model, &opts)?)
}
