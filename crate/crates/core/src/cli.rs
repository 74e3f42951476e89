//! The `amech` command-line front end.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::algebroid::{bracket_observable, check_structure, AlgebroidChart, DualPoint, ExprObservable, Observable};
use crate::dynamics::{is_regular, legendre, DynamicsError, EPoint, LagrangianSystem, LegendreHamiltonian};
use crate::expr::{parse_expr, parse_system, Bindings, CompiledExpr, SystemSpec};
use crate::flows;
use crate::monitors;
use crate::odeint::{integrate, IntegratorConfig, Monitor, OdeError, Trajectory};
use crate::presets::{self, vakonomic_labels, PendulumKind, Preset};
use crate::presym::{project_to_sode, run_constraint_algorithm, ConstraintConfig, DualGraph, MomentumGraph, PresymplecticProblem};
use crate::vakonomic::{vakonomic_bracket, VakonomicError, VakonomicSystem};
use crate::Error;

#[derive(Parser, Debug)]
#[command(name = "amech", version, about = "Mechanics on Lie algebroids: Euler-Lagrange, Hamilton, constraint algorithm and vakonomic flows")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Cmd,
}

#[derive(Subcommand, Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Cmd {
    /// Check the structure equations and scan regularity.
    Validate(ValidateArgs),
    /// Integrate one of the flows.
    Simulate(SimulateArgs),
    /// Run the constraint algorithm.
    Constrain(ConstrainArgs),
    /// Evaluate the Poisson bracket of two observables.
    Bracket(BracketArgs),
    /// Print a built-in system as a description file.
    ExportPreset(ExportArgs),
    /// Repeat a run from its manifest.
    Rerun(RerunArgs),
}

#[derive(Args, Clone, Debug, Serialize, Deserialize)]
pub struct Input {
    /// Built-in system id.
    #[arg(long, conflicts_with = "file")]
    pub preset: Option<String>,
    /// System description file.
    #[arg(value_name = "FILE", required_unless_present = "preset")]
    pub file: Option<PathBuf>,
    /// Parameter overrides.
    #[arg(long = "param", value_name = "NAME=VALUE")]
    #[serde(default)]
    pub params: Vec<String>,
}

#[derive(Args, Clone, Debug, Serialize, Deserialize)]
pub struct ValidateArgs {
    #[command(flatten)]
    pub input: Input,
    /// Number of sampled points.
    #[arg(long, default_value_t = 20)]
    pub points: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    El,
    Hamilton,
    Vakonomic,
    Sode,
}

#[derive(Args, Clone, Debug, Serialize, Deserialize)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub input: Input,
    #[arg(long, value_enum)]
    pub mode: Mode,
    #[arg(long, default_value_t = 0.0)]
    pub t0: f64,
    #[arg(long)]
    pub t1: Option<f64>,
    /// Fixed RK4 step.
    #[arg(long, conflicts_with = "rtol")]
    pub dt: Option<f64>,
    /// Relative tolerance; selects Dormand-Prince.
    #[arg(long)]
    pub rtol: Option<f64>,
    #[arg(long, default_value_t = 1e-12)]
    pub atol: f64,
    /// Record every N-th step.
    #[arg(long, default_value_t = 1)]
    pub stride: usize,
    /// Initial values by name; unnamed components default to 0.
    #[arg(long, num_args = 1.., value_name = "NAME=VALUE")]
    #[serde(default)]
    pub init: Vec<String>,
    /// Comma-separated monitors: energy, pendulum or NAME=EXPR.
    #[arg(long, value_delimiter = ',')]
    pub monitors: Option<Vec<String>>,
    /// Sweep one initial value: NAME=V1,V2,...
    #[arg(long)]
    pub sweep: Option<String>,
    /// Worker threads for sweeps.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Lagrangian,
    Hamiltonian,
}

#[derive(Args, Clone, Debug, Serialize, Deserialize)]
pub struct ConstrainArgs {
    #[command(flatten)]
    pub input: Input,
    #[arg(long, value_enum)]
    pub side: Side,
    /// Number of sampled seed points.
    #[arg(long, default_value_t = 50)]
    pub seeds: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Clone, Debug, Serialize, Deserialize)]
pub struct BracketArgs {
    #[command(flatten)]
    pub input: Input,
    #[arg(long = "F", alias = "f", value_name = "EXPR")]
    pub f: String,
    #[arg(long = "G", alias = "g", value_name = "EXPR")]
    pub g: String,
    /// Point by name; unnamed coordinates are 0.
    #[arg(long, num_args = 1.., value_name = "NAME=VALUE")]
    #[serde(default)]
    pub at: Vec<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Clone, Debug, Serialize, Deserialize)]
pub struct ExportArgs {
    pub id: String,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Clone, Debug, Serialize, Deserialize)]
pub struct RerunArgs {
    pub manifest: PathBuf,
    /// Write to a different output path.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Everything needed to repeat a run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub amech_version: String,
    pub command: Cmd,
    pub source: Option<SourceRecord>,
    pub resolved: Value,
    pub outputs: Vec<PathBuf>,
    pub exit_status: u8,
    pub started_unix_ms: u128,
    pub elapsed_ms: u128,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SourceRecord {
    Preset { id: String },
    File { path: PathBuf, text: String },
}

/// A failure with its exit status.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
    pub detail: Option<Value>,
}

impl Failure {
    fn validation(message: String, detail: Value) -> Self {
        Failure { code: 1, message, detail: Some(detail) }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure { code: exit_code(&e), message: e.to_string(), detail: None }
    }
}

/// Exit status for an error: 1 validation, 2 parse, 3 singular dynamics,
/// 4 integration.
pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Parse(_) => 2,
        Error::Dynamics(d) => match d {
            DynamicsError::SingularHessian { .. } | DynamicsError::LegendreInverse { .. } => 3,
            _ => 1,
        },
        Error::Vakonomic(v) => match v {
            VakonomicError::SingularR { .. } | VakonomicError::MuSolveFailed { .. } => 3,
            VakonomicError::Eval(inner) => exit_code(inner),
            _ => 1,
        },
        Error::Presym(_) => 3,
        Error::Ode(OdeError::Rhs { source, .. }) => match exit_code(source) {
            3 => 3,
            2 => 2,
            _ => 4,
        },
        Error::Ode(_) => 4,
        _ => 1,
    }
}

struct Source {
    spec: SystemSpec,
    preset: Option<Preset>,
    record: SourceRecord,
}

fn parse_assignments(items: &[String]) -> Result<Bindings, Error> {
    let mut out = Bindings::new();
    for item in items {
        let (k, v) = item.split_once('=').ok_or_else(|| Error::Invalid(format!("expected NAME=VALUE, got '{item}'")))?;
        let v: f64 = v.trim().parse().map_err(|_| Error::Invalid(format!("'{v}' is not a number in '{item}'")))?;
        if out.insert(k.trim().to_string(), v).is_some() {
            return Err(Error::Invalid(format!("'{k}' given twice")));
        }
    }
    Ok(out)
}

fn load_source(input: &Input, embedded: Option<&SourceRecord>) -> Result<Source, Error> {
    let (mut spec, preset, record) = match (embedded, &input.preset, &input.file) {
        (Some(SourceRecord::File { path, text }), _, _) => (parse_system(text)?, None, SourceRecord::File { path: path.clone(), text: text.clone() }),
        (_, Some(id), _) => {
            let p = presets::load(id)?;
            (p.spec.clone(), Some(p), SourceRecord::Preset { id: id.clone() })
        }
        (_, None, Some(path)) => {
            let text = fs::read_to_string(path).map_err(|e| Error::Invalid(format!("cannot read {}: {e}", path.display())))?;
            (parse_system(&text)?, None, SourceRecord::File { path: path.clone(), text })
        }
        (_, None, None) => return Err(Error::Invalid("give --preset or a file".into())),
    };
    if !input.params.is_empty() {
        spec = spec.with_params(&parse_assignments(&input.params)?).map_err(Error::Invalid)?;
    }
    Ok(Source { spec, preset, record })
}

fn domain(src: &Source, name: &str) -> (f64, f64) {
    src.preset.as_ref().map_or((-1.0, 1.0), |p| p.domain(name))
}

fn sample(src: &Source, names: &[String], rng: &mut ChaCha8Rng) -> Vec<f64> {
    use rand::Rng;
    names
        .iter()
        .map(|n| {
            let (a, b) = domain(src, n);
            rng.gen_range(a..=b)
        })
        .collect()
}

fn validate(args: &ValidateArgs, src: &Source) -> Result<Value, Failure> {
    let spec = &src.spec;
    let chart = AlgebroidChart::from_spec(spec).map_err(Error::from)?;
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let (mut r1, mut r2) = (0.0f64, 0.0f64);
    let mut worst_point = vec![];
    let sys = LagrangianSystem::new(spec).map_err(Error::from)?;
    let tangent = flows::tangent_labels(spec);
    let (mut regular, mut ratio) = (0usize, f64::INFINITY);
    for _ in 0..args.points {
        let x = sample(src, &spec.base, &mut rng);
        let rep = check_structure(&chart, &x).map_err(Error::from)?;
        if rep.r1.max(rep.r2) >= r1.max(r2) {
            worst_point = x;
        }
        r1 = r1.max(rep.r1);
        r2 = r2.max(rep.r2);
        let z = sample(src, &tangent, &mut rng);
        let m = spec.m();
        let reg = is_regular(&sys, &EPoint::new(z[..m].to_vec(), z[m..].to_vec())).map_err(Error::from)?;
        if reg.regular {
            regular += 1;
        }
        if reg.sigma_max > 0.0 {
            ratio = ratio.min(reg.sigma_min / reg.sigma_max);
        } else {
            ratio = 0.0;
        }
    }
    let report = json!({
        "system": spec.name,
        "points": args.points,
        "structure": { "r1": r1, "r2": r2, "worst_point": worst_point, "tolerance": 1e-8 },
        "regularity": { "regular_points": regular, "min_sigma_ratio": ratio, "tolerance": crate::linalg::rank_tol() },
    });
    if r1 >= 1e-8 || r2 >= 1e-8 {
        return Err(Failure::validation(format!("structure equations violated: r1 = {r1:e}, r2 = {r2:e}"), report));
    }
    Ok(report)
}

/// Maps each state label to its initial value.
fn initial_state(mode: Mode, src: &Source, labels: &[String], overrides: &Bindings) -> Result<Vec<f64>, Error> {
    for k in overrides.keys() {
        if !labels.contains(k) {
            return Err(Error::Invalid(format!("unknown initial component '{k}' (state is {})", labels.join(", "))));
        }
    }
    let defaults = src.preset.as_ref().map(|p| p.facts.init.clone()).unwrap_or_default();
    let mut z: Vec<f64> = labels.iter().map(|l| defaults.get(l).copied().unwrap_or(0.0)).collect();
    if mode == Mode::Hamilton && !defaults.is_empty() {
        let spec = &src.spec;
        let tangent = flows::tangent_labels(spec);
        let w: Vec<f64> = tangent.iter().map(|l| defaults.get(l).copied().unwrap_or(0.0)).collect();
        let sys = LagrangianSystem::new(spec)?;
        let m = spec.m();
        let pt = legendre(&sys, &EPoint::new(w[..m].to_vec(), w[m..].to_vec()))?;
        z = pt.x.into_iter().chain(pt.p).collect();
    }
    for (k, v) in overrides {
        let i = labels.iter().position(|l| l == k).expect("checked");
        z[i] = *v;
    }
    Ok(z)
}

fn integrator(args: &SimulateArgs, src: &Source) -> IntegratorConfig {
    let defaults = src.preset.as_ref().map(|p| p.facts.simulate.clone()).unwrap_or_default();
    let t1 = args.t1.unwrap_or(defaults.t1);
    let mut cfg = match args.rtol {
        Some(rtol) => IntegratorConfig::dp45(args.t0, t1, rtol, args.atol),
        None => IntegratorConfig::rk4(args.t0, t1, args.dt.unwrap_or(defaults.dt)),
    };
    cfg.stride = args.stride.max(1);
    cfg
}

fn expr_monitor<'a>(name: &str, src: &str, labels: &[String], spec: &SystemSpec) -> Result<Monitor<'a>, Error> {
    let mut vars: Vec<&str> = vec!["t"];
    vars.extend(labels.iter().map(String::as_str));
    vars.extend(spec.params.keys().map(String::as_str));
    let compiled = CompiledExpr::compile(&parse_expr(src)?, &vars)?;
    let params: Vec<f64> = spec.params.values().copied().collect();
    Ok(Monitor::new(name, move |t, z| {
        let inputs: Vec<f64> = std::iter::once(t).chain(z.iter().copied()).chain(params.iter().copied()).collect();
        Ok(compiled.eval(&inputs)?)
    }))
}

struct Run<'a> {
    problem: crate::odeint::OdeProblem<'a>,
    monitors: Vec<Monitor<'a>>,
    pendulum: Option<PendulumKind>,
}

/// Resolved monitor list: built-in names and `name=expr` entries.
fn monitor_list(args: &SimulateArgs, src: &Source) -> Vec<String> {
    match &args.monitors {
        Some(list) => list.clone(),
        None => {
            let mut list = src.preset.as_ref().map(|p| p.facts.monitors.clone()).unwrap_or_else(|| vec!["energy".into()]);
            if args.mode != Mode::Vakonomic {
                list.retain(|m| m != "pendulum");
            }
            list
        }
    }
}

struct Models {
    lag: Option<LagrangianSystem>,
    vak: Option<VakonomicSystem>,
    legh: Option<LegendreHamiltonian>,
    sode_start: Option<crate::presym::ConstraintRun>,
}

fn build_models(mode: Mode, src: &Source) -> Result<Models, Error> {
    let spec = &src.spec;
    let mut m = Models { lag: None, vak: None, legh: None, sode_start: None };
    match mode {
        Mode::El => m.lag = Some(LagrangianSystem::new(spec)?),
        Mode::Hamilton => {
            let sys = LagrangianSystem::new(spec)?;
            m.legh = Some(LegendreHamiltonian::new(sys.clone()));
            m.lag = Some(sys);
        }
        Mode::Vakonomic => m.vak = Some(VakonomicSystem::new(spec)?),
        Mode::Sode => {
            let sys = LagrangianSystem::new(spec)?;
            let labels = flows::tangent_labels(spec);
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let seeds: Vec<Vec<f64>> = (0..50).map(|_| sample(src, &labels, &mut rng)).collect();
            m.sode_start = Some(run_constraint_algorithm(&PresymplecticProblem::lagrangian(&sys, labels), &seeds, ConstraintConfig::default())?);
            m.lag = Some(sys);
        }
    }
    Ok(m)
}

fn build_run<'a>(mode: Mode, models: &'a Models, src: &Source, monitors_wanted: &[String]) -> Result<(Run<'a>, Vec<String>), Error> {
    let spec = &src.spec;
    let m = spec.m();
    let (problem, labels) = match mode {
        Mode::El => {
            let labels = flows::tangent_labels(spec);
            (flows::euler_lagrange(models.lag.as_ref().unwrap(), labels.clone()), labels)
        }
        Mode::Hamilton => {
            let labels = flows::dual_labels(spec);
            let chart = models.lag.as_ref().unwrap().chart();
            (flows::hamilton(chart, models.legh.as_ref().unwrap(), labels.clone()), labels)
        }
        Mode::Vakonomic => (flows::vakonomic(models.vak.as_ref().unwrap(), spec), vakonomic_labels(spec)),
        Mode::Sode => {
            let labels = flows::tangent_labels(spec);
            (flows::sode(models.lag.as_ref().unwrap(), labels.clone()), labels)
        }
    };
    let mut mons = Vec::new();
    let mut pendulum = None;
    for entry in monitors_wanted {
        match entry.split_once('=') {
            Some((name, src_expr)) => mons.push(expr_monitor(name.trim(), src_expr, &labels, spec)?),
            None if entry == "energy" => mons.push(match mode {
                Mode::El | Mode::Sode => {
                    let sys = models.lag.as_ref().unwrap();
                    Monitor::new("E_L", move |_, z| Ok(sys.energy(&EPoint::new(z[..m].to_vec(), z[m..].to_vec()))?))
                }
                Mode::Hamilton => {
                    let h = models.legh.as_ref().unwrap();
                    Monitor::new("H", move |_, z| Ok(h.value(&z[..m], &z[m..])?))
                }
                Mode::Vakonomic => {
                    let sys = models.vak.as_ref().unwrap();
                    Monitor::new("H_W1", move |_, z| {
                        let s = sys.split(z);
                        let p = sys.full_momenta(&s)?;
                        Ok(sys.pontryagin_h(&s.x, &p, &s.ya)?)
                    })
                }
            }),
            None if entry == "pendulum" => {
                let kind = src.preset.as_ref().and_then(|p| p.facts.pendulum);
                match (mode, kind) {
                    (Mode::Vakonomic, Some(k)) => pendulum = Some(k),
                    _ => return Err(Error::Invalid("the pendulum monitor needs --mode vakonomic on martinet or plate_ball".into())),
                }
            }
            None => return Err(Error::Invalid(format!("unknown monitor '{entry}' (use energy, pendulum or NAME=EXPR)"))),
        }
    }
    Ok((Run { problem, monitors: mons, pendulum }, labels))
}

fn add_pendulum(traj: &mut Trajectory, kind: PendulumKind) -> Result<(), Error> {
    match kind {
        PendulumKind::Martinet => {
            let ch = monitors::martinet_channel(traj)?;
            traj.monitors.push(("pendulum".into(), ch));
        }
        PendulumKind::PlateBall => {
            let c = monitors::plate_ball_channels(traj)?;
            traj.monitors.push(("pendulum_rate".into(), c.rate));
            traj.monitors.push(("pendulum".into(), c.pendulum));
        }
    }
    Ok(())
}

fn simulate_one(mode: Mode, models: &Models, src: &Source, cfg: &IntegratorConfig, wanted: &[String], z0: &[f64]) -> Result<Trajectory, Error> {
    let (run, _) = build_run(mode, models, src, wanted)?;
    let z0 = match (mode, &models.sode_start) {
        (Mode::Sode, Some(c)) => project_to_sode(c, models.lag.as_ref().unwrap(), z0)?,
        _ => z0.to_vec(),
    };
    if mode == Mode::Vakonomic {
        let sys = models.vak.as_ref().unwrap();
        let reg = sys.regularity_matrix(&sys.split(&z0))?;
        if !reg.regular {
            return Err(VakonomicError::SingularR { sigma_min: reg.sigma_min, sigma_max: reg.sigma_max }.into());
        }
    }
    let mut traj = integrate(&run.problem, cfg, &z0, &run.monitors)?;
    if let Some(kind) = run.pendulum {
        add_pendulum(&mut traj, kind)?;
    }
    Ok(traj)
}

fn with_suffix(path: &Path, k: usize) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let name = match path.extension() {
        Some(ext) => format!("{stem}.{k}.{}", ext.to_string_lossy()),
        None => format!("{stem}.{k}"),
    };
    path.with_file_name(name)
}

fn render(traj: &Trajectory, path: &Path) -> String {
    if path.extension().is_some_and(|e| e == "json") {
        let mut s = serde_json::to_string_pretty(&traj.to_json()).expect("serializable");
        s.push('\n');
        s
    } else {
        traj.to_csv()
    }
}

fn simulate(args: &SimulateArgs, src: &Source, outputs: &mut Vec<PathBuf>, resolved: &mut Value) -> Result<Value, Failure> {
    let cfg = integrator(args, src);
    let wanted = monitor_list(args, src);
    let models = build_models(args.mode, src)?;
    let (_, labels) = build_run(args.mode, &models, src, &wanted)?;
    let overrides = parse_assignments(&args.init)?;
    let base = initial_state(args.mode, src, &labels, &overrides)?;

    let mut starts = vec![base.clone()];
    let mut sweep_values = vec![];
    if let Some(sw) = &args.sweep {
        let (name, vals) = sw.split_once('=').ok_or_else(|| Error::Invalid(format!("expected NAME=V1,V2,... in --sweep, got '{sw}'")))?;
        let k = labels.iter().position(|l| l == name.trim()).ok_or_else(|| Error::Invalid(format!("unknown sweep component '{name}'")))?;
        starts.clear();
        for v in vals.split(',') {
            let v: f64 = v.trim().parse().map_err(|_| Error::Invalid(format!("'{v}' is not a number in --sweep")))?;
            sweep_values.push(v);
            let mut z = base.clone();
            z[k] = v;
            starts.push(z);
        }
    }
    *resolved = json!({
        "mode": args.mode,
        "integrator": cfg,
        "labels": labels,
        "initial": labels.iter().cloned().zip(base.iter().copied()).collect::<BTreeMap<_, _>>(),
        "params": src.spec.params,
        "monitors": wanted,
        "sweep": args.sweep.as_ref().map(|s| json!({ "spec": s, "values": sweep_values })),
        "rank_tolerance": crate::linalg::rank_tol(),
    });

    let jobs = args.jobs.max(1).min(starts.len());
    let mut results: Vec<Option<Result<Trajectory, Error>>> = (0..starts.len()).map(|_| None).collect();
    std::thread::scope(|scope| {
        let chunks: Vec<Vec<usize>> = (0..jobs).map(|j| (j..starts.len()).step_by(jobs).collect()).collect();
        let handles: Vec<_> = chunks
            .into_iter()
            .map(|idx| {
                let (models, starts, wanted, cfg) = (&models, &starts, &wanted, &cfg);
                scope.spawn(move || idx.into_iter().map(|i| (i, simulate_one(args.mode, models, src, cfg, wanted, &starts[i]))).collect::<Vec<_>>())
            })
            .collect();
        for h in handles {
            for (i, r) in h.join().expect("worker thread") {
                results[i] = Some(r);
            }
        }
    });
    let trajs = results.into_iter().map(|r| r.expect("every start ran")).collect::<Result<Vec<_>, _>>()?;

    let summaries: Vec<Value> = trajs
        .iter()
        .map(|t| {
            let drift: BTreeMap<&str, f64> = t.monitors.iter().map(|(n, v)| (n.as_str(), v.iter().fold(0.0f64, |a, x| a.max((x - v[0]).abs())))).collect();
            json!({ "samples": t.times.len(), "final_state": t.last(), "monitor_max_deviation": drift })
        })
        .collect();
    match &args.out {
        Some(out) => {
            for (k, t) in trajs.iter().enumerate() {
                let path = if trajs.len() == 1 && args.sweep.is_none() { out.clone() } else { with_suffix(out, k) };
                write_file(&path, &render(t, &path))?;
                outputs.push(path);
            }
            Ok(json!({ "runs": summaries }))
        }
        None => Ok(json!({ "runs": summaries, "trajectories": trajs.iter().map(Trajectory::to_json).collect::<Vec<_>>() })),
    }
}

fn constrain(args: &ConstrainArgs, src: &Source) -> Result<Value, Failure> {
    let spec = &src.spec;
    let sys = LagrangianSystem::new(spec).map_err(Error::from)?;
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let problem = match args.side {
        Side::Lagrangian => PresymplecticProblem::lagrangian(&sys, flows::tangent_labels(spec)),
        Side::Hamiltonian => {
            let graph: Option<(Arc<dyn MomentumGraph>, Vec<String>)> = match &src.preset {
                Some(p) => p.hamiltonian_graph()?.map(|(g, l)| (Arc::new(g) as Arc<dyn MomentumGraph>, l)),
                None => None,
            };
            let (graph, labels) = graph.unwrap_or_else(|| (Arc::new(DualGraph::new(&sys)), flows::dual_labels(spec)));
            PresymplecticProblem::hamiltonian_on_graph(sys.chart(), graph, labels)
        }
    };
    let seeds: Vec<Vec<f64>> = (0..args.seeds).map(|_| sample(src, &problem.labels, &mut rng)).collect();
    let run = run_constraint_algorithm(&problem, &seeds, ConstraintConfig::default()).map_err(Error::from)?;
    let mut solve = 0.0f64;
    for z in &run.probes {
        solve = solve.max(run.solve_on_final(z).map_err(Error::from)?.residual);
    }
    let mut report = run.report();
    report["side"] = json!(args.side);
    report["labels"] = json!(problem.labels);
    report["final_solve_residual"] = json!(solve);
    Ok(report)
}

fn bracket(args: &BracketArgs, src: &Source) -> Result<Value, Failure> {
    let spec = &src.spec;
    let chart = AlgebroidChart::from_spec(spec).map_err(Error::from)?;
    let dual = flows::dual_labels(spec);
    let at = parse_assignments(&args.at)?;
    for k in at.keys() {
        if !dual.contains(k) {
            return Err(Error::Invalid(format!("unknown coordinate '{k}' (expected one of {})", dual.join(", "))).into());
        }
    }
    let z: Vec<f64> = dual.iter().map(|l| at.get(l).copied().unwrap_or(0.0)).collect();
    let m = spec.m();
    let pt = DualPoint::new(z[..m].to_vec(), z[m..].to_vec());
    let f: Arc<dyn Observable> = Arc::new(ExprObservable::parse(&args.f, spec).map_err(Error::from)?);
    let g: Arc<dyn Observable> = Arc::new(ExprObservable::parse(&args.g, spec).map_err(Error::from)?);
    let k: Arc<dyn Observable> = Arc::new(ExprObservable::parse(&dual.iter().map(|l| format!("{l}^2")).collect::<Vec<_>>().join(" + "), spec).map_err(Error::from)?);
    let vsys = VakonomicSystem::new(spec).map_err(Error::from)?;
    let b = |a: &dyn Observable, c: &dyn Observable| vakonomic_bracket(&vsys, a, c, &pt).map_err(Error::from);
    let value = b(f.as_ref(), g.as_ref())?;
    let swapped = b(g.as_ref(), f.as_ref())?;
    let fg = bracket_observable(chart.clone(), f.clone(), g.clone());
    let gk = bracket_observable(chart.clone(), g.clone(), k.clone());
    let kf = bracket_observable(chart, k.clone(), f.clone());
    let jacobi = b(&fg, k.as_ref())? + b(&gk, f.as_ref())? + b(&kf, g.as_ref())?;
    Ok(json!({
        "F": args.f,
        "G": args.g,
        "at": dual.iter().cloned().zip(z.iter().copied()).collect::<BTreeMap<_, _>>(),
        "value": value,
        "antisymmetry_residual": value + swapped,
        "jacobi_residual": jacobi,
        "jacobi_third": "sum of squared coordinates",
    }))
}

fn write_file(path: &Path, text: &str) -> Result<(), Error> {
    fs::write(path, text).map_err(|e| Error::Invalid(format!("cannot write {}: {e}", path.display())))
}

fn manifest_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

fn out_of(cmd: &Cmd) -> Option<&PathBuf> {
    match cmd {
        Cmd::Validate(a) => a.out.as_ref(),
        Cmd::Simulate(a) => a.out.as_ref(),
        Cmd::Constrain(a) => a.out.as_ref(),
        Cmd::Bracket(a) => a.out.as_ref(),
        Cmd::ExportPreset(a) => a.out.as_ref(),
        Cmd::Rerun(_) => None,
    }
}

fn set_out(cmd: &mut Cmd, out: PathBuf) {
    let slot = match cmd {
        Cmd::Validate(a) => &mut a.out,
        Cmd::Simulate(a) => &mut a.out,
        Cmd::Constrain(a) => &mut a.out,
        Cmd::Bracket(a) => &mut a.out,
        Cmd::ExportPreset(a) => &mut a.out,
        Cmd::Rerun(_) => return,
    };
    *slot = Some(out);
}

fn pretty(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s
}

/// Runs one command and returns its exit status.
pub fn execute(cmd: Cmd, embedded: Option<SourceRecord>) -> u8 {
    let cmd = match cmd {
        Cmd::Rerun(r) => {
            let text = match fs::read_to_string(&r.manifest) {
                Ok(t) => t,
                Err(e) => {
                    eprintln!("error: cannot read {}: {e}", r.manifest.display());
                    return 1;
                }
            };
            let manifest: RunManifest = match serde_json::from_str(&text) {
                Ok(m) => m,
                Err(e) => {
                    eprintln!("error: malformed manifest {}: {e}", r.manifest.display());
                    return 2;
                }
            };
            let mut inner = manifest.command;
            if let Some(out) = r.out {
                set_out(&mut inner, out);
            }
            return execute(inner, manifest.source);
        }
        other => other,
    };
    let started = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis());
    let clock = Instant::now();
    let mut outputs = Vec::new();
    let mut resolved = Value::Null;
    let mut record = None;

    let result: Result<Value, Failure> = (|| {
        if let Cmd::ExportPreset(a) = &cmd {
            let p = presets::load(&a.id)?;
            let text = p.spec.to_dsl();
            record = Some(SourceRecord::Preset { id: a.id.clone() });
            return match &a.out {
                Some(out) => {
                    write_file(out, &text)?;
                    outputs.push(out.clone());
                    Ok(json!({ "written": out }))
                }
                None => {
                    print!("{text}");
                    Ok(Value::Null)
                }
            };
        }
        let input = match &cmd {
            Cmd::Validate(a) => &a.input,
            Cmd::Simulate(a) => &a.input,
            Cmd::Constrain(a) => &a.input,
            Cmd::Bracket(a) => &a.input,
            Cmd::ExportPreset(_) | Cmd::Rerun(_) => unreachable!(),
        };
        let src = load_source(input, embedded.as_ref())?;
        record = Some(src.record.clone());
        match &cmd {
            Cmd::Validate(a) => validate(a, &src),
            Cmd::Simulate(a) => simulate(a, &src, &mut outputs, &mut resolved),
            Cmd::Constrain(a) => constrain(a, &src),
            Cmd::Bracket(a) => bracket(a, &src),
            Cmd::ExportPreset(_) | Cmd::Rerun(_) => unreachable!(),
        }
    })();

    let (code, body) = match result {
        Ok(v) => (0, v),
        Err(f) => {
            eprintln!("error: {}", f.message);
            if f.code == 3 {
                eprintln!("hint: the dynamics are singular here; `amech constrain` runs the constraint algorithm");
            }
            (f.code, json!({ "error": f.message, "exit_status": f.code, "detail": f.detail }))
        }
    };

    // Reports of non-simulation commands go to --out when given.
    let out = out_of(&cmd).cloned();
    if let (Some(out), false) = (&out, matches!(cmd, Cmd::Simulate(_) | Cmd::ExportPreset(_))) {
        if let Err(e) = write_file(out, &pretty(&body)) {
            eprintln!("error: {e}");
            return 1;
        }
        outputs.push(out.clone());
    }
    let manifest = RunManifest {
        amech_version: env!("CARGO_PKG_VERSION").to_string(),
        command: cmd.clone(),
        source: record,
        resolved,
        outputs,
        exit_status: code,
        started_unix_ms: started,
        elapsed_ms: clock.elapsed().as_millis(),
    };
    let manifest_json = serde_json::to_value(&manifest).expect("serializable");
    match &out {
        Some(out) => {
            if let Err(e) = write_file(&manifest_path(out), &pretty(&manifest_json)) {
                eprintln!("error: {e}");
                return 1;
            }
            if matches!(cmd, Cmd::Simulate(_)) && code == 0 {
                print!("{}", pretty(&body));
            }
        }
        None if !matches!(cmd, Cmd::ExportPreset(_)) => {
            print!("{}", pretty(&json!({ "result": body, "manifest": manifest_json })));
        }
        None => {}
    }
    code
}

pub fn main() -> ExitCode {
    let cli = Cli::parse();
    ExitCode::from(execute(cli.command, None))
}
