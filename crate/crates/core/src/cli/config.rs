//! Experiment description files.
//!
//! A spec is a TOML document. Every error names the offending field by its
//! dotted path, e.g. `channel.sigma`.
//!
//! ```toml
//! name = "burst"
//! output_dir = "out/burst"
//!
//! [plant]
//! a = [[0.1, -1.0], [1.1, 1.8]]
//! b = [[0.0], [1.0]]
//! k = [[-0.9277, -1.2615]]
//! x0 = [1.0, 1.0]
//! p = [[0.7728, 0.8554], [0.8554, 3.2649]]
//!
//! [channel]
//! c = 1.0
//! xi = 3.0
//! sigma = 0.4
//!
//! [attack]
//! kind = "burst"
//! sleep = 960
//! jam = 40
//! power = 32.0
//! cumulative = { kappa = 0.0, rate = 1.28 }
//!
//! [disturbance]
//! kind = "uniform"
//! half_width = 0.5
//!
//! [run]
//! horizon = 2000
//! runs = 500
//! seed = 1
//! ```

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use toml::{Table, Value};

use super::{CliError, Mode};
use crate::analysis::Condition;
use crate::attacks::{sleep_jam_strategy, SleepJamParams};
use crate::channel::PHatEnvelope;
use crate::model::{AttackStrategy, Budget, BudgetKind, ChannelParams, DisturbanceModel, PlantModel, Schedule};
use crate::sim::CountermeasureParams;

/// Default limit on `horizon * runs` per ensemble.
pub const DEFAULT_COMPUTE_CAP: u64 = 100_000_000;

#[derive(Debug, Clone)]
pub struct PlantSpec {
    pub model: PlantModel,
    /// Weight matrix of the P-induced norm.
    pub p: Option<DMatrix<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum EnvelopeSpec {
    Shifted,
    Shift(f64),
    Tabulated(Vec<(f64, f64)>),
}

#[derive(Debug, Clone)]
pub struct ChannelSpec {
    pub params: ChannelParams,
    pub envelope: EnvelopeSpec,
}

impl ChannelSpec {
    pub fn envelope(&self) -> crate::Result<PHatEnvelope> {
        match &self.envelope {
            EnvelopeSpec::Shifted => PHatEnvelope::shifted(self.params),
            EnvelopeSpec::Shift(psi) => PHatEnvelope::with_shift(self.params, *psi),
            EnvelopeSpec::Tabulated(knots) => PHatEnvelope::tabulated(self.params, knots.clone()),
        }
    }
}

#[derive(Debug, Clone)]
pub enum AttackSpec {
    Constant { power: f64 },
    Burst { sleep: u64, jam: u64, power: f64, period: Option<u64> },
    SleepJam(SleepJamParams),
    Table(Vec<f64>),
}

#[derive(Debug, Clone)]
pub struct AttackBlock {
    pub spec: AttackSpec,
    /// Budgets declared in the file; they replace generated ones of the same kind.
    pub budgets: Vec<Budget>,
}

impl AttackBlock {
    pub fn strategy(&self, channel: &ChannelParams) -> crate::Result<AttackStrategy> {
        let base = match &self.spec {
            AttackSpec::Constant { power } => crate::attacks::constant_strategy(*power)?,
            AttackSpec::Burst { sleep, jam, power, period } => {
                crate::attacks::explicit_strategy(*sleep, *jam, *power, *period)?
            }
            AttackSpec::SleepJam(p) => sleep_jam_strategy(p, channel)?.strategy,
            AttackSpec::Table(values) => AttackStrategy::new(Schedule::Table(values.clone().into()), vec![])?,
        };
        let mut budgets: Vec<Budget> =
            base.budgets().iter().copied().filter(|b| self.budgets.iter().all(|d| d.kind != b.kind)).collect();
        budgets.extend(self.budgets.iter().copied());
        AttackStrategy::new(base.schedule().clone(), budgets)
    }
}

/// Which analytic bound `simulate` compares against.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundChoice {
    /// Disturbance-free decay under a cumulative budget.
    Decay,
    /// Bounded disturbance under a windowed budget.
    Bounded,
    /// Disturbance with finite second moment under a windowed budget.
    SecondMoment,
}

impl BoundChoice {
    fn parse(s: &str) -> Option<Self> {
        match s {
            "decay" => Some(Self::Decay),
            "bounded" => Some(Self::Bounded),
            "second-moment" => Some(Self::SecondMoment),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunSpec {
    pub horizon: usize,
    pub runs: usize,
    pub seed: u64,
    pub bound: Option<BoundChoice>,
    /// Number of leading runs written out as trajectory files.
    pub trajectories: usize,
    /// `(z, tau)` of an exceedance estimate.
    pub exceedance: Option<(f64, u64)>,
    pub compute_cap: u64,
}

impl Default for RunSpec {
    fn default() -> Self {
        Self {
            horizon: 2000,
            runs: 500,
            seed: 0,
            bound: None,
            trajectories: 0,
            exceedance: None,
            compute_cap: DEFAULT_COMPUTE_CAP,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AnalysisSpec {
    pub conditions: Vec<Condition>,
    /// Average power at which certificates are evaluated.
    pub level: Option<f64>,
    pub kappa: f64,
}

impl Default for AnalysisSpec {
    fn default() -> Self {
        Self { conditions: Condition::ALL.to_vec(), level: None, kappa: 0.0 }
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub name: String,
    pub mode: Option<Mode>,
    pub output_dir: Option<PathBuf>,
    pub plant: Option<PlantSpec>,
    pub channel: Option<ChannelSpec>,
    pub attack: Option<AttackBlock>,
    pub disturbance: DisturbanceModel,
    /// `(xi_c, n_c, t_c)`; the nominal power is the channel's.
    pub countermeasure: Option<(f64, u32, u32)>,
    pub run: RunSpec,
    pub analysis: AnalysisSpec,
}

impl ExperimentSpec {
    pub fn from_path(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let table: Table = text.parse().map_err(|e: toml::de::Error| CliError::config("<file>", e.message()))?;
        let root = Section { path: String::new(), table: &table };
        root.allow(&[
            "name",
            "mode",
            "output_dir",
            "plant",
            "channel",
            "attack",
            "disturbance",
            "countermeasure",
            "run",
            "analysis",
        ])?;
        let name = root.opt_str("name")?.unwrap_or("experiment").to_string();
        let mode = match root.opt_str("mode")? {
            Some(m) => Some(Mode::parse(m).ok_or_else(|| root.err("mode", format!("unknown mode `{m}`")))?),
            None => None,
        };
        let output_dir = root.opt_str("output_dir")?.map(PathBuf::from);
        let plant = root.sub("plant")?.map(|s| parse_plant(&s)).transpose()?;
        let channel = root.sub("channel")?.map(|s| parse_channel(&s)).transpose()?;
        let attack = root.sub("attack")?.map(|s| parse_attack(&s)).transpose()?;
        let disturbance = match root.sub("disturbance")? {
            Some(s) => parse_disturbance(&s)?,
            None => DisturbanceModel::None,
        };
        if let (Some(p), false) = (&plant, disturbance.is_none()) {
            disturbance.validate(&p.model).map_err(|e| CliError::config("disturbance", e.to_string()))?;
        }
        let countermeasure = root.sub("countermeasure")?.map(|s| parse_countermeasure(&s)).transpose()?;
        let run = match root.sub("run")? {
            Some(s) => parse_run(&s)?,
            None => RunSpec::default(),
        };
        let analysis = match root.sub("analysis")? {
            Some(s) => parse_analysis(&s)?,
            None => AnalysisSpec::default(),
        };
        Ok(Self { name, mode, output_dir, plant, channel, attack, disturbance, countermeasure, run, analysis })
    }

    pub fn require_plant(&self) -> Result<&PlantSpec, CliError> {
        self.plant.as_ref().ok_or_else(|| CliError::config("plant", "section is required for this mode"))
    }

    pub fn require_channel(&self) -> Result<&ChannelSpec, CliError> {
        self.channel.as_ref().ok_or_else(|| CliError::config("channel", "section is required for this mode"))
    }

    pub fn require_attack(&self) -> Result<&AttackBlock, CliError> {
        self.attack.as_ref().ok_or_else(|| CliError::config("attack", "section is required for this mode"))
    }

    pub fn require_p(&self) -> Result<&DMatrix<f64>, CliError> {
        self.require_plant()?
            .p
            .as_ref()
            .ok_or_else(|| CliError::config("plant.p", "norm weight matrix is required for this mode"))
    }

    pub fn countermeasure_params(&self) -> Result<Option<CountermeasureParams>, CliError> {
        let Some((xi_c, n_c, t_c)) = self.countermeasure else { return Ok(None) };
        let nominal = self.require_channel()?.params.xi;
        CountermeasureParams::new(xi_c, n_c, t_c, nominal)
            .map(Some)
            .map_err(|e| CliError::config("countermeasure.xi_c", e.to_string()))
    }
}

/// A table plus its dotted path, for error messages.
struct Section<'a> {
    path: String,
    table: &'a Table,
}

impl<'a> Section<'a> {
    fn field(&self, key: &str) -> String {
        if self.path.is_empty() {
            key.to_string()
        } else {
            format!("{}.{key}", self.path)
        }
    }

    fn err(&self, key: &str, message: impl Into<String>) -> CliError {
        CliError::config(self.field(key), message)
    }

    fn allow(&self, keys: &[&str]) -> Result<(), CliError> {
        match self.table.keys().find(|k| !keys.contains(&k.as_str())) {
            Some(k) => Err(self.err(k, "unknown field")),
            None => Ok(()),
        }
    }

    fn sub(&self, key: &str) -> Result<Option<Section<'a>>, CliError> {
        match self.table.get(key) {
            None => Ok(None),
            Some(Value::Table(t)) => Ok(Some(Section { path: self.field(key), table: t })),
            Some(_) => Err(self.err(key, "expected a table")),
        }
    }

    fn req_sub(&self, key: &str) -> Result<Section<'a>, CliError> {
        self.sub(key)?.ok_or_else(|| self.err(key, "missing required table"))
    }

    fn opt_f64(&self, key: &str) -> Result<Option<f64>, CliError> {
        match self.table.get(key) {
            None => Ok(None),
            Some(v) => as_f64(v).map(Some).ok_or_else(|| self.err(key, "expected a number")),
        }
    }

    fn f64(&self, key: &str) -> Result<f64, CliError> {
        self.opt_f64(key)?.ok_or_else(|| self.err(key, "missing required field"))
    }

    fn opt_u64(&self, key: &str) -> Result<Option<u64>, CliError> {
        match self.table.get(key) {
            None => Ok(None),
            Some(Value::Integer(i)) if *i >= 0 => Ok(Some(*i as u64)),
            Some(_) => Err(self.err(key, "expected a nonnegative integer")),
        }
    }

    fn u64(&self, key: &str) -> Result<u64, CliError> {
        self.opt_u64(key)?.ok_or_else(|| self.err(key, "missing required field"))
    }

    fn u32(&self, key: &str) -> Result<u32, CliError> {
        u32::try_from(self.u64(key)?).map_err(|_| self.err(key, "value too large"))
    }

    fn opt_str(&self, key: &str) -> Result<Option<&'a str>, CliError> {
        match self.table.get(key) {
            None => Ok(None),
            Some(Value::String(s)) => Ok(Some(s.as_str())),
            Some(_) => Err(self.err(key, "expected a string")),
        }
    }

    fn str(&self, key: &str) -> Result<&'a str, CliError> {
        self.opt_str(key)?.ok_or_else(|| self.err(key, "missing required field"))
    }

    fn opt_vector(&self, key: &str) -> Result<Option<Vec<f64>>, CliError> {
        match self.table.get(key) {
            None => Ok(None),
            Some(Value::Array(items)) => items
                .iter()
                .map(as_f64)
                .collect::<Option<Vec<_>>>()
                .map(Some)
                .ok_or_else(|| self.err(key, "expected an array of numbers")),
            Some(_) => Err(self.err(key, "expected an array of numbers")),
        }
    }

    fn vector(&self, key: &str) -> Result<Vec<f64>, CliError> {
        self.opt_vector(key)?.ok_or_else(|| self.err(key, "missing required field"))
    }

    fn opt_rows(&self, key: &str) -> Result<Option<Vec<Vec<f64>>>, CliError> {
        let Some(value) = self.table.get(key) else { return Ok(None) };
        let bad = || self.err(key, "expected a nested array of numbers, one inner array per row");
        let Value::Array(rows) = value else { return Err(bad()) };
        let rows = rows
            .iter()
            .map(|r| match r {
                Value::Array(items) => items.iter().map(as_f64).collect::<Option<Vec<_>>>(),
                _ => None,
            })
            .collect::<Option<Vec<_>>>()
            .ok_or_else(bad)?;
        if rows.is_empty() || rows.iter().any(|r| r.len() != rows[0].len()) || rows[0].is_empty() {
            return Err(self.err(key, "rows must be nonempty and of equal length"));
        }
        Ok(Some(rows))
    }

    fn rows(&self, key: &str) -> Result<Vec<Vec<f64>>, CliError> {
        self.opt_rows(key)?.ok_or_else(|| self.err(key, "missing required field"))
    }
}

fn as_f64(v: &Value) -> Option<f64> {
    match v {
        Value::Float(f) => Some(*f),
        Value::Integer(i) => Some(*i as f64),
        _ => None,
    }
}

fn to_matrix(rows: &[Vec<f64>]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), rows[0].len(), |i, j| rows[i][j])
}

fn parse_plant(s: &Section) -> Result<PlantSpec, CliError> {
    s.allow(&["a", "b", "k", "x0", "p"])?;
    let a = s.rows("a")?;
    let b = s.rows("b")?;
    let k = s.rows("k")?;
    let x0 = s.vector("x0")?;
    let model = PlantModel::new(to_matrix(&a), to_matrix(&b), to_matrix(&k), DVector::from_vec(x0))
        .map_err(|e| CliError::config(s.path.clone(), e.to_string()))?;
    let p = match s.opt_rows("p")? {
        Some(rows) => {
            let p = to_matrix(&rows);
            crate::analysis::NormContext::new(p.clone()).map_err(|e| s.err("p", e.to_string()))?;
            if p.nrows() != model.state_dim() {
                return Err(s.err("p", format!("must be {0}x{0}", model.state_dim())));
            }
            Some(p)
        }
        None => None,
    };
    Ok(PlantSpec { model, p })
}

fn parse_channel(s: &Section) -> Result<ChannelSpec, CliError> {
    s.allow(&["c", "xi", "sigma", "envelope", "psi", "knots"])?;
    let (c, xi, sigma) = (s.f64("c")?, s.f64("xi")?, s.f64("sigma")?);
    let params = ChannelParams::new(c, xi, sigma).map_err(|e| CliError::config(s.path.clone(), e.to_string()))?;
    let envelope = match s.opt_str("envelope")?.unwrap_or("shifted") {
        "shifted" => match s.opt_f64("psi")? {
            Some(psi) => EnvelopeSpec::Shift(psi),
            None => EnvelopeSpec::Shifted,
        },
        "tabulated" => {
            let rows = s.rows("knots")?;
            if rows[0].len() != 2 {
                return Err(s.err("knots", "each knot is a [v, phat] pair"));
            }
            EnvelopeSpec::Tabulated(rows.iter().map(|r| (r[0], r[1])).collect())
        }
        other => return Err(s.err("envelope", format!("unknown envelope `{other}`"))),
    };
    let spec = ChannelSpec { params, envelope };
    spec.envelope().map_err(|e| s.err("envelope", e.to_string()))?;
    Ok(spec)
}

fn parse_budget(s: &Section, kind: BudgetKind) -> Result<Budget, CliError> {
    s.allow(&["kappa", "rate"])?;
    let (kappa, rate) = (s.f64("kappa")?, s.f64("rate")?);
    if !(kappa >= 0.0 && rate >= 0.0) {
        return Err(CliError::config(s.path.clone(), "kappa and rate must be nonnegative"));
    }
    Ok(Budget { kind, kappa, rate })
}

fn parse_attack(s: &Section) -> Result<AttackBlock, CliError> {
    let kind = s.str("kind")?;
    let common = ["kind", "cumulative", "windowed"];
    let allow = |extra: &[&str]| s.allow(&[&common[..], extra].concat());
    let spec = match kind {
        "constant" => {
            allow(&["power"])?;
            AttackSpec::Constant { power: s.f64("power")? }
        }
        "burst" => {
            allow(&["sleep", "jam", "power", "period"])?;
            AttackSpec::Burst { sleep: s.u64("sleep")?, jam: s.u64("jam")?, power: s.f64("power")?, period: s.opt_u64("period")? }
        }
        "sleep-jam" => {
            allow(&["rate", "rho", "target", "disturbance", "open_loop_gain"])?;
            let p = SleepJamParams {
                rate: s.f64("rate")?,
                rho: s.f64("rho")?,
                target: s.f64("target")?,
                disturbance: s.f64("disturbance")?,
                open_loop_gain: s.f64("open_loop_gain")?,
            };
            p.validate().map_err(|e| CliError::config(s.path.clone(), e.to_string()))?;
            AttackSpec::SleepJam(p)
        }
        "table" => {
            allow(&["values"])?;
            AttackSpec::Table(s.vector("values")?)
        }
        other => return Err(s.err("kind", format!("unknown attack kind `{other}`"))),
    };
    let mut budgets = Vec::new();
    if let Some(b) = s.sub("cumulative")? {
        budgets.push(parse_budget(&b, BudgetKind::Cumulative)?);
    }
    if let Some(b) = s.sub("windowed")? {
        budgets.push(parse_budget(&b, BudgetKind::Windowed)?);
    }
    let block = AttackBlock { spec, budgets };
    // Sleep-jam needs the channel; it is checked when the strategy is built.
    if !matches!(block.spec, AttackSpec::SleepJam(_)) {
        block
            .strategy(&ChannelParams::new(1.0, 1.0, 1.0).expect("unit channel is valid"))
            .map_err(|e| CliError::config(s.path.clone(), e.to_string()))?;
    }
    Ok(block)
}

fn parse_disturbance(s: &Section) -> Result<DisturbanceModel, CliError> {
    let kind = s.str("kind")?;
    let model = match kind {
        "none" => {
            s.allow(&["kind"])?;
            DisturbanceModel::None
        }
        "uniform" => {
            s.allow(&["kind", "half_width"])?;
            DisturbanceModel::Uniform { half_width: s.f64("half_width")? }
        }
        "gaussian" => {
            s.allow(&["kind", "std_dev"])?;
            DisturbanceModel::Gaussian { std_dev: s.f64("std_dev")? }
        }
        "constant" => {
            s.allow(&["kind", "value"])?;
            DisturbanceModel::Constant { value: s.vector("value")? }
        }
        "control-path" => {
            s.allow(&["kind", "plant_side", "input_side"])?;
            DisturbanceModel::ControlPath {
                plant_side: Box::new(parse_disturbance(&s.req_sub("plant_side")?)?),
                input_side: Box::new(parse_disturbance(&s.req_sub("input_side")?)?),
            }
        }
        other => return Err(s.err("kind", format!("unknown disturbance kind `{other}`"))),
    };
    let positive = |key: &str, v: f64| {
        if v >= 0.0 && v.is_finite() {
            Ok(())
        } else {
            Err(s.err(key, "must be finite and nonnegative"))
        }
    };
    match &model {
        DisturbanceModel::Uniform { half_width } => positive("half_width", *half_width)?,
        DisturbanceModel::Gaussian { std_dev } => positive("std_dev", *std_dev)?,
        _ => {}
    }
    Ok(model)
}

fn parse_countermeasure(s: &Section) -> Result<(f64, u32, u32), CliError> {
    s.allow(&["xi_c", "n_c", "t_c"])?;
    Ok((s.f64("xi_c")?, s.u32("n_c")?, s.u32("t_c")?))
}

fn parse_run(s: &Section) -> Result<RunSpec, CliError> {
    s.allow(&["horizon", "runs", "seed", "bound", "trajectories", "exceedance", "compute_cap"])?;
    let d = RunSpec::default();
    let positive = |key: &str, v: Option<u64>, default: usize| -> Result<usize, CliError> {
        match v {
            Some(0) => Err(s.err(key, "must be at least 1")),
            Some(v) => usize::try_from(v).map_err(|_| s.err(key, "value too large")),
            None => Ok(default),
        }
    };
    let bound = match s.opt_str("bound")? {
        None | Some("none") => None,
        Some(b) => Some(BoundChoice::parse(b).ok_or_else(|| {
            s.err("bound", format!("unknown bound `{b}`; expected decay, bounded, second-moment or none"))
        })?),
    };
    let exceedance = match s.sub("exceedance")? {
        Some(e) => {
            e.allow(&["z", "tau"])?;
            Some((e.f64("z")?, e.u64("tau")?))
        }
        None => None,
    };
    Ok(RunSpec {
        horizon: positive("horizon", s.opt_u64("horizon")?, d.horizon)?,
        runs: positive("runs", s.opt_u64("runs")?, d.runs)?,
        seed: s.opt_u64("seed")?.unwrap_or(d.seed),
        bound,
        trajectories: s.opt_u64("trajectories")?.unwrap_or(0) as usize,
        exceedance,
        compute_cap: s.opt_u64("compute_cap")?.unwrap_or(d.compute_cap),
    })
}

fn parse_analysis(s: &Section) -> Result<AnalysisSpec, CliError> {
    s.allow(&["conditions", "level", "kappa"])?;
    let conditions = match s.table.get("conditions") {
        None => Condition::ALL.to_vec(),
        Some(Value::Array(items)) => items
            .iter()
            .map(|v| v.as_str().and_then(Condition::parse))
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| s.err("conditions", "expected condition names such as \"first-moment\""))?,
        Some(_) => return Err(s.err("conditions", "expected an array of condition names")),
    };
    let kappa = s.opt_f64("kappa")?.unwrap_or(0.0);
    if !(kappa >= 0.0) {
        return Err(s.err("kappa", "must be nonnegative"));
    }
    let level = s.opt_f64("level")?;
    if level.is_some_and(|v| !(v >= 0.0)) {
        return Err(s.err("level", "must be nonnegative"));
    }
    Ok(AnalysisSpec { conditions, level, kappa })
}
