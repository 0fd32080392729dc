//! Experiment configuration: parsing and full structural validation.
//!
//! The document is TOML (a JSON document with the same structure is also
//! accepted when the file name ends in `.json`). Validation never stops at
//! the first problem; every malformed or missing field is reported.

use std::fmt;
use std::path::{Path, PathBuf};

use toml::{Table, Value};

use relent_core::lattice::Offset;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TaskKind {
    Check,
    Evolve,
    Entropy,
    Reverse,
    Simulate,
}

impl TaskKind {
    pub fn name(self) -> &'static str {
        match self {
            TaskKind::Check => "check",
            TaskKind::Evolve => "evolve",
            TaskKind::Entropy => "entropy",
            TaskKind::Reverse => "reverse",
            TaskKind::Simulate => "simulate",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "check" => TaskKind::Check,
            "evolve" => TaskKind::Evolve,
            "entropy" => TaskKind::Entropy,
            "reverse" => TaskKind::Reverse,
            "simulate" => TaskKind::Simulate,
            _ => return None,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum PotentialSource {
    File(PathBuf),
    Zero,
    Ising { j: f64, h: f64 },
    Potts { j: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub potential: PotentialSource,
    /// Overrides the file's beta when present.
    pub beta: Option<f64>,
    pub q: usize,
    pub dims: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum FamilyKind {
    HeatBath,
    Cyclic { kappa: f64 },
    File(PathBuf),
}

#[derive(Clone, Debug, PartialEq)]
pub struct FamilyConfig {
    pub kind: FamilyKind,
    pub weight: f64,
}

/// A law on configurations, used for initial laws and for nu.
#[derive(Clone, Debug, PartialEq)]
pub enum LawSpec {
    Uniform,
    Product(Vec<f64>),
    Gibbs { beta: f64 },
    Markov(Vec<f64>),
    Point(Vec<u8>),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reference {
    Auto,
    Exact,
    Markov,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TaskConfig {
    pub kind: Option<TaskKind>,
    pub times: Vec<f64>,
    pub initial: LawSpec,
    pub n_max: usize,
    pub nu: Option<LawSpec>,
    pub reference: Reference,
    pub horizon: f64,
    pub replicas: usize,
    pub window: Vec<Offset>,
    pub anchor: Option<usize>,
    pub pool: bool,
    pub log_events: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tolerances {
    pub stationarity: f64,
    pub switching: f64,
    pub oscillation: f64,
    pub reversal: f64,
    pub monotone: f64,
    pub identity: f64,
    pub dlr: f64,
    pub sequence: f64,
    pub lyapunov_rel: f64,
    pub lyapunov_abs: f64,
    pub attractor_ratio: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            stationarity: 1e-10,
            switching: 1e-10,
            oscillation: 1e-10,
            reversal: 1e-12,
            monotone: 1e-10,
            identity: 1e-12,
            dlr: 1e-12,
            sequence: 1e-12,
            lyapunov_rel: 1e-10,
            lyapunov_abs: 1e-13,
            attractor_ratio: 0.2,
        }
    }
}

impl Tolerances {
    fn slot(&mut self, key: &str) -> Option<&mut f64> {
        Some(match key {
            "stationarity" => &mut self.stationarity,
            "switching" => &mut self.switching,
            "oscillation" => &mut self.oscillation,
            "reversal" => &mut self.reversal,
            "monotone" => &mut self.monotone,
            "identity" => &mut self.identity,
            "dlr" => &mut self.dlr,
            "sequence" => &mut self.sequence,
            "lyapunov_rel" => &mut self.lyapunov_rel,
            "lyapunov_abs" => &mut self.lyapunov_abs,
            "attractor_ratio" => &mut self.attractor_ratio,
            _ => return None,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub dynamics: Vec<FamilyConfig>,
    pub task: TaskConfig,
    pub output: Option<PathBuf>,
    pub seed: u64,
    pub tolerances: Tolerances,
}

/// One validation finding, located by line (parse errors) or field path.
#[derive(Clone, Debug, PartialEq)]
pub struct Diagnostic {
    pub line: Option<usize>,
    pub field: String,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "line {l}: {}", self.message),
            None => write!(f, "{}: {}", self.field, self.message),
        }
    }
}

/// Validation failure carrying every diagnostic.
#[derive(Debug)]
pub struct ConfigError(pub Vec<Diagnostic>);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "invalid configuration ({} problem{}):", self.0.len(), if self.0.len() == 1 { "" } else { "s" })?;
        for d in &self.0 {
            writeln!(f, "  {d}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigError {}

impl ConfigError {
    pub fn field(field: &str, message: impl Into<String>) -> Self {
        Self(vec![Diagnostic { line: None, field: field.into(), message: message.into() }])
    }
}

struct Reader {
    diags: Vec<Diagnostic>,
}

impl Reader {
    fn err(&mut self, field: impl Into<String>, message: impl Into<String>) {
        self.diags.push(Diagnostic { line: None, field: field.into(), message: message.into() });
    }

    fn missing(&mut self, field: &str) {
        self.err(field, "required field is missing");
    }

    fn table<'a>(&mut self, parent: &'a Table, key: &str, path: &str) -> Option<&'a Table> {
        match parent.get(key) {
            None => None,
            Some(Value::Table(t)) => Some(t),
            Some(_) => {
                self.err(path, "expected a table");
                None
            }
        }
    }

    fn float(&mut self, v: &Value, path: &str) -> Option<f64> {
        let x = match v {
            Value::Float(x) => *x,
            Value::Integer(i) => *i as f64,
            _ => {
                self.err(path, "expected a number");
                return None;
            }
        };
        if !x.is_finite() {
            self.err(path, "must be finite");
            return None;
        }
        Some(x)
    }

    fn opt_float(&mut self, t: &Table, key: &str, path: &str) -> Option<f64> {
        t.get(key).and_then(|v| self.float(v, &format!("{path}.{key}")))
    }

    fn uint(&mut self, v: &Value, path: &str) -> Option<u64> {
        match v {
            Value::Integer(i) if *i >= 0 => Some(*i as u64),
            Value::Integer(_) => {
                self.err(path, "must be nonnegative");
                None
            }
            _ => {
                self.err(path, "expected an integer");
                None
            }
        }
    }

    fn opt_uint(&mut self, t: &Table, key: &str, path: &str) -> Option<u64> {
        t.get(key).and_then(|v| self.uint(v, &format!("{path}.{key}")))
    }

    fn string<'a>(&mut self, v: &'a Value, path: &str) -> Option<&'a str> {
        match v {
            Value::String(s) => Some(s),
            _ => {
                self.err(path, "expected a string");
                None
            }
        }
    }

    fn boolean(&mut self, t: &Table, key: &str, path: &str) -> Option<bool> {
        match t.get(key) {
            None => None,
            Some(Value::Boolean(b)) => Some(*b),
            Some(_) => {
                self.err(format!("{path}.{key}"), "expected true or false");
                None
            }
        }
    }

    fn array<'a>(&mut self, v: &'a Value, path: &str) -> Option<&'a Vec<Value>> {
        match v {
            Value::Array(a) => Some(a),
            _ => {
                self.err(path, "expected an array");
                None
            }
        }
    }

    fn floats(&mut self, v: &Value, path: &str) -> Option<Vec<f64>> {
        let a = self.array(v, path)?;
        let out: Vec<Option<f64>> = a.iter().enumerate().map(|(i, x)| self.float(x, &format!("{path}[{i}]"))).collect();
        out.into_iter().collect()
    }

    fn uints(&mut self, v: &Value, path: &str) -> Option<Vec<u64>> {
        let a = self.array(v, path)?;
        let out: Vec<Option<u64>> = a.iter().enumerate().map(|(i, x)| self.uint(x, &format!("{path}[{i}]"))).collect();
        out.into_iter().collect()
    }

    fn unknown_keys(&mut self, t: &Table, allowed: &[&str], path: &str) {
        for k in t.keys() {
            if !allowed.contains(&k.as_str()) {
                let field = if path.is_empty() { k.clone() } else { format!("{path}.{k}") };
                self.err(field, "unknown field");
            }
        }
    }

    fn file(&mut self, v: &Value, base: &Path, path: &str) -> Option<PathBuf> {
        let s = self.string(v, path)?;
        let p = base.join(s);
        if !p.is_file() {
            self.err(path, format!("file {} does not exist", p.display()));
            return None;
        }
        Some(p)
    }

    fn probability(&mut self, v: &Value, path: &str) -> Option<Vec<f64>> {
        let law = self.floats(v, path)?;
        if law.iter().any(|&x| x < 0.0) || (law.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            self.err(path, "must be nonnegative and sum to one");
            return None;
        }
        Some(law)
    }
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].bytes().filter(|&b| b == b'\n').count() + 1
}

fn parse_document(text: &str, json: bool) -> Result<Table, Vec<Diagnostic>> {
    if json {
        return serde_json::from_str::<Table>(text).map_err(|e| {
            vec![Diagnostic { line: Some(e.line()), field: String::new(), message: e.to_string() }]
        });
    }
    text.parse::<Table>().map_err(|e| {
        let line = e.span().map(|s| line_of(text, s.start));
        vec![Diagnostic { line, field: String::new(), message: e.message().to_string() }]
    })
}

/// Parses and validates a configuration. `base` resolves relative file
/// paths; `command` is the subcommand, which selects task-specific checks.
pub fn validate(text: &str, base: &Path, json: bool, command: Option<TaskKind>) -> Result<ExperimentConfig, Vec<Diagnostic>> {
    let doc = parse_document(text, json)?;
    let mut r = Reader { diags: Vec::new() };
    r.unknown_keys(&doc, &["model", "dynamics", "task", "output", "seed", "tolerances"], "");

    let model = read_model(&mut r, &doc, base);
    let dynamics = read_dynamics(&mut r, &doc, base);
    let task = read_task(&mut r, &doc, command);

    let output = match r.table(&doc, "output", "output") {
        Some(t) => {
            r.unknown_keys(t, &["dir"], "output");
            t.get("dir").and_then(|v| r.string(v, "output.dir")).map(PathBuf::from)
        }
        None => None,
    };
    let seed = doc.get("seed").and_then(|v| r.uint(v, "seed")).unwrap_or(0);
    let mut tolerances = Tolerances::default();
    if let Some(t) = r.table(&doc, "tolerances", "tolerances") {
        for (k, v) in t {
            let path = format!("tolerances.{k}");
            let Some(x) = r.float(v, &path) else { continue };
            match tolerances.slot(k) {
                Some(_) if x <= 0.0 => r.err(path, "must be positive"),
                Some(slot) => *slot = x,
                None => r.err(path, "unknown field"),
            }
        }
    }

    if let (Some(m), Some(fams)) = (&model, &dynamics) {
        let cyclic = fams.iter().any(|f| matches!(f.kind, FamilyKind::Cyclic { .. }));
        if cyclic && m.q < 2 {
            r.err("dynamics.families", "cyclic dynamics needs q >= 2");
        }
        if let Some(t) = &task {
            check_task_against_model(&mut r, t, m, command.or(t.kind));
        }
    }

    if !r.diags.is_empty() {
        return Err(r.diags);
    }
    Ok(ExperimentConfig {
        model: model.unwrap(),
        dynamics: dynamics.unwrap(),
        task: task.unwrap(),
        output,
        seed,
        tolerances,
    })
}

fn read_model(r: &mut Reader, doc: &Table, base: &Path) -> Option<ModelConfig> {
    let Some(t) = r.table(doc, "model", "model") else {
        if !doc.contains_key("model") {
            r.missing("model.potential");
            r.missing("model.q");
            r.missing("model.dims");
        }
        return None;
    };
    r.unknown_keys(t, &["potential", "builtin", "j", "h", "beta", "q", "dims"], "model");
    let potential = match (t.get("potential"), t.get("builtin")) {
        (Some(_), Some(_)) => {
            r.err("model", "give either `potential` or `builtin`, not both");
            None
        }
        (Some(v), None) => r.file(v, base, "model.potential").map(PotentialSource::File),
        (None, Some(v)) => {
            let j = r.opt_float(t, "j", "model").unwrap_or(1.0);
            let h = r.opt_float(t, "h", "model").unwrap_or(0.0);
            match r.string(v, "model.builtin") {
                Some("zero") => Some(PotentialSource::Zero),
                Some("ising") => Some(PotentialSource::Ising { j, h }),
                Some("potts") => Some(PotentialSource::Potts { j }),
                Some(other) => {
                    r.err("model.builtin", format!("unknown builtin `{other}` (zero, ising, potts)"));
                    None
                }
                None => None,
            }
        }
        (None, None) => {
            r.missing("model.potential");
            None
        }
    };
    let beta = r.opt_float(t, "beta", "model");
    let q = match r.opt_uint(t, "q", "model") {
        Some(q) if q < 2 => {
            r.err("model.q", "q must be at least 2");
            None
        }
        Some(q) if q > 255 => {
            r.err("model.q", "q must be at most 255");
            None
        }
        Some(q) => Some(q as usize),
        None => {
            if !t.contains_key("q") {
                r.missing("model.q");
            }
            None
        }
    };
    let dims = match t.get("dims") {
        Some(v) => match r.uints(v, "model.dims") {
            Some(d) if d.is_empty() => {
                r.err("model.dims", "need at least one side");
                None
            }
            Some(d) if d.iter().any(|&s| s < 1) => {
                r.err("model.dims", "sides must be positive");
                None
            }
            Some(d) => Some(d.into_iter().map(|s| s as usize).collect::<Vec<_>>()),
            None => None,
        },
        None => {
            r.missing("model.dims");
            None
        }
    };
    if matches!(potential, Some(PotentialSource::Ising { .. })) && q.is_some_and(|q| q != 2) {
        r.err("model.q", "the ising builtin has q = 2");
    }
    Some(ModelConfig { potential: potential?, beta, q: q?, dims: dims? })
}

fn read_dynamics(r: &mut Reader, doc: &Table, base: &Path) -> Option<Vec<FamilyConfig>> {
    let Some(t) = r.table(doc, "dynamics", "dynamics") else {
        if !doc.contains_key("dynamics") {
            r.missing("dynamics.families");
        }
        return None;
    };
    r.unknown_keys(t, &["families"], "dynamics");
    let Some(v) = t.get("families") else {
        r.missing("dynamics.families");
        return None;
    };
    let list = r.array(v, "dynamics.families")?;
    if list.is_empty() {
        r.err("dynamics.families", "need at least one family");
        return None;
    }
    let mut out = Vec::new();
    let mut ok = true;
    for (i, item) in list.iter().enumerate() {
        let path = format!("dynamics.families[{i}]");
        let Value::Table(f) = item else {
            r.err(&path, "expected a table");
            ok = false;
            continue;
        };
        r.unknown_keys(f, &["name", "weight", "kappa", "file"], &path);
        let weight = r.opt_float(f, "weight", &path).unwrap_or(1.0);
        if weight <= 0.0 {
            r.err(format!("{path}.weight"), "must be positive");
            ok = false;
        }
        let kind = match f.get("name").and_then(|v| r.string(v, &format!("{path}.name"))) {
            Some("heat_bath") => Some(FamilyKind::HeatBath),
            Some("cyclic") => {
                let kappa = r.opt_float(f, "kappa", &path).unwrap_or(1.0);
                if kappa <= 0.0 {
                    r.err(format!("{path}.kappa"), "must be positive");
                }
                Some(FamilyKind::Cyclic { kappa })
            }
            Some("file") => match f.get("file") {
                Some(v) => r.file(v, base, &format!("{path}.file")).map(FamilyKind::File),
                None => {
                    r.missing(&format!("{path}.file"));
                    None
                }
            },
            Some(other) => {
                r.err(format!("{path}.name"), format!("unknown family `{other}` (heat_bath, cyclic, file)"));
                None
            }
            None => {
                if !f.contains_key("name") {
                    r.missing(&format!("{path}.name"));
                }
                None
            }
        };
        match kind {
            Some(kind) => out.push(FamilyConfig { kind, weight }),
            None => ok = false,
        }
    }
    ok.then_some(out)
}

fn read_law(r: &mut Reader, v: &Value, path: &str) -> Option<LawSpec> {
    let Value::Table(t) = v else {
        r.err(path, "expected a table with a `kind` field");
        return None;
    };
    r.unknown_keys(t, &["kind", "law", "beta", "transition", "spins"], path);
    let need = |r: &mut Reader, key: &str| -> Option<&Value> {
        let v = t.get(key);
        if v.is_none() {
            r.missing(&format!("{path}.{key}"));
        }
        v
    };
    match t.get("kind").and_then(|k| r.string(k, &format!("{path}.kind"))) {
        Some("uniform") => Some(LawSpec::Uniform),
        Some("product") => need(r, "law").and_then(|v| r.probability(v, &format!("{path}.law"))).map(LawSpec::Product),
        Some("gibbs") => need(r, "beta").and_then(|v| r.float(v, &format!("{path}.beta"))).map(|beta| LawSpec::Gibbs { beta }),
        Some("markov") => need(r, "transition").and_then(|v| r.floats(v, &format!("{path}.transition"))).map(LawSpec::Markov),
        Some("point") => {
            let s = need(r, "spins").and_then(|v| r.uints(v, &format!("{path}.spins")))?;
            if s.iter().any(|&x| x > 255) {
                r.err(format!("{path}.spins"), "spin values must be below q");
                return None;
            }
            Some(LawSpec::Point(s.into_iter().map(|x| x as u8).collect()))
        }
        Some(other) => {
            r.err(format!("{path}.kind"), format!("unknown law `{other}` (uniform, product, gibbs, markov, point)"));
            None
        }
        None => {
            if !t.contains_key("kind") {
                r.missing(&format!("{path}.kind"));
            }
            None
        }
    }
}

fn read_task(r: &mut Reader, doc: &Table, command: Option<TaskKind>) -> Option<TaskConfig> {
    let empty = Table::new();
    let t = r.table(doc, "task", "task").unwrap_or(&empty);
    r.unknown_keys(
        t,
        &["kind", "times", "initial", "n_max", "nu", "reference", "horizon", "replicas", "window", "anchor", "pool", "log_events"],
        "task",
    );
    let mut ok = true;
    let kind = match t.get("kind").and_then(|v| r.string(v, "task.kind")) {
        Some(s) => match TaskKind::parse(s) {
            Some(k) => Some(k),
            None => {
                r.err("task.kind", format!("unknown task `{s}` (check, evolve, entropy, reverse, simulate)"));
                ok = false;
                None
            }
        },
        None => None,
    };
    if let (Some(k), Some(c)) = (kind, command) {
        if k != c {
            r.err("task.kind", format!("config is for `{}` but the `{}` subcommand was given", k.name(), c.name()));
            ok = false;
        }
    }
    let effective = command.or(kind);
    if effective.is_none() {
        r.missing("task.kind");
        ok = false;
    }

    let times = match t.get("times") {
        Some(v) => match r.floats(v, "task.times") {
            Some(ts) if ts.is_empty() || ts.iter().any(|&x| x < 0.0) || ts.windows(2).any(|w| w[1] < w[0]) => {
                r.err("task.times", "need a nonempty, nondecreasing list of nonnegative times");
                ok = false;
                Vec::new()
            }
            Some(ts) => ts,
            None => {
                ok = false;
                Vec::new()
            }
        },
        None => {
            if matches!(effective, Some(TaskKind::Evolve | TaskKind::Simulate)) {
                r.missing("task.times");
                ok = false;
            }
            Vec::new()
        }
    };
    let initial = match t.get("initial") {
        Some(v) => read_law(r, v, "task.initial").unwrap_or_else(|| {
            ok = false;
            LawSpec::Uniform
        }),
        None => LawSpec::Uniform,
    };
    let n_max = match r.opt_uint(t, "n_max", "task") {
        Some(0) => {
            r.err("task.n_max", "must be at least 1");
            ok = false;
            1
        }
        Some(n) => n as usize,
        None => {
            if t.contains_key("n_max") {
                ok = false;
            } else if effective == Some(TaskKind::Entropy) {
                r.missing("task.n_max");
                ok = false;
            }
            1
        }
    };
    let nu = match t.get("nu") {
        Some(v) => {
            let l = read_law(r, v, "task.nu");
            ok &= l.is_some();
            l
        }
        None => {
            if effective == Some(TaskKind::Entropy) {
                r.missing("task.nu");
                ok = false;
            }
            None
        }
    };
    let reference = match t.get("reference").and_then(|v| r.string(v, "task.reference")) {
        None | Some("auto") => Reference::Auto,
        Some("exact") => Reference::Exact,
        Some("markov") => Reference::Markov,
        Some(other) => {
            r.err("task.reference", format!("unknown reference `{other}` (auto, exact, markov)"));
            ok = false;
            Reference::Auto
        }
    };
    let horizon = match r.opt_float(t, "horizon", "task") {
        Some(h) if h < 0.0 => {
            r.err("task.horizon", "must be nonnegative");
            ok = false;
            0.0
        }
        Some(h) => h,
        None => times.last().copied().unwrap_or(0.0),
    };
    if !times.is_empty() && horizon < *times.last().unwrap() {
        r.err("task.horizon", "must not be earlier than the last time");
        ok = false;
    }
    let replicas = match r.opt_uint(t, "replicas", "task") {
        Some(0) => {
            r.err("task.replicas", "must be positive");
            ok = false;
            1
        }
        Some(n) => n as usize,
        None => 1000,
    };
    let window = match t.get("window") {
        Some(v) => match r.array(v, "task.window") {
            Some(a) => {
                let offs: Vec<Option<Offset>> = a
                    .iter()
                    .enumerate()
                    .map(|(i, o)| {
                        let path = format!("task.window[{i}]");
                        let arr = r.array(o, &path)?;
                        arr.iter()
                            .map(|x| match x {
                                Value::Integer(k) => Some(*k),
                                _ => {
                                    r.err(&path, "offsets are arrays of integers");
                                    None
                                }
                            })
                            .collect()
                    })
                    .collect();
                match offs.into_iter().collect::<Option<Vec<_>>>() {
                    Some(w) if !w.is_empty() => w,
                    Some(_) => {
                        r.err("task.window", "need at least one offset");
                        ok = false;
                        Vec::new()
                    }
                    None => {
                        ok = false;
                        Vec::new()
                    }
                }
            }
            None => {
                ok = false;
                Vec::new()
            }
        },
        None => Vec::new(),
    };
    let anchor = r.opt_uint(t, "anchor", "task").map(|a| a as usize);
    let pool = r.boolean(t, "pool", "task").unwrap_or(false);
    let log_events = r.boolean(t, "log_events", "task").unwrap_or(false);
    ok.then_some(TaskConfig { kind, times, initial, n_max, nu, reference, horizon, replicas, window, anchor, pool, log_events })
}

fn check_task_against_model(r: &mut Reader, t: &TaskConfig, m: &ModelConfig, kind: Option<TaskKind>) {
    let n_sites: usize = m.dims.iter().product();
    let d = m.dims.len();
    let check_law = |r: &mut Reader, law: &LawSpec, path: &str| match law {
        LawSpec::Product(p) if p.len() != m.q => r.err(format!("{path}.law"), format!("need {} entries, one per spin value", m.q)),
        LawSpec::Markov(p) if p.len() != m.q * m.q => r.err(format!("{path}.transition"), format!("need a {0} x {0} matrix", m.q)),
        LawSpec::Markov(_) if d != 1 => r.err(path, "Markov laws need a one-dimensional torus"),
        LawSpec::Point(s) if s.len() != n_sites => r.err(format!("{path}.spins"), format!("need {n_sites} spins")),
        LawSpec::Point(s) if s.iter().any(|&x| x as usize >= m.q) => r.err(format!("{path}.spins"), "spin values must be below q"),
        _ => {}
    };
    if t.window.iter().any(|o| o.len() != d) {
        r.err("task.window", format!("offsets must have {d} components"));
    }
    if t.anchor.is_some_and(|a| a >= n_sites) {
        r.err("task.anchor", format!("must be below the number of sites {n_sites}"));
    }
    match kind {
        Some(TaskKind::Evolve) => {
            check_law(r, &t.initial, "task.initial");
            if matches!(t.initial, LawSpec::Markov(_)) {
                r.err("task.initial", "evolve needs a law on the finite torus (uniform, product, gibbs, point)");
            }
        }
        Some(TaskKind::Simulate) => {
            check_law(r, &t.initial, "task.initial");
            if matches!(t.initial, LawSpec::Markov(_)) {
                r.err("task.initial", "simulate needs a law on the finite torus (uniform, product, gibbs, point)");
            }
        }
        Some(TaskKind::Entropy) => {
            if let Some(nu) = &t.nu {
                check_law(r, nu, "task.nu");
                if matches!(nu, LawSpec::Point(_)) {
                    r.err("task.nu", "point masses are not non-null; use product, gibbs, markov or uniform");
                }
            }
            if t.reference == Reference::Markov && d != 1 {
                r.err("task.reference", "Markov reference needs a one-dimensional torus");
            }
        }
        _ => {}
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(text: &str, cmd: Option<TaskKind>) -> Result<ExperimentConfig, Vec<Diagnostic>> {
        validate(text, Path::new("."), false, cmd)
    }

    fn fields(d: &[Diagnostic]) -> Vec<&str> {
        d.iter().map(|x| x.field.as_str()).collect()
    }

    const MINIMAL: &str = r#"
[model]
builtin = "zero"
q = 2
dims = [4]

[dynamics]
families = [{ name = "heat_bath" }]
"#;

    #[test]
    fn empty_document_lists_all_missing() {
        let d = run("", None).unwrap_err();
        let f = fields(&d);
        for want in ["model.potential", "model.q", "model.dims", "dynamics.families", "task.kind"] {
            assert!(f.contains(&want), "{want} not in {f:?}");
        }
    }

    #[test]
    fn minimal_check_config() {
        let c = run(MINIMAL, Some(TaskKind::Check)).unwrap();
        assert_eq!(c.model.potential, PotentialSource::Zero);
        assert_eq!(c.dynamics, vec![FamilyConfig { kind: FamilyKind::HeatBath, weight: 1.0 }]);
        assert_eq!(c.tolerances, Tolerances::default());
        assert_eq!(c.seed, 0);
    }

    #[test]
    fn negative_beta_accepted_q1_rejected() {
        let neg = MINIMAL.replace("q = 2", "q = 2\nbeta = -0.7");
        assert_eq!(run(&neg, Some(TaskKind::Check)).unwrap().model.beta, Some(-0.7));
        let d = run(&MINIMAL.replace("q = 2", "q = 1"), Some(TaskKind::Check)).unwrap_err();
        assert_eq!(fields(&d), vec!["model.q"]);
    }

    #[test]
    fn all_errors_reported_together() {
        let text = r#"
seed = -3
[model]
potential = "does/not/exist.json"
q = 3
dims = [0]
colour = "red"
[dynamics]
families = [{ name = "cyclic", kappa = -1 }, { name = "warp" }]
[tolerances]
switching = 0
"#;
        let d = run(text, Some(TaskKind::Check)).unwrap_err();
        let f = fields(&d);
        for want in [
            "seed",
            "model.potential",
            "model.dims",
            "model.colour",
            "dynamics.families[0].kappa",
            "dynamics.families[1].name",
            "tolerances.switching",
        ] {
            assert!(f.contains(&want), "{want} not in {f:?}");
        }
    }

    #[test]
    fn parse_error_has_line() {
        let d = run("[model]\nq = 2\ndims = [4\n", None).unwrap_err();
        assert_eq!(d.len(), 1);
        assert!(d[0].line.is_some());
    }

    #[test]
    fn task_requirements_follow_command() {
        let d = run(MINIMAL, Some(TaskKind::Entropy)).unwrap_err();
        assert_eq!(fields(&d), vec!["task.n_max", "task.nu"]);
        let d = run(MINIMAL, Some(TaskKind::Evolve)).unwrap_err();
        assert_eq!(fields(&d), vec!["task.times"]);
        let text = format!("{MINIMAL}\n[task]\nkind = \"evolve\"\ntimes = [0, 1]\n");
        let d = run(&text, Some(TaskKind::Check)).unwrap_err();
        assert_eq!(fields(&d), vec!["task.kind"]);
        assert!(run(&text, None).is_ok());
    }

    #[test]
    fn laws_checked_against_model() {
        let text = format!("{MINIMAL}\n[task]\nn_max = 2\nnu = {{ kind = \"product\", law = [0.2, 0.3, 0.5] }}\n");
        let d = run(&text, Some(TaskKind::Entropy)).unwrap_err();
        assert_eq!(fields(&d), vec!["task.nu.law"]);
        let text = format!("{MINIMAL}\n[task]\ntimes = [1]\ninitial = {{ kind = \"point\", spins = [0, 1, 1] }}\n");
        let d = run(&text, Some(TaskKind::Evolve)).unwrap_err();
        assert_eq!(fields(&d), vec!["task.initial.spins"]);
    }

    #[test]
    fn json_document_accepted() {
        let text = r#"{"model": {"builtin": "ising", "q": 2, "dims": [5], "beta": 0.3},
            "dynamics": {"families": [{"name": "heat_bath"}]}, "task": {"kind": "check"}}"#;
        let c = validate(text, Path::new("."), true, None).unwrap();
        assert_eq!(c.model.potential, PotentialSource::Ising { j: 1.0, h: 0.0 });
        assert_eq!(c.task.kind, Some(TaskKind::Check));
    }
}
