use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::diffusion::BuiltinModel;
use crate::error::{Error, Result};
use crate::tree::{AdaptedProcess, FilteredTree, TreeBuilder};

/// Experiment kinds understood by [`run`](super::run).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    TreeEquality,
    Derandomize,
    ExpApprox,
    TimeChange,
    DiffusionCompare,
    Convergence,
}

impl Kind {
    pub const ALL: [Kind; 6] = [
        Kind::TreeEquality,
        Kind::Derandomize,
        Kind::ExpApprox,
        Kind::TimeChange,
        Kind::DiffusionCompare,
        Kind::Convergence,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Kind::TreeEquality => "tree-equality",
            Kind::Derandomize => "derandomize",
            Kind::ExpApprox => "exp-approx",
            Kind::TimeChange => "time-change",
            Kind::DiffusionCompare => "diffusion-compare",
            Kind::Convergence => "convergence",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }

    /// Sections the kind reads; any other section present is a violation.
    fn sections(self) -> &'static [&'static str] {
        match self {
            Kind::TreeEquality | Kind::Derandomize => &["tree", "corpus", "plans"],
            Kind::ExpApprox => &["approximation"],
            Kind::TimeChange => &["time_change"],
            Kind::DiffusionCompare | Kind::Convergence => &["model", "simulation"],
        }
    }
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A config file as written, before validation. Every field is optional so
/// that [`RawConfig::validate`] can report all problems at once.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    pub experiment: Option<ExperimentSection>,
    pub tree: Option<TreeSection>,
    pub corpus: Option<CorpusSection>,
    pub plans: Option<PlansSection>,
    pub approximation: Option<ApproximationSection>,
    pub time_change: Option<TimeChangeSection>,
    pub model: Option<ModelSection>,
    pub simulation: Option<SimulationSection>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub kind: Option<String>,
    pub seed: Option<i64>,
    pub tolerance: Option<f64>,
    pub output: Option<String>,
}

/// Inline tree: one entry per node; the root has no parent.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TreeSection {
    pub nodes: Option<Vec<NodeEntry>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeEntry {
    pub id: i64,
    pub parent: Option<i64>,
    pub prob: Option<f64>,
    pub h: f64,
}

/// Seeded random trees with payoffs uniform in `[-1, 1]`.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSection {
    pub trees: Option<i64>,
    pub max_depth: Option<i64>,
    pub max_branching: Option<i64>,
    /// Trees with more stopping rules than this are redrawn.
    pub rule_cap: Option<i64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlansSection {
    pub count: Option<i64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ApproximationSection {
    /// `exp-decay` (`h = e^{-t}`) or `sine` (`h = amplitude · sin(frequency · t)`).
    pub path: Option<String>,
    pub amplitude: Option<f64>,
    pub frequency: Option<f64>,
    pub stop_time: Option<f64>,
    pub rates: Option<Vec<f64>>,
    pub windows: Option<Vec<f64>>,
    /// `closed-form` or `stop-value`.
    pub oracle: Option<String>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeChangeSection {
    pub cases: Option<i64>,
    /// `step` or `exponential`.
    pub family: Option<String>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub name: Option<String>,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSection {
    pub start_time: Option<f64>,
    pub start_state: Option<Vec<f64>>,
    pub steps: Option<i64>,
    pub paths: Option<i64>,
    pub caps: Option<Vec<i64>>,
    pub moment_bound: Option<f64>,
}

/// One failed check, located by its dotted field path.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub field: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

#[derive(Default)]
struct Report(Vec<Violation>);

impl Report {
    fn add(&mut self, field: &str, message: impl Into<String>) {
        self.0.push(Violation { field: field.to_string(), message: message.into() });
    }

    fn required<'a, V>(&mut self, field: &str, v: &'a Option<V>) -> Option<&'a V> {
        if v.is_none() {
            self.add(field, "missing");
        }
        v.as_ref()
    }

    fn positive_int(&mut self, field: &str, v: Option<i64>) -> Option<usize> {
        match v {
            None => {
                self.add(field, "missing");
                None
            }
            Some(n) if n <= 0 => {
                self.add(field, format!("must be positive, got {n}"));
                None
            }
            Some(n) => Some(n as usize),
        }
    }

    fn positive_float(&mut self, field: &str, v: Option<f64>) -> Option<f64> {
        match v {
            None => {
                self.add(field, "missing");
                None
            }
            Some(x) if !(x.is_finite() && x > 0.0) => {
                self.add(field, format!("must be positive and finite, got {x}"));
                None
            }
            Some(x) => Some(x),
        }
    }

    fn positive_list(&mut self, field: &str, v: &Option<Vec<f64>>) -> Option<Vec<f64>> {
        let list = self.required(field, v)?;
        if list.is_empty() {
            self.add(field, "must not be empty");
            return None;
        }
        let mut ok = true;
        for (i, &x) in list.iter().enumerate() {
            if !(x.is_finite() && x > 0.0) {
                self.add(&format!("{field}[{i}]"), format!("must be positive and finite, got {x}"));
                ok = false;
            }
        }
        ok.then(|| list.clone())
    }
}

/// A validated experiment.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub kind: Kind,
    pub seed: u64,
    pub tolerance: f64,
    pub output: Option<PathBuf>,
    pub spec: Spec,
}

#[derive(Debug, Clone)]
pub enum Substrate {
    Inline { tree: FilteredTree<f64>, h: AdaptedProcess<f64> },
    Corpus { trees: usize, max_depth: usize, max_branching: usize, rule_cap: u128 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ApproxPath {
    ExpDecay,
    Sine { amplitude: f64, frequency: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ApproxOracle {
    ClosedForm,
    StopValue,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CdfFamily {
    Step,
    Exponential,
}

#[derive(Debug, Clone)]
pub struct Simulation {
    pub start_time: f64,
    pub start_state: Vec<f64>,
    pub steps: usize,
    pub paths: usize,
    pub caps: Vec<usize>,
    pub moment_bound: Option<f64>,
}

#[derive(Debug, Clone)]
pub enum Spec {
    Tree { substrate: Substrate, plans: usize },
    Approx { path: ApproxPath, stop_time: f64, rates: Vec<f64>, windows: Vec<f64>, oracle: ApproxOracle },
    TimeChange { cases: usize, family: CdfFamily },
    Diffusion { model: BuiltinModel<f64>, simulation: Simulation },
}

impl RawConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Replaces the seed, as the command-line override does.
    pub fn set_seed(&mut self, seed: u64) {
        let seed = i64::try_from(seed).unwrap_or(i64::MAX);
        self.experiment.get_or_insert_with(Default::default).seed = Some(seed);
    }

    /// Every violated invariant; empty when the config is runnable.
    pub fn validate(&self) -> Vec<Violation> {
        match self.check() {
            Ok(_) => Vec::new(),
            Err(v) => v,
        }
    }

    pub fn check(&self) -> std::result::Result<ExperimentConfig, Vec<Violation>> {
        let mut r = Report::default();
        let exp = self.experiment.clone().unwrap_or_default();
        if self.experiment.is_none() {
            r.add("experiment", "missing section");
        }
        let kind = match r.required("experiment.kind", &exp.kind) {
            Some(k) => {
                let parsed = Kind::parse(k);
                if parsed.is_none() {
                    let known: Vec<_> = Kind::ALL.iter().map(|k| k.name()).collect();
                    r.add("experiment.kind", format!("unknown kind `{k}`; expected one of {}", known.join(", ")));
                }
                parsed
            }
            None => None,
        };
        let seed = match exp.seed {
            None => {
                r.add("experiment.seed", "missing (no default seed is used)");
                None
            }
            Some(s) if s < 0 => {
                r.add("experiment.seed", format!("must be non-negative, got {s}"));
                None
            }
            Some(s) => Some(s as u64),
        };
        let tolerance = match exp.tolerance {
            None => {
                r.add("experiment.tolerance", "missing");
                None
            }
            Some(t) if !(t.is_finite() && t >= 0.0) => {
                r.add("experiment.tolerance", format!("must be finite and non-negative, got {t}"));
                None
            }
            Some(t) => Some(t),
        };
        if exp.output.as_deref() == Some("") {
            r.add("experiment.output", "must not be empty");
        }

        let spec = kind.and_then(|k| {
            let present = [
                ("tree", self.tree.is_some()),
                ("corpus", self.corpus.is_some()),
                ("plans", self.plans.is_some()),
                ("approximation", self.approximation.is_some()),
                ("time_change", self.time_change.is_some()),
                ("model", self.model.is_some()),
                ("simulation", self.simulation.is_some()),
            ];
            for (name, is_set) in present {
                if is_set && !k.sections().contains(&name) {
                    r.add(name, format!("section is not used by kind `{k}`"));
                }
            }
            match k {
                Kind::TreeEquality | Kind::Derandomize => self.tree_spec(&mut r),
                Kind::ExpApprox => self.approx_spec(&mut r),
                Kind::TimeChange => self.time_change_spec(&mut r),
                Kind::DiffusionCompare | Kind::Convergence => self.diffusion_spec(&mut r),
            }
        });

        match (kind, seed, tolerance, spec) {
            (Some(kind), Some(seed), Some(tolerance), Some(spec)) if r.0.is_empty() => Ok(ExperimentConfig {
                kind,
                seed,
                tolerance,
                output: exp.output.map(PathBuf::from),
                spec,
            }),
            _ => Err(r.0),
        }
    }

    fn tree_spec(&self, r: &mut Report) -> Option<Spec> {
        let plans = match &self.plans {
            None => {
                r.add("plans", "missing section");
                None
            }
            Some(p) => r.positive_int("plans.count", p.count),
        };
        let substrate = match (&self.tree, &self.corpus) {
            (Some(_), Some(_)) => {
                r.add("tree", "give either [tree] or [corpus], not both");
                None
            }
            (None, None) => {
                r.add("tree", "missing: give [tree] nodes or a [corpus]");
                None
            }
            (Some(t), None) => inline_tree(t, r),
            (None, Some(c)) => {
                let trees = r.positive_int("corpus.trees", c.trees);
                let max_depth = r.positive_int("corpus.max_depth", c.max_depth);
                let max_branching = r.positive_int("corpus.max_branching", c.max_branching);
                let rule_cap = r.positive_int("corpus.rule_cap", c.rule_cap);
                match (trees, max_depth, max_branching, rule_cap) {
                    (Some(trees), Some(max_depth), Some(max_branching), Some(cap)) => Some(Substrate::Corpus {
                        trees,
                        max_depth,
                        max_branching,
                        rule_cap: cap as u128,
                    }),
                    _ => None,
                }
            }
        };
        Some(Spec::Tree { substrate: substrate?, plans: plans? })
    }

    fn approx_spec(&self, r: &mut Report) -> Option<Spec> {
        let Some(a) = &self.approximation else {
            r.add("approximation", "missing section");
            return None;
        };
        let path = match r.required("approximation.path", &a.path).map(String::as_str) {
            Some("exp-decay") => {
                if a.amplitude.is_some() || a.frequency.is_some() {
                    r.add("approximation.path", "exp-decay takes no amplitude or frequency");
                }
                Some(ApproxPath::ExpDecay)
            }
            Some("sine") => {
                let amplitude = r.positive_float("approximation.amplitude", a.amplitude);
                let frequency = r.positive_float("approximation.frequency", a.frequency);
                amplitude.zip(frequency).map(|(amplitude, frequency)| ApproxPath::Sine { amplitude, frequency })
            }
            Some(other) => {
                r.add("approximation.path", format!("unknown path `{other}`; expected exp-decay or sine"));
                None
            }
            None => None,
        };
        let stop_time = match r.required("approximation.stop_time", &a.stop_time) {
            Some(&t) if !(t.is_finite() && t >= 0.0) => {
                r.add("approximation.stop_time", format!("must be finite and non-negative, got {t}"));
                None
            }
            other => other.copied(),
        };
        let rates = r.positive_list("approximation.rates", &a.rates);
        if let Some(rs) = &rates {
            for (i, &n) in rs.iter().enumerate() {
                if n < 1.0 {
                    r.add(&format!("approximation.rates[{i}]"), format!("must be at least 1, got {n}"));
                }
            }
        }
        let windows = r.positive_list("approximation.windows", &a.windows);
        let oracle = match r.required("approximation.oracle", &a.oracle).map(String::as_str) {
            Some("closed-form") => {
                if a.path.as_deref() == Some("sine") {
                    r.add("approximation.oracle", "closed-form is only available for exp-decay");
                }
                Some(ApproxOracle::ClosedForm)
            }
            Some("stop-value") => Some(ApproxOracle::StopValue),
            Some(other) => {
                r.add("approximation.oracle", format!("unknown oracle `{other}`; expected closed-form or stop-value"));
                None
            }
            None => None,
        };
        Some(Spec::Approx { path: path?, stop_time: stop_time?, rates: rates?, windows: windows?, oracle: oracle? })
    }

    fn time_change_spec(&self, r: &mut Report) -> Option<Spec> {
        let Some(t) = &self.time_change else {
            r.add("time_change", "missing section");
            return None;
        };
        let cases = r.positive_int("time_change.cases", t.cases);
        let family = match r.required("time_change.family", &t.family).map(String::as_str) {
            Some("step") => Some(CdfFamily::Step),
            Some("exponential") => Some(CdfFamily::Exponential),
            Some(other) => {
                r.add("time_change.family", format!("unknown family `{other}`; expected step or exponential"));
                None
            }
            None => None,
        };
        Some(Spec::TimeChange { cases: cases?, family: family? })
    }

    fn diffusion_spec(&self, r: &mut Report) -> Option<Spec> {
        let model = match &self.model {
            None => {
                r.add("model", "missing section");
                None
            }
            Some(m) => match r.required("model.name", &m.name) {
                Some(name) => match BuiltinModel::from_name(name, &m.params) {
                    Ok(model) => Some(model),
                    Err(Error::UnknownModel(n)) => {
                        r.add("model.name", format!("unknown model `{n}`"));
                        None
                    }
                    Err(e) => {
                        r.add("model.params", e.to_string());
                        None
                    }
                },
                None => None,
            },
        };
        let Some(s) = &self.simulation else {
            r.add("simulation", "missing section");
            return None;
        };
        let start_time = match r.required("simulation.start_time", &s.start_time) {
            Some(&t) if !(t.is_finite() && t >= 0.0) => {
                r.add("simulation.start_time", format!("must be finite and non-negative, got {t}"));
                None
            }
            other => other.copied(),
        };
        let start_state = match r.required("simulation.start_state", &s.start_state) {
            Some(x) if x.iter().any(|v| !v.is_finite()) => {
                r.add("simulation.start_state", "must be finite");
                None
            }
            other => other.cloned(),
        };
        if let (Some(m), Some(x)) = (&model, &start_state) {
            use crate::diffusion::DiffusionModel;
            if x.len() != m.dim() {
                r.add("simulation.start_state", format!("model has dimension {}, got {} values", m.dim(), x.len()));
            }
            if let Some(t) = start_time {
                if t >= m.horizon() {
                    r.add("simulation.start_time", format!("must be before the horizon {}", m.horizon()));
                }
            }
        }
        let steps = r.positive_int("simulation.steps", s.steps);
        let paths = r.positive_int("simulation.paths", s.paths);
        let caps = match r.required("simulation.caps", &s.caps) {
            Some(c) if c.is_empty() => {
                r.add("simulation.caps", "must not be empty");
                None
            }
            Some(c) => {
                let mut ok = true;
                for (i, &n) in c.iter().enumerate() {
                    if n <= 0 {
                        r.add(&format!("simulation.caps[{i}]"), format!("must be positive, got {n}"));
                        ok = false;
                    }
                }
                if ok && c.windows(2).any(|w| w[1] <= w[0]) {
                    r.add("simulation.caps", "must be strictly increasing");
                    ok = false;
                }
                ok.then(|| c.iter().map(|&n| n as usize).collect::<Vec<_>>())
            }
            None => None,
        };
        let moment_bound = match s.moment_bound {
            Some(b) if !(b.is_finite() && b > 0.0) => {
                r.add("simulation.moment_bound", format!("must be positive and finite, got {b}"));
                None
            }
            b => Some(b),
        };
        Some(Spec::Diffusion {
            model: model?,
            simulation: Simulation {
                start_time: start_time?,
                start_state: start_state?,
                steps: steps?,
                paths: paths?,
                caps: caps?,
                moment_bound: moment_bound?,
            },
        })
    }
}

fn inline_tree(section: &TreeSection, r: &mut Report) -> Option<Substrate> {
    let nodes = r.required("tree.nodes", &section.nodes)?;
    if nodes.is_empty() {
        r.add("tree.nodes", "must not be empty");
        return None;
    }
    let mut by_id: HashMap<i64, usize> = HashMap::new();
    let mut ok = true;
    let mut root = None;
    for (i, n) in nodes.iter().enumerate() {
        let field = format!("tree.nodes[{i}]");
        if by_id.insert(n.id, i).is_some() {
            r.add(&field, format!("duplicate id {}", n.id));
            ok = false;
        }
        if !n.h.is_finite() {
            r.add(&format!("{field}.h"), "must be finite");
            ok = false;
        }
        match n.parent {
            None => {
                if root.replace(i).is_some() {
                    r.add(&field, "second node without a parent; exactly one root is allowed");
                    ok = false;
                }
                if n.prob.is_some_and(|p| p != 1.0) {
                    r.add(&format!("{field}.prob"), "the root has no branch probability");
                    ok = false;
                }
            }
            Some(_) if n.prob.is_none() => {
                r.add(&format!("{field}.prob"), "missing");
                ok = false;
            }
            Some(_) => {}
        }
    }
    let Some(root) = root else {
        r.add("tree.nodes", "no root (a node without parent)");
        return None;
    };
    let mut children: HashMap<i64, Vec<usize>> = HashMap::new();
    for (i, n) in nodes.iter().enumerate() {
        if let Some(p) = n.parent {
            if !by_id.contains_key(&p) {
                r.add(&format!("tree.nodes[{i}].parent"), format!("unknown parent id {p}"));
                ok = false;
            }
            children.entry(p).or_default().push(i);
        }
    }
    if !ok {
        return None;
    }
    // breadth-first from the root so parents are built before children
    let mut builder = TreeBuilder::<f64>::new();
    let mut h = vec![nodes[root].h];
    let mut queue = std::collections::VecDeque::from([(root, builder.root())]);
    let mut seen = 1;
    while let Some((entry, id)) = queue.pop_front() {
        for &c in children.get(&nodes[entry].id).map(Vec::as_slice).unwrap_or(&[]) {
            let prob = nodes[c].prob.unwrap_or(f64::NAN);
            match builder.add_child(id, prob) {
                Ok(cid) => {
                    h.push(nodes[c].h);
                    queue.push_back((c, cid));
                    seen += 1;
                }
                Err(e) => {
                    r.add(&format!("tree.nodes[{c}]"), e.to_string());
                    return None;
                }
            }
        }
    }
    if seen != nodes.len() {
        r.add("tree.nodes", "some nodes are not reachable from the root (parent cycle)");
        return None;
    }
    let tree = match builder.build() {
        Ok(t) => t,
        Err(e) => {
            r.add("tree.nodes", e.to_string());
            return None;
        }
    };
    let h = AdaptedProcess::new(&tree, h).ok()?;
    Some(Substrate::Inline { tree, h })
}
