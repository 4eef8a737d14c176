//! Scenario files, the canonical deployment, random topologies and the
//! experiment x scenario matrix.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attacks::{AdversaryConfig, AdversaryType, AttackBehavior};
use crate::metrics::{self, ModalDodag, ParentMap, RoundMetrics};
use crate::params::{EnergyModel, MessageSizes, ProtocolParams, RadioParams};
use crate::security::{Key, SecurityMode};
use crate::simnet::{run_round, Position, SimConfig, SimError, Topology};
use crate::stats::{ci95, Summary};
use crate::trace::Trace;
use crate::types::{NodeId, SimTime};

pub const CANONICAL_TOPOLOGY: &str = include_str!("../../../scenarios/canonical-topology.toml");
pub const CANONICAL_ADVERSARY: NodeId = NodeId(14);
pub const CANONICAL_TARGETED: [u16; 9] = [2, 5, 6, 8, 12, 15, 18, 21, 28];
pub const DEFAULT_KEY_HEX: &str = "2b7e151628aed2a6abf7158809cf4f3c";
pub const DEFAULT_SEED: u64 = 20_190_601;
pub const DEFAULT_ROUNDS: u32 = 10;
pub const DEFAULT_DURATION_S: u64 = 1_200;

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{origin}: {message}")]
    Parse { origin: String, message: String },
    #[error("{field}: {message}")]
    Invalid {
        field: &'static str,
        message: String,
    },
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Metrics(#[from] metrics::MetricsError),
    #[error("no topology satisfied {failed:?} after {attempts} attempts")]
    ConstraintUnsatisfiable {
        attempts: usize,
        failed: BTreeMap<String, usize>,
    },
}

fn invalid(field: &'static str, message: impl Into<String>) -> ScenarioError {
    ScenarioError::Invalid {
        field,
        message: message.into(),
    }
}

pub fn canonical_topology() -> Topology {
    toml::from_str(CANONICAL_TOPOLOGY).expect("embedded topology parses")
}

/// The four experiment columns: security mode paired with adversary type.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Experiment {
    #[serde(rename = "UM-I")]
    UmI,
    #[serde(rename = "PSM-I")]
    PsmI,
    #[serde(rename = "PSMrp-I")]
    PsmrpI,
    #[serde(rename = "PSM-E")]
    PsmE,
}

impl Experiment {
    pub const ALL: [Experiment; 4] = [
        Experiment::UmI,
        Experiment::PsmI,
        Experiment::PsmrpI,
        Experiment::PsmE,
    ];

    pub fn mode(self) -> SecurityMode {
        match self {
            Experiment::UmI => SecurityMode::Um,
            Experiment::PsmI | Experiment::PsmE => SecurityMode::Psm,
            Experiment::PsmrpI => SecurityMode::Psmrp,
        }
    }

    pub fn adversary_type(self) -> AdversaryType {
        match self {
            Experiment::PsmE => AdversaryType::External,
            _ => AdversaryType::Internal,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Experiment::UmI => "UM-I",
            Experiment::PsmI => "PSM-I",
            Experiment::PsmrpI => "PSMrp-I",
            Experiment::PsmE => "PSM-E",
        }
    }

    pub fn slug(self) -> &'static str {
        match self {
            Experiment::UmI => "um-i",
            Experiment::PsmI => "psm-i",
            Experiment::PsmrpI => "psmrp-i",
            Experiment::PsmE => "psm-e",
        }
    }
}

impl std::str::FromStr for Experiment {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Experiment::ALL
            .into_iter()
            .find(|e| e.slug().eq_ignore_ascii_case(s) || e.label().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown experiment `{s}` (um-i|psm-i|psmrp-i|psm-e)"))
    }
}

/// A fully resolved scenario.
#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioConfig {
    pub name: String,
    pub seed: u64,
    pub rounds: u32,
    pub sim: SimConfig,
}

impl ScenarioConfig {
    pub fn canonical(experiment: Experiment, attack: AttackBehavior) -> Self {
        Self {
            name: format!("{}-{}", experiment.slug(), attack.slug()),
            seed: DEFAULT_SEED,
            rounds: DEFAULT_ROUNDS,
            sim: SimConfig {
                name: format!("{}/{}", experiment.label(), attack.label()),
                mode: experiment.mode(),
                key: Key::from_hex(DEFAULT_KEY_HEX).expect("default key"),
                topology: canonical_topology(),
                sink: NodeId::SINK,
                adversary: Some(AdversaryConfig {
                    node: CANONICAL_ADVERSARY,
                    behavior: attack,
                    adversary_type: experiment.adversary_type(),
                    launch_delay_s: 120,
                }),
                targeted: CANONICAL_TARGETED.iter().map(|&i| NodeId(i)).collect(),
                duration: SimTime::from_secs(DEFAULT_DURATION_S),
                protocol: ProtocolParams::default(),
                sizes: MessageSizes::default(),
                energy: EnergyModel::default(),
                radio: RadioParams::default(),
                snapshot_every: SimTime::from_secs(60),
            },
        }
    }
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomTopologySpec {
    pub seed: u64,
    pub n: u16,
    #[serde(default)]
    pub max_attempts: Option<usize>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologySpec {
    /// Path to a topology file, relative to the scenario file.
    pub file: Option<String>,
    /// Name of a built-in topology (`canonical`).
    pub builtin: Option<String>,
    pub random: Option<RandomTopologySpec>,
    pub tx_range: Option<f64>,
    pub width: Option<f64>,
    pub height: Option<f64>,
    pub nodes: Option<Vec<Position>>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub name: String,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub rounds: Option<u32>,
    #[serde(default)]
    pub duration_s: Option<u64>,
    pub mode: SecurityMode,
    #[serde(default)]
    pub key: Option<String>,
    #[serde(default)]
    pub sink: Option<NodeId>,
    #[serde(default)]
    pub targeted: Option<Vec<NodeId>>,
    #[serde(default)]
    pub snapshot_every_s: Option<u64>,
    pub topology: TopologySpec,
    #[serde(default)]
    pub adversary: Option<AdversaryConfig>,
    #[serde(default)]
    pub protocol: ProtocolParams,
    #[serde(default)]
    pub energy: EnergyModel,
    #[serde(default)]
    pub sizes: MessageSizes,
    #[serde(default)]
    pub radio: RadioParams,
}

/// Command-line overrides applied on top of a scenario file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub rounds: Option<u32>,
    pub duration_s: Option<u64>,
    pub mode: Option<SecurityMode>,
    pub attack: Option<AttackBehavior>,
    pub adversary_type: Option<AdversaryType>,
}

fn parse_toml<T: serde::de::DeserializeOwned>(
    text: &str,
    origin: &str,
) -> Result<T, ScenarioError> {
    toml::from_str(text).map_err(|e| ScenarioError::Parse {
        origin: origin.to_string(),
        message: e.to_string(),
    })
}

fn resolve_topology(spec: &TopologySpec, base: &Path) -> Result<Topology, ScenarioError> {
    let sources = [
        spec.file.is_some(),
        spec.builtin.is_some(),
        spec.random.is_some(),
        spec.nodes.is_some(),
    ]
    .iter()
    .filter(|b| **b)
    .count();
    if sources != 1 {
        return Err(invalid(
            "topology",
            "give exactly one of `file`, `builtin`, `random` or inline `nodes`",
        ));
    }
    let mut topo = if let Some(file) = &spec.file {
        let path = base.join(file);
        let text = std::fs::read_to_string(&path).map_err(|e| {
            invalid(
                "topology.file",
                format!("cannot read `{}`: {e}", path.display()),
            )
        })?;
        parse_toml::<Topology>(&text, &path.display().to_string())?
    } else if let Some(name) = &spec.builtin {
        match name.as_str() {
            "canonical" => canonical_topology(),
            other => {
                return Err(invalid(
                    "topology.builtin",
                    format!("unknown built-in topology `{other}`"),
                ))
            }
        }
    } else if let Some(r) = &spec.random {
        let range = spec
            .tx_range
            .ok_or_else(|| invalid("topology.tx_range", "required for random topologies"))?;
        generate_topology(
            r.seed,
            (spec.width.unwrap_or(290.0), spec.height.unwrap_or(310.0)),
            r.n,
            range,
            &[Constraint::Connected],
            r.max_attempts.unwrap_or(10_000),
        )?
    } else {
        Topology {
            tx_range: spec
                .tx_range
                .ok_or_else(|| invalid("topology.tx_range", "required with inline nodes"))?,
            interference_range: None,
            width: 290.0,
            height: 310.0,
            nodes: spec.nodes.clone().unwrap_or_default(),
        }
    };
    if let Some(r) = spec.tx_range {
        topo.tx_range = r;
    }
    if let Some(w) = spec.width {
        topo.width = w;
    }
    if let Some(h) = spec.height {
        topo.height = h;
    }
    topo.validate()
        .map_err(|e| invalid("topology", e.to_string()))?;
    Ok(topo)
}

/// Parses scenario text. Relative topology paths resolve against `base`.
pub fn parse_scenario(
    text: &str,
    origin: &str,
    base: &Path,
    overrides: &Overrides,
) -> Result<ScenarioConfig, ScenarioError> {
    let file: ScenarioFile = parse_toml(text, origin)?;
    let topology = resolve_topology(&file.topology, base)?;
    let key = Key::from_hex(file.key.as_deref().unwrap_or(DEFAULT_KEY_HEX))
        .map_err(|e| invalid("key", e))?;
    let mut adversary = file.adversary.clone();
    if let Some(attack) = overrides.attack {
        match adversary.as_mut() {
            Some(a) => a.behavior = attack,
            None if attack == AttackBehavior::None => {}
            None => {
                return Err(invalid(
                    "adversary",
                    "an attack override needs an [adversary] section naming the node",
                ))
            }
        }
    }
    if let (Some(t), Some(a)) = (overrides.adversary_type, adversary.as_mut()) {
        a.adversary_type = t;
    }
    let sink = file.sink.unwrap_or(NodeId::SINK);
    if topology.position(sink).is_none() {
        return Err(invalid(
            "sink",
            format!("node {sink} is not in the topology"),
        ));
    }
    if let Some(a) = &adversary {
        if topology.position(a.node).is_none() {
            return Err(invalid(
                "adversary.node",
                format!("node {} is not in the topology", a.node),
            ));
        }
        if a.node == sink {
            return Err(invalid(
                "adversary.node",
                "the sink cannot be the adversary",
            ));
        }
    }
    let rounds = overrides.rounds.or(file.rounds).unwrap_or(DEFAULT_ROUNDS);
    if rounds == 0 {
        return Err(invalid("rounds", "must be at least 1"));
    }
    let duration_s = overrides
        .duration_s
        .or(file.duration_s)
        .unwrap_or(DEFAULT_DURATION_S);
    if duration_s == 0 {
        return Err(invalid("duration_s", "must be positive"));
    }
    let targeted = file.targeted.clone().unwrap_or_default();
    Ok(ScenarioConfig {
        name: file.name.clone(),
        seed: overrides.seed.or(file.seed).unwrap_or(DEFAULT_SEED),
        rounds,
        sim: SimConfig {
            name: file.name,
            mode: overrides.mode.unwrap_or(file.mode),
            key,
            topology,
            sink,
            adversary,
            targeted,
            duration: SimTime::from_secs(duration_s),
            protocol: file.protocol,
            sizes: file.sizes,
            energy: file.energy,
            radio: file.radio,
            snapshot_every: SimTime::from_secs(file.snapshot_every_s.unwrap_or(60)),
        },
    })
}

pub fn load_scenario(path: &Path, overrides: &Overrides) -> Result<ScenarioConfig, ScenarioError> {
    let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let base = path.parent().unwrap_or(Path::new("."));
    parse_scenario(&text, &path.display().to_string(), base, overrides)
}

/// Structural predicates for generated deployments.
#[derive(Clone, Debug, PartialEq)]
pub enum Constraint {
    Connected,
    /// The adversary hears the sink directly.
    AdversaryNearSink {
        adversary: NodeId,
    },
    /// `ghosts` hear the sink and the adversary but not `victim`; `victim`
    /// hears the adversary but not the sink.
    GhostGeometry {
        adversary: NodeId,
        ghosts: Vec<NodeId>,
        victim: NodeId,
    },
    /// `via` still reaches the sink with the adversary and `victim` removed.
    AlternativePath {
        adversary: NodeId,
        victim: NodeId,
        via: NodeId,
    },
}

impl Constraint {
    pub fn name(&self) -> String {
        match self {
            Constraint::Connected => "connected".into(),
            Constraint::AdversaryNearSink { .. } => "adversary-near-sink".into(),
            Constraint::GhostGeometry { .. } => "ghost-geometry".into(),
            Constraint::AlternativePath { .. } => "alternative-path".into(),
        }
    }

    pub fn holds(&self, t: &Topology, sink: NodeId) -> bool {
        match self {
            Constraint::Connected => t.hop_counts(sink, &[]).len() == t.nodes.len(),
            Constraint::AdversaryNearSink { adversary } => t.in_range(*adversary, sink),
            Constraint::GhostGeometry {
                adversary,
                ghosts,
                victim,
            } => {
                t.in_range(*adversary, *victim)
                    && !t.in_range(sink, *victim)
                    && ghosts.iter().all(|g| {
                        t.in_range(*g, sink)
                            && t.in_range(*g, *adversary)
                            && !t.in_range(*g, *victim)
                    })
            }
            Constraint::AlternativePath {
                adversary,
                victim,
                via,
            } => {
                t.in_range(*via, *victim)
                    && t.hop_counts(sink, &[*adversary, *victim]).contains_key(via)
            }
        }
    }

    /// The predicates the canonical deployment satisfies.
    pub fn canonical_set() -> Vec<Constraint> {
        vec![
            Constraint::Connected,
            Constraint::AdversaryNearSink {
                adversary: CANONICAL_ADVERSARY,
            },
            Constraint::GhostGeometry {
                adversary: CANONICAL_ADVERSARY,
                ghosts: vec![NodeId(7), NodeId(13)],
                victim: NodeId(18),
            },
            Constraint::AlternativePath {
                adversary: CANONICAL_ADVERSARY,
                victim: NodeId(18),
                via: NodeId(28),
            },
        ]
    }
}

/// Rejection-samples uniform placements of nodes `1..=n` until every
/// constraint holds. Deterministic for a given seed.
pub fn generate_topology(
    seed: u64,
    area: (f64, f64),
    n: u16,
    tx_range: f64,
    constraints: &[Constraint],
    max_attempts: usize,
) -> Result<Topology, ScenarioError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut failed: BTreeMap<String, usize> = BTreeMap::new();
    for _ in 0..max_attempts {
        let nodes = (1..=n)
            .map(|i| Position {
                id: NodeId(i),
                x: (rng.random::<f64>() * area.0 * 10.0).round() / 10.0,
                y: (rng.random::<f64>() * area.1 * 10.0).round() / 10.0,
            })
            .collect();
        let t = Topology {
            tx_range,
            interference_range: None,
            width: area.0,
            height: area.1,
            nodes,
        };
        match constraints.iter().find(|c| !c.holds(&t, NodeId::SINK)) {
            None => return Ok(t),
            Some(c) => *failed.entry(c.name()).or_default() += 1,
        }
    }
    Err(ScenarioError::ConstraintUnsatisfiable {
        attempts: max_attempts,
        failed,
    })
}

/// Independent per-round seed.
pub fn round_seed(seed: u64, round: u32) -> u64 {
    let mut z = seed ^ ((round as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone, Debug, Serialize)]
pub struct ExperimentResult {
    pub name: String,
    pub seed: u64,
    pub rounds: Vec<RoundMetrics>,
    pub summary: BTreeMap<String, Summary>,
    /// Modal parent map over the final five minutes of all rounds.
    pub modal_dodag: Option<ModalDodag>,
}

impl ExperimentResult {
    pub fn mean(&self, metric: &str) -> Option<f64> {
        self.summary.get(metric).map(|s| s.mean)
    }
}

pub fn summarize(rounds: &[RoundMetrics]) -> BTreeMap<String, Summary> {
    let mut columns: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for r in rounds {
        for (k, v) in r.scalars() {
            columns.entry(k.to_string()).or_default().push(v);
        }
    }
    columns
        .into_iter()
        .filter_map(|(k, v)| ci95(&v).map(|s| (k, s)))
        .collect()
}

type RoundOutcome = Result<(RoundMetrics, Vec<ParentMap>), ScenarioError>;

/// Runs every round (in parallel, results in round order) and aggregates.
/// `on_trace` sees each round's trace before it is dropped.
pub fn run_experiment_with<F>(
    cfg: &ScenarioConfig,
    on_trace: F,
) -> Result<ExperimentResult, ScenarioError>
where
    F: Fn(u32, &Trace) + Sync,
{
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get());
    let rounds: Vec<u32> = (0..cfg.rounds).collect();
    let mut results: Vec<Option<RoundOutcome>> = (0..cfg.rounds).map(|_| None).collect();
    let final_from = cfg.sim.duration.saturating_sub(metrics::FINAL_WINDOW);
    std::thread::scope(|s| {
        let chunks: Vec<_> = rounds
            .chunks(cfg.rounds.div_ceil(workers as u32).max(1) as usize)
            .map(|chunk| {
                let on_trace = &on_trace;
                s.spawn(move || {
                    chunk
                        .iter()
                        .map(|&r| {
                            let res = run_round(cfg.sim.clone(), round_seed(cfg.seed, r))
                                .map_err(ScenarioError::from)
                                .and_then(|trace| {
                                    on_trace(r, &trace);
                                    let m = metrics::round_metrics(&trace)?;
                                    let finals = metrics::snapshots(&trace)
                                        .into_iter()
                                        .filter(|(t, _)| *t >= final_from)
                                        .map(|(_, p)| p)
                                        .collect();
                                    Ok((m, finals))
                                });
                            (r, res)
                        })
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        for h in chunks {
            for (r, res) in h.join().expect("round worker panicked") {
                results[r as usize] = Some(res);
            }
        }
    });
    let mut rounds_out = Vec::new();
    let mut finals = Vec::new();
    for r in results {
        let (m, f) = r.expect("every round ran")?;
        rounds_out.push(m);
        finals.extend(f);
    }
    Ok(ExperimentResult {
        name: cfg.name.clone(),
        seed: cfg.seed,
        summary: summarize(&rounds_out),
        rounds: rounds_out,
        modal_dodag: metrics::modal_of(&finals),
    })
}

pub fn run_experiment(cfg: &ScenarioConfig) -> Result<ExperimentResult, ScenarioError> {
    run_experiment_with(cfg, |_, _| {})
}

#[derive(Debug)]
pub struct MatrixCell {
    pub experiment: Experiment,
    pub attack: AttackBehavior,
    pub result: Result<ExperimentResult, ScenarioError>,
}

impl MatrixCell {
    pub fn label(&self) -> String {
        format!("{}/{}", self.experiment.label(), self.attack.label())
    }
}

/// Cells in scenario-major order: every experiment for No-Attack, then
/// Blackhole, SF, Neighbor.
pub fn matrix_cells() -> Vec<(Experiment, AttackBehavior)> {
    AttackBehavior::ALL
        .into_iter()
        .flat_map(|a| Experiment::ALL.into_iter().map(move |e| (e, a)))
        .collect()
}

/// Runs the 16 canonical cells. `adjust` can rewrite each config first.
pub fn run_matrix<A, F>(adjust: A, on_trace: F) -> Vec<MatrixCell>
where
    A: Fn(&mut ScenarioConfig),
    F: Fn(Experiment, AttackBehavior, u32, &Trace) + Sync,
{
    matrix_cells()
        .into_iter()
        .map(|(e, a)| {
            let mut cfg = ScenarioConfig::canonical(e, a);
            adjust(&mut cfg);
            MatrixCell {
                experiment: e,
                attack: a,
                result: run_experiment_with(&cfg, |r, t| on_trace(e, a, r, t)),
            }
        })
        .collect()
}

/// Scenario-file text equivalent to [`ScenarioConfig::canonical`].
pub fn canonical_scenario_toml(experiment: Experiment, attack: AttackBehavior) -> String {
    let adv_type = match experiment.adversary_type() {
        AdversaryType::Internal => "internal",
        AdversaryType::External => "external",
    };
    let mode = match experiment.mode() {
        SecurityMode::Um => "um",
        SecurityMode::Psm => "psm",
        SecurityMode::Psmrp => "psmrp",
    };
    let targeted: Vec<String> = CANONICAL_TARGETED.iter().map(|t| t.to_string()).collect();
    format!(
        "name = \"{}-{}\"\nseed = {DEFAULT_SEED}\nrounds = {DEFAULT_ROUNDS}\nduration_s = {DEFAULT_DURATION_S}\n\
         mode = \"{mode}\"\nkey = \"{DEFAULT_KEY_HEX}\"\ntargeted = [{}]\n\n\
         [topology]\nfile = \"../canonical-topology.toml\"\n\n\
         [adversary]\nnode = {}\nattack = \"{}\"\ntype = \"{adv_type}\"\nlaunch_delay_s = 120\n\n\
         [protocol]\ndead_parent_timeout_s = {}\n",
        experiment.slug(),
        attack.slug(),
        targeted.join(", "),
        CANONICAL_ADVERSARY.0,
        attack.slug(),
        ProtocolParams::default().dead_parent_timeout_s,
    )
}
