//! The allocation environment driven by four cooperating agents.
//!
//! An episode walks one function through
//! `node select -> task select -> (split point | color)` until every vreg
//! holds a register or is marked for spilling. Each step offers a mask of
//! legal actions; stepping outside it is an error and leaves the state
//! unchanged. Once done, [`Episode::finalize`] inserts spill code, rewrites
//! to physical registers, verifies, and scores the result against the
//! greedy baseline.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use log::debug;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baselines::{greedy_allocate, BaselineError, GreedyOptions};
use crate::embeddings::{embed_instruction, EmbedError, EmbedWeights, Vocabulary};
use crate::igraph::{build_interference_graph, legal_registers, Annotation, InterferenceGraph, PartialAssignment, VertexKind};
use crate::liveness::{compute_liveness, LiveRange, LivenessInfo};
use crate::machine::{MachineDescription, MachineError};
use crate::mir::{parse_function, MachineFunction, MirError, ProgramPoint};
use crate::transforms::{materialize, split_live_range, splittable_points, Color, ColorMap, TransformError};

/// Terminal reward magnitude.
pub const GLOBAL_REWARD: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EnvError {
    #[error("action {0:?} is not in the current mask")]
    OffMask(Action),
    #[error("the episode is already done")]
    EpisodeDone,
    #[error("the episode is not done yet")]
    NotDone,
    #[error(transparent)]
    Machine(#[from] MachineError),
    #[error(transparent)]
    Transform(#[from] TransformError),
    #[error(transparent)]
    Baseline(#[from] BaselineError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Mir(#[from] MirError),
    #[error("replay diverged at step {step}: {detail}")]
    ReplayMismatch { step: usize, detail: String },
    #[error("invalid configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvConfig {
    /// Functions with fewer vreg vertices go to the greedy baseline.
    pub min_vertices: usize,
    /// Functions with more vreg vertices go to the greedy baseline.
    pub max_vertices: usize,
    /// Vregs with fewer accesses are never offered the split task.
    pub k_min_uses: usize,
    /// Maximum number of splits per episode; twice the initial vreg count
    /// when unset.
    pub split_budget: Option<usize>,
    pub weights: EmbedWeights,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            min_vertices: 4,
            max_vertices: 200,
            k_min_uses: 2,
            split_budget: None,
            weights: EmbedWeights::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Agent {
    NodeSelector,
    TaskSelector,
    Splitter,
    ColorAssigner,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Color,
    Split,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Action {
    SelectNode { vreg: String },
    SelectTask { task: Task },
    Split { point: ProgramPoint },
    Color { register: String },
    Spill,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "phase", content = "vreg", rename_all = "snake_case")]
pub enum Phase {
    AwaitNodeSelect,
    AwaitTaskSelect(String),
    AwaitSplitPoint(String),
    AwaitColor(String),
    Done,
}

impl Phase {
    pub fn agent(&self) -> Option<Agent> {
        match self {
            Phase::AwaitNodeSelect => Some(Agent::NodeSelector),
            Phase::AwaitTaskSelect(_) => Some(Agent::TaskSelector),
            Phase::AwaitSplitPoint(_) => Some(Agent::Splitter),
            Phase::AwaitColor(_) => Some(Agent::ColorAssigner),
            Phase::Done => None,
        }
    }

    pub fn vreg(&self) -> Option<&str> {
        match self {
            Phase::AwaitTaskSelect(v) | Phase::AwaitSplitPoint(v) | Phase::AwaitColor(v) => Some(v),
            _ => None,
        }
    }
}

/// How an episode started.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum ResetOutcome {
    Ready { vertices: usize },
    /// Nothing to allocate; the episode is done from the start.
    NoVregs,
    /// Outside the configured size range; finalization uses the baseline.
    BaselineRouted { vertices: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VertexView {
    pub id: String,
    #[serde(flatten)]
    pub kind: VertexKind,
    pub range: LiveRange,
    pub weight: f64,
    pub annotation: Annotation,
    pub register: Option<String>,
    /// One embedding row per instruction in the live range.
    pub features: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphView {
    pub vertices: Vec<VertexView>,
    /// Undirected edges as index pairs `(a, b)` with `a < b`.
    pub edges: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeView {
    pub id: String,
    pub ty: String,
    pub range: LiveRange,
    pub weight: f64,
    pub uses: Vec<ProgramPoint>,
    /// 10^depth of each access.
    pub use_weights: Vec<f64>,
    pub distances: Vec<u32>,
    pub degree: usize,
    pub legal: Vec<String>,
    pub features: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub agent: Agent,
    /// Whole graph, for the node selector.
    pub graph: Option<GraphView>,
    /// The selected vreg, for the other agents.
    pub node: Option<NodeView>,
    pub mask: Vec<Action>,
}

/// Coloring outcome passed back to the agents that led to it. Zero when the
/// chosen task was a split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Credit {
    pub node_selector: f64,
    pub task_selector: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphUpdate {
    pub removed: String,
    pub added: Vec<VertexView>,
    /// Surviving vertices whose range or features moved.
    pub changed: Vec<VertexView>,
    pub edges_added: Vec<(String, String)>,
    pub edges_removed: Vec<(String, String)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepInfo {
    pub credit: Option<Credit>,
    pub graph_update: Option<GraphUpdate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepResult {
    pub agent: Agent,
    pub reward: f64,
    pub done: bool,
    pub info: StepInfo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub agent: Agent,
    pub action: Action,
    pub reward: f64,
    pub credit: Option<Credit>,
}

#[derive(Debug, Clone)]
pub struct Finalized {
    pub function: MachineFunction,
    /// The function after splits and spill code, still virtual.
    pub virtual_function: MachineFunction,
    pub decisions: ColorMap,
    pub assignment: ColorMap,
    pub cascaded: Vec<String>,
    pub cost_rl: u64,
    pub cost_greedy: u64,
    pub global_reward: f64,
    pub routed: bool,
}

/// `+10` when the learned allocation is at least as cheap as greedy.
pub fn global_reward(cost_rl: u64, cost_greedy: u64) -> f64 {
    if cost_rl <= cost_greedy {
        GLOBAL_REWARD
    } else {
        -GLOBAL_REWARD
    }
}

/// Everything needed to re-run an episode and check its rewards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub function: String,
    pub machine: String,
    pub config: EnvConfig,
    pub outcome: ResetOutcome,
    pub steps: Vec<StepRecord>,
    pub decisions: Option<ColorMap>,
    pub cost_rl: Option<u64>,
    pub cost_greedy: Option<u64>,
    pub global_reward: Option<f64>,
}

impl Transcript {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("serializable")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

#[derive(Clone)]
pub struct Episode {
    md: Arc<MachineDescription>,
    vocab: Arc<Vocabulary>,
    config: EnvConfig,
    original: MachineFunction,
    function: MachineFunction,
    info: LivenessInfo,
    graph: InterferenceGraph,
    asg: PartialAssignment,
    phase: Phase,
    outcome: ResetOutcome,
    split_budget: usize,
    splits: usize,
    records: Vec<StepRecord>,
    /// Embedding of the instruction at each point, indexed by `point - 1`.
    rows: Vec<Vec<f64>>,
}

impl Episode {
    pub fn reset(
        f: &MachineFunction,
        md: Arc<MachineDescription>,
        vocab: Arc<Vocabulary>,
        config: EnvConfig,
    ) -> Result<Episode, EnvError> {
        config.weights.validate()?;
        if config.min_vertices > config.max_vertices {
            return Err(EnvError::Config(format!(
                "min_vertices {} exceeds max_vertices {}",
                config.min_vertices, config.max_vertices
            )));
        }
        md.check_function(f)?;
        let info = compute_liveness(f);
        let graph = build_interference_graph(f, &info);
        let n = graph.num_vregs();
        let outcome = if n == 0 {
            ResetOutcome::NoVregs
        } else if n < config.min_vertices || n > config.max_vertices {
            ResetOutcome::BaselineRouted { vertices: n }
        } else {
            ResetOutcome::Ready { vertices: n }
        };
        let phase = match outcome {
            ResetOutcome::Ready { .. } => Phase::AwaitNodeSelect,
            _ => Phase::Done,
        };
        debug!("reset {}: {:?}", f.name, outcome);
        let mut ep = Episode {
            split_budget: config.split_budget.unwrap_or(2 * n),
            md,
            vocab,
            config,
            original: f.clone(),
            function: f.clone(),
            info,
            graph,
            asg: PartialAssignment::default(),
            phase,
            outcome,
            splits: 0,
            records: Vec::new(),
            rows: Vec::new(),
        };
        ep.rows = ep.embed_rows()?;
        Ok(ep)
    }

    fn embed_rows(&self) -> Result<Vec<Vec<f64>>, EmbedError> {
        self.function
            .instructions()
            .map(|i| embed_instruction(i, &self.vocab, Some(&self.md), self.config.weights))
            .collect()
    }

    pub fn outcome(&self) -> &ResetOutcome {
        &self.outcome
    }

    pub fn phase(&self) -> &Phase {
        &self.phase
    }

    pub fn is_done(&self) -> bool {
        self.phase == Phase::Done
    }

    pub fn function(&self) -> &MachineFunction {
        &self.function
    }

    pub fn original(&self) -> &MachineFunction {
        &self.original
    }

    pub fn liveness(&self) -> &LivenessInfo {
        &self.info
    }

    pub fn graph(&self) -> &InterferenceGraph {
        &self.graph
    }

    pub fn assignment(&self) -> &PartialAssignment {
        &self.asg
    }

    pub fn machine(&self) -> &MachineDescription {
        &self.md
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn records(&self) -> &[StepRecord] {
        &self.records
    }

    pub fn splits(&self) -> usize {
        self.splits
    }

    pub fn split_budget(&self) -> usize {
        self.split_budget
    }

    fn features(&self, range: LiveRange) -> Vec<Vec<f64>> {
        range
            .points()
            .filter_map(|p| self.rows.get(p as usize - 1).cloned())
            .collect()
    }

    fn vertex_view(&self, idx: usize) -> VertexView {
        let v = &self.graph.vertices[idx];
        VertexView {
            id: v.id.clone(),
            kind: v.kind.clone(),
            range: v.range,
            weight: v.weight,
            annotation: match v.kind {
                VertexKind::Physical { .. } => Annotation::Colored,
                VertexKind::Virtual { .. } => self.asg.annotation(&v.id),
            },
            register: match &v.kind {
                VertexKind::Physical { reg } => Some(reg.clone()),
                VertexKind::Virtual { .. } => self.asg.colors.get(&v.id).cloned(),
            },
            features: self.features(v.range),
        }
    }

    pub fn graph_view(&self) -> GraphView {
        let vertices = (0..self.graph.len()).map(|i| self.vertex_view(i)).collect();
        let mut edges = Vec::new();
        for (a, adj) in self.graph.adj.iter().enumerate() {
            for &b in adj {
                if a < b {
                    edges.push((a, b));
                }
            }
        }
        GraphView { vertices, edges }
    }

    pub fn node_view(&self, v: &str) -> Option<NodeView> {
        let vert = self.graph.vertex(v)?;
        let VertexKind::Virtual { ty } = &vert.kind else {
            return None;
        };
        let uses = self.info.uses[v].clone();
        let legal = if self.asg.is_assigned(v) {
            Vec::new()
        } else {
            legal_registers(&self.graph, &self.md, &self.asg, v).ok()?.chi
        };
        Some(NodeView {
            id: v.to_string(),
            ty: ty.clone(),
            range: vert.range,
            weight: vert.weight,
            use_weights: uses.iter().map(|&p| self.info.access_weight(p)).collect(),
            uses,
            distances: self.info.distances[v].clone(),
            degree: self.graph.degree(v),
            legal,
            features: self.features(vert.range),
        })
    }

    fn uncolored(&self) -> Vec<String> {
        self.graph
            .vreg_ids()
            .filter(|v| !self.asg.is_assigned(v))
            .map(str::to_string)
            .collect()
    }

    fn can_split(&self, v: &str) -> bool {
        self.splits < self.split_budget
            && self.info.uses.get(v).map_or(0, Vec::len) >= self.config.k_min_uses
            && !splittable_points(&self.function, &self.info, v).is_empty()
    }

    pub fn legal_action_mask(&self) -> Vec<Action> {
        match &self.phase {
            Phase::AwaitNodeSelect => self
                .uncolored()
                .into_iter()
                .map(|vreg| Action::SelectNode { vreg })
                .collect(),
            Phase::AwaitTaskSelect(v) => {
                let mut m = vec![Action::SelectTask { task: Task::Color }];
                if self.can_split(v) {
                    m.push(Action::SelectTask { task: Task::Split });
                }
                m
            }
            Phase::AwaitSplitPoint(v) => splittable_points(&self.function, &self.info, v)
                .into_iter()
                .map(|point| Action::Split { point })
                .collect(),
            Phase::AwaitColor(v) => {
                let chi = legal_registers(&self.graph, &self.md, &self.asg, v)
                    .expect("phase vreg is an unassigned vertex")
                    .chi;
                if chi.is_empty() {
                    vec![Action::Spill]
                } else {
                    chi.into_iter().map(|register| Action::Color { register }).collect()
                }
            }
            Phase::Done => Vec::new(),
        }
    }

    pub fn observation(&self) -> Option<Observation> {
        let agent = self.phase.agent()?;
        let mask = self.legal_action_mask();
        Some(match &self.phase {
            Phase::AwaitNodeSelect => Observation {
                agent,
                graph: Some(self.graph_view()),
                node: None,
                mask,
            },
            p => Observation {
                agent,
                graph: None,
                node: self.node_view(p.vreg().expect("vreg phase")),
                mask,
            },
        })
    }

    pub fn step(&mut self, action: &Action) -> Result<StepResult, EnvError> {
        let Some(agent) = self.phase.agent() else {
            return Err(EnvError::EpisodeDone);
        };
        if !self.legal_action_mask().contains(action) {
            return Err(EnvError::OffMask(action.clone()));
        }
        let mut info = StepInfo {
            credit: None,
            graph_update: None,
        };
        let reward = match (self.phase.clone(), action) {
            (Phase::AwaitNodeSelect, Action::SelectNode { vreg }) => {
                self.phase = Phase::AwaitTaskSelect(vreg.clone());
                0.0
            }
            (Phase::AwaitTaskSelect(v), Action::SelectTask { task }) => {
                self.phase = match task {
                    Task::Color => Phase::AwaitColor(v),
                    Task::Split => Phase::AwaitSplitPoint(v),
                };
                0.0
            }
            (Phase::AwaitSplitPoint(v), Action::Split { point }) => {
                let before = self.info.weight(&v);
                let r = split_live_range(&self.function, &v, *point)?;
                let after = r.liveness.weight(&r.v_prime) + r.liveness.weight(&r.v_double);
                let old_view = self.graph_view();
                let old_edges: BTreeSet<(String, String)> = self.graph.edges().into_iter().collect();
                self.function = r.function;
                self.info = r.liveness;
                self.graph = build_interference_graph(&self.function, &self.info);
                self.rows = self.embed_rows()?;
                self.splits += 1;
                let new_edges: BTreeSet<(String, String)> = self.graph.edges().into_iter().collect();
                let old_by_id: BTreeMap<&str, &VertexView> =
                    old_view.vertices.iter().map(|x| (x.id.as_str(), x)).collect();
                let mut added = Vec::new();
                let mut changed = Vec::new();
                for i in 0..self.graph.len() {
                    let nv = self.vertex_view(i);
                    match old_by_id.get(nv.id.as_str()) {
                        None => added.push(nv),
                        Some(o) if **o != nv => changed.push(nv),
                        Some(_) => {}
                    }
                }
                info.graph_update = Some(GraphUpdate {
                    removed: v,
                    added,
                    changed,
                    edges_added: new_edges.difference(&old_edges).cloned().collect(),
                    edges_removed: old_edges.difference(&new_edges).cloned().collect(),
                });
                info.credit = Some(Credit {
                    node_selector: 0.0,
                    task_selector: 0.0,
                });
                self.phase = Phase::AwaitNodeSelect;
                before - after
            }
            (Phase::AwaitColor(v), Action::Color { register }) => {
                let m = self.info.weight(&v);
                self.asg.colors.insert(v, register.clone());
                self.after_coloring(m, &mut info)
            }
            (Phase::AwaitColor(v), Action::Spill) => {
                let m = self.info.weight(&v);
                self.asg.spilled.insert(v);
                self.after_coloring(-m, &mut info)
            }
            _ => unreachable!("mask admits only actions of the current phase"),
        };
        self.records.push(StepRecord {
            agent,
            action: action.clone(),
            reward,
            credit: info.credit,
        });
        Ok(StepResult {
            agent,
            reward,
            done: self.is_done(),
            info,
        })
    }

    fn after_coloring(&mut self, reward: f64, info: &mut StepInfo) -> f64 {
        info.credit = Some(Credit {
            node_selector: reward,
            task_selector: reward,
        });
        self.phase = if self.uncolored().is_empty() {
            Phase::Done
        } else {
            Phase::AwaitNodeSelect
        };
        reward
    }

    /// Colors and SPILL marks chosen so far.
    pub fn decisions(&self) -> ColorMap {
        let mut m: ColorMap = self
            .asg
            .colors
            .iter()
            .map(|(v, r)| (v.clone(), Color::Reg(r.clone())))
            .collect();
        for v in &self.asg.spilled {
            m.insert(v.clone(), Color::Spill);
        }
        m
    }

    /// Materializes the decisions and scores them against greedy. Routed and
    /// empty episodes take the greedy result and a zero terminal reward.
    pub fn finalize(&self) -> Result<Finalized, EnvError> {
        if !self.is_done() {
            return Err(EnvError::NotDone);
        }
        let greedy = greedy_allocate(&self.original, &self.md, GreedyOptions::default())?;
        if !matches!(self.outcome, ResetOutcome::Ready { .. }) {
            return Ok(Finalized {
                function: greedy.materialized.function,
                virtual_function: greedy.materialized.virtual_function,
                decisions: greedy.decisions,
                assignment: greedy.materialized.assignment,
                cascaded: greedy.materialized.cascaded,
                cost_rl: greedy.cost,
                cost_greedy: greedy.cost,
                global_reward: 0.0,
                routed: true,
            });
        }
        let decisions = self.decisions();
        let m = materialize(&self.function, &self.md, &decisions)?;
        let cost_rl = self.md.estimate_throughput(&m.function)?;
        Ok(Finalized {
            function: m.function,
            virtual_function: m.virtual_function,
            decisions,
            assignment: m.assignment,
            cascaded: m.cascaded,
            cost_rl,
            cost_greedy: greedy.cost,
            global_reward: global_reward(cost_rl, greedy.cost),
            routed: false,
        })
    }

    pub fn transcript(&self, finalized: Option<&Finalized>) -> Transcript {
        Transcript {
            function: self.original.to_string(),
            machine: self.md.name.clone(),
            config: self.config.clone(),
            outcome: self.outcome.clone(),
            steps: self.records.clone(),
            decisions: finalized.map(|f| f.decisions.clone()),
            cost_rl: finalized.map(|f| f.cost_rl),
            cost_greedy: finalized.map(|f| f.cost_greedy),
            global_reward: finalized.map(|f| f.global_reward),
        }
    }
}

/// Re-runs a transcript and checks every reward, credit, and the terminal
/// outcome bit for bit.
pub fn replay(
    t: &Transcript,
    md: Arc<MachineDescription>,
    vocab: Arc<Vocabulary>,
) -> Result<Episode, EnvError> {
    let f = parse_function(&t.function)?;
    let mut ep = Episode::reset(&f, md, vocab, t.config.clone())?;
    if ep.outcome != t.outcome {
        return Err(EnvError::ReplayMismatch {
            step: 0,
            detail: format!("outcome {:?} vs {:?}", ep.outcome, t.outcome),
        });
    }
    for (i, rec) in t.steps.iter().enumerate() {
        let r = ep.step(&rec.action)?;
        if r.reward.to_bits() != rec.reward.to_bits() || r.info.credit != rec.credit || r.agent != rec.agent {
            return Err(EnvError::ReplayMismatch {
                step: i,
                detail: format!("reward {} vs recorded {}", r.reward, rec.reward),
            });
        }
    }
    if let Some(g) = t.global_reward {
        let fin = ep.finalize()?;
        if fin.global_reward != g || Some(fin.cost_rl) != t.cost_rl || Some(fin.cost_greedy) != t.cost_greedy {
            return Err(EnvError::ReplayMismatch {
                step: t.steps.len(),
                detail: "terminal outcome differs".into(),
            });
        }
    }
    Ok(ep)
}

/// Drives an episode to completion with `policy` and finalizes it.
pub fn run_episode(
    ep: &mut Episode,
    mut policy: impl FnMut(&Observation, u64) -> Action,
) -> Result<Finalized, EnvError> {
    let mut step = 0u64;
    while let Some(obs) = ep.observation() {
        let a = policy(&obs, step);
        ep.step(&a)?;
        step += 1;
    }
    ep.finalize()
}
