//! Instruction embeddings learned as a knowledge graph.
//!
//! Opcodes (grouped to their root mnemonic) and abstracted operands are
//! entities; `NextInst` links consecutive opcodes of a block and `Arg1..`
//! link an opcode to its operands, defs first. TransE places entities so
//! that `head + relation` lands near `tail`. An instruction is embedded as
//! `W_o * [opcode] + W_a * sum([arg])`.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::sync::{Mutex, OnceLock};

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::igraph::InterferenceGraph;
use crate::machine::MachineDescription;
use crate::mir::{Instruction, MachineFunction, Opcode, Operand};

pub const NEXT_INST: &str = "NextInst";
pub const MAX_ARGS: usize = 8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EmbedError {
    #[error("no triplets to train on")]
    NoTriplets,
    #[error("need at least two distinct entities, found {0}")]
    TooFewEntities(usize),
    #[error("embedding weights must satisfy 0 < W_a < W_o <= 1, got W_o={w_o}, W_a={w_a}")]
    InvalidWeights { w_o: f64, w_a: f64 },
    #[error("vector for `{token}` has dimension {got}, vocabulary dimension is {expected}")]
    DimensionMismatch {
        token: String,
        expected: usize,
        got: usize,
    },
    #[error("`{0}` is not a vertex of the graph")]
    UnknownVertex(String),
    #[error("vocabulary file: {0}")]
    Format(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Triplet {
    pub head: String,
    pub relation: String,
    pub tail: String,
}

impl Triplet {
    pub fn new(head: impl Into<String>, relation: impl Into<String>, tail: impl Into<String>) -> Self {
        Triplet {
            head: head.into(),
            relation: relation.into(),
            tail: tail.into(),
        }
    }
}

pub fn arg_relation(i: usize) -> String {
    format!("Arg{i}")
}

pub fn opcode_token(inst: &Instruction) -> String {
    inst.opcode.group_token()
}

/// Abstract entity for an operand. Physical registers map to their type in
/// upper case when a machine is given.
pub fn arg_token(op: &Operand, md: Option<&MachineDescription>) -> String {
    match op {
        Operand::Virtual(_) => "VREG".to_string(),
        Operand::Imm(_) => "IMM".to_string(),
        Operand::Slot(_) => "MEM".to_string(),
        Operand::Label(_) => "LABEL".to_string(),
        Operand::Physical(r) => md
            .and_then(|m| m.reg(r))
            .map(|p| p.type_id.to_ascii_uppercase())
            .unwrap_or_else(|| "PHYSREG".to_string()),
    }
}

/// Tokens every vocabulary carries regardless of the training corpus.
pub fn standard_entities() -> Vec<String> {
    let mut v: Vec<String> = Opcode::ALL.iter().map(|o| o.group_token()).collect();
    v.extend(["VREG", "IMM", "MEM", "LABEL"].map(String::from));
    v
}

pub fn standard_relations() -> Vec<String> {
    let mut v = vec![NEXT_INST.to_string()];
    v.extend((1..=MAX_ARGS).map(arg_relation));
    v
}

pub fn generate_triplets(corpus: &[MachineFunction], md: Option<&MachineDescription>) -> Vec<Triplet> {
    let mut out = Vec::new();
    for f in corpus {
        for block in &f.blocks {
            for (i, inst) in block.insts.iter().enumerate() {
                let op = opcode_token(inst);
                if let Some(next) = block.insts.get(i + 1) {
                    out.push(Triplet::new(op.clone(), NEXT_INST, opcode_token(next)));
                }
                for (j, arg) in inst.operands().take(MAX_ARGS).enumerate() {
                    out.push(Triplet::new(op.clone(), arg_relation(j + 1), arg_token(arg, md)));
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransEConfig {
    pub dim: usize,
    pub epochs: usize,
    pub margin: f64,
    pub lr: f64,
    pub seed: u64,
}

impl Default for TransEConfig {
    fn default() -> Self {
        TransEConfig {
            dim: 100,
            epochs: 1000,
            margin: 1.0,
            lr: 0.01,
            seed: 0,
        }
    }
}

impl TransEConfig {
    /// Smaller preset for tests and quick runs.
    pub fn desk() -> Self {
        TransEConfig {
            dim: 32,
            epochs: 300,
            ..TransEConfig::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub epochs: usize,
    pub margin: f64,
    pub lr: f64,
    pub seed: u64,
    /// Mean margin loss after each epoch; non-increasing.
    pub losses: Vec<f64>,
    pub facts: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vocabulary {
    pub dim: usize,
    pub entities: BTreeMap<String, Vec<f64>>,
    pub relations: BTreeMap<String, Vec<f64>>,
    pub meta: TrainingMeta,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmbedWeights {
    pub w_o: f64,
    pub w_a: f64,
}

impl Default for EmbedWeights {
    fn default() -> Self {
        EmbedWeights { w_o: 1.0, w_a: 0.5 }
    }
}

impl EmbedWeights {
    pub fn validate(&self) -> Result<(), EmbedError> {
        if self.w_a > 0.0 && self.w_a < self.w_o && self.w_o <= 1.0 {
            Ok(())
        } else {
            Err(EmbedError::InvalidWeights {
                w_o: self.w_o,
                w_a: self.w_a,
            })
        }
    }
}

fn normalize(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

fn random_vector(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    let bound = 6.0 / (dim as f64).sqrt();
    (0..dim).map(|_| rng.gen_range(-bound..bound)).collect()
}

/// Indexed training problem: each distinct fact with every corruption of
/// its head or tail that is not itself a fact.
struct Problem {
    facts: Vec<(usize, usize, usize)>,
    negatives: Vec<Vec<(usize, usize)>>,
}

struct Params {
    ent: Vec<Vec<f64>>,
    rel: Vec<Vec<f64>>,
}

fn dist(h: &[f64], r: &[f64], t: &[f64]) -> f64 {
    h.iter()
        .zip(r)
        .zip(t)
        .map(|((h, r), t)| (h + r - t).powi(2))
        .sum::<f64>()
        .sqrt()
}

impl Problem {
    fn loss(&self, p: &Params, margin: f64) -> f64 {
        let mut total = 0.0;
        for (fi, &(h, r, t)) in self.facts.iter().enumerate() {
            let pos = dist(&p.ent[h], &p.rel[r], &p.ent[t]);
            let negs = &self.negatives[fi];
            let s: f64 = negs
                .iter()
                .map(|&(h2, t2)| (margin + pos - dist(&p.ent[h2], &p.rel[r], &p.ent[t2])).max(0.0))
                .sum();
            total += s / negs.len().max(1) as f64;
        }
        total / self.facts.len() as f64
    }

    /// Gradient of the summed (not averaged over facts) loss.
    fn gradient(&self, p: &Params, margin: f64) -> Params {
        let dim = p.ent[0].len();
        let mut ge = vec![vec![0.0; dim]; p.ent.len()];
        let mut gr = vec![vec![0.0; dim]; p.rel.len()];
        let unit = |h: &[f64], r: &[f64], t: &[f64]| -> Vec<f64> {
            let d: Vec<f64> = (0..dim).map(|k| h[k] + r[k] - t[k]).collect();
            let n = d.iter().map(|x| x * x).sum::<f64>().sqrt();
            if n > 0.0 {
                d.into_iter().map(|x| x / n).collect()
            } else {
                vec![0.0; dim]
            }
        };
        for (fi, &(h, r, t)) in self.facts.iter().enumerate() {
            let negs = &self.negatives[fi];
            if negs.is_empty() {
                continue;
            }
            let scale = 1.0 / negs.len() as f64;
            let pos = dist(&p.ent[h], &p.rel[r], &p.ent[t]);
            let up = unit(&p.ent[h], &p.rel[r], &p.ent[t]);
            for &(h2, t2) in negs {
                let neg = dist(&p.ent[h2], &p.rel[r], &p.ent[t2]);
                if margin + pos - neg <= 0.0 {
                    continue;
                }
                let un = unit(&p.ent[h2], &p.rel[r], &p.ent[t2]);
                for k in 0..dim {
                    ge[h][k] += scale * up[k];
                    ge[t][k] -= scale * up[k];
                    gr[r][k] += scale * (up[k] - un[k]);
                    ge[h2][k] -= scale * un[k];
                    ge[t2][k] += scale * un[k];
                }
            }
        }
        Params { ent: ge, rel: gr }
    }
}

/// Trains TransE with L2 distance and margin ranking loss.
///
/// Duplicate triplets collapse into one fact. Every fact is contrasted with
/// all of its head and tail corruptions that are not facts, which is the
/// full expectation of uniform corruption. Descent is full-batch and
/// safeguarded: an epoch that would raise the loss is rolled back and the
/// step halved, so the recorded loss never increases.
pub fn train_transe(triplets: &[Triplet], cfg: &TransEConfig) -> Result<Vocabulary, EmbedError> {
    if triplets.is_empty() {
        return Err(EmbedError::NoTriplets);
    }
    let mut ent_names: BTreeSet<String> = standard_entities().into_iter().collect();
    let mut rel_names: BTreeSet<String> = standard_relations().into_iter().collect();
    let mut seen = BTreeSet::new();
    for t in triplets {
        ent_names.insert(t.head.clone());
        ent_names.insert(t.tail.clone());
        rel_names.insert(t.relation.clone());
        seen.insert(t.head.clone());
        seen.insert(t.tail.clone());
    }
    if seen.len() < 2 {
        return Err(EmbedError::TooFewEntities(seen.len()));
    }
    let ent_names: Vec<String> = ent_names.into_iter().collect();
    let rel_names: Vec<String> = rel_names.into_iter().collect();
    let eidx: BTreeMap<&str, usize> = ent_names.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let ridx: BTreeMap<&str, usize> = rel_names.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = Params {
        ent: (0..ent_names.len())
            .map(|_| {
                let mut v = random_vector(&mut rng, cfg.dim);
                normalize(&mut v);
                v
            })
            .collect(),
        rel: (0..rel_names.len()).map(|_| random_vector(&mut rng, cfg.dim)).collect(),
    };

    let facts: BTreeSet<(usize, usize, usize)> = triplets
        .iter()
        .map(|t| (eidx[t.head.as_str()], ridx[t.relation.as_str()], eidx[t.tail.as_str()]))
        .collect();
    let seen_idx: Vec<usize> = seen.iter().map(|s| eidx[s.as_str()]).collect();
    let facts: Vec<(usize, usize, usize)> = facts.into_iter().collect();
    let fact_set: HashSet<(usize, usize, usize)> = facts.iter().copied().collect();
    let negatives = facts
        .iter()
        .map(|&(h, r, t)| {
            let mut negs = Vec::new();
            for &e in &seen_idx {
                if e != h && !fact_set.contains(&(e, r, t)) {
                    negs.push((e, t));
                }
                if e != t && !fact_set.contains(&(h, r, e)) {
                    negs.push((h, e));
                }
            }
            negs
        })
        .collect();
    let problem = Problem { facts, negatives };

    let mut losses = Vec::with_capacity(cfg.epochs);
    if cfg.epochs > 0 {
        let mut lr = cfg.lr;
        let mut current = problem.loss(&params, cfg.margin);
        for _ in 0..cfg.epochs {
            let grad = problem.gradient(&params, cfg.margin);
            let mut cand = Params {
                ent: params
                    .ent
                    .iter()
                    .zip(&grad.ent)
                    .map(|(v, g)| v.iter().zip(g).map(|(a, b)| a - lr * b).collect())
                    .collect(),
                rel: params
                    .rel
                    .iter()
                    .zip(&grad.rel)
                    .map(|(v, g)| v.iter().zip(g).map(|(a, b)| a - lr * b).collect())
                    .collect(),
            };
            cand.ent.iter_mut().for_each(|v| normalize(v));
            let l = problem.loss(&cand, cfg.margin);
            if l <= current {
                params = cand;
                current = l;
                lr = (lr * 1.05).min(cfg.lr * 10.0);
            } else {
                lr *= 0.5;
            }
            losses.push(current);
        }
    }

    Ok(Vocabulary {
        dim: cfg.dim,
        entities: ent_names.into_iter().zip(params.ent).collect(),
        relations: rel_names.into_iter().zip(params.rel).collect(),
        meta: TrainingMeta {
            epochs: cfg.epochs,
            margin: cfg.margin,
            lr: cfg.lr,
            seed: cfg.seed,
            losses,
            facts: problem.facts.len(),
        },
    })
}

fn warn_once(token: &str) {
    static WARNED: OnceLock<Mutex<HashSet<String>>> = OnceLock::new();
    let set = WARNED.get_or_init(|| Mutex::new(HashSet::new()));
    if set.lock().map(|mut s| s.insert(token.to_string())).unwrap_or(false) {
        warn!("token `{token}` is not in the vocabulary; using a zero vector");
    }
}

impl Vocabulary {
    /// Random normalized vectors for the standard tokens, for use when no
    /// trained vocabulary is supplied.
    pub fn untrained(dim: usize, seed: u64) -> Self {
        let triplets = vec![Triplet::new("MOV", NEXT_INST, "ADD")];
        train_transe(
            &triplets,
            &TransEConfig {
                dim,
                epochs: 0,
                seed,
                ..TransEConfig::default()
            },
        )
        .expect("two entities")
    }

    pub fn entity(&self, token: &str) -> Option<&[f64]> {
        self.entities.get(token).map(Vec::as_slice)
    }

    /// `||h + r - t||`, if all three tokens are known.
    pub fn distance(&self, head: &str, relation: &str, tail: &str) -> Option<f64> {
        Some(dist(
            self.entities.get(head)?,
            self.relations.get(relation)?,
            self.entities.get(tail)?,
        ))
    }

    /// Entity vector or zeros (with a one-time warning) for unknown tokens.
    pub fn lookup(&self, token: &str) -> Result<Vec<f64>, EmbedError> {
        match self.entities.get(token) {
            Some(v) if v.len() != self.dim => Err(EmbedError::DimensionMismatch {
                token: token.to_string(),
                expected: self.dim,
                got: v.len(),
            }),
            Some(v) => Ok(v.clone()),
            None => {
                warn_once(token);
                Ok(vec![0.0; self.dim])
            }
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("serializable")
    }

    pub fn from_json(text: &str) -> Result<Self, EmbedError> {
        let v: Vocabulary = serde_json::from_str(text).map_err(|e| EmbedError::Format(e.to_string()))?;
        for (tok, vec) in v.entities.iter().chain(&v.relations) {
            if vec.len() != v.dim {
                return Err(EmbedError::DimensionMismatch {
                    token: tok.clone(),
                    expected: v.dim,
                    got: vec.len(),
                });
            }
        }
        Ok(v)
    }
}

/// `W_o * [opcode] + W_a * sum of [argument]`.
pub fn embed_instruction(
    inst: &Instruction,
    vocab: &Vocabulary,
    md: Option<&MachineDescription>,
    weights: EmbedWeights,
) -> Result<Vec<f64>, EmbedError> {
    weights.validate()?;
    let mut out: Vec<f64> = vocab
        .lookup(&opcode_token(inst))?
        .into_iter()
        .map(|x| weights.w_o * x)
        .collect();
    for arg in inst.operands() {
        let a = vocab.lookup(&arg_token(arg, md))?;
        for (o, x) in out.iter_mut().zip(a) {
            *o += weights.w_a * x;
        }
    }
    Ok(out)
}

/// One row per instruction inside the vertex's live range, in point order.
pub fn node_features(
    f: &MachineFunction,
    g: &InterferenceGraph,
    v: &str,
    vocab: &Vocabulary,
    md: Option<&MachineDescription>,
    weights: EmbedWeights,
) -> Result<Vec<Vec<f64>>, EmbedError> {
    let vert = g
        .vertex(v)
        .ok_or_else(|| EmbedError::UnknownVertex(v.to_string()))?;
    vert.range
        .points()
        .filter_map(|p| f.instruction_at(p))
        .map(|inst| embed_instruction(inst, vocab, md, weights))
        .collect()
}

/// Fraction of test triplets whose true tail is closer to `head + relation`
/// than a uniformly drawn tail corruption that is not a known fact.
pub fn tail_ranking_accuracy(
    vocab: &Vocabulary,
    test: &[Triplet],
    known: &HashSet<Triplet>,
    seed: u64,
) -> f64 {
    if test.is_empty() {
        return 0.0;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let names: Vec<&String> = vocab.entities.keys().collect();
    let mut wins = 0usize;
    for t in test {
        let candidates: Vec<&&String> = names
            .iter()
            .filter(|e| {
                ***e != t.tail && !known.contains(&Triplet::new(t.head.clone(), t.relation.clone(), (**e).clone()))
            })
            .collect();
        if candidates.is_empty() {
            continue;
        }
        let c = candidates[rng.gen_range(0..candidates.len())];
        match (
            vocab.distance(&t.head, &t.relation, &t.tail),
            vocab.distance(&t.head, &t.relation, c),
        ) {
            (Some(pos), Some(neg)) if pos < neg => wins += 1,
            _ => {}
        }
    }
    wins as f64 / test.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mir::parse_function;

    #[test]
    fn triplets_for_mov_then_div() {
        let f = parse_function("func f(%y:gr32) {\nbb0:\n  %x:gr32 = mov 10\n  %z:gr32 = div %y, %x\n}")
            .unwrap();
        let ts = generate_triplets(&[f], None);
        let expect = vec![
            Triplet::new("MOV", NEXT_INST, "DIV"),
            Triplet::new("MOV", "Arg1", "VREG"),
            Triplet::new("MOV", "Arg2", "IMM"),
            Triplet::new("DIV", "Arg1", "VREG"),
            Triplet::new("DIV", "Arg2", "VREG"),
            Triplet::new("DIV", "Arg3", "VREG"),
        ];
        assert_eq!(ts, expect);
    }

    #[test]
    fn single_instruction_block_has_no_next() {
        let f = parse_function("func f {\nbb0:\n  print 1\n}").unwrap();
        let ts = generate_triplets(&[f], None);
        assert!(ts.iter().all(|t| t.relation != NEXT_INST));
    }

    #[test]
    fn width_variants_share_a_token() {
        let f = parse_function("func f {\nbb0:\n  %a:gr32 = mov32 1\n  %b:gr64 = MOV64ri 2\n  print %a\n  print %b\n}")
            .unwrap();
        let ops: Vec<String> = f.instructions().map(opcode_token).collect();
        assert_eq!(ops[0], "MOV");
        assert_eq!(ops[1], "MOV");
    }

    #[test]
    fn physical_operands_use_their_type() {
        let md = MachineDescription::x86like();
        assert_eq!(arg_token(&Operand::Physical("eax".into()), Some(&md)), "GR32");
        assert_eq!(arg_token(&Operand::Physical("eax".into()), None), "PHYSREG");
    }

    #[test]
    fn zero_epochs_gives_normalized_seeded_vectors() {
        let a = Vocabulary::untrained(8, 3);
        let b = Vocabulary::untrained(8, 3);
        assert_eq!(a, b);
        for v in a.entities.values() {
            let n: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-12);
        }
        assert!(a.meta.losses.is_empty());
    }

    #[test]
    fn learns_a_consistent_successor() {
        let mut ts = Vec::new();
        for _ in 0..10 {
            ts.push(Triplet::new("MOV", NEXT_INST, "ADD"));
            ts.push(Triplet::new("ADD", NEXT_INST, "PRINT"));
            ts.push(Triplet::new("DIV", NEXT_INST, "MOV"));
        }
        let cfg = TransEConfig {
            dim: 16,
            epochs: 200,
            ..TransEConfig::default()
        };
        let v = train_transe(&ts, &cfg).unwrap();
        let to_add = v.distance("MOV", NEXT_INST, "ADD").unwrap();
        let to_div = v.distance("MOV", NEXT_INST, "DIV").unwrap();
        assert!(to_add < to_div, "{to_add} vs {to_div}");
        let l = &v.meta.losses;
        assert!(l.windows(2).all(|w| w[1] <= w[0]));
        assert!(l.last() <= l.first());
    }

    #[test]
    fn hand_computed_embedding() {
        let mut v = Vocabulary::untrained(4, 0);
        v.entities.insert("ADD".into(), vec![1.0, 0.0, 0.0, 0.0]);
        v.entities.insert("VREG".into(), vec![0.0, 1.0, 0.0, 0.0]);
        v.entities.insert("IMM".into(), vec![0.0, 0.0, 2.0, 0.0]);
        let f = parse_function("func f {\nbb0:\n  %a:gr32 = mov 1\n  %b:gr32 = add %a, 3\n  print %b\n}")
            .unwrap();
        let inst = f.instruction_at(2).unwrap();
        let e = embed_instruction(inst, &v, None, EmbedWeights::default()).unwrap();
        // 1.0*ADD + 0.5*(VREG + VREG + IMM)
        assert_eq!(e, vec![1.0, 1.0, 1.0, 0.0]);
        let bad = EmbedWeights { w_o: 0.5, w_a: 0.5 };
        assert!(embed_instruction(inst, &v, None, bad).is_err());
    }

    #[test]
    fn unknown_tokens_embed_as_zero() {
        let v = Vocabulary::untrained(4, 0);
        assert_eq!(v.lookup("NOPE").unwrap(), vec![0.0; 4]);
    }

    #[test]
    fn json_round_trip_is_exact() {
        let ts = vec![Triplet::new("MOV", NEXT_INST, "ADD"), Triplet::new("ADD", "Arg1", "VREG")];
        let v = train_transe(&ts, &TransEConfig { dim: 5, epochs: 7, ..TransEConfig::default() }).unwrap();
        assert_eq!(Vocabulary::from_json(&v.to_json()).unwrap(), v);
    }
}
