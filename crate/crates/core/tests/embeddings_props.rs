mod common;

use marl_regalloc::embeddings::{
    arg_relation, arg_token, embed_instruction, generate_triplets, node_features, opcode_token, standard_entities,
    train_transe, EmbedWeights, TransEConfig, Vocabulary, MAX_ARGS, NEXT_INST,
};
use marl_regalloc::igraph::build_interference_graph;
use marl_regalloc::liveness::compute_liveness;
use marl_regalloc::machine::MachineDescription;
use marl_regalloc::mir::{generate_random_function, GenParams, MachineFunction};
use proptest::prelude::*;

fn corpus(n: u64) -> Vec<MachineFunction> {
    let p = GenParams::for_machine(&MachineDescription::x86like());
    (0..n).map(|s| generate_random_function(s, &p)).collect()
}

fn quick() -> TransEConfig {
    TransEConfig {
        dim: 8,
        epochs: 40,
        ..TransEConfig::default()
    }
}

#[test]
fn training_is_deterministic_and_monotone() {
    let t = generate_triplets(&corpus(30), Some(&MachineDescription::x86like()));
    let a = train_transe(&t, &quick()).unwrap();
    let b = train_transe(&t, &quick()).unwrap();
    assert_eq!(a.to_json(), b.to_json());
    assert!(a.meta.losses.windows(2).all(|w| w[1] <= w[0]));
    assert!(a.meta.losses.last() < a.meta.losses.first());
    let c = train_transe(&t, &TransEConfig { seed: 1, ..quick() }).unwrap();
    assert_ne!(a.entities, c.entities);
    for v in a.entities.values() {
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-9);
    }
}

#[test]
fn vocabulary_round_trips_through_json() {
    let t = generate_triplets(&corpus(10), None);
    let v = train_transe(&t, &quick()).unwrap();
    assert_eq!(Vocabulary::from_json(&v.to_json()).unwrap(), v);
    let mut broken = v.clone();
    broken.entities.get_mut("VREG").unwrap().pop();
    assert!(Vocabulary::from_json(&broken.to_json()).is_err());
}

#[test]
fn untrained_vocabulary_covers_standard_tokens() {
    let v = Vocabulary::untrained(16, 3);
    for e in standard_entities() {
        assert_eq!(v.entity(&e).map(<[f64]>::len), Some(16), "{e}");
    }
    assert_eq!(v.lookup("NOT_A_TOKEN").unwrap(), vec![0.0; 16]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn triplet_counts(seed in any::<u64>()) {
        let f = generate_random_function(seed, &GenParams::for_machine(&MachineDescription::x86like()));
        let t = generate_triplets(std::slice::from_ref(&f), None);
        let next: usize = f.blocks.iter().map(|b| b.insts.len().saturating_sub(1)).sum();
        let args: usize = f.instructions().map(|i| i.operands().count().min(MAX_ARGS)).sum();
        prop_assert_eq!(t.iter().filter(|x| x.relation == NEXT_INST).count(), next);
        prop_assert_eq!(t.len(), next + args);
        for inst in f.instructions() {
            for (j, a) in inst.operands().take(MAX_ARGS).enumerate() {
                let want = (opcode_token(inst), arg_relation(j + 1), arg_token(a, None));
                prop_assert!(t.iter().any(|x| (x.head.clone(), x.relation.clone(), x.tail.clone()) == want));
            }
        }
    }

    #[test]
    fn instruction_embedding_is_the_weighted_sum(seed in any::<u64>(), w_o in 0.5f64..1.0, frac in 0.05f64..0.95) {
        let md = MachineDescription::x86like();
        let f = generate_random_function(seed, &GenParams::for_machine(&md));
        let vocab = Vocabulary::untrained(6, seed);
        let w = EmbedWeights { w_o, w_a: w_o * frac };
        for inst in f.instructions() {
            let got = embed_instruction(inst, &vocab, Some(&md), w).unwrap();
            let mut want: Vec<f64> = vocab.lookup(&opcode_token(inst)).unwrap().iter().map(|x| w_o * x).collect();
            for a in inst.operands() {
                for (o, x) in want.iter_mut().zip(vocab.lookup(&arg_token(a, Some(&md))).unwrap()) {
                    *o += w.w_a * x;
                }
            }
            for (g, e) in got.iter().zip(&want) {
                prop_assert!((g - e).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn node_features_cover_the_live_range(seed in any::<u64>()) {
        let md = MachineDescription::x86like();
        let f = generate_random_function(seed, &GenParams::for_machine(&md));
        let info = compute_liveness(&f);
        let g = build_interference_graph(&f, &info);
        let vocab = Vocabulary::untrained(4, 0);
        for (v, r) in &info.ranges {
            let rows = node_features(&f, &g, v, &vocab, Some(&md), EmbedWeights::default()).unwrap();
            prop_assert_eq!(rows.len() as u32, r.end - r.start + 1);
            prop_assert!(rows.iter().all(|row| row.len() == 4));
        }
    }
}

#[test]
fn invalid_weights_are_rejected() {
    let md = MachineDescription::x86like();
    let f = generate_random_function(0, &GenParams::for_machine(&md));
    let inst = f.instructions().next().unwrap();
    let vocab = Vocabulary::untrained(4, 0);
    for w in [
        EmbedWeights { w_o: 1.0, w_a: 1.0 },
        EmbedWeights { w_o: 1.5, w_a: 0.5 },
        EmbedWeights { w_o: 1.0, w_a: 0.0 },
    ] {
        assert!(embed_instruction(inst, &vocab, Some(&md), w).is_err());
    }
}
