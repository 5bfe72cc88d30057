//! Trains a TransE vocabulary over instruction facts from a generated
//! corpus and measures held-out next-instruction ranking.
//!
//! `cargo run --release --example train_vocabulary [out.json]`

use std::collections::HashSet;

use marl_regalloc::embeddings::{generate_triplets, tail_ranking_accuracy, train_transe, TransEConfig, Triplet, NEXT_INST};
use marl_regalloc::machine::MachineDescription;
use marl_regalloc::mir::{generate_random_function, GenParams};

fn main() -> anyhow::Result<()> {
    let md = MachineDescription::x86like();
    let params = GenParams::for_machine(&md);
    let corpus: Vec<_> = (0..500).map(|s| generate_random_function(s, &params)).collect();
    let (train, test) = corpus.split_at(400);
    let train_t = generate_triplets(train, Some(&md));
    let test_t = generate_triplets(test, Some(&md));
    let known: HashSet<Triplet> = train_t.iter().chain(&test_t).cloned().collect();
    let held_out: Vec<Triplet> = test_t.into_iter().filter(|t| t.relation == NEXT_INST).collect();

    let vocab = train_transe(&train_t, &TransEConfig::desk())?;
    let losses = &vocab.meta.losses;
    for (e, l) in losses.iter().enumerate().step_by(50) {
        println!("epoch {e:>4} loss {l:.4}");
    }
    println!("final loss {:.4} over {} distinct facts", losses.last().unwrap(), vocab.meta.facts);
    println!("held-out tail ranking: {:.1}%", 100.0 * tail_ranking_accuracy(&vocab, &held_out, &known, 0));
    if let Some(d) = vocab.distance("MOV", NEXT_INST, "ADD") {
        println!("||MOV + NextInst - ADD|| = {d:.3}");
    }
    if let Some(path) = std::env::args().nth(1) {
        std::fs::write(&path, vocab.to_json())?;
        println!("wrote {path}");
    }
    Ok(())
}
