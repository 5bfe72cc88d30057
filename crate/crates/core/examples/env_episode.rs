//! Plays one episode of the four-agent environment by hand on the running
//! example, then finishes it with the random policy and prints the terminal
//! comparison against greedy.
//!
//! `cargo run --example env_episode`

use std::sync::Arc;

use marl_regalloc::baselines::random_policy_step;
use marl_regalloc::embeddings::Vocabulary;
use marl_regalloc::env::{Action, EnvConfig, Episode, Task};
use marl_regalloc::machine::MachineDescription;
use marl_regalloc::mir::parse_function;

fn main() -> anyhow::Result<()> {
    let f = parse_function(include_str!("../data/running_example.mir"))?;
    let mut ep = Episode::reset(
        &f,
        Arc::new(MachineDescription::tiny3()),
        Arc::new(Vocabulary::untrained(16, 0)),
        EnvConfig::default(),
    )?;
    println!("reset: {:?}", ep.outcome());
    let script = [
        Action::SelectNode { vreg: "i".into() },
        Action::SelectTask { task: Task::Split },
        Action::Split { point: 8 },
        Action::SelectNode { vreg: "y".into() },
        Action::SelectTask { task: Task::Color },
    ];
    for a in &script {
        let obs = ep.observation().expect("episode running");
        let r = ep.step(a)?;
        println!("{:?} chose {a:?}: reward {} credit {:?}", obs.agent, r.reward, r.info.credit);
        if let Some(u) = &r.info.graph_update {
            let added: Vec<&str> = u.added.iter().map(|v| v.id.as_str()).collect();
            println!("  graph update: -{} +{added:?}, {} edges added", u.removed, u.edges_added.len());
        }
    }
    let obs = ep.observation().expect("color assigner's turn");
    let node = obs.node.as_ref().expect("node view");
    println!("color assigner sees {} with {} feature rows, mask {:?}", node.id, node.features.len(), obs.mask);

    let mut step = script.len() as u64;
    while let Some(obs) = ep.observation() {
        let a = random_policy_step(&obs.mask, 1, step)?;
        let r = ep.step(&a)?;
        println!("{:?} chose {a:?}: reward {}", obs.agent, r.reward);
        step += 1;
    }
    let fin = ep.finalize()?;
    println!("decisions {:?}", fin.decisions);
    println!("cost {} vs greedy {}: global reward {}", fin.cost_rl, fin.cost_greedy, fin.global_reward);
    Ok(())
}
