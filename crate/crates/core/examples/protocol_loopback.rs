//! Serves episodes over loopback TCP and plays them from a learner thread
//! with the random policy, printing each message as it arrives.
//!
//! `cargo run --example protocol_loopback [episodes]`

use std::net::TcpListener;
use std::sync::Arc;
use std::thread;

use marl_regalloc::baselines::random_policy_step;
use marl_regalloc::embeddings::Vocabulary;
use marl_regalloc::env::EnvConfig;
use marl_regalloc::machine::MachineDescription;
use marl_regalloc::protocol::{serve_tcp, Learner, LearnerEvent, ServerContext, StartEpisodePayload};

fn main() -> anyhow::Result<()> {
    let episodes: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(2);
    let listener = TcpListener::bind("127.0.0.1:0")?;
    let addr = listener.local_addr()?;
    let ctx = ServerContext::new(
        Arc::new(MachineDescription::tiny3()),
        Arc::new(Vocabulary::untrained(8, 0)),
        EnvConfig::default(),
    );
    let server = thread::spawn(move || serve_tcp(listener, Arc::new(ctx), Some(1)));

    let mut l = Learner::connect(addr)?;
    println!("session {} with {:?}", l.session(), l.peer);
    for seed in 0..episodes {
        l.start_episode(&StartEpisodePayload {
            seed: Some(seed),
            ..Default::default()
        })?;
        loop {
            match l.next_event()? {
                LearnerEvent::Observation { seq, payload } => {
                    let a = random_policy_step(&payload.observation.mask, seed, payload.step)?;
                    println!("  obs {seq} for {:?}, {} legal -> {a:?}", payload.observation.agent, payload.observation.mask.len());
                    l.send_action(&a, seq)?;
                }
                LearnerEvent::GraphUpdate(u) => println!("  graph update: {} split", u.removed),
                LearnerEvent::Error(e) => println!("  error {:?}: {}", e.code, e.message),
                LearnerEvent::Done(d) => {
                    println!(
                        "episode {seed}: cost {} vs greedy {}, global reward {}",
                        d.cost_rl, d.cost_greedy, d.global_reward
                    );
                    break;
                }
            }
        }
    }
    drop(l);
    server.join().expect("server thread")?;
    Ok(())
}
