use std::io::{BufReader, BufWriter, Read, Write};
use std::net::{TcpListener, TcpStream, ToSocketAddrs};
use std::ops::Range;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::thread;

use log::{info, warn};

use super::{
    read_frame, write_frame, EpisodeDonePayload, ErrorCode, ErrorPayload, HelloPayload, Message, MessageType,
    ObservationPayload, ProtocolError, StartEpisodePayload, PROTOCOL_VERSION,
};
use crate::embeddings::Vocabulary;
use crate::env::{Action, EnvConfig, EnvError, Episode, Finalized, StepResult};
use crate::machine::MachineDescription;
use crate::transforms::verify_allocation;
use crate::liveness::compute_liveness;
use crate::mir::{generate_random_function, parse_function, GenParams, MachineFunction};

/// What a serving process shares across its sessions.
pub struct ServerContext {
    pub md: Arc<MachineDescription>,
    pub vocab: Arc<Vocabulary>,
    pub config: EnvConfig,
    /// Functions addressed by seed; when empty, seeds generate functions.
    pub corpus: Vec<MachineFunction>,
    pub gen: GenParams,
    pub seed_range: Option<Range<u64>>,
    next_session: AtomicU64,
}

impl ServerContext {
    pub fn new(md: Arc<MachineDescription>, vocab: Arc<Vocabulary>, config: EnvConfig) -> Self {
        let gen = GenParams::for_machine(&md);
        ServerContext {
            md,
            vocab,
            config,
            corpus: Vec::new(),
            gen,
            seed_range: None,
            next_session: AtomicU64::new(1),
        }
    }

    /// The server's machine, or the built-in one the request names.
    fn machine_for(&self, p: &StartEpisodePayload) -> Result<Arc<MachineDescription>, String> {
        match &p.machine {
            Some(name) if *name != self.md.name => MachineDescription::builtin(name).map(Arc::new).map_err(|e| e.to_string()),
            _ => Ok(self.md.clone()),
        }
    }

    fn function_for(&self, p: &StartEpisodePayload, md: &MachineDescription) -> Result<MachineFunction, String> {
        if let Some(text) = &p.function {
            return parse_function(text).map_err(|e| e.to_string());
        }
        let seed = p.seed.ok_or("start_episode needs a function or a seed")?;
        if let Some(r) = &self.seed_range {
            if !r.contains(&seed) {
                return Err(format!("seed {seed} outside {}..{}", r.start, r.end));
            }
        }
        Ok(if self.corpus.is_empty() && md.name != self.md.name {
            generate_random_function(seed, &GenParams::for_machine(md))
        } else if self.corpus.is_empty() {
            generate_random_function(seed, &self.gen)
        } else {
            self.corpus[(seed % self.corpus.len() as u64) as usize].clone()
        })
    }
}

struct Conn<R, W> {
    r: R,
    w: W,
    session: u64,
    seq: u64,
}

impl<R: Read, W: Write> Conn<R, W> {
    fn send(&mut self, kind: MessageType, payload: serde_json::Value, reply_to: Option<u64>) -> Result<u64, ProtocolError> {
        self.seq += 1;
        let mut m = Message::new(kind, self.session, self.seq, payload);
        m.reply_to = reply_to;
        write_frame(&mut self.w, &m)?;
        Ok(self.seq)
    }

    fn error(&mut self, code: ErrorCode, message: String, reply_to: Option<u64>) -> Result<(), ProtocolError> {
        let p = ErrorPayload { code, message };
        self.send(MessageType::Error, serde_json::to_value(p).expect("serializable"), reply_to)?;
        Ok(())
    }

    fn recv(&mut self) -> Result<Option<Message>, ProtocolError> {
        match read_frame(&mut self.r) {
            Err(ProtocolError::Malformed(e)) => {
                self.error(ErrorCode::Malformed, e.clone(), None)?;
                Err(ProtocolError::Malformed(e))
            }
            other => other,
        }
    }
}

fn strip(mut r: StepResult) -> StepResult {
    r.info.graph_update = None;
    r
}

fn play<R: Read, W: Write>(c: &mut Conn<R, W>, ep: &mut Episode) -> Result<Finalized, ProtocolError> {
    let mut last: Option<StepResult> = None;
    while let Some(obs) = ep.observation() {
        let payload = serde_json::to_value(ObservationPayload {
            step: ep.records().len() as u64,
            last: last.take(),
            observation: obs,
        })
        .expect("serializable");
        let mut obs_seq = c.send(MessageType::Observation, payload.clone(), None)?;
        loop {
            let Some(msg) = c.recv()? else {
                return Err(ProtocolError::Closed);
            };
            if msg.kind != MessageType::Action {
                c.error(ErrorCode::Malformed, format!("expected an action, got {:?}", msg.kind), Some(msg.seq))?;
                return Err(ProtocolError::Unexpected(msg.kind));
            }
            let action: Action = match msg.decode() {
                Ok(a) => a,
                Err(e) => {
                    c.error(ErrorCode::Malformed, e.to_string(), Some(msg.seq))?;
                    return Err(e);
                }
            };
            if msg.reply_to != Some(obs_seq) {
                c.error(
                    ErrorCode::Stale,
                    format!("action answers {:?}, latest observation is {obs_seq}", msg.reply_to),
                    Some(msg.seq),
                )?;
                obs_seq = c.send(MessageType::Observation, payload.clone(), None)?;
                continue;
            }
            match ep.step(&action) {
                Ok(mut r) => {
                    if let Some(up) = r.info.graph_update.take() {
                        c.send(MessageType::GraphUpdate, serde_json::to_value(up).expect("serializable"), Some(msg.seq))?;
                    }
                    last = Some(strip(r));
                    break;
                }
                Err(EnvError::OffMask(a)) => {
                    c.error(ErrorCode::OffMask, format!("{a:?} is not in the mask"), Some(msg.seq))?;
                    obs_seq = c.send(MessageType::Observation, payload.clone(), None)?;
                }
                Err(e) => return Err(e.into()),
            }
        }
    }
    let fin = ep.finalize()?;
    let info = compute_liveness(&fin.virtual_function);
    let verified = verify_allocation(&fin.virtual_function, &info, &fin.assignment, ep.machine()).is_ok();
    let done = EpisodeDonePayload {
        outcome: ep.outcome().clone(),
        last,
        decisions: fin.decisions.clone(),
        cost_rl: fin.cost_rl,
        cost_greedy: fin.cost_greedy,
        global_reward: fin.global_reward,
        verified,
        transcript: ep.transcript(Some(&fin)),
    };
    c.send(MessageType::EpisodeDone, serde_json::to_value(done).expect("serializable"), None)?;
    Ok(fin)
}

/// Plays one already-reset episode over an established connection, where
/// the compiler has dialed out to a listening learner. Sends `hello`, waits
/// for the learner's `hello`, then drives the episode.
pub fn drive_episode<R: Read, W: Write>(r: R, w: W, ep: &mut Episode) -> Result<Finalized, ProtocolError> {
    let mut c = Conn { r, w, session: 1, seq: 0 };
    let hello = HelloPayload {
        version: PROTOCOL_VERSION,
        role: "compiler".into(),
        machine: Some(ep.machine().name.clone()),
    };
    c.send(MessageType::Hello, serde_json::to_value(hello).expect("serializable"), None)?;
    match c.recv()? {
        Some(m) if m.kind == MessageType::Hello => {}
        Some(m) => return Err(ProtocolError::Unexpected(m.kind)),
        None => return Err(ProtocolError::Closed),
    }
    play(&mut c, ep)
}

/// Connects to a learner at `addr` and plays `ep` against it.
pub fn drive_remote(addr: impl ToSocketAddrs, ep: &mut Episode) -> Result<Finalized, ProtocolError> {
    let s = TcpStream::connect(addr)?;
    s.set_nodelay(true)?;
    drive_episode(BufReader::new(s.try_clone()?), BufWriter::new(s), ep)
}

/// Serves one learner-initiated session until the peer closes.
pub fn run_session<R: Read, W: Write>(r: R, w: W, ctx: &ServerContext) -> Result<(), ProtocolError> {
    let session = ctx.next_session.fetch_add(1, Ordering::Relaxed);
    let mut c = Conn { r, w, session, seq: 0 };
    match c.recv()? {
        Some(m) if m.kind == MessageType::Hello => {
            c.send(
                MessageType::Hello,
                serde_json::to_value(HelloPayload {
                    version: PROTOCOL_VERSION,
                    role: "compiler".into(),
                    machine: Some(ctx.md.name.clone()),
                })
                .expect("serializable"),
                Some(m.seq),
            )?;
        }
        Some(m) => {
            c.error(ErrorCode::Malformed, "session must open with hello".into(), Some(m.seq))?;
            return Err(ProtocolError::Unexpected(m.kind));
        }
        None => return Ok(()),
    }
    while let Some(m) = c.recv()? {
        match m.kind {
            MessageType::StartEpisode => {
                let p: StartEpisodePayload = match m.decode() {
                    Ok(p) => p,
                    Err(e) => {
                        c.error(ErrorCode::Malformed, e.to_string(), Some(m.seq))?;
                        return Err(e);
                    }
                };
                let config = p.config.clone().unwrap_or_else(|| ctx.config.clone());
                let ep = ctx.machine_for(&p).and_then(|md| {
                    let f = ctx.function_for(&p, &md)?;
                    Episode::reset(&f, md, ctx.vocab.clone(), config).map_err(|e| e.to_string())
                });
                match ep {
                    Ok(mut ep) => {
                        play(&mut c, &mut ep)?;
                    }
                    Err(e) => c.error(ErrorCode::BadRequest, e, Some(m.seq))?,
                }
            }
            MessageType::Action => c.error(ErrorCode::Stale, "no episode is running".into(), Some(m.seq))?,
            MessageType::Hello => {}
            other => {
                c.error(ErrorCode::Malformed, format!("unexpected {other:?}"), Some(m.seq))?;
                return Err(ProtocolError::Unexpected(other));
            }
        }
    }
    Ok(())
}

/// Accepts connections and serves each on its own thread. Stops after
/// `limit` connections when given.
pub fn serve_tcp(listener: TcpListener, ctx: Arc<ServerContext>, limit: Option<usize>) -> Result<(), ProtocolError> {
    let mut handles = Vec::new();
    for (n, stream) in listener.incoming().enumerate() {
        let stream = stream?;
        stream.set_nodelay(true)?;
        let ctx = ctx.clone();
        info!("connection from {:?}", stream.peer_addr().ok());
        handles.push(thread::spawn(move || {
            let r = stream.try_clone().map(BufReader::new);
            match r {
                Ok(r) => {
                    if let Err(e) = run_session(r, BufWriter::new(stream), &ctx) {
                        warn!("session ended: {e}");
                    }
                }
                Err(e) => warn!("cannot clone stream: {e}"),
            }
        }));
        if limit.is_some_and(|l| n + 1 >= l) {
            break;
        }
    }
    for h in handles {
        let _ = h.join();
    }
    Ok(())
}
