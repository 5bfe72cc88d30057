use std::io::{BufReader, BufWriter, Read, Write};
use std::net::{TcpListener, TcpStream, ToSocketAddrs};

use super::{
    read_frame, write_frame, EpisodeDonePayload, ErrorCode, ErrorPayload, HelloPayload, Message, MessageType,
    ObservationPayload, ProtocolError, StartEpisodePayload, PROTOCOL_VERSION,
};
use crate::env::{Action, GraphUpdate, Observation};

#[derive(Debug, Clone, PartialEq)]
pub enum LearnerEvent {
    Observation { seq: u64, payload: ObservationPayload },
    GraphUpdate(GraphUpdate),
    Done(Box<EpisodeDonePayload>),
    Error(ErrorPayload),
}

/// Learner end of a connection.
pub struct Learner<R, W> {
    r: R,
    w: W,
    session: u64,
    seq: u64,
    pub peer: Option<HelloPayload>,
}

fn hello_payload() -> serde_json::Value {
    serde_json::to_value(HelloPayload {
        version: PROTOCOL_VERSION,
        role: "learner".into(),
        machine: None,
    })
    .expect("serializable")
}

impl Learner<BufReader<TcpStream>, BufWriter<TcpStream>> {
    /// Connects to a serving compiler and exchanges `hello`.
    pub fn connect(addr: impl ToSocketAddrs) -> Result<Self, ProtocolError> {
        let s = TcpStream::connect(addr)?;
        s.set_nodelay(true)?;
        let mut l = Learner::new(BufReader::new(s.try_clone()?), BufWriter::new(s));
        l.hello()?;
        Ok(l)
    }

    /// Waits for a compiler that dials out and answers its `hello`.
    pub fn accept(listener: &TcpListener) -> Result<Self, ProtocolError> {
        let (s, _) = listener.accept()?;
        s.set_nodelay(true)?;
        let mut l = Learner::new(BufReader::new(s.try_clone()?), BufWriter::new(s));
        let m = l.recv()?;
        if m.kind != MessageType::Hello {
            return Err(ProtocolError::Unexpected(m.kind));
        }
        l.session = m.session;
        l.peer = Some(m.decode()?);
        let seq = m.seq;
        l.send(MessageType::Hello, hello_payload(), Some(seq))?;
        Ok(l)
    }
}

impl<R: Read, W: Write> Learner<R, W> {
    pub fn new(r: R, w: W) -> Self {
        Learner {
            r,
            w,
            session: 0,
            seq: 0,
            peer: None,
        }
    }

    pub fn session(&self) -> u64 {
        self.session
    }

    fn recv(&mut self) -> Result<Message, ProtocolError> {
        read_frame(&mut self.r)?.ok_or(ProtocolError::Closed)
    }

    fn send(&mut self, kind: MessageType, payload: serde_json::Value, reply_to: Option<u64>) -> Result<u64, ProtocolError> {
        self.seq += 1;
        let mut m = Message::new(kind, self.session, self.seq, payload);
        m.reply_to = reply_to;
        write_frame(&mut self.w, &m)?;
        Ok(self.seq)
    }

    /// Sends a hand-built message as is.
    pub fn send_raw(&mut self, m: &Message) -> Result<(), ProtocolError> {
        write_frame(&mut self.w, m)
    }

    /// Opens the session; the reply carries the session id.
    pub fn hello(&mut self) -> Result<HelloPayload, ProtocolError> {
        self.send(MessageType::Hello, hello_payload(), None)?;
        let m = self.recv()?;
        if m.kind != MessageType::Hello {
            return Err(ProtocolError::Unexpected(m.kind));
        }
        self.session = m.session;
        let p: HelloPayload = m.decode()?;
        self.peer = Some(p.clone());
        Ok(p)
    }

    pub fn start_episode(&mut self, p: &StartEpisodePayload) -> Result<(), ProtocolError> {
        self.send(MessageType::StartEpisode, serde_json::to_value(p).expect("serializable"), None)?;
        Ok(())
    }

    pub fn send_action(&mut self, action: &Action, reply_to: u64) -> Result<(), ProtocolError> {
        self.send(MessageType::Action, serde_json::to_value(action).expect("serializable"), Some(reply_to))?;
        Ok(())
    }

    pub fn next_event(&mut self) -> Result<LearnerEvent, ProtocolError> {
        let m = self.recv()?;
        Ok(match m.kind {
            MessageType::Observation => LearnerEvent::Observation {
                seq: m.seq,
                payload: m.decode()?,
            },
            MessageType::GraphUpdate => LearnerEvent::GraphUpdate(m.decode()?),
            MessageType::EpisodeDone => LearnerEvent::Done(Box::new(m.decode()?)),
            MessageType::Error => LearnerEvent::Error(m.decode()?),
            other => return Err(ProtocolError::Unexpected(other)),
        })
    }
}

/// Answers observations with `policy(observation, step)` until the episode
/// ends. Recoverable errors are skipped; the observation that follows them
/// is answered again.
pub fn run_learner<R: Read, W: Write>(
    l: &mut Learner<R, W>,
    mut policy: impl FnMut(&Observation, u64) -> Action,
) -> Result<EpisodeDonePayload, ProtocolError> {
    loop {
        match l.next_event()? {
            LearnerEvent::Observation { seq, payload } => {
                let a = policy(&payload.observation, payload.step);
                l.send_action(&a, seq)?;
            }
            LearnerEvent::GraphUpdate(_) => {}
            LearnerEvent::Done(d) => return Ok(*d),
            LearnerEvent::Error(e) if matches!(e.code, ErrorCode::OffMask | ErrorCode::Stale) => {}
            LearnerEvent::Error(e) => {
                return Err(ProtocolError::Peer {
                    code: e.code,
                    message: e.message,
                })
            }
        }
    }
}
