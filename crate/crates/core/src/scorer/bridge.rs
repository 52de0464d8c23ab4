//! Scorer backed by one or more external bridge processes.

use std::io::{BufReader, Read, Write};
use std::process::{Child, Command, Stdio};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::{Mutex, MutexGuard};
use std::thread;
use std::time::Duration;

use super::protocol::{self, Handshake, ProtocolError, Reply, Request};
use super::{Scorer, ScorerError};
use crate::tensor::ImageTensor;

pub const DEFAULT_BRIDGE_TIMEOUT: Duration = Duration::from_secs(60);

/// One bridge peer. Requests are strictly sequential.
struct Connection {
    writer: Box<dyn Write + Send>,
    replies: Receiver<Result<Reply, ProtocolError>>,
    child: Option<Child>,
    timeout: Duration,
    dead: Option<String>,
}

impl Connection {
    fn open(
        reader: Box<dyn Read + Send>,
        writer: Box<dyn Write + Send>,
        child: Option<Child>,
        timeout: Duration,
    ) -> Result<(Self, Handshake), ScorerError> {
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            let mut reader = BufReader::new(reader);
            loop {
                let reply = protocol::read_reply(&mut reader);
                let stop = reply.is_err();
                if tx.send(reply).is_err() || stop {
                    break;
                }
            }
        });
        let mut conn = Connection {
            writer,
            replies: rx,
            child,
            timeout,
            dead: None,
        };
        match conn.exchange(protocol::HELLO)? {
            Reply::Ok(hs) => Ok((conn, hs)),
            other => Err(conn.fail(format!("unexpected handshake reply {other:?}"))),
        }
    }

    fn fail(&mut self, why: String) -> ScorerError {
        self.dead = Some(why.clone());
        if let Some(child) = self.child.as_mut() {
            let _ = child.kill();
            let _ = child.wait();
        }
        ScorerError::Unavailable(why)
    }

    fn exchange(&mut self, bytes: &[u8]) -> Result<Reply, ScorerError> {
        if let Some(why) = &self.dead {
            return Err(ScorerError::Unavailable(why.clone()));
        }
        if let Err(e) = self
            .writer
            .write_all(bytes)
            .and_then(|_| self.writer.flush())
        {
            return Err(self.fail(format!("write to bridge failed: {e}")));
        }
        match self.replies.recv_timeout(self.timeout) {
            Ok(Ok(Reply::Err(msg))) => Err(ScorerError::Remote(msg)),
            Ok(Ok(reply)) => Ok(reply),
            Ok(Err(e)) => Err(self.fail(format!("bridge stream: {e}"))),
            Err(RecvTimeoutError::Timeout) => {
                Err(self.fail(format!("bridge did not answer within {:?}", self.timeout)))
            }
            Err(RecvTimeoutError::Disconnected) => Err(self.fail("bridge reader stopped".into())),
        }
    }

    fn request(
        &mut self,
        req: Request,
        batch: &[ImageTensor],
        expected: usize,
    ) -> Result<Vec<f64>, ScorerError> {
        match self.exchange(&protocol::encode_request(req, batch))? {
            Reply::Logits(v) if v.len() == expected => Ok(v.into_iter().map(f64::from).collect()),
            Reply::Logits(v) => Err(ScorerError::CountMismatch {
                expected,
                got: v.len(),
            }),
            other => Err(self.fail(format!("unexpected reply {other:?}"))),
        }
    }
}

impl Drop for Connection {
    fn drop(&mut self) {
        if let Some(mut child) = self.child.take() {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

/// A pool of bridge connections; concurrent calls fan out over the pool,
/// each connection keeps one request in flight.
pub struct BridgeScorer {
    identity: String,
    handshake: Handshake,
    conns: Vec<Mutex<Connection>>,
    next: AtomicUsize,
}

impl BridgeScorer {
    /// Launch `workers` copies of `command` (run through `sh -c`).
    pub fn spawn(command: &str, workers: usize, timeout: Duration) -> Result<Self, ScorerError> {
        let mut conns = Vec::new();
        let mut handshake = None;
        for _ in 0..workers.max(1) {
            let mut child = Command::new("sh")
                .arg("-c")
                .arg(command)
                .stdin(Stdio::piped())
                .stdout(Stdio::piped())
                .stderr(Stdio::inherit())
                .spawn()
                .map_err(|e| ScorerError::Unavailable(format!("cannot start `{command}`: {e}")))?;
            let stdin = child.stdin.take().expect("piped stdin");
            let stdout = child.stdout.take().expect("piped stdout");
            let (conn, hs) =
                Connection::open(Box::new(stdout), Box::new(stdin), Some(child), timeout)?;
            if let Some(prev) = handshake {
                if prev != hs {
                    return Err(ScorerError::Unavailable(format!(
                        "bridge workers disagree on handshake: {prev:?} vs {hs:?}"
                    )));
                }
            }
            handshake = Some(hs);
            conns.push(Mutex::new(conn));
        }
        Ok(BridgeScorer {
            identity: format!("bridge:{command}"),
            handshake: handshake.expect("at least one worker"),
            conns,
            next: AtomicUsize::new(0),
        })
    }

    /// Talk to an already-connected peer over arbitrary streams.
    pub fn from_streams(
        identity: impl Into<String>,
        reader: impl Read + Send + 'static,
        writer: impl Write + Send + 'static,
        timeout: Duration,
    ) -> Result<Self, ScorerError> {
        let (conn, handshake) =
            Connection::open(Box::new(reader), Box::new(writer), None, timeout)?;
        Ok(BridgeScorer {
            identity: identity.into(),
            handshake,
            conns: vec![Mutex::new(conn)],
            next: AtomicUsize::new(0),
        })
    }

    pub fn handshake(&self) -> Handshake {
        self.handshake
    }

    pub fn workers(&self) -> usize {
        self.conns.len()
    }

    fn connection(&self) -> MutexGuard<'_, Connection> {
        let start = self.next.fetch_add(1, Ordering::Relaxed);
        let n = self.conns.len();
        for k in 0..n {
            if let Ok(guard) = self.conns[(start + k) % n].try_lock() {
                return guard;
            }
        }
        self.conns[start % n]
            .lock()
            .unwrap_or_else(|poisoned| poisoned.into_inner())
    }
}

impl Scorer for BridgeScorer {
    fn identity(&self) -> String {
        self.identity.clone()
    }

    fn input_shape(&self) -> Option<(usize, usize, usize)> {
        Some(self.handshake.shape())
    }

    fn logits(&self, batch: &[ImageTensor], class_index: usize) -> Result<Vec<f64>, ScorerError> {
        let req = Request::Score {
            n: batch.len(),
            class_index,
        };
        self.connection().request(req, batch, batch.len())
    }

    fn num_classes(&self) -> Option<usize> {
        Some(self.handshake.num_classes)
    }

    fn all_logits(&self, batch: &[ImageTensor]) -> Result<Vec<Vec<f64>>, ScorerError> {
        let k = self.handshake.num_classes;
        let flat = self.connection().request(
            Request::LogitsAll { n: batch.len() },
            batch,
            batch.len() * k,
        )?;
        Ok(flat.chunks(k.max(1)).map(<[f64]>::to_vec).collect())
    }

    fn concurrent(&self) -> bool {
        self.conns.len() > 1
    }
}
