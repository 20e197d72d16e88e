//! Line-delimited JSON bridge to an out-of-process sequence model.
//!
//! Each `next_distribution` call writes one request line
//! `{"ctx":[ids],"vhash":"<sha256>"}` and waits for one response line
//! `{"p":[floats]}`. A peer may instead answer `{"error":"..."}`.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::{GenerationError, SequenceModel};
use crate::tokenizer::Vocabulary;

#[derive(Debug, Serialize, Deserialize)]
pub struct BridgeRequest {
    pub ctx: Vec<u32>,
    pub vhash: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct BridgeResponse {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

struct Connection {
    writer: Box<dyn Write + Send>,
    lines: Receiver<std::io::Result<String>>,
    child: Option<Child>,
}

/// [`SequenceModel`] backed by a bridge peer. Calls are serialized.
pub struct BridgeModel {
    size: usize,
    vhash: String,
    timeout: Duration,
    conn: Mutex<Connection>,
}

impl std::fmt::Debug for BridgeModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BridgeModel")
            .field("size", &self.size)
            .field("timeout", &self.timeout)
            .finish_non_exhaustive()
    }
}

fn reader_thread<R: BufRead + Send + 'static>(mut reader: R) -> Receiver<std::io::Result<String>> {
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || loop {
        let mut line = String::new();
        match reader.read_line(&mut line) {
            Ok(0) => break,
            Ok(_) => {
                if tx.send(Ok(line)).is_err() {
                    break;
                }
            }
            Err(e) => {
                let _ = tx.send(Err(e));
                break;
            }
        }
    });
    rx
}

impl BridgeModel {
    /// Talks to a peer over an arbitrary stream pair.
    pub fn from_streams<R, W>(reader: R, writer: W, vocab: &Vocabulary, timeout: Duration) -> Self
    where
        R: BufRead + Send + 'static,
        W: Write + Send + 'static,
    {
        Self {
            size: vocab.len(),
            vhash: vocab.hash(),
            timeout,
            conn: Mutex::new(Connection {
                writer: Box::new(writer),
                lines: reader_thread(reader),
                child: None,
            }),
        }
    }

    /// Spawns `command` and speaks the protocol over its stdin/stdout.
    pub fn spawn(mut command: Command, vocab: &Vocabulary, timeout: Duration) -> Result<Self, GenerationError> {
        let mut child = command
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()
            .map_err(|e| GenerationError::Bridge(format!("cannot start peer: {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let model = Self::from_streams(BufReader::new(stdout), stdin, vocab, timeout);
        model.conn.lock().expect("fresh mutex").child = Some(child);
        Ok(model)
    }

    fn call(&self, ctx: &[u32]) -> Result<Vec<f64>, GenerationError> {
        let mut conn = self
            .conn
            .lock()
            .map_err(|_| GenerationError::Bridge("connection poisoned by an earlier failure".into()))?;
        let request = serde_json::to_string(&BridgeRequest {
            ctx: ctx.to_vec(),
            vhash: self.vhash.clone(),
        })
        .expect("request serializes");
        let io = |e: std::io::Error| GenerationError::Bridge(format!("write failed: {e}"));
        conn.writer.write_all(request.as_bytes()).map_err(io)?;
        conn.writer.write_all(b"\n").map_err(io)?;
        conn.writer.flush().map_err(io)?;
        let line = match conn.lines.recv_timeout(self.timeout) {
            Ok(Ok(line)) => line,
            Ok(Err(e)) => return Err(GenerationError::Bridge(format!("read failed: {e}"))),
            Err(RecvTimeoutError::Timeout) => {
                return Err(GenerationError::Bridge(format!(
                    "no response within {} ms (context length {})",
                    self.timeout.as_millis(),
                    ctx.len()
                )))
            }
            Err(RecvTimeoutError::Disconnected) => {
                return Err(GenerationError::Bridge("peer closed the connection".into()))
            }
        };
        let response: BridgeResponse = serde_json::from_str(line.trim())
            .map_err(|e| GenerationError::Bridge(format!("malformed response ({e}): {:.80}", line.trim())))?;
        if let Some(err) = response.error {
            return Err(GenerationError::Bridge(format!("peer error: {err}")));
        }
        let p = response
            .p
            .ok_or_else(|| GenerationError::Bridge("response lacks field `p`".into()))?;
        check_distribution(&p, self.size).map_err(GenerationError::Bridge)?;
        Ok(p)
    }
}

impl Drop for BridgeModel {
    fn drop(&mut self) {
        if let Ok(conn) = self.conn.get_mut() {
            if let Some(child) = conn.child.as_mut() {
                let _ = child.kill();
                let _ = child.wait();
            }
        }
    }
}

/// Checks length, non-negativity and unit mass (within 1e-6).
pub fn check_distribution(p: &[f64], size: usize) -> Result<(), String> {
    if p.len() != size {
        return Err(format!("expected {size} probabilities, got {}", p.len()));
    }
    if let Some(i) = p.iter().position(|x| !x.is_finite() || *x < 0.0) {
        return Err(format!("probability {i} is {}", p[i]));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > 1e-6 {
        return Err(format!("probabilities sum to {sum}"));
    }
    Ok(())
}

impl SequenceModel for BridgeModel {
    fn vocab_size(&self) -> usize {
        self.size
    }

    fn next_distribution(&self, context: &[u32]) -> Result<Vec<f64>, GenerationError> {
        self.call(context)
    }
}

/// Behaviour of the reference peer served by [`serve_stub`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StubMode {
    Uniform,
    /// Answers with one probability too few.
    WrongLength,
    /// Reads requests but never answers.
    Silent,
}

/// Minimal bridge peer: answers each request until the input closes.
/// Requests carrying a vocabulary hash other than `vhash` get an error reply.
pub fn serve_stub<R: BufRead, W: Write>(
    reader: R,
    mut writer: W,
    size: usize,
    vhash: &str,
    mode: StubMode,
) -> std::io::Result<()> {
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let response = match serde_json::from_str::<BridgeRequest>(&line) {
            Err(e) => BridgeResponse {
                p: None,
                error: Some(format!("bad request: {e}")),
            },
            Ok(req) if req.vhash != vhash => BridgeResponse {
                p: None,
                error: Some("vocabulary hash mismatch".into()),
            },
            Ok(_) => match mode {
                StubMode::Silent => continue,
                StubMode::Uniform => BridgeResponse {
                    p: Some(vec![1.0 / size as f64; size]),
                    error: None,
                },
                StubMode::WrongLength => BridgeResponse {
                    p: Some(vec![1.0 / (size - 1).max(1) as f64; size.saturating_sub(1)]),
                    error: None,
                },
            },
        };
        serde_json::to_writer(&mut writer, &response)?;
        writer.write_all(b"\n")?;
        writer.flush()?;
    }
    Ok(())
}

/// Bridge connected to an in-process [`serve_stub`] thread via OS pipes.
pub fn in_process_stub(vocab: &Vocabulary, mode: StubMode, timeout: Duration) -> Result<BridgeModel, GenerationError> {
    let (req_rx, req_tx) = std::io::pipe().map_err(|e| GenerationError::Bridge(e.to_string()))?;
    let (resp_rx, resp_tx) = std::io::pipe().map_err(|e| GenerationError::Bridge(e.to_string()))?;
    let size = vocab.len();
    let vhash = vocab.hash();
    thread::spawn(move || {
        let _ = serve_stub(BufReader::new(req_rx), resp_tx, size, &vhash, mode);
    });
    Ok(BridgeModel::from_streams(
        BufReader::new(resp_rx),
        req_tx,
        vocab,
        timeout,
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatencyReport {
    pub calls: usize,
    pub total: Duration,
    pub mean: Duration,
    pub p50: Duration,
    pub p99: Duration,
    pub max: Duration,
}

impl std::fmt::Display for LatencyReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "calls\t{}\ntotal_ms\t{:.3}\nmean_us\t{:.3}\np50_us\t{:.3}\np99_us\t{:.3}\nmax_us\t{:.3}",
            self.calls,
            self.total.as_secs_f64() * 1e3,
            self.mean.as_secs_f64() * 1e6,
            self.p50.as_secs_f64() * 1e6,
            self.p99.as_secs_f64() * 1e6,
            self.max.as_secs_f64() * 1e6,
        )
    }
}

/// Times `calls` sequential queries with a growing context.
pub fn measure_latency(
    model: &dyn SequenceModel,
    calls: usize,
    max_context: usize,
) -> Result<LatencyReport, GenerationError> {
    let mut samples = Vec::with_capacity(calls);
    let mut ctx = Vec::new();
    let start = Instant::now();
    for i in 0..calls {
        if ctx.len() >= max_context {
            ctx.clear();
        }
        ctx.push((i % model.vocab_size().max(1)) as u32);
        let t = Instant::now();
        model.next_distribution(&ctx)?;
        samples.push(t.elapsed());
    }
    let total = start.elapsed();
    samples.sort();
    let pick = |q: f64| {
        samples
            .get(((samples.len() as f64 - 1.0) * q).round() as usize)
            .copied()
            .unwrap_or_default()
    };
    Ok(LatencyReport {
        calls,
        total,
        mean: if calls == 0 {
            Duration::ZERO
        } else {
            total / calls as u32
        },
        p50: pick(0.5),
        p99: pick(0.99),
        max: samples.last().copied().unwrap_or_default(),
    })
}
