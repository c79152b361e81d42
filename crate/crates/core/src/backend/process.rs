//! Line-delimited JSON over a child process's standard input/output.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Mutex, MutexGuard};

use super::{decode_response, Backend, ClassScores, Decoded, Request, WireRequest};
use crate::{Error, Result};

struct ChildIo {
    child: Child,
    stdin: BufWriter<ChildStdin>,
    stdout: BufReader<ChildStdout>,
}

impl Drop for ChildIo {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// Spawns the model command lazily and keeps it alive across batches.
///
/// Each process handles one batch at a time; `pool_size` processes allow
/// concurrent batches. A process that breaks the protocol is killed and
/// respawned, up to `max_retries` times per batch.
pub struct ProcessBackend {
    command: String,
    slots: Vec<Mutex<Option<ChildIo>>>,
    next: AtomicUsize,
    max_retries: u32,
}

enum Failure {
    Transport(String),
    Rejected(String),
}

impl ProcessBackend {
    pub fn new(command: &str, pool_size: usize, max_retries: u32) -> Self {
        ProcessBackend {
            command: command.to_owned(),
            slots: (0..pool_size.max(1)).map(|_| Mutex::new(None)).collect(),
            next: AtomicUsize::new(0),
            max_retries,
        }
    }

    fn spawn(&self) -> std::io::Result<ChildIo> {
        let mut cmd = if cfg!(unix) {
            let mut c = Command::new("sh");
            c.arg("-c").arg(format!("exec {}", self.command));
            c
        } else {
            let mut parts = self.command.split_whitespace();
            let mut c = Command::new(parts.next().unwrap_or_default());
            c.args(parts);
            c
        };
        let mut child = cmd
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()?;
        let stdin = BufWriter::with_capacity(1 << 20, child.stdin.take().expect("piped stdin"));
        let stdout = BufReader::new(child.stdout.take().expect("piped stdout"));
        Ok(ChildIo {
            child,
            stdin,
            stdout,
        })
    }

    fn acquire(&self) -> MutexGuard<'_, Option<ChildIo>> {
        for slot in &self.slots {
            if let Ok(guard) = slot.try_lock() {
                return guard;
            }
        }
        let i = self.next.fetch_add(1, Ordering::Relaxed) % self.slots.len();
        self.slots[i].lock().unwrap_or_else(|e| e.into_inner())
    }

    fn exchange(io: &mut ChildIo, requests: &[Request<'_>]) -> std::result::Result<Vec<ClassScores>, Failure> {
        let ChildIo {
            child,
            stdin,
            stdout,
        } = io;
        // Write on a separate thread so a model that answers while still
        // reading cannot fill its stdout pipe and deadlock us.
        let (written, responses) = std::thread::scope(|scope| {
            let writer = scope.spawn(move || -> std::io::Result<()> {
                for r in requests {
                    serde_json::to_writer(&mut *stdin, &WireRequest::from(r))?;
                    stdin.write_all(b"\n")?;
                }
                stdin.flush()
            });
            let mut out = Vec::with_capacity(requests.len());
            let mut line = String::new();
            let mut failure = None;
            for r in requests {
                line.clear();
                match stdout.read_line(&mut line) {
                    Ok(0) => {
                        failure = Some(Failure::Transport("model process closed its output".into()));
                        break;
                    }
                    Err(e) => {
                        failure = Some(Failure::Transport(format!("reading response: {e}")));
                        break;
                    }
                    Ok(_) => {}
                }
                match decode_response(line.trim_end(), r.id) {
                    Ok(Decoded::Scores(s)) => out.push(s),
                    Ok(Decoded::Rejected(msg)) => {
                        if failure.is_none() {
                            failure = Some(Failure::Rejected(format!("{}: {msg}", r.id)));
                        }
                    }
                    Err(msg) => {
                        failure = Some(Failure::Transport(msg));
                        break;
                    }
                }
            }
            if matches!(failure, Some(Failure::Transport(_))) {
                // Unblocks the writer if the child stopped reading.
                let _ = child.kill();
            }
            let written = writer.join().expect("writer thread panicked");
            (written, failure.map_or(Ok(out), Err))
        });
        match (written, responses) {
            (_, Err(f)) => Err(f),
            (Err(e), _) => Err(Failure::Transport(format!("writing requests: {e}"))),
            (Ok(()), Ok(out)) => Ok(out),
        }
    }
}

impl Backend for ProcessBackend {
    fn predict(&self, requests: &[Request<'_>]) -> Result<Vec<ClassScores>> {
        if requests.is_empty() {
            return Ok(Vec::new());
        }
        let mut slot = self.acquire();
        let mut last_error = String::new();
        for attempt in 1..=self.max_retries + 1 {
            if slot.is_none() {
                match self.spawn() {
                    Ok(io) => *slot = Some(io),
                    Err(e) => {
                        last_error = format!("spawning {:?}: {e}", self.command);
                        log::warn!("attempt {attempt}: {last_error}");
                        continue;
                    }
                }
            }
            let io = slot.as_mut().expect("spawned above");
            match Self::exchange(io, requests) {
                Ok(scores) => return Ok(scores),
                Err(Failure::Rejected(msg)) => return Err(Error::Rejected(msg)),
                Err(Failure::Transport(msg)) => {
                    log::warn!("attempt {attempt} against {:?} failed: {msg}", self.command);
                    last_error = msg;
                    *slot = None;
                }
            }
        }
        Err(Error::Transport {
            attempts: self.max_retries + 1,
            message: last_error,
        })
    }

    fn describe(&self) -> String {
        format!("proc:{}", self.command)
    }
}
