//! External classifier process.
//!
//! Line protocol over the child's stdin/stdout, UTF-8, `\n` terminated:
//!
//! ```text
//! harness -> child   FAIRGEN-PROTO 1
//! child -> harness   FAIRGEN-PROTO 1
//! harness -> child   PREDICT <sample_id> <image_path>      (repeated)
//! child -> harness   RESULT <sample_id> <label> <score>    (one per request)
//! harness -> child   END
//! child -> harness   END
//! ```
//!
//! `<image_path>` is the rest of the request line and may contain spaces;
//! sample ids and labels may not. A child may answer a request it cannot
//! parse with `ERROR <message>`.
//! Requests go out in chunks of [`REQUEST_CHUNK`]; all responses for a chunk
//! must arrive within the timeout before the next chunk is sent. Responses
//! inside a chunk may come in any order.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread;
use std::time::{Duration, Instant};

use super::{AdapterError, PredictionRecord};
use crate::cohort::ManifestRow;

pub const PROTOCOL_HANDSHAKE: &str = "FAIRGEN-PROTO 1";
pub const REQUEST_CHUNK: usize = 256;
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(120);
const STDERR_GRACE: Duration = Duration::from_millis(500);

#[derive(Debug, Clone, PartialEq)]
pub struct ExternalCommand {
    /// Run through `sh -c`.
    pub command: String,
    pub workdir: Option<PathBuf>,
    /// Per chunk, and for the handshake and terminator.
    pub timeout: Duration,
}

impl ExternalCommand {
    pub fn new(command: impl Into<String>) -> Self {
        ExternalCommand {
            command: command.into(),
            workdir: None,
            timeout: DEFAULT_TIMEOUT,
        }
    }

    pub fn classify(
        &self,
        rows: &[ManifestRow],
        images: &[PathBuf],
    ) -> Result<Vec<PredictionRecord>, AdapterError> {
        let mut session = Session::start(self)?;
        let result = session.run(rows, images);
        session.finish(result)
    }
}

/// A running child speaking the protocol.
pub(super) struct Session {
    child: Child,
    stdin: Option<ChildStdin>,
    lines: Receiver<std::io::Result<String>>,
    stderr: Receiver<String>,
    timeout: Duration,
}

impl Session {
    pub(super) fn start(cmd: &ExternalCommand) -> Result<Session, AdapterError> {
        let mut command = Command::new("sh");
        command
            .arg("-c")
            .arg(&cmd.command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped());
        if let Some(dir) = &cmd.workdir {
            command.current_dir(dir);
        }
        // Own process group, so a kill also reaches anything the shell started.
        #[cfg(unix)]
        std::os::unix::process::CommandExt::process_group(&mut command, 0);
        let mut child = command.spawn().map_err(|source| AdapterError::Spawn {
            command: cmd.command.clone(),
            source,
        })?;
        let stdout = child.stdout.take().expect("stdout is piped");
        let mut stderr = child.stderr.take().expect("stderr is piped");
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                let stop = line.is_err();
                if tx.send(line).is_err() || stop {
                    break;
                }
            }
        });
        let (err_tx, err_rx) = mpsc::channel();
        thread::spawn(move || {
            let mut s = String::new();
            let _ = stderr.read_to_string(&mut s);
            let _ = err_tx.send(s);
        });
        Ok(Session {
            stdin: child.stdin.take(),
            child,
            lines: rx,
            stderr: err_rx,
            timeout: cmd.timeout,
        })
    }

    pub(super) fn send(&mut self, line: &str) -> Result<(), AdapterError> {
        let stdin = self.stdin.as_mut().ok_or_else(|| {
            AdapterError::Pipe(std::io::Error::new(
                std::io::ErrorKind::BrokenPipe,
                "stdin closed",
            ))
        })?;
        stdin
            .write_all(line.as_bytes())
            .and_then(|_| stdin.write_all(b"\n"))
            .map_err(AdapterError::Pipe)
    }

    pub(super) fn flush(&mut self) -> Result<(), AdapterError> {
        match self.stdin.as_mut() {
            Some(s) => s.flush().map_err(AdapterError::Pipe),
            None => Ok(()),
        }
    }

    /// Next line before `deadline`; `Ok(None)` at end of output.
    pub(super) fn recv(&self, deadline: Instant) -> Result<Option<String>, RecvTimeoutError> {
        let left = deadline.saturating_duration_since(Instant::now());
        match self.lines.recv_timeout(left) {
            Ok(Ok(line)) => Ok(Some(line.trim_end_matches('\r').to_string())),
            Ok(Err(_)) | Err(RecvTimeoutError::Disconnected) => Ok(None),
            Err(RecvTimeoutError::Timeout) => Err(RecvTimeoutError::Timeout),
        }
    }

    pub(super) fn deadline(&self) -> Instant {
        Instant::now() + self.timeout
    }

    pub(super) fn timeout(&self) -> Duration {
        self.timeout
    }

    fn handshake(&mut self) -> Result<(), AdapterError> {
        self.send(PROTOCOL_HANDSHAKE)?;
        self.flush()?;
        let deadline = self.deadline();
        match self.recv(deadline) {
            Ok(Some(line)) if line == PROTOCOL_HANDSHAKE => Ok(()),
            Ok(line) => Err(AdapterError::Handshake { line }),
            Err(_) => Err(AdapterError::Timeout {
                timeout: self.timeout,
                sample_id: "<handshake>".into(),
            }),
        }
    }

    fn run(
        &mut self,
        rows: &[ManifestRow],
        images: &[PathBuf],
    ) -> Result<Vec<PredictionRecord>, AdapterError> {
        self.handshake()?;
        let mut out = Vec::with_capacity(rows.len());
        for (chunk_rows, chunk_images) in
            rows.chunks(REQUEST_CHUNK).zip(images.chunks(REQUEST_CHUNK))
        {
            for (row, path) in chunk_rows.iter().zip(chunk_images) {
                self.send(&request_line(&row.sample_id, path))?;
            }
            self.flush()?;
            out.extend(self.collect_chunk(chunk_rows)?);
        }
        self.send("END")?;
        self.flush()?;
        let deadline = self.deadline();
        match self.recv(deadline) {
            Ok(Some(line)) if line == "END" => {}
            Ok(Some(line)) => {
                return Err(AdapterError::Malformed {
                    line,
                    detail: "expected END".into(),
                })
            }
            Ok(None) => {
                return Err(AdapterError::Malformed {
                    line: String::new(),
                    detail: "output closed before END".into(),
                })
            }
            Err(_) => {
                return Err(AdapterError::Timeout {
                    timeout: self.timeout,
                    sample_id: "<END>".into(),
                })
            }
        }
        Ok(out)
    }

    fn collect_chunk(
        &mut self,
        rows: &[ManifestRow],
    ) -> Result<Vec<PredictionRecord>, AdapterError> {
        let index: HashMap<&str, usize> = rows
            .iter()
            .enumerate()
            .map(|(i, r)| (r.sample_id.as_str(), i))
            .collect();
        let mut slots: Vec<Option<PredictionRecord>> = vec![None; rows.len()];
        let mut received = 0;
        let deadline = self.deadline();
        let first_missing = |slots: &[Option<PredictionRecord>]| {
            let missing = slots.iter().filter(|s| s.is_none()).count();
            let pos = slots.iter().position(Option::is_none).unwrap_or(0);
            (rows[pos].sample_id.clone(), missing)
        };
        while received < rows.len() {
            let line = match self.recv(deadline) {
                Ok(Some(line)) => line,
                Ok(None) => {
                    let (sample_id, missing) = first_missing(&slots);
                    return Err(AdapterError::Missing { sample_id, missing });
                }
                Err(_) => {
                    let (sample_id, _) = first_missing(&slots);
                    return Err(AdapterError::Timeout {
                        timeout: self.timeout,
                        sample_id,
                    });
                }
            };
            if line == "END" {
                let (sample_id, missing) = first_missing(&slots);
                return Err(AdapterError::Missing { sample_id, missing });
            }
            if let Some(message) = line.strip_prefix("ERROR") {
                return Err(AdapterError::Remote {
                    message: message.trim().to_string(),
                });
            }
            let record = parse_result_line(&line)?;
            let &i =
                index
                    .get(record.sample_id.as_str())
                    .ok_or_else(|| AdapterError::UnknownId {
                        sample_id: record.sample_id.clone(),
                    })?;
            if slots[i].is_some() {
                return Err(AdapterError::DuplicateId {
                    sample_id: record.sample_id,
                });
            }
            slots[i] = Some(record);
            received += 1;
        }
        Ok(slots
            .into_iter()
            .map(|s| s.expect("every slot filled"))
            .collect())
    }

    /// Closes stdin, waits for exit and folds a bad exit status into the result.
    pub(super) fn finish<T>(mut self, result: Result<T, AdapterError>) -> Result<T, AdapterError> {
        drop(self.stdin.take());
        if result.is_err() {
            self.kill();
        }
        let status = self.wait_with_deadline();
        // A leftover grandchild may hold stderr open; do not wait on it.
        let stderr = self.stderr.recv_timeout(STDERR_GRACE).unwrap_or_default();
        let value = result?;
        match status {
            Some(s) if s.success() => Ok(value),
            Some(s) => Err(AdapterError::Exit {
                status: s.to_string(),
                stderr: stderr_tail(&stderr),
            }),
            None => Err(AdapterError::Exit {
                status: "no exit after END".into(),
                stderr: stderr_tail(&stderr),
            }),
        }
    }

    fn wait_with_deadline(&mut self) -> Option<std::process::ExitStatus> {
        let deadline = self.deadline();
        loop {
            match self.child.try_wait() {
                Ok(Some(status)) => return Some(status),
                Ok(None) if Instant::now() < deadline => thread::sleep(Duration::from_millis(5)),
                _ => {
                    self.kill();
                    let _ = self.child.wait();
                    return None;
                }
            }
        }
    }

    fn kill(&mut self) {
        #[cfg(unix)]
        if let Ok(pid) = i32::try_from(self.child.id()) {
            // SAFETY: kill(2) on a process group we created; no memory is touched.
            unsafe {
                libc::kill(-pid, libc::SIGKILL);
            }
        }
        let _ = self.child.kill();
    }
}

fn stderr_tail(s: &str) -> String {
    let s = s.trim();
    if s.is_empty() {
        return String::new();
    }
    let start = s.char_indices().rev().nth(499).map(|(i, _)| i).unwrap_or(0);
    format!("; stderr: {}", &s[start..])
}

pub(super) fn request_line(sample_id: &str, path: &Path) -> String {
    format!("PREDICT {sample_id} {}", path.display())
}

pub(super) fn parse_result_line(line: &str) -> Result<PredictionRecord, AdapterError> {
    let bad = |detail: &str| AdapterError::Malformed {
        line: line.to_string(),
        detail: detail.to_string(),
    };
    let mut parts = line.split(' ');
    if parts.next() != Some("RESULT") {
        return Err(bad("expected RESULT"));
    }
    let (Some(id), Some(label), Some(score), None) =
        (parts.next(), parts.next(), parts.next(), parts.next())
    else {
        return Err(bad("expected `RESULT <sample_id> <label> <score>`"));
    };
    if id.is_empty() || label.is_empty() {
        return Err(bad("empty field"));
    }
    let score: f64 = score.parse().map_err(|_| bad("score is not a number"))?;
    if !(0.0..=1.0).contains(&score) {
        return Err(bad("score outside [0, 1]"));
    }
    Ok(PredictionRecord {
        sample_id: id.to_string(),
        predicted_label: label.to_string(),
        score,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn result_lines() {
        let r = parse_result_line("RESULT 00000003 melanoma 0.25").unwrap();
        assert_eq!(r.sample_id, "00000003");
        assert_eq!(r.predicted_label, "melanoma");
        assert_eq!(r.score, 0.25);
        for bad in [
            "RESULT 1 melanoma",
            "RESULT 1 melanoma 1.5",
            "RESULT 1 melanoma x",
            "RESULT 1 melanoma 0.5 extra",
            "RESULTS 1 melanoma 0.5",
            "RESULT  melanoma 0.5",
        ] {
            assert!(
                matches!(parse_result_line(bad), Err(AdapterError::Malformed { .. })),
                "{bad}"
            );
        }
    }

    #[test]
    fn request_format() {
        assert_eq!(
            request_line("00000001", Path::new("/tmp/a.png")),
            "PREDICT 00000001 /tmp/a.png"
        );
    }
}
