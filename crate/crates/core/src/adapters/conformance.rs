use std::path::Path;
use std::time::Instant;

use super::external::{
    parse_result_line, request_line, ExternalCommand, Session, PROTOCOL_HANDSHAKE,
};
use super::png::write_png;
use super::AdapterError;

const REQUESTS: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct ConformanceCheck {
    pub name: &'static str,
    /// `None` when the check passed.
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConformanceReport {
    pub checks: Vec<ConformanceCheck>,
}

impl ConformanceReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.failure.is_none())
    }
}

impl std::fmt::Display for ConformanceReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for c in &self.checks {
            match &c.failure {
                None => writeln!(f, "PASS {}", c.name)?,
                Some(why) => writeln!(f, "FAIL {}: {why}", c.name)?,
            }
        }
        Ok(())
    }
}

/// Exercises an external classifier against the wire protocol: handshake,
/// ten in-order requests, a malformed request answered with `ERROR`, and
/// the `END` exchange followed by a clean exit. Test images go to `scratch`.
pub fn run_conformance(
    cmd: &ExternalCommand,
    scratch: &Path,
) -> Result<ConformanceReport, AdapterError> {
    std::fs::create_dir_all(scratch).map_err(AdapterError::Pipe)?;
    let mut requests = Vec::with_capacity(REQUESTS);
    for i in 0..REQUESTS {
        let id = format!("conf{i:04}");
        let path = scratch.join(format!("{id}.png"));
        let pixels: Vec<f64> = (0..64)
            .map(|k| ((k * (i + 1)) % 64) as f64 / 63.0)
            .collect();
        write_png(&path, &pixels, 8)
            .map_err(|e| AdapterError::Pipe(std::io::Error::other(e.to_string())))?;
        requests.push((id, path));
    }

    let mut session = Session::start(cmd)?;
    let mut checks = Vec::new();
    let mut check = |name, failure: Option<String>| {
        let ok = failure.is_none();
        checks.push(ConformanceCheck { name, failure });
        ok
    };

    // handshake
    session.send(PROTOCOL_HANDSHAKE)?;
    session.flush()?;
    let line = next_line(&session, session.deadline());
    let ok = check(
        "handshake",
        match &line {
            Ok(l) if l == PROTOCOL_HANDSHAKE => None,
            Ok(l) => Some(format!("got {l:?}")),
            Err(e) => Some(e.clone()),
        },
    );
    if !ok {
        let _ = session.finish(Ok(()));
        return Ok(ConformanceReport { checks });
    }

    // ordered results
    for (id, path) in &requests {
        session.send(&request_line(id, path))?;
    }
    session.flush()?;
    let deadline = session.deadline();
    let mut failure = None;
    for (id, _) in &requests {
        match next_line(&session, deadline) {
            Ok(l) => match parse_result_line(&l) {
                Ok(r) if &r.sample_id == id => {}
                Ok(r) => {
                    failure = Some(format!("expected result for {id}, got {}", r.sample_id));
                    break;
                }
                Err(e) => {
                    failure = Some(e.to_string());
                    break;
                }
            },
            Err(e) => {
                failure = Some(format!("waiting for {id}: {e}"));
                break;
            }
        }
    }
    check("ten requests answered in order", failure);

    // malformed request
    session.send("PREDICT")?;
    session.flush()?;
    check(
        "malformed request answered with ERROR",
        match next_line(&session, session.deadline()) {
            Ok(l) if l.starts_with("ERROR") => None,
            Ok(l) => Some(format!("got {l:?}")),
            Err(e) => Some(e),
        },
    );

    // terminator
    session.send("END")?;
    session.flush()?;
    let end = match next_line(&session, session.deadline()) {
        Ok(l) if l == "END" => None,
        Ok(l) => Some(format!("got {l:?}")),
        Err(e) => Some(e),
    };
    let exit = session.finish(Ok(())).err().map(|e| e.to_string());
    check("END acknowledged", end);
    check("clean exit", exit);
    Ok(ConformanceReport { checks })
}

fn next_line(session: &Session, deadline: Instant) -> Result<String, String> {
    match session.recv(deadline) {
        Ok(Some(l)) => Ok(l),
        Ok(None) => Err("output closed".into()),
        Err(_) => Err(format!("timed out after {:?}", session.timeout())),
    }
}
