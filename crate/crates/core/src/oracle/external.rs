//! Child-process model backend.
//!
//! Wire protocol, one round trip per batch: the parent writes `N\n` followed
//! by `N` CSV rows (schema order, `\n` terminated) and flushes; the child
//! answers with exactly `N` lines, each a single class label, and flushes.
//! Closing the child's stdin ends the session.

use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::Mutex;
use std::thread::JoinHandle;

use crate::error::{Error, Result};

struct Session {
    child: Child,
    stdin: Option<BufWriter<ChildStdin>>,
    stdout: BufReader<ChildStdout>,
    stderr: Option<JoinHandle<String>>,
}

pub struct ExternalProcess {
    argv: Vec<String>,
    session: Mutex<Session>,
}

impl std::fmt::Debug for ExternalProcess {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ExternalProcess").field("argv", &self.argv).finish()
    }
}

impl ExternalProcess {
    pub fn spawn(argv: &[String]) -> Result<Self> {
        let (program, args) = argv
            .split_first()
            .ok_or_else(|| Error::Config("external oracle command is empty".into()))?;
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| Error::oracle(format!("failed to spawn `{program}`: {e}")))?;
        let stdin = child.stdin.take().map(BufWriter::new);
        let stdout = BufReader::new(child.stdout.take().expect("piped stdout"));
        let mut err_pipe = child.stderr.take().expect("piped stderr");
        let stderr = std::thread::spawn(move || {
            let mut s = String::new();
            let _ = err_pipe.read_to_string(&mut s);
            s
        });
        Ok(ExternalProcess {
            argv: argv.to_vec(),
            session: Mutex::new(Session {
                child,
                stdin,
                stdout,
                stderr: Some(stderr),
            }),
        })
    }

    pub fn argv(&self) -> &[String] {
        &self.argv
    }

    /// One protocol round trip. Calls are serialized.
    pub fn round_trip(&self, lines: &[String]) -> Result<Vec<String>> {
        let mut s = self.session.lock().unwrap_or_else(|e| e.into_inner());
        let sent = match s.stdin.as_mut() {
            Some(w) => write_batch(w, lines),
            None => Err(std::io::Error::other("session already closed")),
        };
        if let Err(e) = sent {
            return Err(s.fail(format!("write to oracle failed: {e}")));
        }
        let mut out = Vec::with_capacity(lines.len());
        let mut buf = String::new();
        for _ in 0..lines.len() {
            buf.clear();
            match s.stdout.read_line(&mut buf) {
                Ok(0) => {
                    let msg = format!(
                        "oracle returned {} of {} labels before closing its output",
                        out.len(),
                        lines.len()
                    );
                    return Err(s.fail(msg));
                }
                Ok(_) => out.push(buf.trim_end_matches(['\n', '\r']).to_string()),
                Err(e) => return Err(s.fail(format!("read from oracle failed: {e}"))),
            }
        }
        Ok(out)
    }
}

fn write_batch(w: &mut BufWriter<ChildStdin>, lines: &[String]) -> std::io::Result<()> {
    writeln!(w, "{}", lines.len())?;
    for l in lines {
        w.write_all(l.as_bytes())?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

impl Session {
    /// Tear the session down and build an error carrying exit status and
    /// whatever the child wrote to stderr.
    fn fail(&mut self, message: String) -> Error {
        self.stdin = None;
        let status = self.child.wait().ok();
        let stderr = self
            .stderr
            .take()
            .and_then(|h| h.join().ok())
            .unwrap_or_default();
        let message = match status {
            Some(st) if !st.success() => format!("{message}; process exited with {st}"),
            _ => message,
        };
        Error::Oracle { message, stderr }
    }
}

impl Drop for ExternalProcess {
    fn drop(&mut self) {
        let s = self.session.get_mut().unwrap_or_else(|e| e.into_inner());
        s.stdin = None;
        let _ = s.child.wait();
        if let Some(h) = s.stderr.take() {
            let _ = h.join();
        }
    }
}
