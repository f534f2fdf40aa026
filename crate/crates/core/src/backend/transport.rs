use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread;
use std::time::{Duration, Instant};

use super::protocol::{Handler, Request, Response};
use super::GatewayError;

/// One backend session. Calls are strictly sequential.
pub trait Transport: Send {
    fn call(&mut self, request: &Request) -> Result<Response, GatewayError>;
}

fn encode(request: &Request) -> Result<String, GatewayError> {
    serde_json::to_string(request).map_err(|e| GatewayError::Protocol(e.to_string()))
}

fn decode(line: &str) -> Result<Response, GatewayError> {
    serde_json::from_str(line.trim()).map_err(|e| GatewayError::Protocol(format!("{e}: {line:?}")))
}

/// Serves a handler in-process, still passing every message through its
/// wire encoding. The timeout is checked after the fact since the handler
/// cannot be interrupted.
pub struct InProcess<H> {
    handler: H,
    timeout: Duration,
}

impl<H: Handler + Send> InProcess<H> {
    pub fn new(handler: H, timeout: Duration) -> Self {
        Self { handler, timeout }
    }
}

impl<H: Handler + Send> Transport for InProcess<H> {
    fn call(&mut self, request: &Request) -> Result<Response, GatewayError> {
        let started = Instant::now();
        let line = encode(request)?;
        let (response, _) = super::protocol::handle_line(&mut self.handler, &line);
        let wire = serde_json::to_string(&response).map_err(|e| GatewayError::Protocol(e.to_string()))?;
        if started.elapsed() > self.timeout {
            return Err(GatewayError::Timeout(self.timeout));
        }
        decode(&wire)
    }
}

/// A child process speaking the protocol on stdin/stdout.
pub struct StdioTransport {
    command: Vec<String>,
    child: Option<Child>,
    stdin: Option<ChildStdin>,
    lines: Option<Receiver<std::io::Result<String>>>,
    timeout: Duration,
}

impl StdioTransport {
    pub fn spawn(command: Vec<String>, timeout: Duration) -> Result<Self, GatewayError> {
        let (program, args) = command
            .split_first()
            .ok_or_else(|| GatewayError::BackendUnavailable("empty backend command".into()))?;
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| GatewayError::BackendUnavailable(format!("{program}: {e}")))?;
        let stdin = child.stdin.take();
        let stdout = child.stdout.take().expect("stdout is piped");
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        Ok(Self {
            command,
            child: Some(child),
            stdin,
            lines: Some(rx),
            timeout,
        })
    }

    fn kill(&mut self) {
        self.stdin = None;
        self.lines = None;
        if let Some(mut child) = self.child.take() {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

impl Transport for StdioTransport {
    fn call(&mut self, request: &Request) -> Result<Response, GatewayError> {
        let line = encode(request)?;
        let dead = || GatewayError::BackendUnavailable(format!("backend {:?} is not running", self.command));
        let stdin = self.stdin.as_mut().ok_or_else(dead)?;
        if let Err(e) = stdin
            .write_all(line.as_bytes())
            .and_then(|_| stdin.write_all(b"\n"))
            .and_then(|_| stdin.flush())
        {
            self.kill();
            return Err(GatewayError::BackendUnavailable(e.to_string()));
        }
        let rx = self.lines.as_ref().ok_or_else(dead)?;
        let deadline = Instant::now() + self.timeout;
        loop {
            let remaining = deadline.saturating_duration_since(Instant::now());
            match rx.recv_timeout(remaining) {
                Ok(Ok(reply)) if reply.trim().is_empty() => continue,
                Ok(Ok(reply)) => return decode(&reply),
                Ok(Err(e)) => {
                    self.kill();
                    return Err(GatewayError::BackendUnavailable(e.to_string()));
                }
                Err(RecvTimeoutError::Timeout) => {
                    self.kill();
                    return Err(GatewayError::Timeout(self.timeout));
                }
                Err(RecvTimeoutError::Disconnected) => {
                    self.kill();
                    return Err(GatewayError::BackendUnavailable("backend closed its output".into()));
                }
            }
        }
    }
}

impl Drop for StdioTransport {
    fn drop(&mut self) {
        // Closing stdin lets a well-behaved backend exit on EOF first.
        self.stdin = None;
        if let Some(mut child) = self.child.take() {
            let deadline = Instant::now() + Duration::from_secs(2);
            while Instant::now() < deadline {
                if let Ok(Some(_)) = child.try_wait() {
                    return;
                }
                thread::sleep(Duration::from_millis(10));
            }
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

/// One JSON message per HTTP POST body; the response body is one JSON line.
pub struct HttpTransport {
    url: String,
    agent: ureq::Agent,
    timeout: Duration,
}

impl HttpTransport {
    pub fn new(url: impl Into<String>, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            url: url.into(),
            agent,
            timeout,
        }
    }
}

impl Transport for HttpTransport {
    fn call(&mut self, request: &Request) -> Result<Response, GatewayError> {
        let mut body = encode(request)?;
        body.push('\n');
        let result = self
            .agent
            .post(&self.url)
            .header("content-type", "application/json")
            .send(body.as_str());
        let mut reply = match result {
            Ok(r) => r,
            Err(ureq::Error::Timeout(_)) => return Err(GatewayError::Timeout(self.timeout)),
            Err(e) => return Err(GatewayError::BackendUnavailable(format!("{}: {e}", self.url))),
        };
        let text = reply.body_mut().read_to_string().map_err(|e| match e {
            ureq::Error::Timeout(_) => GatewayError::Timeout(self.timeout),
            e => GatewayError::BackendUnavailable(e.to_string()),
        })?;
        decode(&text)
    }
}
