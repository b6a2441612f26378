//! Line protocol for systems that live in a child process.
//!
//! Request:  `STEP x_1 ... x_n [u_1 ... u_m] | SEED s c`
//! Response: `n` whitespace-separated decimal reals.
//!
//! The child owns its noise model but must derive it from `(s, c)` only, so a
//! replayed request yields the same successor.

use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::Mutex;

use super::model::{check_dims, System};
use super::rng::NoiseKey;
use crate::error::{Error, Result};

/// Formats one request line, without the trailing newline.
pub fn format_request(x: &[f64], u: &[f64], noise: NoiseKey) -> String {
    let mut line = String::from("STEP");
    for v in x.iter().chain(u) {
        // `Display` for f64 is the shortest representation that round-trips.
        write!(line, " {v}").unwrap();
    }
    write!(line, " | SEED {} {}", noise.seed, noise.counter).unwrap();
    line
}

/// A parsed request: state, input, and noise address.
#[derive(Clone, Debug, PartialEq)]
pub struct StepRequest {
    pub x: Vec<f64>,
    pub u: Vec<f64>,
    pub noise: NoiseKey,
}

pub fn parse_request(line: &str, n: usize, m: usize) -> Result<StepRequest> {
    let bad = |why: &str| Error::Protocol(format!("{why} in request `{line}`"));
    let rest = line
        .trim()
        .strip_prefix("STEP")
        .ok_or_else(|| bad("missing STEP"))?;
    let (values, seed_part) = rest.split_once('|').ok_or_else(|| bad("missing `|`"))?;
    let nums = values
        .split_whitespace()
        .map(|t| t.parse::<f64>().map_err(|_| bad("bad number")))
        .collect::<Result<Vec<_>>>()?;
    if nums.len() != n + m {
        return Err(bad(&format!(
            "expected {} values, got {}",
            n + m,
            nums.len()
        )));
    }
    let mut seed_tokens = seed_part.split_whitespace();
    if seed_tokens.next() != Some("SEED") {
        return Err(bad("missing SEED"));
    }
    let mut next_u64 = || {
        seed_tokens
            .next()
            .and_then(|t| t.parse::<u64>().ok())
            .ok_or_else(|| bad("bad seed"))
    };
    let seed = next_u64()?;
    let counter = next_u64()?;
    Ok(StepRequest {
        x: nums[..n].to_vec(),
        u: nums[n..].to_vec(),
        noise: NoiseKey::new(seed, counter),
    })
}

pub fn format_response(next: &[f64]) -> String {
    let mut line = String::new();
    for (i, v) in next.iter().enumerate() {
        if i > 0 {
            line.push(' ');
        }
        write!(line, "{v}").unwrap();
    }
    line
}

pub fn parse_response(line: &str, n: usize) -> Result<Vec<f64>> {
    let values = line
        .split_whitespace()
        .map(|t| t.parse::<f64>())
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|_| Error::Protocol(format!("malformed response `{}`", line.trim_end())))?;
    if values.len() != n {
        return Err(Error::Protocol(format!(
            "response `{}` has {} values, expected {n}",
            line.trim_end(),
            values.len()
        )));
    }
    Ok(values)
}

/// Answers requests from `input` with `system` until end of input.
pub fn serve<R: BufRead, W: Write>(system: &dyn System, input: R, mut output: W) -> Result<()> {
    let (n, m) = (system.state_dim(), system.input_dim());
    for line in input.lines() {
        let line = line.map_err(|e| Error::io("reading request", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let req = parse_request(&line, n, m)?;
        let next = system.step(&req.x, &req.u, req.noise)?;
        writeln!(output, "{}", format_response(&next))
            .and_then(|_| output.flush())
            .map_err(|e| Error::io("writing response", e))?;
    }
    Ok(())
}

struct ChildIo {
    child: Child,
    stdin: ChildStdin,
    stdout: BufReader<ChildStdout>,
}

/// A system served by a child process over the line protocol.
///
/// Requests are serialized through one child; concurrent callers queue on a mutex.
pub struct ExternalSystem {
    command: String,
    n: usize,
    m: usize,
    io: Mutex<ChildIo>,
}

/// Launches `command` through `sh -c` and wraps it as a system.
pub fn external_system(command: &str, n: usize, m: usize) -> Result<ExternalSystem> {
    if n == 0 {
        return Err(Error::Config("external system needs n >= 1".into()));
    }
    let mut child = Command::new("sh")
        .arg("-c")
        .arg(command)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::inherit())
        .spawn()
        .map_err(|e| Error::io(format!("spawning `{command}`"), e))?;
    let stdin = child.stdin.take().expect("piped stdin");
    let stdout = BufReader::new(child.stdout.take().expect("piped stdout"));
    Ok(ExternalSystem {
        command: command.to_string(),
        n,
        m,
        io: Mutex::new(ChildIo {
            child,
            stdin,
            stdout,
        }),
    })
}

impl System for ExternalSystem {
    fn state_dim(&self) -> usize {
        self.n
    }

    fn input_dim(&self) -> usize {
        self.m
    }

    fn step(&self, x: &[f64], u: &[f64], noise: NoiseKey) -> Result<Vec<f64>> {
        check_dims(self, x, u)?;
        let request = format_request(x, u, noise);
        let mut io = self
            .io
            .lock()
            .map_err(|_| Error::Protocol("external system mutex poisoned".into()))?;
        writeln!(io.stdin, "{request}")
            .and_then(|_| io.stdin.flush())
            .map_err(|e| Error::io(format!("sending `{request}`"), e))?;
        let mut line = String::new();
        let read = io
            .stdout
            .read_line(&mut line)
            .map_err(|e| Error::io(format!("reading reply to `{request}`"), e))?;
        if read == 0 {
            return Err(Error::Protocol(format!(
                "child `{}` exited before answering `{request}`",
                self.command
            )));
        }
        parse_response(&line, self.n)
    }

    fn describe(&self) -> String {
        format!("external:{};n={};m={}", self.command, self.n, self.m)
    }
}

impl Drop for ExternalSystem {
    fn drop(&mut self) {
        if let Ok(io) = self.io.get_mut() {
            let _ = io.child.kill();
            let _ = io.child.wait();
        }
    }
}
