//! Slave-process bridge: expressions are serialized in call syntax onto an
//! external interpreter's stdin, and each evaluation's stdout/stderr is cut
//! out of the streams by a sentinel written after it.
//!
//! The derived-fill pipeline drives a slave over an uploaded file and turns
//! what it prints into column values.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread;
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::catalog::ColumnRef;
use crate::value::Value;

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Str(String),
    Ident(String),
    Vec(Vec<Expr>),
    Call { function: String, args: Vec<Expr> },
    Assign { target: String, value: Box<Expr> },
}

impl Expr {
    pub fn num(v: f64) -> Self {
        Expr::Num(v)
    }

    pub fn str(s: impl Into<String>) -> Self {
        Expr::Str(s.into())
    }

    pub fn ident(s: impl Into<String>) -> Self {
        Expr::Ident(s.into())
    }

    pub fn call(function: impl Into<String>, args: impl IntoIterator<Item = Expr>) -> Self {
        Expr::Call { function: function.into(), args: args.into_iter().collect() }
    }

    pub fn assign(target: impl Into<String>, value: Expr) -> Self {
        Expr::Assign { target: target.into(), value: Box::new(value) }
    }

    /// Replaces `{key}` occurrences inside string literals.
    pub fn substitute(&self, vars: &[(&str, &str)]) -> Expr {
        match self {
            Expr::Str(s) => {
                let mut out = s.clone();
                for (k, v) in vars {
                    out = out.replace(&format!("{{{k}}}"), v);
                }
                Expr::Str(out)
            }
            Expr::Vec(items) => Expr::Vec(items.iter().map(|e| e.substitute(vars)).collect()),
            Expr::Call { function, args } => {
                Expr::Call { function: function.clone(), args: args.iter().map(|e| e.substitute(vars)).collect() }
            }
            Expr::Assign { target, value } => {
                Expr::Assign { target: target.clone(), value: Box::new(value.substitute(vars)) }
            }
            other => other.clone(),
        }
    }
}

#[derive(Debug, Error)]
pub enum BridgeError {
    #[error("invalid name `{0}`")]
    InvalidName(String),
    #[error("number {0} has no literal form")]
    NonFiniteNumber(f64),
    #[error("cannot start `{command}`: {message}")]
    SpawnFailure { command: String, message: String },
    #[error("evaluation exceeded {0:?}; slave killed")]
    EvalTimeout(Duration),
    #[error("slave exited ({code:?})")]
    SlaveExited { code: Option<i32> },
    #[error("slave i/o: {0}")]
    Io(#[from] std::io::Error),
}

fn valid_name(name: &str) -> bool {
    let mut chars = name.chars();
    let first_ok = matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '.' || c == '_');
    // `.5` would read back as a number
    let numeric_like = name.starts_with('.') && name[1..].starts_with(|c: char| c.is_ascii_digit());
    first_ok && !numeric_like && chars.all(|c| c.is_ascii_alphanumeric() || c == '.' || c == '_')
}

fn check_name(name: &str) -> Result<(), BridgeError> {
    if valid_name(name) {
        Ok(())
    } else {
        Err(BridgeError::InvalidName(name.to_owned()))
    }
}

/// One line of input for the slave, trailing newline included.
pub fn serialize(e: &Expr) -> Result<String, BridgeError> {
    let mut out = String::new();
    write_expr(e, &mut out)?;
    out.push('\n');
    Ok(out)
}

fn write_expr(e: &Expr, out: &mut String) -> Result<(), BridgeError> {
    match e {
        Expr::Num(v) if !v.is_finite() => return Err(BridgeError::NonFiniteNumber(*v)),
        Expr::Num(v) => write!(out, "{v}").expect("string write"),
        Expr::Str(s) => {
            out.push('"');
            for c in s.chars() {
                match c {
                    '\\' => out.push_str("\\\\"),
                    '"' => out.push_str("\\\""),
                    '\n' => out.push_str("\\n"),
                    '\r' => out.push_str("\\r"),
                    '\t' => out.push_str("\\t"),
                    c => out.push(c),
                }
            }
            out.push('"');
        }
        Expr::Ident(name) => {
            check_name(name)?;
            out.push_str(name);
        }
        Expr::Vec(items) => write_call("c", items, out)?,
        Expr::Call { function, args } => {
            // `c(...)` is reserved for vectors
            if function == "c" {
                return Err(BridgeError::InvalidName(function.clone()));
            }
            check_name(function)?;
            write_call(function, args, out)?;
        }
        Expr::Assign { target, value } => {
            check_name(target)?;
            out.push_str(target);
            out.push_str(" <- ");
            write_expr(value, out)?;
        }
    }
    Ok(())
}

fn write_call(function: &str, args: &[Expr], out: &mut String) -> Result<(), BridgeError> {
    out.push_str(function);
    out.push('(');
    for (i, a) in args.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        write_expr(a, out)?;
    }
    out.push(')');
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlaveState {
    Running,
    Exited(i32),
    Killed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult {
    pub output: String,
    pub warnings: String,
    pub elapsed: Duration,
}

impl EvalResult {
    /// The output with surrounding whitespace removed.
    pub fn value(&self) -> &str {
        self.output.trim()
    }
}

enum Chunk {
    Out(Vec<u8>),
    Err(Vec<u8>),
    OutEof,
    ErrEof,
}

fn pump(mut r: impl Read + Send + 'static, tx: mpsc::Sender<Chunk>, wrap: fn(Vec<u8>) -> Chunk, eof: Chunk) {
    thread::spawn(move || {
        let mut buf = [0u8; 8192];
        loop {
            match r.read(&mut buf) {
                Ok(0) | Err(_) => break,
                Ok(n) => {
                    if tx.send(wrap(buf[..n].to_vec())).is_err() {
                        return;
                    }
                }
            }
        }
        let _ = tx.send(eof);
    });
}

pub const SHUTDOWN_GRACE: Duration = Duration::from_secs(5);

/// A running external interpreter.
pub struct SlaveProcess {
    command: String,
    child: Child,
    stdin: Option<ChildStdin>,
    rx: Receiver<Chunk>,
    out_buf: Vec<u8>,
    err_buf: Vec<u8>,
    out_open: bool,
    err_open: bool,
    state: SlaveState,
    serial: u64,
    tag: u64,
}

impl std::fmt::Debug for SlaveProcess {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SlaveProcess")
            .field("command", &self.command)
            .field("pid", &self.child.id())
            .field("state", &self.state)
            .finish()
    }
}

pub fn spawn(command: &str, args: &[String]) -> Result<SlaveProcess, BridgeError> {
    spawn_in(command, args, None)
}

pub fn spawn_in(command: &str, args: &[String], dir: Option<&Path>) -> Result<SlaveProcess, BridgeError> {
    let mut cmd = Command::new(command);
    cmd.args(args).stdin(Stdio::piped()).stdout(Stdio::piped()).stderr(Stdio::piped());
    if let Some(d) = dir {
        cmd.current_dir(d);
    }
    let mut child =
        cmd.spawn().map_err(|e| BridgeError::SpawnFailure { command: command.to_owned(), message: e.to_string() })?;
    let (tx, rx) = mpsc::channel();
    pump(child.stdout.take().expect("piped"), tx.clone(), Chunk::Out, Chunk::OutEof);
    pump(child.stderr.take().expect("piped"), tx, Chunk::Err, Chunk::ErrEof);
    Ok(SlaveProcess {
        command: command.to_owned(),
        stdin: child.stdin.take(),
        child,
        rx,
        out_buf: Vec::new(),
        err_buf: Vec::new(),
        out_open: true,
        err_open: true,
        state: SlaveState::Running,
        serial: 0,
        tag: rand::random(),
    })
}

fn take_through(buf: &mut Vec<u8>, marker: &[u8]) -> Option<Vec<u8>> {
    let pos = buf.windows(marker.len()).position(|w| w == marker)?;
    let before = buf[..pos].to_vec();
    buf.drain(..pos + marker.len());
    Some(before)
}

impl SlaveProcess {
    pub fn state(&mut self) -> SlaveState {
        if self.state == SlaveState::Running {
            if let Ok(Some(status)) = self.child.try_wait() {
                self.state = SlaveState::Exited(status.code().unwrap_or(-1));
            }
        }
        self.state
    }

    pub fn pid(&self) -> u32 {
        self.child.id()
    }

    fn kill(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
        self.stdin = None;
        self.state = SlaveState::Killed;
    }

    fn exited(&mut self) -> BridgeError {
        self.stdin = None;
        let code = match self.child.wait() {
            Ok(status) => status.code(),
            Err(_) => None,
        };
        self.state = SlaveState::Exited(code.unwrap_or(-1));
        BridgeError::SlaveExited { code }
    }

    /// Evaluates `e`, returning what the slave printed for it.
    pub fn eval(&mut self, e: &Expr, timeout: Duration) -> Result<EvalResult, BridgeError> {
        let line = serialize(e)?;
        match self.state() {
            SlaveState::Running => {}
            SlaveState::Exited(code) => return Err(BridgeError::SlaveExited { code: Some(code) }),
            SlaveState::Killed => return Err(BridgeError::SlaveExited { code: None }),
        }
        let start = Instant::now();
        self.serial += 1;
        let mark = format!("hdb-eval-end-{:016x}-{}", self.tag, self.serial);
        let mut input = line;
        input.push_str(&serialize(&Expr::call("cat", [Expr::str(format!("{mark}\n"))]))?);
        input.push_str(&serialize(&Expr::call("message", [Expr::str(mark.clone())]))?);
        let write = self.stdin.as_mut().map(|s| s.write_all(input.as_bytes()).and_then(|_| s.flush()));
        if !matches!(write, Some(Ok(()))) {
            return Err(self.exited());
        }

        let marker = format!("{mark}\n").into_bytes();
        let (mut output, mut warnings) = (None, None);
        let deadline = start + timeout;
        loop {
            if output.is_none() {
                output = take_through(&mut self.out_buf, &marker);
            }
            if warnings.is_none() {
                warnings = take_through(&mut self.err_buf, &marker);
            }
            if let (Some(o), Some(w)) = (&output, &warnings) {
                return Ok(EvalResult {
                    output: String::from_utf8_lossy(o).into_owned(),
                    warnings: String::from_utf8_lossy(w).into_owned(),
                    elapsed: start.elapsed(),
                });
            }
            if (output.is_none() && !self.out_open) || (warnings.is_none() && !self.err_open) {
                return Err(self.exited());
            }
            let now = Instant::now();
            if now >= deadline {
                self.kill();
                return Err(BridgeError::EvalTimeout(timeout));
            }
            match self.rx.recv_timeout(deadline - now) {
                Ok(Chunk::Out(b)) => self.out_buf.extend(b),
                Ok(Chunk::Err(b)) => self.err_buf.extend(b),
                Ok(Chunk::OutEof) => self.out_open = false,
                Ok(Chunk::ErrEof) => self.err_open = false,
                Err(RecvTimeoutError::Timeout) => {}
                Err(RecvTimeoutError::Disconnected) => {
                    self.out_open = false;
                    self.err_open = false;
                }
            }
        }
    }

    /// Sends the quit command and waits up to [`SHUTDOWN_GRACE`], then kills.
    pub fn shutdown(&mut self) -> SlaveState {
        self.shutdown_within(SHUTDOWN_GRACE)
    }

    pub fn shutdown_within(&mut self, grace: Duration) -> SlaveState {
        if self.state() != SlaveState::Running {
            return self.state;
        }
        if let Some(mut stdin) = self.stdin.take() {
            let quit = serialize(&Expr::call("q", [])).expect("static expression");
            let _ = stdin.write_all(quit.as_bytes());
            let _ = stdin.flush();
        }
        let deadline = Instant::now() + grace;
        while Instant::now() < deadline {
            if let Ok(Some(status)) = self.child.try_wait() {
                self.state = SlaveState::Exited(status.code().unwrap_or(-1));
                return self.state;
            }
            thread::sleep(Duration::from_millis(10));
        }
        self.kill();
        self.state
    }
}

impl Drop for SlaveProcess {
    fn drop(&mut self) {
        if self.state() == SlaveState::Running {
            self.kill();
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum OutputParse {
    ParseNumber,
    ParseString,
    /// The slave prints the path of a file it wrote; the file is moved under
    /// the upload root in `subdir`.
    ArtifactPath {
        subdir: String,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DerivedOutput {
    pub column: String,
    pub expr: Expr,
    pub parse: OutputParse,
}

/// How to compute derived columns from an upload. String literals in `steps`
/// and output expressions may contain `{upload}` (absolute path of the stored
/// file) and `{workdir}` (the slave's scratch directory).
#[derive(Debug, Clone, PartialEq)]
pub struct DerivedFillSpec {
    pub trigger: ColumnRef,
    pub program: String,
    pub args: Vec<String>,
    pub steps: Vec<Expr>,
    pub outputs: Vec<DerivedOutput>,
    /// Budget for the whole run.
    pub timeout: Duration,
}

/// Runs the derived fill for one upload.
///
/// Always returns a value for every output column. A slave that cannot be
/// started or fails mid-run yields NULL everywhere and one diagnostic; a
/// single unparsable output yields NULL in that column and a diagnostic.
pub fn run_derived_fill(
    spec: &DerivedFillSpec,
    upload: &Path,
    upload_root: &Path,
    diags: &mut Vec<String>,
) -> BTreeMap<String, Value> {
    let mut values: BTreeMap<String, Value> = spec.outputs.iter().map(|o| (o.column.clone(), Value::Null)).collect();
    match fill(spec, upload, upload_root, &mut values, diags) {
        Ok(()) => values,
        Err(e) => {
            diags.push(format!("derived_fill_failed({}): {e}", spec.trigger));
            values.values_mut().for_each(|v| *v = Value::Null);
            values
        }
    }
}

fn fill(
    spec: &DerivedFillSpec,
    upload: &Path,
    upload_root: &Path,
    values: &mut BTreeMap<String, Value>,
    diags: &mut Vec<String>,
) -> Result<(), BridgeError> {
    let workdir = tempfile::Builder::new().prefix("hdb-derived-").tempdir()?;
    let upload_s = upload.to_string_lossy().into_owned();
    let workdir_s = workdir.path().to_string_lossy().into_owned();
    let vars = [("upload", upload_s.as_str()), ("workdir", workdir_s.as_str())];
    let deadline = Instant::now() + spec.timeout;
    let remaining = || deadline.saturating_duration_since(Instant::now());

    let mut slave = spawn_in(&spec.program, &spec.args, Some(workdir.path()))?;
    for step in &spec.steps {
        slave.eval(&step.substitute(&vars), remaining())?;
    }
    for out in &spec.outputs {
        let r = slave.eval(&out.expr.substitute(&vars), remaining())?;
        let text = r.value();
        let parsed = match &out.parse {
            OutputParse::ParseNumber => parse_number(text),
            OutputParse::ParseString => (!text.is_empty()).then(|| Value::Text(text.to_owned())),
            OutputParse::ArtifactPath { subdir } => match store_artifact(workdir.path(), text, upload_root, subdir) {
                Ok(rel) => Some(Value::Text(rel)),
                Err(e) => {
                    diags.push(format!("derived_artifact_missing({}): {e}", out.column));
                    values.insert(out.column.clone(), Value::Null);
                    continue;
                }
            },
        };
        match parsed {
            Some(v) => {
                values.insert(out.column.clone(), v);
            }
            None => diags.push(format!("derived_value_unparsable({}): {:?}", out.column, truncate(text, 80))),
        }
    }
    slave.shutdown();
    Ok(())
}

fn truncate(s: &str, n: usize) -> &str {
    match s.char_indices().nth(n) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}

fn parse_number(text: &str) -> Option<Value> {
    if let Ok(i) = text.parse::<i64>() {
        return Some(Value::Integer(i));
    }
    match text.parse::<f64>() {
        Ok(f) if f.is_finite() => Some(Value::Real(f)),
        _ => None,
    }
}

/// Moves a file the slave wrote to `{root}/{subdir}/{timestamp}_{name}` and
/// returns the path relative to `root`.
fn store_artifact(workdir: &Path, printed: &str, root: &Path, subdir: &str) -> std::io::Result<String> {
    let src = {
        let p = PathBuf::from(printed);
        if p.is_absolute() {
            p
        } else {
            workdir.join(p)
        }
    };
    if !src.is_file() {
        return Err(std::io::Error::new(std::io::ErrorKind::NotFound, format!("{} was not written", src.display())));
    }
    let name = src.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| "artifact".into());
    let rel_dir: PathBuf = subdir.split('/').filter(|s| !s.is_empty() && *s != "." && *s != "..").collect();
    let dir = root.join(&rel_dir);
    std::fs::create_dir_all(&dir)?;
    let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%S%.9fZ");
    for n in 0u32.. {
        let file = if n == 0 { format!("{stamp}_{name}") } else { format!("{stamp}-{n}_{name}") };
        let dest = dir.join(&file);
        match std::fs::OpenOptions::new().write(true).create_new(true).open(&dest) {
            Ok(mut f) => {
                std::io::copy(&mut std::fs::File::open(&src)?, &mut f)?;
                let _ = std::fs::remove_file(&src);
                let rel = rel_dir.join(&file);
                return Ok(rel.to_string_lossy().replace('\\', "/"));
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(e),
        }
    }
    unreachable!("unbounded counter")
}
