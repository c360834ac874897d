//! A tiny interpreter for the call-syntax dialect the bridge writes, standing
//! in for a statistics package in tests.
//!
//! Values are numeric or string vectors. A top-level expression that is not
//! an assignment prints its value on one line, elements separated by spaces.
//! Errors go to stderr as `Error: ...` and the interpreter carries on.

use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::time::Duration;

#[derive(Debug, Clone, PartialEq)]
pub enum Val {
    Num(Vec<f64>),
    Str(Vec<String>),
    Null,
}

impl Val {
    fn nums(&self) -> Result<&[f64], String> {
        match self {
            Val::Num(v) => Ok(v),
            _ => Err("numeric argument expected".into()),
        }
    }

    fn num(&self) -> Result<f64, String> {
        self.nums()?.first().copied().ok_or_else(|| "empty numeric argument".into())
    }

    fn string(&self) -> Result<String, String> {
        match self {
            Val::Str(v) if !v.is_empty() => Ok(v[0].clone()),
            Val::Num(v) if !v.is_empty() => Ok(fmt_num(v[0])),
            _ => Err("character argument expected".into()),
        }
    }

    fn show(&self) -> String {
        match self {
            Val::Num(v) => v.iter().map(|x| fmt_num(*x)).collect::<Vec<_>>().join(" "),
            Val::Str(v) => v.join(" "),
            Val::Null => "NULL".into(),
        }
    }
}

fn fmt_num(x: f64) -> String {
    format!("{x}")
}

#[derive(Debug, Clone, PartialEq)]
enum Ast {
    Num(f64),
    Str(String),
    Ident(String),
    Call(String, Vec<Ast>),
    Assign(String, Box<Ast>),
}

struct Parser<'a> {
    s: &'a [u8],
    i: usize,
}

impl<'a> Parser<'a> {
    fn ws(&mut self) {
        while self.i < self.s.len() && (self.s[self.i] == b' ' || self.s[self.i] == b'\t') {
            self.i += 1;
        }
    }

    fn peek(&self) -> Option<u8> {
        self.s.get(self.i).copied()
    }

    fn expr(&mut self) -> Result<Ast, String> {
        self.ws();
        let start = self.i;
        if let Some(name) = self.name() {
            self.ws();
            if self.s[self.i..].starts_with(b"<-") {
                self.i += 2;
                let value = self.expr()?;
                return Ok(Ast::Assign(name, Box::new(value)));
            }
            if self.peek() == Some(b'(') {
                self.i += 1;
                let mut args = Vec::new();
                self.ws();
                if self.peek() == Some(b')') {
                    self.i += 1;
                    return Ok(Ast::Call(name, args));
                }
                loop {
                    args.push(self.expr()?);
                    self.ws();
                    match self.peek() {
                        Some(b',') => self.i += 1,
                        Some(b')') => {
                            self.i += 1;
                            return Ok(Ast::Call(name, args));
                        }
                        _ => return Err(format!("unexpected input at {}", self.i)),
                    }
                }
            }
            return Ok(Ast::Ident(name));
        }
        self.i = start;
        match self.peek() {
            Some(b'"') => self.string(),
            Some(c) if c == b'-' || c.is_ascii_digit() => self.number(),
            _ => Err(format!("unexpected symbol at {}", self.i)),
        }
    }

    fn name(&mut self) -> Option<String> {
        let start = self.i;
        match self.peek() {
            Some(c) if c.is_ascii_alphabetic() || c == b'.' || c == b'_' => {}
            _ => return None,
        }
        while let Some(c) = self.peek() {
            if c.is_ascii_alphanumeric() || c == b'.' || c == b'_' {
                self.i += 1;
            } else {
                break;
            }
        }
        Some(String::from_utf8_lossy(&self.s[start..self.i]).into_owned())
    }

    fn number(&mut self) -> Result<Ast, String> {
        let start = self.i;
        if self.peek() == Some(b'-') {
            self.i += 1;
        }
        while let Some(c) = self.peek() {
            if c.is_ascii_digit()
                || c == b'.'
                || c == b'e'
                || c == b'E'
                || ((c == b'-' || c == b'+') && matches!(self.s[self.i - 1], b'e' | b'E'))
            {
                self.i += 1;
            } else {
                break;
            }
        }
        let text = std::str::from_utf8(&self.s[start..self.i]).map_err(|e| e.to_string())?;
        text.parse().map(Ast::Num).map_err(|_| format!("bad number {text}"))
    }

    fn string(&mut self) -> Result<Ast, String> {
        self.i += 1;
        let mut out = Vec::new();
        loop {
            match self.peek() {
                None => return Err("unterminated string".into()),
                Some(b'"') => {
                    self.i += 1;
                    return Ok(Ast::Str(String::from_utf8_lossy(&out).into_owned()));
                }
                Some(b'\\') => {
                    let c = self.s.get(self.i + 1).copied().ok_or("dangling escape")?;
                    out.push(match c {
                        b'n' => b'\n',
                        b'r' => b'\r',
                        b't' => b'\t',
                        other => other,
                    });
                    self.i += 2;
                }
                Some(c) => {
                    out.push(c);
                    self.i += 1;
                }
            }
        }
    }
}

fn parse_line(line: &str) -> Result<Ast, String> {
    let mut p = Parser { s: line.as_bytes(), i: 0 };
    let e = p.expr()?;
    p.ws();
    if p.i != line.len() {
        return Err(format!("unexpected input at {}", p.i));
    }
    Ok(e)
}

/// Interpreter state plus its output streams.
pub struct Interp<O: Write, E: Write> {
    vars: HashMap<String, Val>,
    out: O,
    err: E,
    quit: bool,
    ignore_quit: bool,
}

impl<O: Write, E: Write> Interp<O, E> {
    pub fn new(out: O, err: E) -> Self {
        Interp { vars: HashMap::new(), out, err, quit: false, ignore_quit: false }
    }

    pub fn into_streams(self) -> (O, E) {
        (self.out, self.err)
    }

    /// Runs one input line. Returns false once `q()` was evaluated.
    pub fn line(&mut self, line: &str) -> bool {
        let line = line.trim_end_matches(['\n', '\r']);
        if line.trim().is_empty() {
            return true;
        }
        match parse_line(line) {
            Ok(ast) => {
                let print = !matches!(&ast, Ast::Assign(..));
                match self.eval(&ast) {
                    Ok(v) if print && v != Val::Null => {
                        let _ = writeln!(self.out, "{}", v.show());
                    }
                    Ok(_) => {}
                    Err(e) => {
                        let _ = writeln!(self.err, "Error: {e}");
                    }
                }
            }
            Err(e) => {
                let _ = writeln!(self.err, "Error: {e}");
            }
        }
        let _ = self.out.flush();
        let _ = self.err.flush();
        !self.quit
    }

    fn eval(&mut self, ast: &Ast) -> Result<Val, String> {
        match ast {
            Ast::Num(n) => Ok(Val::Num(vec![*n])),
            Ast::Str(s) => Ok(Val::Str(vec![s.clone()])),
            Ast::Ident(name) => self.vars.get(name).cloned().ok_or_else(|| format!("object '{name}' not found")),
            Ast::Assign(name, value) => {
                let v = self.eval(value)?;
                self.vars.insert(name.clone(), v.clone());
                Ok(Val::Null)
            }
            Ast::Call(f, args) => {
                let args = args.iter().map(|a| self.eval(a)).collect::<Result<Vec<_>, _>>()?;
                self.call(f, &args)
            }
        }
    }

    fn call(&mut self, f: &str, args: &[Val]) -> Result<Val, String> {
        let arg = |i: usize| args.get(i).ok_or_else(|| format!("{f}: missing argument {}", i + 1));
        let fold = |init: f64, op: fn(f64, f64) -> f64| -> Result<Val, String> {
            let v = arg(0)?.nums()?;
            if v.is_empty() {
                return Err(format!("{f} of an empty vector"));
            }
            Ok(Val::Num(vec![v.iter().copied().fold(init, op)]))
        };
        match f {
            "c" => {
                if args.iter().all(|a| matches!(a, Val::Num(_))) {
                    Ok(Val::Num(args.iter().flat_map(|a| a.nums().unwrap().to_vec()).collect()))
                } else {
                    Ok(Val::Str(args.iter().map(|a| a.show()).collect()))
                }
            }
            "add" => Ok(Val::Num(vec![arg(0)?.num()? + arg(1)?.num()?])),
            "length" => Ok(Val::Num(vec![match arg(0)? {
                Val::Num(v) => v.len() as f64,
                Val::Str(v) => v.len() as f64,
                Val::Null => 0.0,
            }])),
            "sum" => fold(0.0, |a, b| a + b),
            "min" => fold(f64::INFINITY, f64::min),
            "max" => fold(f64::NEG_INFINITY, f64::max),
            "mean" => {
                let v = arg(0)?.nums()?;
                if v.is_empty() {
                    return Err("mean of an empty vector".into());
                }
                Ok(Val::Num(vec![v.iter().sum::<f64>() / v.len() as f64]))
            }
            "round" => {
                let digits = args.get(1).map(|d| d.num()).transpose()?.unwrap_or(0.0);
                let scale = 10f64.powi(digits as i32);
                Ok(Val::Num(arg(0)?.nums()?.iter().map(|x| (x * scale).round() / scale).collect()))
            }
            "cat" => {
                let text: Vec<String> = args.iter().map(|a| a.show()).collect();
                let _ = write!(self.out, "{}", text.join(" "));
                Ok(Val::Null)
            }
            "message" => {
                let text: Vec<String> = args.iter().map(|a| a.show()).collect();
                let _ = writeln!(self.err, "{}", text.join(""));
                Ok(Val::Null)
            }
            "warning" => {
                let _ = writeln!(self.err, "Warning message:\n{}", arg(0)?.show());
                Ok(Val::Null)
            }
            "stop" => Err(arg(0)?.show()),
            "Sys.sleep" => {
                std::thread::sleep(Duration::from_secs_f64(arg(0)?.num()?.max(0.0)));
                Ok(Val::Null)
            }
            // Writes `text` one character at a time with `ms` between them.
            "trickle" => {
                let text = arg(0)?.string()?;
                let ms = arg(1)?.num()?;
                for ch in text.chars() {
                    let _ = write!(self.out, "{ch}");
                    let _ = self.out.flush();
                    std::thread::sleep(Duration::from_secs_f64(ms / 1000.0));
                }
                let _ = writeln!(self.out);
                Ok(Val::Null)
            }
            "q" | "quit" => {
                self.quit = !self.ignore_quit;
                Ok(Val::Null)
            }
            "read_numbers" => {
                let path = arg(0)?.string()?;
                let text = std::fs::read_to_string(&path).map_err(|e| format!("cannot open '{path}': {e}"))?;
                text.split_whitespace()
                    .map(|t| t.parse::<f64>().map_err(|_| format!("not a number: {t}")))
                    .collect::<Result<Vec<_>, _>>()
                    .map(Val::Num)
            }
            // Every `n`-th element starting at the 1-based `k`.
            "column" => {
                let v = arg(0)?.nums()?;
                let k = arg(1)?.num()? as usize;
                let n = arg(2)?.num()? as usize;
                if k == 0 || n == 0 {
                    return Err("column: k and n must be positive".into());
                }
                Ok(Val::Num(v.iter().skip(k - 1).step_by(n).copied().collect()))
            }
            // Writes a small PostScript line plot and returns its file name.
            "aic_plot" => {
                let v = arg(0)?.nums()?.to_vec();
                let file = arg(1)?.string()?;
                let (lo, hi) = bounds(&v);
                let mut ps = String::from("%!PS-Adobe-3.0\nnewpath\n");
                for (i, y) in v.iter().enumerate() {
                    let x = 20.0 + 500.0 * i as f64 / (v.len().max(2) - 1) as f64;
                    let y = 20.0 + 300.0 * (y - lo) / (hi - lo).max(f64::MIN_POSITIVE);
                    ps.push_str(&format!("{x:.1} {y:.1} {}\n", if i == 0 { "moveto" } else { "lineto" }));
                }
                ps.push_str("stroke\nshowpage\n");
                std::fs::write(&file, ps).map_err(|e| format!("cannot write '{file}': {e}"))?;
                Ok(Val::Str(vec![file]))
            }
            // Writes an SVG heat strip and returns its file name.
            "heatmap" => {
                let v = arg(0)?.nums()?.to_vec();
                let file = arg(1)?.string()?;
                let (lo, hi) = bounds(&v);
                let mut svg =
                    format!("<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"20\">", v.len() * 4);
                for (i, x) in v.iter().enumerate() {
                    let shade = (255.0 * (x - lo) / (hi - lo).max(f64::MIN_POSITIVE)) as u8;
                    svg.push_str(&format!(
                        "<rect x=\"{}\" y=\"0\" width=\"4\" height=\"20\" fill=\"rgb({shade},0,{})\"/>",
                        i * 4,
                        255 - shade
                    ));
                }
                svg.push_str("</svg>\n");
                std::fs::write(&file, svg).map_err(|e| format!("cannot write '{file}': {e}"))?;
                Ok(Val::Str(vec![file]))
            }
            _ => Err(format!("could not find function \"{f}\"")),
        }
    }
}

fn bounds(v: &[f64]) -> (f64, f64) {
    let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if lo.is_finite() {
        (lo, hi)
    } else {
        (0.0, 1.0)
    }
}

/// Command-line behaviour switches of the mock binary.
#[derive(Debug, Clone, Copy, Default)]
pub struct MockOptions {
    /// `q()` does nothing and end of input leaves the process hanging,
    /// imitating an interpreter stuck in a computation.
    pub ignore_quit: bool,
    /// Pause before evaluating each line, imitating a slow analysis.
    pub delay: Duration,
}

impl MockOptions {
    /// Parses `--ignore-quit` and `--delay-ms N`; unknown words are ignored.
    pub fn from_args(args: impl IntoIterator<Item = String>) -> Self {
        let mut opts = MockOptions::default();
        let mut args = args.into_iter();
        while let Some(a) = args.next() {
            match a.as_str() {
                "--ignore-quit" => opts.ignore_quit = true,
                "--delay-ms" => {
                    let ms = args.next().and_then(|v| v.parse().ok()).unwrap_or(0);
                    opts.delay = Duration::from_millis(ms);
                }
                _ => {}
            }
        }
        opts
    }
}

/// Reads lines from `input` until end of input or `q()`.
pub fn run(input: impl BufRead, out: impl Write, err: impl Write, opts: MockOptions) -> i32 {
    let mut interp = Interp::new(out, err);
    interp.ignore_quit = opts.ignore_quit;
    for line in input.lines() {
        let Ok(line) = line else { break };
        if !opts.delay.is_zero() {
            std::thread::sleep(opts.delay);
        }
        if !interp.line(&line) {
            break;
        }
    }
    if opts.ignore_quit {
        loop {
            std::thread::sleep(Duration::from_secs(3600));
        }
    }
    0
}

#[cfg(test)]
mod tests {
    use super::*;

    fn session(lines: &[&str]) -> (String, String) {
        let mut i = Interp::new(Vec::new(), Vec::new());
        for l in lines {
            i.line(l);
        }
        let (o, e) = i.into_streams();
        (String::from_utf8(o).unwrap(), String::from_utf8(e).unwrap())
    }

    #[test]
    fn arithmetic_and_vectors() {
        let (out, err) = session(&["add(1,1)", "x <- c(1,2,3)", "mean(x)", "max(c(4,-2.5))", "length(x)"]);
        assert_eq!(out, "2\n2\n4\n3\n");
        assert_eq!(err, "");
    }

    #[test]
    fn strings_and_streams() {
        let (out, err) = session(&["cat(\"a\\\"b\\n\")", "message(\"warn!\")", "nope(1)", "x <- "]);
        assert_eq!(out, "a\"b\n");
        assert!(err.starts_with("warn!\n"));
        assert!(err.contains("could not find function \"nope\""));
        assert_eq!(err.matches("Error:").count(), 2);
    }
}
