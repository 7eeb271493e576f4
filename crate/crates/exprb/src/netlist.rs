//! SPICE-subset netlist reader and writer.
//!
//! ```text
//! * title (first comment line)
//! Rname n+ n- value
//! Cname n+ n- value
//! Lname n+ n- value
//! Vname n+ n- [DC] value | PWL(t1 v1 t2 v2 ...) | PULSE(v1 v2 td tr tf pw [per])
//! Iname n+ n- <same as V>
//! Dname anode cathode [model] [IS=..] [VT=..] [CJ0=..] [TT=..]
//! Mname d g s b [NMOS|PMOS] [TYPE=N|P] [VTH=..] [KP=..] [LAMBDA=..] [W=..] [L=..] [CGS=..] [CGD=..]
//! .TRAN tstep tstop
//! .OPTIONS ERRBUDGET=.. KRYEPS=.. GMIN=.. MMAX=.. HMIN=.. HMAX=..
//! .END
//! ```
//!
//! Everything is case-insensitive. Node names are stored in lower case and
//! element names in upper case. Values accept the suffixes f p n u m k meg g t,
//! optionally followed by a unit (`10pF`, `1kOhm`). A leading `+` continues the
//! previous line, `*` starts a comment line and `$` a trailing comment.

use std::collections::HashSet;
use std::fmt;

use exprb_core::circuit::{Pulse, GROUND};
use exprb_core::devices::{DiodeModel, MosfetModel, Polarity};
use exprb_core::{Circuit, Element, MnaSystem, SimOptions, SourceWaveform};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseError {
    #[error("line {line}: {msg} (at `{token}`)")]
    Syntax {
        line: usize,
        token: String,
        msg: String,
    },
    #[error("line {line}: unknown device kind `{token}`")]
    UnknownDevice { line: usize, token: String },
    #[error("line {line}: duplicate element name `{name}`")]
    DuplicateName { line: usize, name: String },
    #[error("no element is connected to ground node `0`")]
    NoGround,
}

impl ParseError {
    pub fn line(&self) -> Option<usize> {
        match self {
            ParseError::Syntax { line, .. }
            | ParseError::UnknownDevice { line, .. }
            | ParseError::DuplicateName { line, .. } => Some(*line),
            ParseError::NoGround => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tran {
    pub step: f64,
    pub stop: f64,
}

/// A parsed deck.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct NetlistDoc {
    pub title: String,
    pub elements: Vec<Element>,
    pub tran: Option<Tran>,
    pub options: SimOptions,
}

impl NetlistDoc {
    pub fn circuit(&self) -> Circuit {
        Circuit {
            title: self.title.clone(),
            elements: self.elements.clone(),
            options: self.options,
        }
    }
}

/// Assembles the MNA system of a parsed deck.
pub fn build_mna(doc: &NetlistDoc) -> exprb_core::Result<MnaSystem> {
    MnaSystem::build(&doc.circuit())
}

/// Parses a numeric value with an optional scale suffix and trailing unit.
pub fn parse_value(tok: &str) -> Option<f64> {
    let b = tok.as_bytes();
    let mut i = 0;
    if i < b.len() && (b[i] == b'+' || b[i] == b'-') {
        i += 1;
    }
    let int_start = i;
    while i < b.len() && b[i].is_ascii_digit() {
        i += 1;
    }
    let mut digits = i - int_start;
    if i < b.len() && b[i] == b'.' {
        i += 1;
        let frac_start = i;
        while i < b.len() && b[i].is_ascii_digit() {
            i += 1;
        }
        digits += i - frac_start;
    }
    if digits == 0 {
        return None;
    }
    if i < b.len() && (b[i] == b'e' || b[i] == b'E') {
        let mut j = i + 1;
        if j < b.len() && (b[j] == b'+' || b[j] == b'-') {
            j += 1;
        }
        let exp_start = j;
        while j < b.len() && b[j].is_ascii_digit() {
            j += 1;
        }
        if j > exp_start {
            i = j;
        }
    }
    let mantissa: f64 = tok[..i].parse().ok()?;
    let rest = tok[i..].to_ascii_lowercase();
    let (scale, unit) = if let Some(u) = rest.strip_prefix("meg") {
        (1e6, u)
    } else {
        let scale = match rest.chars().next() {
            Some('f') => 1e-15,
            Some('p') => 1e-12,
            Some('n') => 1e-9,
            Some('u') => 1e-6,
            Some('m') => 1e-3,
            Some('k') => 1e3,
            Some('g') => 1e9,
            Some('t') => 1e12,
            _ => 1.0,
        };
        if scale == 1.0 {
            (1.0, rest.as_str())
        } else {
            (scale, &rest[1..])
        }
    };
    if !unit.chars().all(|c| c.is_ascii_alphabetic()) {
        return None;
    }
    let v = mantissa * scale;
    v.is_finite().then_some(v)
}

struct Line {
    number: usize,
    tokens: Vec<String>,
}

fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for ch in text.chars() {
        match ch {
            c if c.is_whitespace() || c == ',' || c == '(' || c == ')' => {
                if !cur.is_empty() {
                    out.push(std::mem::take(&mut cur));
                }
            }
            '=' => {
                if !cur.is_empty() {
                    out.push(std::mem::take(&mut cur));
                }
                out.push("=".into());
            }
            c => cur.push(c),
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

/// Parses a deck.
pub fn parse_netlist(text: &str) -> Result<NetlistDoc, ParseError> {
    let mut title: Option<String> = None;
    let mut lines: Vec<Line> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let number = i + 1;
        let body = match raw.find('$') {
            Some(k) => &raw[..k],
            None => raw,
        };
        let trimmed = body.trim();
        if trimmed.is_empty() {
            continue;
        }
        if let Some(comment) = trimmed.strip_prefix('*') {
            if title.is_none() && lines.is_empty() {
                title = Some(comment.trim().to_string());
            }
            continue;
        }
        if let Some(cont) = trimmed.strip_prefix('+') {
            match lines.last_mut() {
                Some(prev) => prev.tokens.extend(tokenize(cont)),
                None => {
                    return Err(syntax(number, "+", "continuation without a preceding card"));
                }
            }
            continue;
        }
        lines.push(Line {
            number,
            tokens: tokenize(trimmed),
        });
    }

    let mut doc = NetlistDoc {
        title: title.unwrap_or_default(),
        ..NetlistDoc::default()
    };
    let mut names = HashSet::new();
    for line in &lines {
        let head = line.tokens[0].to_ascii_lowercase();
        if head.starts_with('.') {
            if head == ".end" {
                break;
            }
            directive(&mut doc, line, &head)?;
            continue;
        }
        let el = element(line)?;
        if !names.insert(el.name().to_string()) {
            return Err(ParseError::DuplicateName {
                line: line.number,
                name: el.name().to_string(),
            });
        }
        doc.elements.push(el);
    }
    if !doc.elements.is_empty() && !doc.elements.iter().any(|e| e.nodes().contains(&GROUND)) {
        return Err(ParseError::NoGround);
    }
    Ok(doc)
}

fn syntax(line: usize, token: &str, msg: &str) -> ParseError {
    ParseError::Syntax {
        line,
        token: token.to_string(),
        msg: msg.to_string(),
    }
}

struct Cursor<'a> {
    line: &'a Line,
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(line: &'a Line) -> Self {
        Cursor { line, pos: 1 }
    }

    fn err_here(&self, msg: &str) -> ParseError {
        let tok = self
            .line
            .tokens
            .get(self.pos)
            .map(String::as_str)
            .unwrap_or("<end of line>");
        syntax(self.line.number, tok, msg)
    }

    fn peek(&self) -> Option<&'a str> {
        self.line.tokens.get(self.pos).map(String::as_str)
    }

    fn next(&mut self, what: &str) -> Result<&'a str, ParseError> {
        match self.line.tokens.get(self.pos) {
            Some(t) => {
                self.pos += 1;
                Ok(t)
            }
            None => Err(self.err_here(&format!("missing {what}"))),
        }
    }

    fn node(&mut self) -> Result<String, ParseError> {
        let t = self.next("node")?;
        if t == "=" {
            self.pos -= 1;
            return Err(self.err_here("expected a node name"));
        }
        Ok(t.to_ascii_lowercase())
    }

    fn value(&mut self, what: &str) -> Result<f64, ParseError> {
        let t = self.next(what)?;
        parse_value(t).ok_or_else(|| {
            self.pos -= 1;
            self.err_here(&format!("invalid {what}"))
        })
    }

    fn done(&self) -> Result<(), ParseError> {
        match self.peek() {
            None => Ok(()),
            Some(_) => Err(self.err_here("unexpected token")),
        }
    }

    /// `KEY=value` pairs until the end of the line.
    fn params(&mut self) -> Result<Vec<(String, f64, usize)>, ParseError> {
        let mut out = Vec::new();
        while let Some(key) = self.peek() {
            let at = self.pos;
            if self.line.tokens.get(self.pos + 1).map(String::as_str) != Some("=") {
                return Err(self.err_here("expected KEY=value"));
            }
            self.pos += 2;
            if key.eq_ignore_ascii_case("type") {
                let v = self.next("TYPE value")?.to_ascii_lowercase();
                let code = match v.as_str() {
                    "n" | "nmos" => 0.0,
                    "p" | "pmos" => 1.0,
                    _ => {
                        self.pos -= 1;
                        return Err(self.err_here("TYPE must be N or P"));
                    }
                };
                out.push(("type".into(), code, at));
                continue;
            }
            let v = self.value(&format!("value for {key}"))?;
            out.push((key.to_ascii_lowercase(), v, at));
        }
        Ok(out)
    }
}

fn element(line: &Line) -> Result<Element, ParseError> {
    let name = line.tokens[0].to_ascii_uppercase();
    let kind = name.chars().next().unwrap_or(' ');
    let mut c = Cursor::new(line);
    let el = match kind {
        'R' | 'C' | 'L' => {
            let a = c.node()?;
            let b = c.node()?;
            let v = c.value("value")?;
            c.done()?;
            match kind {
                'R' => {
                    if v == 0.0 {
                        c.pos -= 1;
                        return Err(c.err_here("resistance must be nonzero"));
                    }
                    Element::Resistor {
                        name,
                        a,
                        b,
                        resistance: v,
                    }
                }
                'C' => Element::Capacitor {
                    name,
                    a,
                    b,
                    capacitance: v,
                },
                _ => Element::Inductor {
                    name,
                    a,
                    b,
                    inductance: v,
                },
            }
        }
        'V' | 'I' => {
            let pos = c.node()?;
            let neg = c.node()?;
            let wave = waveform(&mut c)?;
            c.done()?;
            if kind == 'V' {
                Element::VoltageSource {
                    name,
                    pos,
                    neg,
                    wave,
                }
            } else {
                Element::CurrentSource {
                    name,
                    pos,
                    neg,
                    wave,
                }
            }
        }
        'D' => {
            let anode = c.node()?;
            let cathode = c.node()?;
            skip_model_name(&mut c);
            let mut model = DiodeModel::default();
            for (key, v, at) in c.params()? {
                match key.as_str() {
                    "is" => model.is = v,
                    "vt" => model.vt = v,
                    "cj0" | "cjo" => model.cj0 = v,
                    "tt" => model.tt = v,
                    _ => {
                        return Err(syntax(
                            line.number,
                            &line.tokens[at],
                            "unknown diode parameter",
                        ))
                    }
                }
            }
            Element::Diode {
                name,
                anode,
                cathode,
                model,
            }
        }
        'M' => {
            let drain = c.node()?;
            let gate = c.node()?;
            let source = c.node()?;
            let bulk = c.node()?;
            let mut model = MosfetModel::default();
            if let Some(m) = skip_model_name(&mut c) {
                if m.to_ascii_lowercase().starts_with('p') {
                    model.polarity = Polarity::P;
                }
            }
            for (key, v, at) in c.params()? {
                match key.as_str() {
                    "type" => model.polarity = if v == 0.0 { Polarity::N } else { Polarity::P },
                    "vth" | "vto" => model.vth = v,
                    "kp" => model.kp = v,
                    "lambda" => model.lambda = v,
                    "w" => model.w = v,
                    "l" => model.l = v,
                    "cgs" | "cgs0" => model.cgs0 = v,
                    "cgd" | "cgd0" => model.cgd0 = v,
                    _ => {
                        return Err(syntax(
                            line.number,
                            &line.tokens[at],
                            "unknown MOSFET parameter",
                        ))
                    }
                }
            }
            Element::Mosfet {
                name,
                drain,
                gate,
                source,
                bulk,
                model,
            }
        }
        _ => {
            return Err(ParseError::UnknownDevice {
                line: line.number,
                token: line.tokens[0].clone(),
            })
        }
    };
    Ok(el)
}

/// Consumes a bare model-name token, if present.
fn skip_model_name<'a>(c: &mut Cursor<'a>) -> Option<&'a str> {
    let t = c.peek()?;
    let next_is_eq = c.line.tokens.get(c.pos + 1).map(String::as_str) == Some("=");
    if next_is_eq || parse_value(t).is_some() {
        return None;
    }
    c.pos += 1;
    Some(t)
}

fn waveform(c: &mut Cursor<'_>) -> Result<SourceWaveform, ParseError> {
    let mut dc = None;
    if c.peek()
        .map(|t| t.eq_ignore_ascii_case("dc"))
        .unwrap_or(false)
    {
        c.pos += 1;
        dc = Some(c.value("DC value")?);
    } else if c.peek().and_then(parse_value).is_some() {
        dc = Some(c.value("DC value")?);
    }
    let Some(kw) = c.peek() else {
        return dc
            .map(SourceWaveform::Dc)
            .ok_or_else(|| c.err_here("missing source value"));
    };
    let start = c.pos;
    let kw = kw.to_ascii_lowercase();
    c.pos += 1;
    let mut vals = Vec::new();
    while let Some(t) = c.peek() {
        match parse_value(t) {
            Some(v) => {
                vals.push(v);
                c.pos += 1;
            }
            None => break,
        }
    }
    let line = c.line.number;
    let head = &c.line.tokens[start];
    match kw.as_str() {
        "pwl" => {
            if vals.is_empty() || vals.len() % 2 != 0 {
                return Err(syntax(line, head, "PWL needs time/value pairs"));
            }
            let pts: Vec<(f64, f64)> = vals.chunks(2).map(|p| (p[0], p[1])).collect();
            if pts.windows(2).any(|w| w[1].0 <= w[0].0) {
                return Err(syntax(line, head, "PWL times must be strictly increasing"));
            }
            Ok(SourceWaveform::Pwl(pts))
        }
        "pulse" => {
            if !(6..=7).contains(&vals.len()) {
                return Err(syntax(line, head, "PULSE needs v1 v2 td tr tf pw [per]"));
            }
            Ok(SourceWaveform::Pulse(Pulse {
                v1: vals[0],
                v2: vals[1],
                delay: vals[2],
                rise: vals[3],
                fall: vals[4],
                width: vals[5],
                period: vals.get(6).copied().unwrap_or(0.0),
            }))
        }
        _ => Err(syntax(line, head, "expected DC value, PWL or PULSE")),
    }
}

fn directive(doc: &mut NetlistDoc, line: &Line, head: &str) -> Result<(), ParseError> {
    let mut c = Cursor::new(line);
    match head {
        ".tran" => {
            if doc.tran.is_some() {
                return Err(syntax(line.number, &line.tokens[0], "more than one .TRAN"));
            }
            let step = c.value("step")?;
            let stop = c.value("stop time")?;
            c.done()?;
            if !(step > 0.0 && stop > 0.0) {
                return Err(syntax(
                    line.number,
                    &line.tokens[0],
                    ".TRAN times must be positive",
                ));
            }
            doc.tran = Some(Tran { step, stop });
        }
        ".options" | ".option" => {
            for (key, v, at) in c.params()? {
                let o = &mut doc.options;
                match key.as_str() {
                    "errbudget" => o.err_budget = v,
                    "kryeps" => o.krylov_eps = v,
                    "gmin" => o.gmin = v,
                    "mmax" => {
                        if v < 1.0 || v.fract() != 0.0 {
                            return Err(syntax(
                                line.number,
                                &line.tokens[at],
                                "MMAX must be a positive integer",
                            ));
                        }
                        o.m_max = v as usize
                    }
                    "hmin" => o.hmin = Some(v),
                    "hmax" => o.hmax = Some(v),
                    _ => return Err(syntax(line.number, &line.tokens[at], "unknown option")),
                }
            }
        }
        _ => return Err(syntax(line.number, &line.tokens[0], "unknown directive")),
    }
    Ok(())
}

fn wave_text(w: &SourceWaveform) -> String {
    match w {
        SourceWaveform::Dc(v) => format!("DC {v:e}"),
        SourceWaveform::Pwl(pts) => {
            let body: Vec<String> = pts.iter().map(|(t, v)| format!("{t:e} {v:e}")).collect();
            format!("PWL({})", body.join(" "))
        }
        SourceWaveform::Pulse(p) => format!(
            "PULSE({:e} {:e} {:e} {:e} {:e} {:e} {:e})",
            p.v1, p.v2, p.delay, p.rise, p.fall, p.width, p.period
        ),
    }
}

impl fmt::Display for NetlistDoc {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "* {}", self.title)?;
        for el in &self.elements {
            match el {
                Element::Resistor {
                    name,
                    a,
                    b,
                    resistance,
                } => writeln!(f, "{name} {a} {b} {resistance:e}")?,
                Element::Capacitor {
                    name,
                    a,
                    b,
                    capacitance,
                } => writeln!(f, "{name} {a} {b} {capacitance:e}")?,
                Element::Inductor {
                    name,
                    a,
                    b,
                    inductance,
                } => writeln!(f, "{name} {a} {b} {inductance:e}")?,
                Element::VoltageSource {
                    name,
                    pos,
                    neg,
                    wave,
                }
                | Element::CurrentSource {
                    name,
                    pos,
                    neg,
                    wave,
                } => writeln!(f, "{name} {pos} {neg} {}", wave_text(wave))?,
                Element::Diode {
                    name,
                    anode,
                    cathode,
                    model: m,
                } => writeln!(
                    f,
                    "{name} {anode} {cathode} IS={:e} VT={:e} CJ0={:e} TT={:e}",
                    m.is, m.vt, m.cj0, m.tt
                )?,
                Element::Mosfet {
                    name,
                    drain,
                    gate,
                    source,
                    bulk,
                    model: m,
                } => {
                    let kind = match m.polarity {
                        Polarity::N => "NMOS",
                        Polarity::P => "PMOS",
                    };
                    writeln!(
                        f,
                        "{name} {drain} {gate} {source} {bulk} {kind} VTH={:e} KP={:e} LAMBDA={:e}",
                        m.vth, m.kp, m.lambda
                    )?;
                    writeln!(
                        f,
                        "+ W={:e} L={:e} CGS={:e} CGD={:e}",
                        m.w, m.l, m.cgs0, m.cgd0
                    )?;
                }
            }
        }
        if let Some(t) = self.tran {
            writeln!(f, ".TRAN {:e} {:e}", t.step, t.stop)?;
        }
        let o = &self.options;
        write!(
            f,
            ".OPTIONS ERRBUDGET={:e} KRYEPS={:e} GMIN={:e} MMAX={}",
            o.err_budget, o.krylov_eps, o.gmin, o.m_max
        )?;
        if let Some(h) = o.hmin {
            write!(f, " HMIN={h:e}")?;
        }
        if let Some(h) = o.hmax {
            write!(f, " HMAX={h:e}")?;
        }
        writeln!(f)?;
        writeln!(f, ".END")
    }
}
