//! Recursive-descent parser for `.qsx` files.
//!
//! ```text
//! file      := { blank | section }
//! section   := "[" name [ident] "]" NL body
//! body      := { key "=" value NL }                 (settings sections)
//!            | { statement }                        ([sequence NAME])
//! value     := number [unit] | number-unit | word | string | "[" number { "," number } "]"
//! statement := "pulse" "(" transition "," flip "," duration "," phase ")"
//!            | "wait" "(" duration ")"
//!            | "repeat" integer "{" { statement } "}"
//! flip      := "pi" | "pi/" number | number [angle-unit]
//! ```
//!
//! `#` starts a comment. Errors are collected with their position and
//! parsing resumes at the next line (or statement).

use std::collections::HashSet;
use std::f64::consts::PI;

use super::config::{
    ExperimentConfig, NoiseSection, OutputFormat, StrainMode, SweepSection, BROADENING_SHAPES, SHEAR_CONVENTIONS,
    STACK111_MODES,
};
use super::lexer::{tokenize, Token, TokenKind};
use super::units::{self, Dimension};
use super::{ParseDiagnostic, Severity};
use crate::dynamics::{Pulse, PulseSequence, PulseTarget, SequenceEvent};
use crate::spin::Spin;

#[derive(Debug, Clone, Copy, PartialEq)]
enum Section {
    System,
    Field,
    Strain,
    TensorS,
    Sequence,
    Sweep,
    Broadening,
    Noise,
    Endor,
    Output,
    /// Unknown or duplicate section; its body is skipped.
    Skip,
}

const SECTIONS: [(&str, Section); 10] = [
    ("system", Section::System),
    ("field", Section::Field),
    ("strain", Section::Strain),
    ("tensor-S", Section::TensorS),
    ("sequence", Section::Sequence),
    ("sweep", Section::Sweep),
    ("broadening", Section::Broadening),
    ("noise", Section::Noise),
    ("endor", Section::Endor),
    ("output", Section::Output),
];

/// Keys accepted by each settings section.
fn keys(section: Section) -> &'static [&'static str] {
    match section {
        Section::System => &["spin", "g_n", "g_n_free", "q"],
        Section::Field => &["B0", "orientation"],
        Section::Strain => &[
            "mode", "eps_par", "eps_perp", "stack111", "eps_long", "eps_trans", "axis", "components", "C11", "C12",
            "C44",
        ],
        Section::TensorS => &["S11", "S44", "shear"],
        Section::Sweep => &["variable", "start", "stop", "points"],
        Section::Broadening => &["spread", "asymmetry", "shape", "nodes"],
        Section::Noise => &["alpha", "t2", "amplitude", "f_low", "f_high", "pulses", "points", "transition"],
        Section::Endor => &["rf_start", "rf_stop", "rf_duration", "points", "efficiency"],
        Section::Output => &["format", "prefix"],
        Section::Sequence | Section::Skip => &[],
    }
}

pub(super) struct Parser {
    tokens: Vec<Token>,
    pos: usize,
    diags: Vec<ParseDiagnostic>,
    cfg: ExperimentConfig,
    seen_sections: HashSet<String>,
    seen_keys: HashSet<String>,
    sweep_parts: SweepParts,
}

#[derive(Default)]
struct SweepParts {
    variable: Option<String>,
    start: Option<(f64, Dimension)>,
    stop: Option<(f64, Dimension)>,
    points: Option<usize>,
    header: Option<(usize, usize)>,
}

type Value = Vec<Token>;

impl Parser {
    pub(super) fn new(text: &str) -> Self {
        let (tokens, lex_errors) = tokenize(text);
        let diags = lex_errors
            .into_iter()
            .map(|e| ParseDiagnostic {
                severity: Severity::Error,
                line: e.line,
                column: e.column,
                message: e.message,
                token: "\"".into(),
            })
            .collect();
        Parser {
            tokens,
            pos: 0,
            diags,
            cfg: ExperimentConfig::default(),
            seen_sections: HashSet::new(),
            seen_keys: HashSet::new(),
            sweep_parts: SweepParts::default(),
        }
    }

    fn peek(&self) -> &Token {
        &self.tokens[self.pos]
    }

    fn advance(&mut self) -> Token {
        let t = self.tokens[self.pos].clone();
        if t.kind != TokenKind::Eof {
            self.pos += 1;
        }
        t
    }

    fn error_at(&mut self, token: &Token, message: impl Into<String>) {
        self.diags.push(ParseDiagnostic {
            severity: Severity::Error,
            line: token.line,
            column: token.column,
            message: message.into(),
            token: token.kind.text(),
        });
    }

    fn skip_line(&mut self) {
        while !matches!(self.peek().kind, TokenKind::Newline | TokenKind::Eof) {
            self.advance();
        }
        if self.peek().kind == TokenKind::Newline {
            self.advance();
        }
    }

    fn skip_newlines(&mut self) {
        while self.peek().kind == TokenKind::Newline {
            self.advance();
        }
    }

    pub(super) fn run(mut self) -> (ExperimentConfig, Vec<ParseDiagnostic>) {
        let mut section = None;
        loop {
            self.skip_newlines();
            let tok = self.peek().clone();
            match tok.kind {
                TokenKind::Eof => break,
                TokenKind::LBracket => section = Some(self.header()),
                _ => match section {
                    None => {
                        self.error_at(&tok, "expected a section header such as `[system]`");
                        self.skip_line();
                    }
                    Some(Section::Skip) => self.skip_line(),
                    Some(Section::Sequence) => {
                        let events = self.statements(0);
                        if let Some(seq) = self.cfg.sequences.last_mut() {
                            seq.events.extend(events);
                        }
                    }
                    Some(s) => self.setting(s),
                },
            }
        }
        self.finish();
        (self.cfg, self.diags)
    }

    fn header(&mut self) -> Section {
        let open = self.advance();
        let mut words = Vec::new();
        while let TokenKind::Atom(w) = &self.peek().kind {
            words.push((w.clone(), self.peek().clone()));
            self.advance();
        }
        if self.peek().kind != TokenKind::RBracket {
            let t = self.peek().clone();
            self.error_at(&t, "expected `]` to close the section header");
            self.skip_line();
            return Section::Skip;
        }
        self.advance();
        if !matches!(self.peek().kind, TokenKind::Newline | TokenKind::Eof) {
            let t = self.peek().clone();
            self.error_at(&t, "unexpected text after section header");
            self.skip_line();
        }
        let Some((name, name_tok)) = words.first().cloned() else {
            self.error_at(&open, "empty section header");
            return Section::Skip;
        };
        let Some(&(_, section)) = SECTIONS.iter().find(|s| s.0 == name) else {
            self.error_at(&name_tok, format!("unknown section `[{name}]`"));
            return Section::Skip;
        };
        let label = if section == Section::Sequence {
            match words.get(1) {
                Some((seq, _)) if words.len() == 2 => format!("sequence {seq}"),
                _ => {
                    self.error_at(&name_tok, "expected `[sequence NAME]`");
                    return Section::Skip;
                }
            }
        } else {
            if words.len() > 1 {
                self.error_at(&words[1].1, format!("section `[{name}]` takes no name"));
            }
            name.clone()
        };
        if !self.seen_sections.insert(label.clone()) {
            self.error_at(&name_tok, format!("duplicate section `[{label}]`"));
            return Section::Skip;
        }
        self.cfg.source.0.insert(name.clone(), (open.line, open.column));
        match section {
            Section::Sequence => {
                let seq_name = words[1].0.clone();
                self.cfg.source.0.insert(label, (open.line, open.column));
                self.cfg.sequences.push(PulseSequence {
                    name: seq_name,
                    events: Vec::new(),
                });
            }
            Section::Noise => self.cfg.noise = Some(NoiseSection::default()),
            Section::Sweep => self.sweep_parts.header = Some((open.line, open.column)),
            _ => {}
        }
        section
    }

    fn setting(&mut self, section: Section) {
        let key_tok = self.advance();
        let TokenKind::Atom(key) = key_tok.kind.clone() else {
            self.error_at(&key_tok, "expected `key = value`");
            self.skip_line();
            return;
        };
        if self.peek().kind != TokenKind::Equals {
            let t = self.peek().clone();
            self.error_at(&t, format!("expected `=` after `{key}`"));
            self.skip_line();
            return;
        }
        self.advance();
        let mut value = Vec::new();
        while !matches!(self.peek().kind, TokenKind::Newline | TokenKind::Eof) {
            value.push(self.advance());
        }
        let section_name = SECTIONS.iter().find(|s| s.1 == section).map(|s| s.0).unwrap_or("?");
        if !keys(section).contains(&key.as_str()) {
            self.error_at(&key_tok, format!("unknown key `{key}` in [{section_name}]"));
            return;
        }
        let full = format!("{section_name}.{key}");
        if !self.seen_keys.insert(full.clone()) {
            self.error_at(&key_tok, format!("duplicate key `{key}` in [{section_name}]"));
            return;
        }
        if value.is_empty() {
            self.error_at(&key_tok, format!("missing value for `{key}`"));
            return;
        }
        self.cfg.source.0.insert(full, (key_tok.line, key_tok.column));
        if let Err((tok, msg)) = self.assign(section, &key, &value) {
            self.error_at(&tok, msg);
        }
    }

    fn assign(&mut self, section: Section, key: &str, v: &Value) -> Result<(), (Token, String)> {
        let c = &mut self.cfg;
        match (section, key) {
            (Section::System, "spin") => c.system.spin = spin(v)?,
            (Section::System, "g_n") => c.system.g_n = number(v)?,
            (Section::System, "g_n_free") => c.system.g_n_free = number(v)?,
            (Section::System, "q") => c.system.q = quantity(v, Dimension::Area)?,
            (Section::Field, "B0") => c.field.b0 = quantity(v, Dimension::Field)?,
            (Section::Field, "orientation") => c.field.orientation = vector::<3>(v)?,
            (Section::Strain, "mode") => c.strain.mode = choice(v, &StrainMode::NAMES)?,
            (Section::Strain, "eps_par") => c.strain.eps_par = Some(number(v)?),
            (Section::Strain, "eps_perp") => c.strain.eps_perp = Some(number(v)?),
            (Section::Strain, "eps_long") => c.strain.eps_long = Some(number(v)?),
            (Section::Strain, "eps_trans") => c.strain.eps_trans = Some(number(v)?),
            (Section::Strain, "stack111") => c.strain.stack111 = choice(v, &STACK111_MODES)?,
            (Section::Strain, "axis") => c.strain.axis = Some(vector::<3>(v)?),
            (Section::Strain, "components") => c.strain.components = Some(vector::<6>(v)?),
            (Section::Strain, "C11") => c.strain.stiffness.c11 = quantity(v, Dimension::Pressure)?,
            (Section::Strain, "C12") => c.strain.stiffness.c12 = quantity(v, Dimension::Pressure)?,
            (Section::Strain, "C44") => c.strain.stiffness.c44 = quantity(v, Dimension::Pressure)?,
            (Section::TensorS, "S11") => c.tensor_s.s11 = quantity(v, Dimension::Efg)?,
            (Section::TensorS, "S44") => c.tensor_s.s44 = quantity(v, Dimension::Efg)?,
            (Section::TensorS, "shear") => c.tensor_s.shear = choice(v, &SHEAR_CONVENTIONS)?,
            (Section::Sweep, "variable") => self.sweep_parts.variable = Some(word(v)?),
            (Section::Sweep, "start") => self.sweep_parts.start = Some(any_quantity(v)?),
            (Section::Sweep, "stop") => self.sweep_parts.stop = Some(any_quantity(v)?),
            (Section::Sweep, "points") => self.sweep_parts.points = Some(integer(v)?),
            (Section::Broadening, "spread") => c.broadening.spread = quantity(v, Dimension::Frequency)?,
            (Section::Broadening, "asymmetry") => c.broadening.asymmetry = number(v)?,
            (Section::Broadening, "shape") => c.broadening.shape = choice(v, &BROADENING_SHAPES)?,
            (Section::Broadening, "nodes") => c.broadening.nodes = integer(v)?,
            (Section::Noise, _) => {
                let n = c.noise.get_or_insert_with(NoiseSection::default);
                match key {
                    "alpha" => n.alpha = number(v)?,
                    "t2" => n.t2 = Some(quantity(v, Dimension::Time)?),
                    "amplitude" => n.amplitude = Some(number(v)?),
                    "f_low" => n.f_low = quantity(v, Dimension::Frequency)?,
                    "f_high" => n.f_high = quantity(v, Dimension::Frequency)?,
                    "pulses" => n.pulses = int_list(v)?,
                    "points" => n.points = integer(v)?,
                    "transition" => n.transition = word(v)?,
                    _ => unreachable!("key table"),
                }
            }
            (Section::Endor, "rf_start") => c.endor.rf_start = Some(quantity(v, Dimension::Frequency)?),
            (Section::Endor, "rf_stop") => c.endor.rf_stop = Some(quantity(v, Dimension::Frequency)?),
            (Section::Endor, "rf_duration") => c.endor.rf_duration = quantity(v, Dimension::Time)?,
            (Section::Endor, "points") => c.endor.points = integer(v)?,
            (Section::Endor, "efficiency") => c.endor.efficiency = number(v)?,
            (Section::Output, "format") => {
                c.output.format = choice(v, &[("csv", OutputFormat::Csv), ("json", OutputFormat::Json)])?
            }
            (Section::Output, "prefix") => c.output.prefix = string(v)?,
            _ => unreachable!("key table"),
        }
        Ok(())
    }

    /// Statements until `}` (when `depth > 0`), a section header, or EOF.
    fn statements(&mut self, depth: usize) -> Vec<SequenceEvent> {
        let mut events = Vec::new();
        loop {
            self.skip_newlines();
            let start = self.pos;
            let tok = self.peek().clone();
            match &tok.kind {
                TokenKind::Eof | TokenKind::LBracket => return events,
                TokenKind::RBrace if depth > 0 => return events,
                TokenKind::RBrace => {
                    self.error_at(&tok, "`}` without a matching `repeat {`");
                    self.advance();
                }
                TokenKind::Atom(word) => match self.statement(word.clone(), depth) {
                    Ok(Some(e)) => events.push(e),
                    Ok(None) => {}
                    Err((t, msg)) => {
                        self.error_at(&t, msg);
                        self.recover();
                    }
                },
                _ => {
                    self.error_at(&tok, "expected `pulse`, `wait` or `repeat`");
                    self.recover();
                }
            }
            if self.pos == start && !matches!(self.peek().kind, TokenKind::RBrace) {
                self.advance();
            }
        }
    }

    /// Skips to the end of the current statement.
    fn recover(&mut self) {
        let mut parens = 0usize;
        loop {
            match self.peek().kind {
                TokenKind::Newline | TokenKind::Eof | TokenKind::LBracket if parens == 0 => return,
                TokenKind::RBrace if parens == 0 => return,
                TokenKind::LBrace if parens == 0 => {
                    // a broken `repeat` header: drop its whole body
                    let mut braces = 0usize;
                    loop {
                        match self.peek().kind {
                            TokenKind::Eof | TokenKind::LBracket => return,
                            TokenKind::LBrace => braces += 1,
                            TokenKind::RBrace => {
                                braces -= 1;
                                if braces == 0 {
                                    self.advance();
                                    return;
                                }
                            }
                            _ => {}
                        }
                        self.advance();
                    }
                }
                TokenKind::LParen => parens += 1,
                TokenKind::RParen if parens > 0 => {
                    parens -= 1;
                    if parens == 0 {
                        self.advance();
                        return;
                    }
                }
                TokenKind::Newline | TokenKind::Eof => return,
                _ => {}
            }
            self.advance();
        }
    }

    fn statement(&mut self, keyword: String, depth: usize) -> Result<Option<SequenceEvent>, (Token, String)> {
        let head = self.advance();
        match keyword.as_str() {
            "pulse" => {
                let args = self.arguments(&head, 4)?;
                let target = match word(&args[0])?.as_str() {
                    "all" => PulseTarget::NonSelective,
                    name => PulseTarget::Transition(name.to_string()),
                };
                Ok(Some(SequenceEvent::Pulse(Pulse {
                    target,
                    flip: flip(&args[1])?,
                    duration: quantity(&args[2], Dimension::Time)?,
                    phase: angle(&args[3])?,
                    carrier: None,
                    calibration: None,
                })))
            }
            "wait" => {
                let args = self.arguments(&head, 1)?;
                Ok(Some(SequenceEvent::Wait {
                    duration: quantity(&args[0], Dimension::Time)?,
                }))
            }
            "repeat" => {
                let count_tok = self.advance();
                let count = match &count_tok.kind {
                    TokenKind::Atom(s) => s.parse::<u32>().ok(),
                    _ => None,
                };
                let Some(count) = count else {
                    return Err((count_tok, "expected a repeat count".into()));
                };
                self.skip_newlines();
                if self.peek().kind != TokenKind::LBrace {
                    return Err((self.peek().clone(), "expected `{` after the repeat count".into()));
                }
                self.advance();
                let body = self.statements(depth + 1);
                if self.peek().kind == TokenKind::RBrace {
                    self.advance();
                    Ok(Some(SequenceEvent::Repeat { count, body }))
                } else {
                    // Report at the `repeat` so the user sees which block is open.
                    self.error_at(&head, "unclosed `repeat` block");
                    Ok(None)
                }
            }
            other => Err((head, format!("unknown statement `{other}`"))),
        }
    }

    /// `( arg { , arg } )` with exactly `n` arguments, each a token list.
    fn arguments(&mut self, head: &Token, n: usize) -> Result<Vec<Value>, (Token, String)> {
        if self.peek().kind != TokenKind::LParen {
            return Err((self.peek().clone(), format!("expected `(` after `{}`", head.kind.text())));
        }
        self.advance();
        let mut args: Vec<Value> = vec![Vec::new()];
        loop {
            let t = self.peek().clone();
            match t.kind {
                TokenKind::RParen => {
                    self.advance();
                    break;
                }
                TokenKind::Comma => {
                    self.advance();
                    args.push(Vec::new());
                }
                TokenKind::Atom(_) => args.last_mut().expect("non-empty").push(self.advance()),
                _ => return Err((t, "expected `)`".into())),
            }
        }
        if args.len() != n || args.iter().any(Vec::is_empty) {
            let what = if n == 1 { "1 argument".to_string() } else { format!("{n} arguments") };
            return Err((head.clone(), format!("`{}` takes {what}", head.kind.text())));
        }
        Ok(args)
    }

    fn finish(&mut self) {
        let first = Token {
            kind: self.tokens[0].kind.clone(),
            line: 1,
            column: 1,
        };
        for required in ["system", "field"] {
            if !self.seen_sections.contains(required) {
                self.error_at(&first, format!("missing section `[{required}]`"));
            }
        }
        if self.seen_sections.contains("field") && !self.seen_keys.contains("field.B0") {
            let (line, column) = self.cfg.source.position("field").unwrap_or((1, 1));
            self.diags.push(ParseDiagnostic {
                severity: Severity::Error,
                line,
                column,
                message: "missing key `B0` in [field]".into(),
                token: "[".into(),
            });
        }
        if let Some((line, column)) = self.sweep_parts.header {
            let parts = std::mem::take(&mut self.sweep_parts);
            let mut missing = Vec::new();
            if parts.variable.is_none() {
                missing.push("variable");
            }
            if parts.start.is_none() {
                missing.push("start");
            }
            if parts.stop.is_none() {
                missing.push("stop");
            }
            if !missing.is_empty() {
                self.diags.push(ParseDiagnostic {
                    severity: Severity::Error,
                    line,
                    column,
                    message: format!("[sweep] is missing {}", missing.join(", ")),
                    token: "[".into(),
                });
            } else {
                let (start, d1) = parts.start.expect("checked");
                let (stop, d2) = parts.stop.expect("checked");
                if d1 != d2 {
                    let (l, c) = self.cfg.source.position("sweep.stop").unwrap_or((line, column));
                    self.diags.push(ParseDiagnostic {
                        severity: Severity::Error,
                        line: l,
                        column: c,
                        message: format!("sweep bounds mix {d1} and {d2}"),
                        token: "stop".into(),
                    });
                }
                self.cfg.sweep = Some(SweepSection {
                    variable: parts.variable.expect("checked"),
                    start,
                    stop,
                    points: parts.points.unwrap_or(91),
                    dimension: d1,
                });
            }
        }
    }
}

type Fail = (Token, String);

fn single(v: &Value) -> Result<&Token, Fail> {
    match v.as_slice() {
        [t] => Ok(t),
        [_, extra, ..] => Err((extra.clone(), format!("unexpected `{}`", extra.kind.text()))),
        [] => unreachable!("values are non-empty"),
    }
}

fn atom(t: &Token) -> Result<&str, Fail> {
    match &t.kind {
        TokenKind::Atom(s) => Ok(s),
        k => Err((t.clone(), format!("unexpected `{}`", k.text()))),
    }
}

fn word(v: &Value) -> Result<String, Fail> {
    Ok(atom(single(v)?)?.to_string())
}

fn string(v: &Value) -> Result<String, Fail> {
    let t = single(v)?;
    match &t.kind {
        TokenKind::Str(s) => Ok(s.clone()),
        TokenKind::Atom(s) => Ok(s.clone()),
        k => Err((t.clone(), format!("expected a string, found `{}`", k.text()))),
    }
}

fn choice<T: Copy>(v: &Value, options: &[(&str, T)]) -> Result<T, Fail> {
    let t = single(v)?;
    let s = atom(t)?;
    options.iter().find(|o| o.0 == s).map(|o| o.1).ok_or_else(|| {
        let names: Vec<&str> = options.iter().map(|o| o.0).collect();
        (t.clone(), format!("expected one of {}, found `{s}`", names.join(", ")))
    })
}

fn number(v: &Value) -> Result<f64, Fail> {
    let t = single(v)?;
    let s = atom(t)?;
    match split_number(s) {
        (lit, "") => units::parse_number(lit).ok_or_else(|| (t.clone(), format!("`{s}` is not a number"))),
        (_, unit) if units::dimension_of(unit).is_some() => {
            Err((t.clone(), format!("`{s}` is dimensionless; remove the unit `{unit}`")))
        }
        _ => Err((t.clone(), format!("`{s}` is not a number"))),
    }
}

fn integer(v: &Value) -> Result<usize, Fail> {
    let t = single(v)?;
    let s = atom(t)?;
    s.parse::<usize>()
        .map_err(|_| (t.clone(), format!("`{s}` is not a non-negative integer")))
}

/// Splits `10us` into `("10", "us")`; the number grammar is
/// `[+-] digits [. digits] [(e|E) [+-] digits]`.
pub(super) fn split_number(s: &str) -> (&str, &str) {
    let b = s.as_bytes();
    let mut i = 0;
    if i < b.len() && (b[i] == b'+' || b[i] == b'-') {
        i += 1;
    }
    let digits_start = i;
    while i < b.len() && (b[i].is_ascii_digit() || b[i] == b'.') {
        i += 1;
    }
    if i == digits_start {
        return ("", s);
    }
    if i < b.len() && (b[i] == b'e' || b[i] == b'E') {
        let mut j = i + 1;
        if j < b.len() && (b[j] == b'+' || b[j] == b'-') {
            j += 1;
        }
        let exp_digits = j;
        while j < b.len() && b[j].is_ascii_digit() {
            j += 1;
        }
        if j > exp_digits {
            i = j;
        }
    }
    (&s[..i], &s[i..])
}

/// A number with a unit, either `350 mT` or `350mT`.
fn any_quantity(v: &Value) -> Result<(f64, Dimension), Fail> {
    let first = &v[0];
    let text = atom(first)?;
    let (lit, glued) = split_number(text);
    if lit.is_empty() {
        return Err((first.clone(), format!("`{text}` is not a number")));
    }
    let unit = match (glued, v.get(1)) {
        ("", None) => None,
        ("", Some(u)) => {
            if let Some(extra) = v.get(2) {
                return Err((extra.clone(), format!("unexpected `{}`", extra.kind.text())));
            }
            Some(atom(u)?)
        }
        (g, None) => Some(g),
        (_, Some(extra)) => return Err((extra.clone(), format!("unexpected `{}`", extra.kind.text()))),
    };
    units::to_si(lit, unit).map_err(|msg| (v.last().expect("non-empty").clone(), msg))
}

/// A dimensional value; the unit is mandatory.
fn quantity(v: &Value, dim: Dimension) -> Result<f64, Fail> {
    let (value, got) = any_quantity(v)?;
    if got != dim {
        let hint = if got == Dimension::Dimensionless {
            format!("missing unit; expected {dim} ({})", units::aliases(dim).join(", "))
        } else {
            format!("unit mismatch: expected {dim}, found {got}")
        };
        return Err((v.last().expect("non-empty").clone(), hint));
    }
    Ok(value)
}

/// Angle with optional unit; bare numbers are radians.
fn angle(v: &Value) -> Result<f64, Fail> {
    let (value, got) = any_quantity(v)?;
    match got {
        Dimension::Angle | Dimension::Dimensionless => Ok(value),
        other => Err((v.last().expect("non-empty").clone(), format!("unit mismatch: expected angle, found {other}"))),
    }
}

fn flip(v: &Value) -> Result<f64, Fail> {
    let t = &v[0];
    let s = atom(t)?;
    if s == "pi" && v.len() == 1 {
        return Ok(PI);
    }
    if let Some(d) = s.strip_prefix("pi/") {
        if v.len() > 1 {
            return Err((v[1].clone(), format!("unexpected `{}`", v[1].kind.text())));
        }
        return match units::parse_number(d) {
            Some(x) if x > 0.0 => Ok(PI / x),
            _ => Err((t.clone(), format!("bad flip angle `{s}`"))),
        };
    }
    angle(v)
}

fn spin(v: &Value) -> Result<Spin, Fail> {
    let t = single(v)?;
    let s = atom(t)?;
    let parsed = match s.split_once('/') {
        Some((num, "2")) => num.parse::<u32>().ok().and_then(|n| Spin::from_doubled(n).ok()),
        Some(_) => None,
        None => units::parse_number(s).and_then(|x| Spin::new(x).ok()),
    };
    parsed.ok_or_else(|| (t.clone(), format!("`{s}` is not a valid spin (use e.g. 3/2)")))
}

fn bracketed(v: &Value) -> Result<Vec<&Token>, Fail> {
    let open = &v[0];
    if open.kind != TokenKind::LBracket {
        return Err((open.clone(), "expected `[`".into()));
    }
    let mut items = Vec::new();
    let mut expect_item = true;
    for (k, t) in v.iter().enumerate().skip(1) {
        match (&t.kind, expect_item) {
            (TokenKind::Atom(_), true) => {
                items.push(t);
                expect_item = false;
            }
            (TokenKind::Comma, false) => expect_item = true,
            (TokenKind::RBracket, false) if k == v.len() - 1 => return Ok(items),
            (TokenKind::RBracket, true) if items.is_empty() && k == v.len() - 1 => return Ok(items),
            _ => return Err((t.clone(), format!("unexpected `{}` in list", t.kind.text()))),
        }
    }
    Err((v.last().expect("non-empty").clone(), "unclosed `[` list".into()))
}

fn vector<const N: usize>(v: &Value) -> Result<[f64; N], Fail> {
    let items = bracketed(v)?;
    if items.len() != N {
        return Err((v[0].clone(), format!("expected {N} components, found {}", items.len())));
    }
    let mut out = [0.0; N];
    for (slot, t) in out.iter_mut().zip(items) {
        *slot = number(&vec![t.clone()])?;
    }
    Ok(out)
}

fn int_list(v: &Value) -> Result<Vec<u32>, Fail> {
    bracketed(v)?
        .into_iter()
        .map(|t| {
            let s = atom(t)?;
            s.parse::<u32>().map_err(|_| (t.clone(), format!("`{s}` is not a pulse count")))
        })
        .collect()
}
