//! Mini-interpreter for the dataflow code target. Parses the emitted
//! node text (declarations, `var` section, equations with `pre` and `->`)
//! and executes it step for step; exists to close the code-generation loop
//! by cross-checking emitted code against diagram simulation. Annotation
//! comments (`--@ ...`) are ignored by execution but collected into the
//! assertion table.

use std::collections::BTreeMap;

use crate::diag::Diagnostic;

#[derive(Clone, Debug)]
enum Expr {
    Num(f64),
    Var(String),
    Pre(String),
    Arrow(Box<Expr>, Box<Expr>),
    Bin(char, Box<Expr>, Box<Expr>),
    Neg(Box<Expr>),
}

#[derive(Clone, Debug)]
pub struct DataflowTrace {
    pub name: String,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    /// Per-variable value series, one entry per executed step.
    pub vars: BTreeMap<String, Vec<f64>>,
    /// Raw `--@` annotation comment lines, in source order.
    pub annotations: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Ident(String),
    Num(f64),
    Sym(char),
    Arrow,
}

struct Lexer<'s> {
    src: &'s [u8],
    pos: usize,
    line: usize,
    col: usize,
    annotations: Vec<String>,
}

impl<'s> Lexer<'s> {
    fn new(src: &'s str) -> Self {
        Lexer {
            src: src.as_bytes(),
            pos: 0,
            line: 1,
            col: 1,
            annotations: Vec::new(),
        }
    }

    fn bump(&mut self) -> Option<u8> {
        let c = self.src.get(self.pos).copied()?;
        self.pos += 1;
        if c == b'\n' {
            self.line += 1;
            self.col = 1;
        } else {
            self.col += 1;
        }
        Some(c)
    }

    fn peek(&self) -> Option<u8> {
        self.src.get(self.pos).copied()
    }

    fn peek2(&self) -> Option<u8> {
        self.src.get(self.pos + 1).copied()
    }

    fn next_token(&mut self) -> Result<Option<(Tok, usize, usize)>, Diagnostic> {
        loop {
            match self.peek() {
                None => return Ok(None),
                Some(c) if c.is_ascii_whitespace() => {
                    self.bump();
                }
                Some(b'-') if self.peek2() == Some(b'-') => {
                    // comment to end of line; --@ lines are annotations
                    let start = self.pos;
                    while let Some(c) = self.peek() {
                        if c == b'\n' {
                            break;
                        }
                        self.bump();
                    }
                    let text = std::str::from_utf8(&self.src[start..self.pos]).unwrap_or("");
                    if let Some(rest) = text.strip_prefix("--@") {
                        self.annotations.push(rest.trim().to_string());
                    }
                }
                _ => break,
            }
        }
        let (line, col) = (self.line, self.col);
        let c = self.peek().unwrap();
        if c == b'-' && self.peek2() == Some(b'>') {
            self.bump();
            self.bump();
            return Ok(Some((Tok::Arrow, line, col)));
        }
        if c.is_ascii_alphabetic() || c == b'_' {
            let start = self.pos;
            while let Some(c) = self.peek() {
                if c.is_ascii_alphanumeric() || c == b'_' || c == b'.' {
                    self.bump();
                } else {
                    break;
                }
            }
            let s = std::str::from_utf8(&self.src[start..self.pos])
                .unwrap()
                .to_string();
            return Ok(Some((Tok::Ident(s), line, col)));
        }
        if c.is_ascii_digit() || (c == b'.' && self.peek2().is_some_and(|d| d.is_ascii_digit())) {
            let start = self.pos;
            while let Some(c) = self.peek() {
                if c.is_ascii_digit() || c == b'.' || c == b'e' || c == b'E' {
                    self.bump();
                    // exponent sign
                    if (c == b'e' || c == b'E') && matches!(self.peek(), Some(b'+') | Some(b'-')) {
                        self.bump();
                    }
                } else {
                    break;
                }
            }
            let s = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
            let n: f64 = s.parse().map_err(|_| {
                Diagnostic::new("parse-error", format!("bad number `{s}`")).with_position(line, col)
            })?;
            return Ok(Some((Tok::Num(n), line, col)));
        }
        if b"()+-*/;:,=".contains(&c) {
            self.bump();
            return Ok(Some((Tok::Sym(c as char), line, col)));
        }
        Err(Diagnostic::new(
            "parse-error",
            format!("unexpected character `{}`", c as char),
        )
        .with_position(line, col))
    }
}

struct Parser {
    tokens: Vec<(Tok, usize, usize)>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.tokens.get(self.pos).map(|(t, _, _)| t)
    }

    fn err(&self, msg: impl Into<String>) -> Diagnostic {
        let (line, col) = self
            .tokens
            .get(self.pos.min(self.tokens.len().saturating_sub(1)))
            .map(|&(_, l, c)| (l, c))
            .unwrap_or((0, 0));
        Diagnostic::new("parse-error", msg).with_position(line, col)
    }

    fn bump(&mut self) -> Option<Tok> {
        let t = self.tokens.get(self.pos).map(|(t, _, _)| t.clone());
        self.pos += 1;
        t
    }

    fn expect_sym(&mut self, c: char) -> Result<(), Diagnostic> {
        match self.bump() {
            Some(Tok::Sym(s)) if s == c => Ok(()),
            other => Err(self.err(format!("expected `{c}`, found {other:?}"))),
        }
    }

    fn expect_ident(&mut self) -> Result<String, Diagnostic> {
        match self.bump() {
            Some(Tok::Ident(s)) => Ok(s),
            other => Err(self.err(format!("expected identifier, found {other:?}"))),
        }
    }

    fn expect_keyword(&mut self, kw: &str) -> Result<(), Diagnostic> {
        match self.bump() {
            Some(Tok::Ident(s)) if s == kw => Ok(()),
            other => Err(self.err(format!("expected `{kw}`, found {other:?}"))),
        }
    }

    /// `name : real (; name : real)*` possibly with comma-separated name
    /// lists before each type.
    fn parse_decl_list(&mut self, terminator: char) -> Result<Vec<String>, Diagnostic> {
        let mut names = Vec::new();
        loop {
            if self.peek() == Some(&Tok::Sym(terminator)) {
                self.bump();
                return Ok(names);
            }
            let mut group = vec![self.expect_ident()?];
            while self.peek() == Some(&Tok::Sym(',')) {
                self.bump();
                group.push(self.expect_ident()?);
            }
            self.expect_sym(':')?;
            self.expect_keyword("real")?;
            names.extend(group);
            match self.peek() {
                Some(Tok::Sym(';')) => {
                    self.bump();
                }
                Some(Tok::Sym(t)) if *t == terminator => {}
                _ => return Err(self.err("expected `;` or end of declaration list")),
            }
        }
    }

    // expr := sum ('->' expr)?   (arrow is right-associative, lowest)
    fn parse_expr(&mut self) -> Result<Expr, Diagnostic> {
        let left = self.parse_sum()?;
        if self.peek() == Some(&Tok::Arrow) {
            self.bump();
            let right = self.parse_expr()?;
            return Ok(Expr::Arrow(Box::new(left), Box::new(right)));
        }
        Ok(left)
    }

    fn parse_sum(&mut self) -> Result<Expr, Diagnostic> {
        let mut acc = self.parse_term()?;
        loop {
            match self.peek() {
                Some(Tok::Sym(c @ ('+' | '-'))) => {
                    let op = *c;
                    self.bump();
                    let rhs = self.parse_term()?;
                    acc = Expr::Bin(op, Box::new(acc), Box::new(rhs));
                }
                _ => return Ok(acc),
            }
        }
    }

    fn parse_term(&mut self) -> Result<Expr, Diagnostic> {
        let mut acc = self.parse_factor()?;
        loop {
            match self.peek() {
                Some(Tok::Sym(c @ ('*' | '/'))) => {
                    let op = *c;
                    self.bump();
                    let rhs = self.parse_factor()?;
                    acc = Expr::Bin(op, Box::new(acc), Box::new(rhs));
                }
                _ => return Ok(acc),
            }
        }
    }

    fn parse_factor(&mut self) -> Result<Expr, Diagnostic> {
        match self.bump() {
            Some(Tok::Num(n)) => Ok(Expr::Num(n)),
            Some(Tok::Sym('-')) => Ok(Expr::Neg(Box::new(self.parse_factor()?))),
            Some(Tok::Sym('(')) => {
                let e = self.parse_expr()?;
                self.expect_sym(')')?;
                Ok(e)
            }
            Some(Tok::Ident(s)) if s == "pre" => {
                let v = self.expect_ident()?;
                Ok(Expr::Pre(v))
            }
            Some(Tok::Ident(s)) => Ok(Expr::Var(s)),
            other => Err(self.err(format!("expected expression, found {other:?}"))),
        }
    }
}

struct Node {
    name: String,
    inputs: Vec<String>,
    outputs: Vec<String>,
    equations: Vec<(String, Expr)>,
    annotations: Vec<String>,
}

fn parse_node(text: &str) -> Result<Node, Vec<Diagnostic>> {
    let mut lexer = Lexer::new(text);
    let mut tokens = Vec::new();
    loop {
        match lexer.next_token() {
            Ok(Some(t)) => tokens.push(t),
            Ok(None) => break,
            Err(d) => return Err(vec![d]),
        }
    }
    let annotations = lexer.annotations;
    if tokens.is_empty() {
        return Err(vec![Diagnostic::new("parse-error", "empty dataflow text")]);
    }
    let mut p = Parser { tokens, pos: 0 };
    let mut inner = || -> Result<Node, Diagnostic> {
        p.expect_keyword("node")?;
        let name = p.expect_ident()?;
        p.expect_sym('(')?;
        let inputs = p.parse_decl_list(')')?;
        p.expect_keyword("returns")?;
        p.expect_sym('(')?;
        let outputs = p.parse_decl_list(')')?;
        p.expect_sym(';')?;
        if p.peek() == Some(&Tok::Ident("var".into())) {
            p.bump();
            // consume declarations up to `let`
            loop {
                match p.peek() {
                    Some(Tok::Ident(s)) if s == "let" => break,
                    Some(_) => {
                        p.bump();
                    }
                    None => return Err(p.err("unterminated var section")),
                }
            }
        }
        p.expect_keyword("let")?;
        let mut equations = Vec::new();
        loop {
            match p.peek() {
                Some(Tok::Ident(s)) if s == "tel" => {
                    p.bump();
                    break;
                }
                Some(_) => {
                    let lhs = p.expect_ident()?;
                    p.expect_sym('=')?;
                    let rhs = p.parse_expr()?;
                    p.expect_sym(';')?;
                    equations.push((lhs, rhs));
                }
                None => return Err(p.err("missing `tel`")),
            }
        }
        if equations.is_empty() {
            return Err(p.err("node has no equations"));
        }
        Ok(Node {
            name,
            inputs,
            outputs,
            equations,
            annotations: Vec::new(),
        })
    };
    match inner() {
        Ok(mut node) => {
            node.annotations = annotations;
            Ok(node)
        }
        Err(d) => Err(vec![d]),
    }
}

fn eval(
    e: &Expr,
    step: usize,
    cur: &BTreeMap<String, f64>,
    prev: &BTreeMap<String, f64>,
) -> Result<f64, Diagnostic> {
    Ok(match e {
        Expr::Num(n) => *n,
        Expr::Var(v) => *cur.get(v).ok_or_else(|| {
            Diagnostic::new("parse-error", format!("`{v}` used before it is defined"))
        })?,
        Expr::Pre(v) => prev.get(v).copied().unwrap_or(0.0),
        Expr::Arrow(a, b) => {
            if step == 0 {
                eval(a, step, cur, prev)?
            } else {
                eval(b, step, cur, prev)?
            }
        }
        Expr::Neg(a) => -eval(a, step, cur, prev)?,
        Expr::Bin(op, a, b) => {
            let (x, y) = (eval(a, step, cur, prev)?, eval(b, step, cur, prev)?);
            match op {
                '+' => x + y,
                '-' => x - y,
                '*' => x * y,
                '/' => x / y,
                _ => unreachable!(),
            }
        }
    })
}

/// Parse and execute a dataflow node for `steps` steps. `inputs` maps input
/// names to per-step sample series (missing names read zero; short series
/// hold their last value).
pub fn interpret_dataflow(
    text: &str,
    inputs: &BTreeMap<String, Vec<f64>>,
    steps: usize,
) -> Result<DataflowTrace, Vec<Diagnostic>> {
    let node = parse_node(text)?;
    let mut vars: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut prev: BTreeMap<String, f64> = BTreeMap::new();
    for k in 0..steps {
        let mut cur: BTreeMap<String, f64> = BTreeMap::new();
        for name in &node.inputs {
            let v = inputs
                .get(name)
                .map(|s| s.get(k).or_else(|| s.last()).copied().unwrap_or(0.0))
                .unwrap_or(0.0);
            cur.insert(name.clone(), v);
        }
        for (lhs, rhs) in &node.equations {
            let v = eval(rhs, k, &cur, &prev).map_err(|d| vec![d])?;
            cur.insert(lhs.clone(), v);
        }
        for (name, value) in &cur {
            vars.entry(name.clone()).or_default().push(*value);
        }
        prev = cur;
    }
    Ok(DataflowTrace {
        name: node.name,
        inputs: node.inputs,
        outputs: node.outputs,
        vars,
        annotations: node.annotations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const COUNTER: &str = "\
node counter (u : real) returns (y : real);
--@ ensures decrease: none
var s : real;
let
  s = 0.0 -> pre s + u;
  y = s;
tel
";

    #[test]
    fn counter_accumulates() {
        let mut inputs = BTreeMap::new();
        inputs.insert("u".to_string(), vec![1.0, 2.0, 3.0]);
        let t = interpret_dataflow(COUNTER, &inputs, 3).unwrap();
        assert_eq!(t.vars["y"], vec![0.0, 2.0, 5.0]);
        assert_eq!(t.annotations.len(), 1);
        assert!(t.annotations[0].contains("decrease"));
    }

    #[test]
    fn empty_node_is_parse_error() {
        let diags =
            interpret_dataflow("node m () returns (y : real); let tel", &BTreeMap::new(), 1)
                .unwrap_err();
        assert_eq!(diags[0].code, "parse-error");
    }

    #[test]
    fn mangled_text_is_parse_error() {
        let diags =
            interpret_dataflow("node m (u : real returns", &BTreeMap::new(), 1).unwrap_err();
        assert_eq!(diags[0].code, "parse-error");
    }

    #[test]
    fn precedence_and_unary_minus() {
        let text = "\
node m (u : real) returns (y : real);
let
  y = -u + 2.0 * (u - 1.0) / 4.0;
tel
";
        let mut inputs = BTreeMap::new();
        inputs.insert("u".to_string(), vec![3.0]);
        let t = interpret_dataflow(text, &inputs, 1).unwrap();
        assert!((t.vars["y"][0] - (-3.0 + 2.0 * 2.0 / 4.0)).abs() < 1e-15);
    }
}
