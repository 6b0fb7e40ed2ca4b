//! Breakpoint predicates over HEAD states.
//!
//! ```text
//! exists(<Type> [, <dim> <op> <literal> {and <dim> <op> <literal>}])
//! ```
//!
//! `op` is one of `== != < <= > >=`; literals are integers, floats, quoted
//! strings and `true`/`false`. A predicate holds when some object of the type
//! satisfies every clause.

use std::cmp::Ordering;
use std::fmt;

use got_core::{State, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CmpOp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

impl CmpOp {
    fn symbol(self) -> &'static str {
        match self {
            CmpOp::Eq => "==",
            CmpOp::Ne => "!=",
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
        }
    }

    fn holds(self, ord: Ordering) -> bool {
        match self {
            CmpOp::Eq => ord == Ordering::Equal,
            CmpOp::Ne => ord != Ordering::Equal,
            CmpOp::Lt => ord == Ordering::Less,
            CmpOp::Le => ord != Ordering::Greater,
            CmpOp::Gt => ord == Ordering::Greater,
            CmpOp::Ge => ord != Ordering::Less,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Clause {
    pub dim: String,
    pub op: CmpOp,
    pub literal: Value,
}

impl Clause {
    /// Ints and floats compare numerically; other mixed kinds are only ever
    /// unequal.
    pub fn matches(&self, value: &Value) -> bool {
        let ord = match (value, &self.literal) {
            (Value::Int(a), Value::Float(b)) => (*a as f64).partial_cmp(b),
            (Value::Float(a), Value::Int(b)) => a.partial_cmp(&(*b as f64)),
            (a, b) if a.kind() == b.kind() => Some(a.cmp(b)),
            _ => None,
        };
        match ord {
            Some(ord) => self.op.holds(ord),
            None => self.op == CmpOp::Ne,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Predicate {
    pub type_name: String,
    pub clauses: Vec<Clause>,
}

impl Predicate {
    pub fn parse(text: &str) -> Result<Predicate, ParseError> {
        Parser::new(text)?.predicate()
    }

    pub fn eval(&self, state: &State) -> bool {
        state.objects(&self.type_name).any(|obj| {
            self.clauses
                .iter()
                .all(|c| obj.get(&c.dim).is_some_and(|v| c.matches(v)))
        })
    }
}

impl fmt::Display for Predicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "exists({}", self.type_name)?;
        for (i, c) in self.clauses.iter().enumerate() {
            let sep = if i == 0 { ", " } else { " and " };
            let lit = match &c.literal {
                Value::Str(s) => format!("{s:?}"),
                other => other.to_string(),
            };
            write!(f, "{sep}{} {} {lit}", c.dim, c.op.symbol())?;
        }
        write!(f, ")")
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseError {
    pub offset: usize,
    pub message: String,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "at column {}: {}", self.offset + 1, self.message)
    }
}

impl std::error::Error for ParseError {}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Lit(Value),
    Op(CmpOp),
    LParen,
    RParen,
    Comma,
}

fn tokenize(text: &str) -> Result<Vec<(usize, Tok)>, ParseError> {
    let err = |offset, message: &str| ParseError {
        offset,
        message: message.to_string(),
    };
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let (at, c) = chars[i];
        match c {
            c if c.is_whitespace() => i += 1,
            '(' | ')' | ',' => {
                out.push((
                    at,
                    match c {
                        '(' => Tok::LParen,
                        ')' => Tok::RParen,
                        _ => Tok::Comma,
                    },
                ));
                i += 1;
            }
            '=' | '!' | '<' | '>' => {
                let next = chars.get(i + 1).map(|(_, c)| *c);
                let (op, len) = match (c, next) {
                    ('=', Some('=')) => (CmpOp::Eq, 2),
                    ('!', Some('=')) => (CmpOp::Ne, 2),
                    ('<', Some('=')) => (CmpOp::Le, 2),
                    ('>', Some('=')) => (CmpOp::Ge, 2),
                    ('<', _) => (CmpOp::Lt, 1),
                    ('>', _) => (CmpOp::Gt, 1),
                    _ => return Err(err(at, "expected a comparison operator")),
                };
                out.push((at, Tok::Op(op)));
                i += len;
            }
            '"' | '\'' => {
                let mut s = String::new();
                let mut j = i + 1;
                loop {
                    match chars.get(j) {
                        None => return Err(err(at, "unterminated string")),
                        Some((_, '\\')) => {
                            let Some((_, escaped)) = chars.get(j + 1) else {
                                return Err(err(at, "unterminated string"));
                            };
                            s.push(*escaped);
                            j += 2;
                        }
                        Some((_, q)) if *q == c => break,
                        Some((_, ch)) => {
                            s.push(*ch);
                            j += 1;
                        }
                    }
                }
                out.push((at, Tok::Lit(Value::Str(s))));
                i = j + 1;
            }
            c if c.is_ascii_digit() || c == '-' || c == '+' => {
                let mut j = i + 1;
                while j < chars.len() && (chars[j].1.is_ascii_digit() || matches!(chars[j].1, '.' | 'e' | 'E')) {
                    j += 1;
                }
                let end = chars.get(j).map_or(text.len(), |(o, _)| *o);
                let raw = &text[at..end];
                let value = if raw.contains(['.', 'e', 'E']) {
                    raw.parse::<f64>().map(Value::Float).ok()
                } else {
                    raw.parse::<i64>().map(Value::Int).ok()
                };
                out.push((at, Tok::Lit(value.ok_or_else(|| err(at, "bad number"))?)));
                i = j;
            }
            c if c.is_alphabetic() || c == '_' => {
                let mut j = i + 1;
                while j < chars.len() && (chars[j].1.is_alphanumeric() || chars[j].1 == '_') {
                    j += 1;
                }
                let end = chars.get(j).map_or(text.len(), |(o, _)| *o);
                let word = &text[at..end];
                out.push((
                    at,
                    match word {
                        "true" => Tok::Lit(Value::Bool(true)),
                        "false" => Tok::Lit(Value::Bool(false)),
                        _ => Tok::Ident(word.to_string()),
                    },
                ));
                i = j;
            }
            _ => return Err(err(at, &format!("unexpected character `{c}`"))),
        }
    }
    Ok(out)
}

struct Parser {
    toks: Vec<(usize, Tok)>,
    pos: usize,
    end: usize,
}

impl Parser {
    fn new(text: &str) -> Result<Parser, ParseError> {
        Ok(Parser {
            toks: tokenize(text)?,
            pos: 0,
            end: text.len(),
        })
    }

    fn offset(&self) -> usize {
        self.toks.get(self.pos).map_or(self.end, |(o, _)| *o)
    }

    fn fail<T>(&self, message: &str) -> Result<T, ParseError> {
        Err(ParseError {
            offset: self.offset(),
            message: message.to_string(),
        })
    }

    fn next(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).map(|(_, t)| t.clone());
        self.pos += 1;
        t
    }

    fn expect(&mut self, want: Tok, what: &str) -> Result<(), ParseError> {
        if self.toks.get(self.pos).map(|(_, t)| t) == Some(&want) {
            self.pos += 1;
            Ok(())
        } else {
            self.fail(&format!("expected {what}"))
        }
    }

    fn ident(&mut self, what: &str) -> Result<String, ParseError> {
        match self.toks.get(self.pos) {
            Some((_, Tok::Ident(s))) => {
                let s = s.clone();
                self.pos += 1;
                Ok(s)
            }
            _ => self.fail(&format!("expected {what}")),
        }
    }

    fn predicate(mut self) -> Result<Predicate, ParseError> {
        if self.ident("`exists`")? != "exists" {
            self.pos -= 1;
            return self.fail("expected `exists`");
        }
        self.expect(Tok::LParen, "`(`")?;
        let type_name = self.ident("a type name")?;
        let mut clauses = Vec::new();
        if self.toks.get(self.pos).map(|(_, t)| t) == Some(&Tok::Comma) {
            self.pos += 1;
            loop {
                clauses.push(self.clause()?);
                match self.toks.get(self.pos) {
                    Some((_, Tok::Ident(w))) if w == "and" => self.pos += 1,
                    _ => break,
                }
            }
        }
        self.expect(Tok::RParen, "`)`")?;
        if self.pos < self.toks.len() {
            return self.fail("trailing input");
        }
        Ok(Predicate { type_name, clauses })
    }

    fn clause(&mut self) -> Result<Clause, ParseError> {
        let dim = self.ident("a dimension name")?;
        let op = match self.next() {
            Some(Tok::Op(op)) => op,
            _ => {
                self.pos -= 1;
                return self.fail("expected a comparison operator");
            }
        };
        let literal = match self.next() {
            Some(Tok::Lit(v)) => v,
            _ => {
                self.pos -= 1;
                return self.fail("expected a literal");
            }
        };
        Ok(Clause { dim, op, literal })
    }
}
