//! Logical composition expressions and their surface syntax.
//!
//! Grammar (whitespace-insensitive, `|` binds looser than `&`):
//!
//! ```text
//! or    := and ('|' and)*
//! and   := unary ('&' unary)*
//! unary := '!' unary | NUMBER '*' unary | '(' or ')' | literal
//! literal := 'c' INDEX '=' VALUE        (INDEX is 1-based, VALUE 0-based)
//! ```
//!
//! `∧`, `∨` and `¬` are accepted as synonyms.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::attribute_space::Composition;
use crate::error::{CoindError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum CompositionExpr {
    Literal { attribute: usize, value: usize },
    Not { expr: Box<CompositionExpr> },
    And { exprs: Vec<CompositionExpr> },
    Or { exprs: Vec<CompositionExpr> },
    Weighted { gamma: f64, expr: Box<CompositionExpr> },
}

impl CompositionExpr {
    pub fn lit(attribute: usize, value: usize) -> Self {
        Self::Literal { attribute, value }
    }

    pub fn not(expr: Self) -> Self {
        Self::Not { expr: Box::new(expr) }
    }

    pub fn and(exprs: Vec<Self>) -> Self {
        Self::And { exprs }
    }

    pub fn or(exprs: Vec<Self>) -> Self {
        Self::Or { exprs }
    }

    pub fn weighted(gamma: f64, expr: Self) -> Self {
        Self::Weighted {
            gamma,
            expr: Box::new(expr),
        }
    }

    /// Conjunction of one literal per attribute.
    pub fn all_of(c: &[usize]) -> Self {
        Self::and(c.iter().enumerate().map(|(i, &v)| Self::lit(i, v)).collect())
    }

    pub fn parse(input: &str) -> Result<Self> {
        Parser::new(input).parse()
    }

    /// Whether the composition `c` satisfies the relation; weights are ignored.
    pub fn satisfied_by(&self, c: &[usize]) -> bool {
        match self {
            Self::Literal { attribute, value } => c.get(*attribute) == Some(value),
            Self::Not { expr } => !expr.satisfied_by(c),
            Self::And { exprs } => exprs.iter().all(|e| e.satisfied_by(c)),
            Self::Or { exprs } => exprs.iter().any(|e| e.satisfied_by(c)),
            Self::Weighted { expr, .. } => expr.satisfied_by(c),
        }
    }

    /// All compositions of `space` satisfying the relation.
    pub fn relation_set(&self, space: &crate::attribute_space::AttributeSpace) -> Vec<Composition> {
        space.compositions().filter(|c| self.satisfied_by(c)).collect()
    }
}

impl fmt::Display for CompositionExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let join = |f: &mut fmt::Formatter<'_>, exprs: &[CompositionExpr], sep: &str| {
            write!(f, "(")?;
            for (k, e) in exprs.iter().enumerate() {
                if k > 0 {
                    write!(f, " {sep} ")?;
                }
                write!(f, "{e}")?;
            }
            write!(f, ")")
        };
        match self {
            Self::Literal { attribute, value } => write!(f, "c{}={}", attribute + 1, value),
            Self::Not { expr } => write!(f, "!{expr}"),
            Self::And { exprs } => join(f, exprs, "&"),
            Self::Or { exprs } => join(f, exprs, "|"),
            Self::Weighted { gamma, expr } => write!(f, "{gamma}*{expr}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    And,
    Or,
    Not,
    Star,
    Eq,
    Open,
    Close,
    Ident(usize),
    Number(String),
    End,
}

struct Parser<'a> {
    input: &'a str,
    chars: Vec<char>,
    pos: usize,
    tok: Tok,
    tok_start: usize,
}

impl<'a> Parser<'a> {
    fn new(input: &'a str) -> Self {
        Self {
            input,
            chars: input.chars().collect(),
            pos: 0,
            tok: Tok::End,
            tok_start: 0,
        }
    }

    fn error(&self, at: usize, message: impl Into<String>) -> CoindError {
        CoindError::Parse {
            position: at,
            message: message.into(),
            input: self.input.to_string(),
            caret: format!("{}^", " ".repeat(at)),
        }
    }

    fn advance(&mut self) -> Result<()> {
        while self.pos < self.chars.len() && self.chars[self.pos].is_whitespace() {
            self.pos += 1;
        }
        self.tok_start = self.pos;
        let Some(&ch) = self.chars.get(self.pos) else {
            self.tok = Tok::End;
            return Ok(());
        };
        self.pos += 1;
        self.tok = match ch {
            '&' | '∧' => Tok::And,
            '|' | '∨' => Tok::Or,
            '!' | '¬' => Tok::Not,
            '*' => Tok::Star,
            '=' => Tok::Eq,
            '(' => Tok::Open,
            ')' => Tok::Close,
            'c' | 'C' => {
                let digits = self.take_while(|c| c.is_ascii_digit());
                let index: usize = digits
                    .parse()
                    .map_err(|_| self.error(self.tok_start, "expected attribute index after 'c'"))?;
                if index == 0 {
                    return Err(self.error(self.tok_start, "attribute indices start at 1"));
                }
                Tok::Ident(index - 1)
            }
            c if c.is_ascii_digit() || c == '.' => {
                self.pos -= 1;
                let mut text = self.take_while(|c| c.is_ascii_digit() || c == '.');
                if matches!(self.chars.get(self.pos), Some('e' | 'E')) {
                    self.pos += 1;
                    text.push('e');
                    if matches!(self.chars.get(self.pos), Some('-' | '+')) {
                        text.push(self.chars[self.pos]);
                        self.pos += 1;
                    }
                    text.push_str(&self.take_while(|c| c.is_ascii_digit()));
                }
                Tok::Number(text)
            }
            other => return Err(self.error(self.tok_start, format!("unexpected character '{other}'"))),
        };
        Ok(())
    }

    fn take_while(&mut self, pred: impl Fn(char) -> bool) -> String {
        let start = self.pos;
        while self.pos < self.chars.len() && pred(self.chars[self.pos]) {
            self.pos += 1;
        }
        self.chars[start..self.pos].iter().collect()
    }

    fn parse(mut self) -> Result<CompositionExpr> {
        self.advance()?;
        let expr = self.parse_or()?;
        if self.tok != Tok::End {
            return Err(self.error(self.tok_start, "unexpected trailing input"));
        }
        Ok(expr)
    }

    fn parse_or(&mut self) -> Result<CompositionExpr> {
        let mut parts = vec![self.parse_and()?];
        while self.tok == Tok::Or {
            self.advance()?;
            parts.push(self.parse_and()?);
        }
        Ok(if parts.len() == 1 { parts.pop().expect("one") } else { CompositionExpr::or(parts) })
    }

    fn parse_and(&mut self) -> Result<CompositionExpr> {
        let mut parts = vec![self.parse_unary()?];
        while self.tok == Tok::And {
            self.advance()?;
            parts.push(self.parse_unary()?);
        }
        Ok(if parts.len() == 1 { parts.pop().expect("one") } else { CompositionExpr::and(parts) })
    }

    fn parse_unary(&mut self) -> Result<CompositionExpr> {
        match self.tok.clone() {
            Tok::Not => {
                self.advance()?;
                Ok(CompositionExpr::not(self.parse_unary()?))
            }
            Tok::Number(text) => {
                let at = self.tok_start;
                let gamma: f64 = text
                    .parse()
                    .map_err(|_| self.error(at, format!("bad number '{text}'")))?;
                self.advance()?;
                if self.tok != Tok::Star {
                    return Err(self.error(self.tok_start, "expected '*' after weight"));
                }
                self.advance()?;
                Ok(CompositionExpr::weighted(gamma, self.parse_unary()?))
            }
            Tok::Open => {
                self.advance()?;
                let inner = self.parse_or()?;
                if self.tok != Tok::Close {
                    return Err(self.error(self.tok_start, "expected ')'"));
                }
                self.advance()?;
                Ok(inner)
            }
            Tok::Ident(attribute) => {
                self.advance()?;
                if self.tok != Tok::Eq {
                    return Err(self.error(self.tok_start, "expected '='"));
                }
                self.advance()?;
                let Tok::Number(text) = self.tok.clone() else {
                    return Err(self.error(self.tok_start, "expected a value index"));
                };
                let value: usize = text
                    .parse()
                    .map_err(|_| self.error(self.tok_start, format!("value '{text}' is not an index")))?;
                self.advance()?;
                Ok(CompositionExpr::lit(attribute, value))
            }
            Tok::End => Err(self.error(self.tok_start, "unexpected end of expression")),
            _ => Err(self.error(self.tok_start, "expected a literal, '!', '(' or a weight")),
        }
    }
}
