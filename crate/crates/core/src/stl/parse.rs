//! Recursive-descent parser for the textual formula grammar.
//!
//! ```text
//! formula  := or_expr ( "->" formula )?            right associative
//! or_expr  := and_expr ( "|" and_expr )*
//! and_expr := until ( "&" until )*
//! until    := unary ( "U" interval unary )*
//! unary    := "!" unary | "G" interval unary | "F" interval unary | primary
//! primary  := "(" formula ")" | "true" | "false" | atom
//! atom     := affine ( "<" | "<=" | ">" | ">=" ) ["-"] number
//! affine   := ["-"] term ( ("+" | "-") term )*
//! term     := number "*" ident | ident
//! interval := "[" number "," number "]"
//! ```
//!
//! Unicode spellings (`¬ ∧ ∨ → □ ◇ ⊤ ⊥ ≤ ≥`) are accepted on input.

use super::ast::{Atom, Comparator, Formula, Interval, Term};
use super::{ParseError, ParseErrorKind};

#[derive(Debug, Clone, PartialEq)]
enum Lexeme {
    Ident(String),
    Number(String),
    Not,
    And,
    Or,
    Implies,
    Globally,
    Eventually,
    Until,
    True,
    False,
    LBracket,
    RBracket,
    LParen,
    RParen,
    Comma,
    Plus,
    Minus,
    Star,
    Cmp(Comparator),
    BadCmp(&'static str),
}

impl Lexeme {
    fn describe(&self) -> String {
        match self {
            Lexeme::Ident(s) => format!("identifier `{s}`"),
            Lexeme::Number(s) => format!("number `{s}`"),
            Lexeme::Not => "`!`".into(),
            Lexeme::And => "`&`".into(),
            Lexeme::Or => "`|`".into(),
            Lexeme::Implies => "`->`".into(),
            Lexeme::Globally => "`G`".into(),
            Lexeme::Eventually => "`F`".into(),
            Lexeme::Until => "`U`".into(),
            Lexeme::True => "`true`".into(),
            Lexeme::False => "`false`".into(),
            Lexeme::LBracket => "`[`".into(),
            Lexeme::RBracket => "`]`".into(),
            Lexeme::LParen => "`(`".into(),
            Lexeme::RParen => "`)`".into(),
            Lexeme::Comma => "`,`".into(),
            Lexeme::Plus => "`+`".into(),
            Lexeme::Minus => "`-`".into(),
            Lexeme::Star => "`*`".into(),
            Lexeme::Cmp(c) => format!("`{}`", c.symbol()),
            Lexeme::BadCmp(s) => format!("`{s}`"),
        }
    }
}

fn syntax(position: usize, message: impl Into<String>) -> ParseError {
    ParseError {
        position,
        kind: ParseErrorKind::Syntax,
        message: message.into(),
    }
}

fn lex(text: &str) -> Result<Vec<(usize, Lexeme)>, ParseError> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let start = i;
        let next = chars.get(i + 1).copied();
        let lexeme = match c {
            c if c.is_whitespace() => {
                i += 1;
                continue;
            }
            '(' => Lexeme::LParen,
            ')' => Lexeme::RParen,
            '[' => Lexeme::LBracket,
            ']' => Lexeme::RBracket,
            ',' => Lexeme::Comma,
            '+' => Lexeme::Plus,
            '*' => Lexeme::Star,
            '&' | '∧' => Lexeme::And,
            '|' | '∨' => Lexeme::Or,
            '¬' => Lexeme::Not,
            '→' | '⇒' => Lexeme::Implies,
            '□' => Lexeme::Globally,
            '◇' => Lexeme::Eventually,
            '⊤' => Lexeme::True,
            '⊥' => Lexeme::False,
            '≤' => Lexeme::Cmp(Comparator::Le),
            '≥' => Lexeme::Cmp(Comparator::Ge),
            '-' if next == Some('>') => {
                i += 1;
                Lexeme::Implies
            }
            '-' => Lexeme::Minus,
            '!' if next == Some('=') => {
                i += 1;
                Lexeme::BadCmp("!=")
            }
            '!' => Lexeme::Not,
            '<' | '>' => {
                let strict = if c == '<' {
                    Comparator::Lt
                } else {
                    Comparator::Gt
                };
                let loose = if c == '<' {
                    Comparator::Le
                } else {
                    Comparator::Ge
                };
                if next == Some('=') {
                    i += 1;
                    Lexeme::Cmp(loose)
                } else {
                    Lexeme::Cmp(strict)
                }
            }
            '=' if next == Some('=') => {
                i += 1;
                Lexeme::BadCmp("==")
            }
            '=' => Lexeme::BadCmp("="),
            c if c.is_ascii_digit() || (c == '.' && next.is_some_and(|n| n.is_ascii_digit())) => {
                while i < chars.len() && chars[i].is_ascii_digit() {
                    i += 1;
                }
                if i < chars.len() && chars[i] == '.' {
                    i += 1;
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                    }
                }
                out.push((start, Lexeme::Number(chars[start..i].iter().collect())));
                continue;
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                    i += 1;
                }
                let word: String = chars[start..i].iter().collect();
                let lexeme = match word.as_str() {
                    "G" => Lexeme::Globally,
                    "F" => Lexeme::Eventually,
                    "U" => Lexeme::Until,
                    "true" => Lexeme::True,
                    "false" => Lexeme::False,
                    _ => Lexeme::Ident(word),
                };
                out.push((start, lexeme));
                continue;
            }
            other => return Err(syntax(start, format!("unexpected character `{other}`"))),
        };
        i += 1;
        out.push((start, lexeme));
    }
    Ok(out)
}

struct Parser {
    tokens: Vec<(usize, Lexeme)>,
    pos: usize,
    end: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Lexeme> {
        self.tokens.get(self.pos).map(|(_, l)| l)
    }

    fn position(&self) -> usize {
        self.tokens.get(self.pos).map_or(self.end, |(p, _)| *p)
    }

    fn bump(&mut self) -> Option<Lexeme> {
        let lexeme = self.tokens.get(self.pos).map(|(_, l)| l.clone());
        self.pos += 1;
        lexeme
    }

    fn unexpected(&self, expected: &str) -> ParseError {
        match self.peek() {
            None => syntax(
                self.end,
                format!("unexpected end of input, expected {expected}"),
            ),
            Some(Lexeme::BadCmp(s)) => ParseError {
                position: self.position(),
                kind: ParseErrorKind::UnsupportedComparator,
                message: format!("comparator `{s}` is not supported; use <, <=, > or >="),
            },
            Some(other) => syntax(
                self.position(),
                format!("expected {expected}, found {}", other.describe()),
            ),
        }
    }

    fn expect(&mut self, wanted: Lexeme, expected: &str) -> Result<(), ParseError> {
        if self.peek() == Some(&wanted) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.unexpected(expected))
        }
    }

    fn formula(&mut self) -> Result<Formula, ParseError> {
        let lhs = self.or_expr()?;
        if self.peek() == Some(&Lexeme::Implies) {
            self.pos += 1;
            let rhs = self.formula()?;
            return Ok(Formula::implies(lhs, rhs));
        }
        Ok(lhs)
    }

    fn or_expr(&mut self) -> Result<Formula, ParseError> {
        let mut lhs = self.and_expr()?;
        while self.peek() == Some(&Lexeme::Or) {
            self.pos += 1;
            let rhs = self.and_expr()?;
            lhs = Formula::or(lhs, rhs);
        }
        Ok(lhs)
    }

    fn and_expr(&mut self) -> Result<Formula, ParseError> {
        let mut lhs = self.until_expr()?;
        while self.peek() == Some(&Lexeme::And) {
            self.pos += 1;
            let rhs = self.until_expr()?;
            lhs = Formula::and(lhs, rhs);
        }
        Ok(lhs)
    }

    fn until_expr(&mut self) -> Result<Formula, ParseError> {
        let mut lhs = self.unary()?;
        while self.peek() == Some(&Lexeme::Until) {
            self.pos += 1;
            let interval = self.interval()?;
            let rhs = self.unary()?;
            lhs = Formula::until(interval, lhs, rhs);
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Formula, ParseError> {
        match self.peek() {
            Some(Lexeme::Not) => {
                self.pos += 1;
                Ok(Formula::not(self.unary()?))
            }
            Some(Lexeme::Globally) => {
                self.pos += 1;
                let interval = self.interval()?;
                Ok(Formula::globally(interval, self.unary()?))
            }
            Some(Lexeme::Eventually) => {
                self.pos += 1;
                let interval = self.interval()?;
                Ok(Formula::eventually(interval, self.unary()?))
            }
            _ => self.primary(),
        }
    }

    fn primary(&mut self) -> Result<Formula, ParseError> {
        match self.peek() {
            Some(Lexeme::LParen) => {
                self.pos += 1;
                let inner = self.formula()?;
                self.expect(Lexeme::RParen, "`)`")?;
                Ok(inner)
            }
            Some(Lexeme::True) => {
                self.pos += 1;
                Ok(Formula::True)
            }
            Some(Lexeme::False) => {
                self.pos += 1;
                Ok(Formula::False)
            }
            Some(Lexeme::Ident(_)) | Some(Lexeme::Number(_)) | Some(Lexeme::Minus) => self.atom(),
            _ => Err(self.unexpected("a formula")),
        }
    }

    fn number(&mut self, negate: bool) -> Result<f64, ParseError> {
        let position = self.position();
        match self.bump() {
            Some(Lexeme::Number(text)) => {
                let value: f64 = text
                    .parse()
                    .map_err(|_| syntax(position, format!("malformed number `{text}`")))?;
                if !value.is_finite() {
                    return Err(ParseError {
                        position,
                        kind: ParseErrorKind::NumberOverflow,
                        message: format!("number `{text}` overflows a 64-bit float"),
                    });
                }
                Ok(if negate { -value } else { value })
            }
            _ => {
                self.pos -= 1;
                Err(self.unexpected("a number"))
            }
        }
    }

    fn term(&mut self, negate: bool) -> Result<Term, ParseError> {
        match self.peek() {
            Some(Lexeme::Ident(_)) => {
                let Some(Lexeme::Ident(name)) = self.bump() else {
                    unreachable!()
                };
                Ok(Term::new(if negate { -1.0 } else { 1.0 }, name))
            }
            Some(Lexeme::Number(_)) => {
                let coefficient = self.number(negate)?;
                self.expect(Lexeme::Star, "`*` between coefficient and signal")?;
                match self.bump() {
                    Some(Lexeme::Ident(name)) => Ok(Term::new(coefficient, name)),
                    _ => {
                        self.pos -= 1;
                        Err(self.unexpected("a signal identifier"))
                    }
                }
            }
            _ => Err(self.unexpected("a signal identifier or coefficient")),
        }
    }

    fn atom(&mut self) -> Result<Formula, ParseError> {
        let start = self.position();
        let mut negate = false;
        if self.peek() == Some(&Lexeme::Minus) {
            self.pos += 1;
            negate = true;
        }
        let mut terms = vec![self.term(negate)?];
        loop {
            match self.peek() {
                Some(Lexeme::Plus) => {
                    self.pos += 1;
                    terms.push(self.term(false)?);
                }
                Some(Lexeme::Minus) => {
                    self.pos += 1;
                    terms.push(self.term(true)?);
                }
                _ => break,
            }
        }
        let comparator = match self.peek() {
            Some(Lexeme::Cmp(c)) => *c,
            _ => return Err(self.unexpected("a comparator")),
        };
        self.pos += 1;
        let negative = if self.peek() == Some(&Lexeme::Minus) {
            self.pos += 1;
            true
        } else {
            false
        };
        let threshold = self.number(negative)?;
        let atom =
            Atom::new(terms, comparator, threshold).map_err(|e| syntax(start, e.to_string()))?;
        Ok(Formula::Atom(atom))
    }

    fn interval(&mut self) -> Result<Interval, ParseError> {
        let start = self.position();
        self.expect(Lexeme::LBracket, "`[` opening a time interval")?;
        if self.peek() == Some(&Lexeme::Minus) {
            return Err(ParseError {
                position: self.position(),
                kind: ParseErrorKind::Interval,
                message: "interval bounds must be non-negative".into(),
            });
        }
        let lo = self.number(false)?;
        if self.peek() == Some(&Lexeme::RBracket) {
            return Err(ParseError {
                position: self.position(),
                kind: ParseErrorKind::Interval,
                message: "interval requires two bounds".into(),
            });
        }
        self.expect(Lexeme::Comma, "`,` between interval bounds")?;
        if self.peek() == Some(&Lexeme::Minus) {
            return Err(ParseError {
                position: self.position(),
                kind: ParseErrorKind::Interval,
                message: "interval bounds must be non-negative".into(),
            });
        }
        let hi = self.number(false)?;
        self.expect(Lexeme::RBracket, "`]` closing the time interval")?;
        Interval::new(lo, hi).map_err(|e| ParseError {
            position: start,
            kind: ParseErrorKind::Interval,
            message: match e {
                super::StlError::Interval(m) => m,
                other => other.to_string(),
            },
        })
    }
}

pub(super) fn parse(text: &str) -> Result<Formula, ParseError> {
    if text.trim().is_empty() {
        return Err(ParseError {
            position: 0,
            kind: ParseErrorKind::EmptyInput,
            message: "empty input".into(),
        });
    }
    let tokens = lex(text)?;
    let mut parser = Parser {
        tokens,
        pos: 0,
        end: text.chars().count(),
    };
    let formula = parser.formula()?;
    if parser.peek().is_some() {
        return Err(parser.unexpected("end of input"));
    }
    Ok(formula)
}
