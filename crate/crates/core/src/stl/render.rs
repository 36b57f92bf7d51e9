//! Canonical printing, token streams and template abstraction.
//!
//! Rendering and tokenization share one emitter so the token stream is, by
//! construction, the canonical text split at token boundaries.

use std::fmt;

use serde::{Deserialize, Serialize};

use super::ast::{Atom, Formula, Interval};
use crate::util::format_number;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TokenKind {
    Operator,
    Delimiter,
    Number,
    Identifier,
    Comparator,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Token {
    pub kind: TokenKind,
    pub text: String,
}

impl Token {
    fn new(kind: TokenKind, text: impl Into<String>) -> Self {
        Self {
            kind,
            text: text.into(),
        }
    }
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.text)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Piece {
    token: Token,
    space_before: bool,
}

#[derive(Default)]
struct Emitter {
    pieces: Vec<Piece>,
    pending_space: bool,
}

// Binding strength, loosest first.
const PREC_IMPLIES: u8 = 1;
const PREC_OR: u8 = 2;
const PREC_AND: u8 = 3;
const PREC_UNTIL: u8 = 4;
const PREC_PREFIX: u8 = 5;
const PREC_LEAF: u8 = 6;

fn precedence(formula: &Formula) -> u8 {
    match formula {
        Formula::Implies(..) => PREC_IMPLIES,
        Formula::Or(..) => PREC_OR,
        Formula::And(..) => PREC_AND,
        Formula::Until(..) => PREC_UNTIL,
        Formula::Not(_) | Formula::Globally(..) | Formula::Eventually(..) => PREC_PREFIX,
        Formula::Atom(_) | Formula::True | Formula::False => PREC_LEAF,
    }
}

impl Emitter {
    fn push(&mut self, kind: TokenKind, text: impl Into<String>) {
        let space_before = std::mem::take(&mut self.pending_space) && !self.pieces.is_empty();
        self.pieces.push(Piece {
            token: Token::new(kind, text),
            space_before,
        });
    }

    fn spaced(&mut self, kind: TokenKind, text: &str) {
        self.pending_space = true;
        self.push(kind, text);
        self.pending_space = true;
    }

    fn number(&mut self, value: f64) {
        self.push(TokenKind::Number, format_number(value));
    }

    fn interval(&mut self, interval: Interval) {
        self.push(TokenKind::Delimiter, "[");
        self.number(interval.lo());
        self.push(TokenKind::Delimiter, ",");
        self.number(interval.hi());
        self.push(TokenKind::Delimiter, "]");
    }

    fn parenthesized(&mut self, formula: &Formula) {
        self.push(TokenKind::Delimiter, "(");
        self.formula(formula);
        self.push(TokenKind::Delimiter, ")");
    }

    /// Operand of a binary connective. Atoms are always wrapped so that
    /// comparators never sit next to a connective, and a binary operand is
    /// wrapped unless it repeats the parent operator on its associative side.
    fn operand(&mut self, formula: &Formula, parent: u8, same_level_ok: bool) {
        let own = precedence(formula);
        let binary = own <= PREC_UNTIL;
        let wrap =
            matches!(formula, Formula::Atom(_)) || (binary && !(own == parent && same_level_ok));
        if wrap {
            self.parenthesized(formula);
        } else {
            self.formula(formula);
        }
    }

    fn binary(&mut self, lhs: &Formula, op: &str, rhs: &Formula, prec: u8, left_assoc: bool) {
        self.operand(lhs, prec, left_assoc);
        self.spaced(TokenKind::Operator, op);
        self.operand(rhs, prec, !left_assoc);
    }

    fn atom(&mut self, atom: &Atom) {
        for (index, term) in atom.terms().iter().enumerate() {
            let c = term.coefficient;
            if index == 0 {
                if c == 1.0 {
                } else if c == -1.0 {
                    self.push(TokenKind::Operator, "-");
                } else {
                    self.number(c);
                    self.push(TokenKind::Operator, "*");
                }
            } else {
                let sign = if c.is_sign_negative() { "-" } else { "+" };
                self.spaced(TokenKind::Operator, sign);
                if c.abs() != 1.0 {
                    self.number(c.abs());
                    self.push(TokenKind::Operator, "*");
                }
            }
            self.push(TokenKind::Identifier, term.variable.as_str());
        }
        self.spaced(TokenKind::Comparator, atom.comparator().symbol());
        self.number(atom.threshold());
    }

    fn formula(&mut self, formula: &Formula) {
        match formula {
            Formula::Atom(atom) => self.atom(atom),
            Formula::True => self.push(TokenKind::Operator, "true"),
            Formula::False => self.push(TokenKind::Operator, "false"),
            Formula::Not(inner) => {
                self.push(TokenKind::Operator, "!");
                self.parenthesized(inner);
            }
            Formula::Globally(i, inner) => {
                self.push(TokenKind::Operator, "G");
                self.interval(*i);
                self.parenthesized(inner);
            }
            Formula::Eventually(i, inner) => {
                self.push(TokenKind::Operator, "F");
                self.interval(*i);
                self.parenthesized(inner);
            }
            Formula::And(a, b) => self.binary(a, "&", b, PREC_AND, true),
            Formula::Or(a, b) => self.binary(a, "|", b, PREC_OR, true),
            Formula::Implies(a, b) => self.binary(a, "->", b, PREC_IMPLIES, false),
            Formula::Until(i, a, b) => {
                self.operand(a, PREC_UNTIL, true);
                self.pending_space = true;
                self.push(TokenKind::Operator, "U");
                self.interval(*i);
                self.pending_space = true;
                self.operand(b, PREC_UNTIL, false);
            }
        }
    }
}

fn emit(formula: &Formula) -> Vec<Piece> {
    let mut emitter = Emitter::default();
    emitter.formula(formula);
    emitter.pieces
}

fn join(pieces: &[Piece]) -> String {
    let mut out = String::new();
    for piece in pieces {
        if piece.space_before {
            out.push(' ');
        }
        out.push_str(&piece.token.text);
    }
    out
}

/// Canonical text of a formula; `parse(render(f)) == f`.
pub fn render(formula: &Formula) -> String {
    join(&emit(formula))
}

/// Token stream of the canonical rendering.
pub fn tokenize_formula(formula: &Formula) -> Vec<Token> {
    emit(formula).into_iter().map(|p| p.token).collect()
}

pub const SIGNAL_PLACEHOLDER: &str = "SIG";
pub const NUMBER_PLACEHOLDER: &str = "NUM";

/// Formula shape with every signal name replaced by `SIG` and every numeric
/// literal by `NUM`. Comparators and operators are kept.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplateFormula {
    pieces: Vec<Piece>,
}

impl TemplateFormula {
    fn from_pieces(pieces: Vec<Piece>) -> Self {
        let pieces = pieces
            .into_iter()
            .map(|mut piece| {
                match piece.token.kind {
                    TokenKind::Identifier => piece.token.text = SIGNAL_PLACEHOLDER.to_string(),
                    TokenKind::Number => piece.token.text = NUMBER_PLACEHOLDER.to_string(),
                    _ => {}
                }
                piece
            })
            .collect();
        Self { pieces }
    }

    pub fn tokens(&self) -> Vec<Token> {
        self.pieces.iter().map(|p| p.token.clone()).collect()
    }

    /// Re-applies the abstraction; always returns an equal template.
    pub fn abstracted(&self) -> Self {
        Self::from_pieces(self.pieces.clone())
    }
}

impl fmt::Display for TemplateFormula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&join(&self.pieces))
    }
}

pub fn extract_template(formula: &Formula) -> TemplateFormula {
    TemplateFormula::from_pieces(emit(formula))
}
