//! Parsing of the sink-side request language.
//!
//! Grammar (keywords case-insensitive):
//!
//! ```text
//! request   := [ "IF" "(" condition ")" "THEN" ] aggregation "@" location { "," location }
//! condition := quantity cmp literal
//! cmp       := "=" | "!=" | "<" | "<=" | ">" | ">="
//! literal   := number | "ON" | "OFF"
//! aggregation := kind "(" quantity ")"
//! kind      := "AVG" | "SUM" | "MAX" | "VAR" | "STD"
//! ```
//!
//! Example: `IF(light=ON) THEN AVG(temperature) @ room237,laboratory2`.
//!
//! A numeric literal compares against a sensor reading; `ON`/`OFF` compare
//! against a status value (the runtime encodes `ON` as 1 and `OFF` as 0).

use super::AggKind;
use crate::vm::CmpOp;

/// A parsed request: what to compute, under which condition, and where.
#[derive(Clone, Debug, PartialEq)]
pub struct Request {
    pub condition: Option<Condition>,
    pub aggregation: Aggregation,
    pub locations: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Condition {
    pub quantity: String,
    pub cmp: CmpOp,
    pub literal: Literal,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Literal {
    Number(f64),
    /// A discrete status state; `true` is ON.
    State(bool),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Aggregation {
    pub kind: AggKind,
    pub quantity: String,
}

impl Request {
    /// Every quantity label the request reads: the aggregated quantity plus
    /// the condition's, if present. A node must sense all of them to qualify.
    pub fn quantities(&self) -> Vec<&str> {
        let mut out = vec![self.aggregation.quantity.as_str()];
        if let Some(cond) = &self.condition {
            if cond.quantity != self.aggregation.quantity {
                out.push(cond.quantity.as_str());
            }
        }
        out
    }
}

#[derive(Debug, PartialEq, thiserror::Error)]
pub enum DslError {
    #[error("syntax error at byte {pos}: expected {expected}")]
    Syntax { pos: usize, expected: String },
    #[error("unknown aggregation kind {word:?} at byte {pos}")]
    UnknownAggregation { pos: usize, word: String },
    #[error("unknown state {word:?} at byte {pos}; states are ON and OFF")]
    UnknownState { pos: usize, word: String },
}

/// Parse a request. Errors carry the byte position of the offending token.
pub fn parse_request(text: &str) -> Result<Request, DslError> {
    let mut p = Parser { text, pos: 0 };
    p.skip_ws();

    let condition = if p.eat_keyword("IF") {
        p.expect_char('(')?;
        let quantity = p.expect_ident("condition quantity")?;
        let cmp = p.expect_cmp()?;
        let literal = p.expect_literal()?;
        p.expect_char(')')?;
        if !p.eat_keyword("THEN") {
            return Err(p.err("THEN after the condition"));
        }
        Some(Condition { quantity, cmp, literal })
    } else {
        None
    };

    let kind_pos = p.pos;
    let kind_word = p.expect_ident("an aggregation kind")?;
    let kind = AggKind::from_keyword(&kind_word)
        .ok_or(DslError::UnknownAggregation { pos: kind_pos, word: kind_word })?;
    p.expect_char('(')?;
    let quantity = p.expect_ident("a quantity to aggregate")?;
    p.expect_char(')')?;

    p.expect_char('@')?;
    let mut locations = vec![p.expect_ident("a location label")?];
    while p.eat_char(',') {
        locations.push(p.expect_ident("a location label")?);
    }

    p.skip_ws();
    if p.pos != text.len() {
        return Err(p.err("end of request"));
    }
    Ok(Request { condition, aggregation: Aggregation { kind, quantity }, locations })
}

struct Parser<'a> {
    text: &'a str,
    pos: usize,
}

impl<'a> Parser<'a> {
    fn rest(&self) -> &'a str {
        &self.text[self.pos..]
    }

    fn skip_ws(&mut self) {
        self.pos += self.rest().len() - self.rest().trim_start().len();
    }

    fn err(&self, expected: &str) -> DslError {
        DslError::Syntax { pos: self.pos, expected: expected.to_string() }
    }

    /// Consume a case-insensitive keyword if it is next (and not a prefix of
    /// a longer identifier).
    fn eat_keyword(&mut self, word: &str) -> bool {
        self.skip_ws();
        let rest = self.rest();
        if rest.len() >= word.len()
            && rest.is_char_boundary(word.len())
            && rest[..word.len()].eq_ignore_ascii_case(word)
        {
            let boundary = rest[word.len()..]
                .chars()
                .next()
                .map_or(true, |c| !c.is_ascii_alphanumeric() && c != '_');
            if boundary {
                self.pos += word.len();
                return true;
            }
        }
        false
    }

    fn eat_char(&mut self, c: char) -> bool {
        self.skip_ws();
        if self.rest().starts_with(c) {
            self.pos += c.len_utf8();
            true
        } else {
            false
        }
    }

    fn expect_char(&mut self, c: char) -> Result<(), DslError> {
        if self.eat_char(c) {
            Ok(())
        } else {
            Err(self.err(&format!("{c:?}")))
        }
    }

    fn expect_ident(&mut self, what: &str) -> Result<String, DslError> {
        self.skip_ws();
        let rest = self.rest();
        let len = rest
            .char_indices()
            .take_while(|(i, c)| {
                c.is_ascii_alphanumeric() || *c == '_' || (*i > 0 && *c == '-')
            })
            .count();
        if len == 0 || rest.chars().next().map_or(true, |c| c.is_ascii_digit()) {
            return Err(self.err(what));
        }
        let word = &rest[..len];
        self.pos += len;
        Ok(word.to_string())
    }

    fn expect_cmp(&mut self) -> Result<CmpOp, DslError> {
        self.skip_ws();
        for (token, op) in [
            ("!=", CmpOp::Ne),
            ("<=", CmpOp::Le),
            (">=", CmpOp::Ge),
            ("=", CmpOp::Eq),
            ("<", CmpOp::Lt),
            (">", CmpOp::Gt),
        ] {
            if self.rest().starts_with(token) {
                self.pos += token.len();
                return Ok(op);
            }
        }
        Err(self.err("a comparator (= != < <= > >=)"))
    }

    fn expect_literal(&mut self) -> Result<Literal, DslError> {
        self.skip_ws();
        let rest = self.rest();
        let len = rest
            .char_indices()
            .take_while(|(i, c)| {
                c.is_ascii_alphanumeric()
                    || *c == '_'
                    || *c == '.'
                    || ((*c == '-' || *c == '+') && *i == 0)
            })
            .count();
        if len == 0 {
            return Err(self.err("a literal (number, ON, or OFF)"));
        }
        let word = &rest[..len];
        let pos = self.pos;
        self.pos += len;
        if let Ok(v) = word.parse::<f64>() {
            return Ok(Literal::Number(v));
        }
        if word.eq_ignore_ascii_case("ON") {
            return Ok(Literal::State(true));
        }
        if word.eq_ignore_ascii_case("OFF") {
            return Ok(Literal::State(false));
        }
        Err(DslError::UnknownState { pos, word: word.to_string() })
    }
}
