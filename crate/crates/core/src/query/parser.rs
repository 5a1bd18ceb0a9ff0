//! Hand-written lexer and recursive-descent parser for the supported
//! SELECT subset.

use super::ast::*;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Ident(String),
    /// Double-quoted or backquoted identifier, never a keyword.
    Quoted(String),
    Number(String),
    Str(String),
    Sym(&'static str),
    End,
}

#[derive(Clone, Debug)]
struct Token {
    tok: Tok,
    pos: usize,
}

fn syntax(pos: usize, message: impl Into<String>) -> Error {
    Error::Syntax { pos, message: message.into() }
}

fn lex(src: &str) -> Result<Vec<Token>> {
    const SYMS: [&str; 14] = ["<=", ">=", "<>", "!=", ",", ".", "(", ")", "*", "+", "-", "/", "=", "<"];
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        if c.is_ascii_alphabetic() || c == '_' {
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            out.push(Token { tok: Tok::Ident(src[start..i].to_string()), pos: start });
        } else if c.is_ascii_digit() {
            while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                i += 1;
            }
            out.push(Token { tok: Tok::Number(src[start..i].to_string()), pos: start });
        } else if c == '\'' {
            let mut s = String::new();
            i += 1;
            loop {
                match src[i..].chars().next() {
                    None => return Err(syntax(start, "unterminated string literal")),
                    Some('\'') if src[i + 1..].starts_with('\'') => {
                        s.push('\'');
                        i += 2;
                    }
                    Some('\'') => {
                        i += 1;
                        break;
                    }
                    Some(ch) => {
                        s.push(ch);
                        i += ch.len_utf8();
                    }
                }
            }
            out.push(Token { tok: Tok::Str(s), pos: start });
        } else if c == '"' || c == '`' {
            let end = src[i + 1..].find(c).ok_or_else(|| syntax(start, "unterminated quoted identifier"))?;
            out.push(Token { tok: Tok::Quoted(src[i + 1..i + 1 + end].to_string()), pos: start });
            i += end + 2;
        } else if c == '>' && !src[i..].starts_with(">=") {
            out.push(Token { tok: Tok::Sym(">"), pos: start });
            i += 1;
        } else if let Some(s) = SYMS.iter().find(|s| src[i..].starts_with(**s)) {
            out.push(Token { tok: Tok::Sym(s), pos: start });
            i += s.len();
        } else if c == ';' && src[i + 1..].trim().is_empty() {
            i = bytes.len();
        } else {
            let ch = src[i..].chars().next().expect("in bounds");
            return Err(syntax(start, format!("unexpected character `{ch}`")));
        }
    }
    out.push(Token { tok: Tok::End, pos: src.len() });
    Ok(out)
}

const RESERVED: &[&str] = &[
    "SELECT", "FROM", "JOIN", "INNER", "ON", "WHERE", "AND", "OR", "NOT", "GROUP", "BY", "AS", "BETWEEN", "IN", "IS",
    "NULL", "HAVING", "ORDER", "LIMIT", "UNION", "LEFT", "RIGHT", "FULL", "OUTER", "CROSS", "EXISTS", "DISTINCT",
];

/// Clauses recognized only to reject them with a clear message.
const UNSUPPORTED: &[(&str, &str)] = &[
    ("OR", "OR predicates"),
    ("NOT", "NOT predicates"),
    ("HAVING", "HAVING clauses"),
    ("ORDER", "ORDER BY"),
    ("LIMIT", "LIMIT"),
    ("UNION", "UNION"),
    ("LEFT", "outer joins"),
    ("RIGHT", "outer joins"),
    ("FULL", "outer joins"),
    ("OUTER", "outer joins"),
    ("CROSS", "cross joins"),
    ("EXISTS", "EXISTS subqueries"),
    ("DISTINCT", "DISTINCT"),
];

struct Parser {
    toks: Vec<Token>,
    at: usize,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.at].tok
    }

    fn pos(&self) -> usize {
        self.toks[self.at].pos
    }

    fn bump(&mut self) -> Token {
        let t = self.toks[self.at].clone();
        if self.at + 1 < self.toks.len() {
            self.at += 1;
        }
        t
    }

    fn is_kw(&self, kw: &str) -> bool {
        matches!(self.peek(), Tok::Ident(w) if w.eq_ignore_ascii_case(kw))
    }

    fn eat_kw(&mut self, kw: &str) -> bool {
        let hit = self.is_kw(kw);
        if hit {
            self.bump();
        }
        hit
    }

    fn expect_kw(&mut self, kw: &str) -> Result<()> {
        if self.eat_kw(kw) {
            Ok(())
        } else {
            Err(self.unexpected(kw))
        }
    }

    fn eat_sym(&mut self, s: &str) -> bool {
        let hit = matches!(self.peek(), Tok::Sym(x) if *x == s);
        if hit {
            self.bump();
        }
        hit
    }

    fn expect_sym(&mut self, s: &str) -> Result<()> {
        if self.eat_sym(s) {
            Ok(())
        } else {
            Err(self.unexpected(&format!("`{s}`")))
        }
    }

    /// Rejects unsupported constructs at the cursor before a generic error
    /// would hide them.
    fn check_unsupported(&self) -> Result<()> {
        if let Tok::Ident(w) = self.peek() {
            if let Some((_, what)) = UNSUPPORTED.iter().find(|(k, _)| w.eq_ignore_ascii_case(k)) {
                return Err(Error::UnsupportedFeature(format!("{what} (at {})", self.pos())));
            }
        }
        if matches!(self.peek(), Tok::Sym("(")) {
            if let Some(Tok::Ident(w)) = self.toks.get(self.at + 1).map(|t| &t.tok) {
                if w.eq_ignore_ascii_case("SELECT") {
                    return Err(Error::UnsupportedFeature(format!("subqueries (at {})", self.pos())));
                }
            }
        }
        Ok(())
    }

    fn unexpected(&self, wanted: &str) -> Error {
        if let Err(e) = self.check_unsupported() {
            return e;
        }
        let found = match self.peek() {
            Tok::Ident(w) | Tok::Quoted(w) => format!("`{w}`"),
            Tok::Number(n) => n.clone(),
            Tok::Str(s) => format!("'{s}'"),
            Tok::Sym(s) => format!("`{s}`"),
            Tok::End => "end of input".to_string(),
        };
        syntax(self.pos(), format!("expected {wanted}, found {found}"))
    }

    fn ident(&mut self, what: &str) -> Result<String> {
        match self.peek().clone() {
            Tok::Ident(w) if !RESERVED.iter().any(|k| w.eq_ignore_ascii_case(k)) => {
                self.bump();
                Ok(w)
            }
            Tok::Quoted(w) => {
                self.bump();
                Ok(w)
            }
            _ => Err(self.unexpected(what)),
        }
    }

    fn column_ref(&mut self) -> Result<ColumnRef> {
        let first = self.ident("a column name")?;
        if self.eat_sym(".") {
            let name = self.ident("a column name")?;
            Ok(ColumnRef { qualifier: Some(first), name })
        } else {
            Ok(ColumnRef { qualifier: None, name: first })
        }
    }

    fn table_ref(&mut self) -> Result<TableRef> {
        self.check_unsupported()?;
        let name = self.ident("a table name")?;
        let bare = matches!(self.peek(), Tok::Ident(w) if !RESERVED.iter().any(|k| w.eq_ignore_ascii_case(k)));
        let alias = if self.eat_kw("AS") || bare { Some(self.ident("an alias")?) } else { None };
        Ok(TableRef { name, alias })
    }

    fn query(&mut self) -> Result<Query> {
        self.check_unsupported()?;
        self.expect_kw("SELECT")?;
        let select = self.select_list()?;
        self.expect_kw("FROM")?;
        let from = self.table_ref()?;
        if matches!(self.peek(), Tok::Sym(",")) {
            return Err(Error::UnsupportedFeature(format!(
                "implicit joins in FROM (at {}); use JOIN ... ON key = key",
                self.pos()
            )));
        }
        let mut joins = Vec::new();
        loop {
            self.check_unsupported()?;
            if self.eat_kw("INNER") {
                self.expect_kw("JOIN")?;
            } else if !self.eat_kw("JOIN") {
                break;
            }
            let table = self.table_ref()?;
            self.expect_kw("ON")?;
            let left = self.column_ref()?;
            self.expect_sym("=")?;
            let right = self.column_ref()?;
            joins.push(Join { table, left, right });
        }
        let mut filters = Vec::new();
        if self.eat_kw("WHERE") {
            loop {
                filters.push(self.condition()?);
                self.check_unsupported()?;
                if !self.eat_kw("AND") {
                    break;
                }
            }
        }
        let mut group_by = Vec::new();
        if self.eat_kw("GROUP") {
            self.expect_kw("BY")?;
            loop {
                group_by.push(self.column_ref()?);
                if !self.eat_sym(",") {
                    break;
                }
            }
        }
        self.check_unsupported()?;
        if *self.peek() != Tok::End {
            return Err(self.unexpected("end of query"));
        }
        Ok(Query { select, from, joins, filters, group_by })
    }

    fn select_list(&mut self) -> Result<SelectList> {
        self.check_unsupported()?;
        if self.eat_sym("*") {
            return Ok(SelectList::Star);
        }
        let mut items = Vec::new();
        loop {
            self.check_unsupported()?;
            let expr = self.select_expr()?;
            let alias = if self.eat_kw("AS") { Some(self.ident("an alias")?) } else { None };
            items.push(SelectItem { expr, alias });
            if !self.eat_sym(",") {
                break;
            }
        }
        Ok(SelectList::Items(items))
    }

    fn select_expr(&mut self) -> Result<SelectExpr> {
        let func = match (self.peek(), self.toks.get(self.at + 1).map(|t| &t.tok)) {
            (Tok::Ident(w), Some(Tok::Sym("("))) => Some(
                AggFunc::parse(w).ok_or_else(|| Error::UnsupportedFeature(format!("function {w} (at {})", self.pos())))?,
            ),
            _ => None,
        };
        let Some(func) = func else {
            let c = self.column_ref()?;
            if let Tok::Sym(op @ ("+" | "-" | "*" | "/")) = self.peek() {
                return Err(Error::UnsupportedFeature(format!(
                    "arithmetic outside an aggregate (`{op}` at {})",
                    self.pos()
                )));
            }
            return Ok(SelectExpr::Column(c));
        };
        self.bump();
        self.expect_sym("(")?;
        self.check_unsupported()?;
        let arg = if self.eat_sym("*") {
            if func != AggFunc::Count {
                return Err(syntax(self.pos(), format!("{}(*) is not allowed", func.name())));
            }
            AggArg::Star
        } else {
            let a = self.column_ref()?;
            let op = match self.peek() {
                Tok::Sym("+") => Some(BinOp::Add),
                Tok::Sym("-") => Some(BinOp::Sub),
                Tok::Sym("*") => Some(BinOp::Mul),
                Tok::Sym("/") => Some(BinOp::Div),
                _ => None,
            };
            match op {
                Some(op) => {
                    self.bump();
                    let b = self.column_ref()?;
                    AggArg::Binary(a, op, b)
                }
                None => AggArg::Column(a),
            }
        };
        self.expect_sym(")")?;
        Ok(SelectExpr::Aggregate { func, arg })
    }

    fn literal(&mut self) -> Result<Literal> {
        self.check_unsupported()?;
        let negative = self.eat_sym("-");
        match self.peek().clone() {
            Tok::Number(n) => {
                self.bump();
                Ok(Literal { text: if negative { format!("-{n}") } else { n }, quoted: false })
            }
            Tok::Str(s) if !negative => {
                self.bump();
                Ok(Literal { text: s, quoted: true })
            }
            Tok::Ident(w) if !negative && (w.eq_ignore_ascii_case("true") || w.eq_ignore_ascii_case("false")) => {
                self.bump();
                Ok(Literal { text: w.to_ascii_lowercase(), quoted: false })
            }
            Tok::Ident(w) if !negative && w.eq_ignore_ascii_case("date") => {
                // DATE '2014-01-01'
                self.bump();
                match self.bump().tok {
                    Tok::Str(s) => Ok(Literal { text: s, quoted: true }),
                    _ => Err(syntax(self.pos(), "expected a quoted date after DATE")),
                }
            }
            _ => Err(self.unexpected("a literal")),
        }
    }

    fn condition(&mut self) -> Result<Condition> {
        self.check_unsupported()?;
        if matches!(self.peek(), Tok::Sym("(")) {
            return Err(Error::UnsupportedFeature(format!("parenthesized predicates (at {})", self.pos())));
        }
        let column = self.column_ref()?;
        let op = if self.eat_kw("IS") {
            let not = self.eat_kw("NOT");
            self.expect_kw("NULL")?;
            if not {
                CondOp::IsNotNull
            } else {
                CondOp::IsNull
            }
        } else if self.eat_kw("BETWEEN") {
            let lo = self.literal()?;
            self.expect_kw("AND")?;
            let hi = self.literal()?;
            CondOp::Between(lo, hi)
        } else if self.eat_kw("IN") {
            self.check_unsupported()?;
            self.expect_sym("(")?;
            let mut vs = vec![self.literal()?];
            while self.eat_sym(",") {
                vs.push(self.literal()?);
            }
            self.expect_sym(")")?;
            CondOp::In(vs)
        } else {
            let op = match self.peek() {
                Tok::Sym("=") => CmpOp::Eq,
                Tok::Sym("<>") | Tok::Sym("!=") => CmpOp::Ne,
                Tok::Sym("<") => CmpOp::Lt,
                Tok::Sym("<=") => CmpOp::Le,
                Tok::Sym(">") => CmpOp::Gt,
                Tok::Sym(">=") => CmpOp::Ge,
                _ => return Err(self.unexpected("a comparison")),
            };
            self.bump();
            if matches!(self.peek(), Tok::Ident(_) | Tok::Quoted(_)) && !self.is_kw("true") && !self.is_kw("false") && !self.is_kw("date") {
                return Err(Error::UnsupportedFeature(format!(
                    "column-to-column comparison in WHERE (at {}); use JOIN ... ON",
                    self.pos()
                )));
            }
            CondOp::Cmp(op, self.literal()?)
        };
        Ok(Condition { column, op })
    }
}

/// Parses one query. Syntax errors carry the byte offset of the offending
/// token.
pub fn parse(text: &str) -> Result<Query> {
    let toks = lex(text)?;
    Parser { toks, at: 0 }.query()
}
