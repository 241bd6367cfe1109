//! Recursive-descent parser for
//! `SELECT (cols | *) FROM t [WHERE pred] [ORDER BY c [ASC|DESC]] [LIMIT n]`.
//!
//! `AND` binds tighter than `OR`; both associate to the left.

use super::ast::{Direction, OrderBy, Predicate, Projection, QueryAst};
use super::lexer::{tokenize, Keyword, Tok, Token};
use super::SqlError;
use crate::datamodel::Value;

pub fn parse(sql: &str) -> Result<QueryAst, SqlError> {
    let tokens = tokenize(sql)?;
    let mut parser = Parser { tokens, pos: 0 };
    let ast = parser.query()?;
    parser.expect_eof()?;
    Ok(ast)
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> &Token {
        &self.tokens[self.pos]
    }

    fn bump(&mut self) -> Token {
        let tok = self.tokens[self.pos].clone();
        if !matches!(tok.tok, Tok::Eof) {
            self.pos += 1;
        }
        tok
    }

    fn error(&self, expected: &str) -> SqlError {
        let tok = self.peek();
        SqlError::Syntax {
            offset: tok.offset,
            expected: expected.to_string(),
            found: tok.tok.describe(),
        }
    }

    fn eat_keyword(&mut self, kw: Keyword) -> bool {
        if self.peek().tok == Tok::Keyword(kw) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn expect_keyword(&mut self, kw: Keyword) -> Result<(), SqlError> {
        if self.eat_keyword(kw) {
            Ok(())
        } else {
            Err(self.error(kw.as_str()))
        }
    }

    fn ident(&mut self, what: &str) -> Result<String, SqlError> {
        match &self.peek().tok {
            Tok::Ident(name) => {
                let name = name.clone();
                self.bump();
                Ok(name)
            }
            _ => Err(self.error(what)),
        }
    }

    fn expect_eof(&self) -> Result<(), SqlError> {
        match self.peek().tok {
            Tok::Eof => Ok(()),
            _ => Err(self.error("end of query")),
        }
    }

    fn query(&mut self) -> Result<QueryAst, SqlError> {
        self.expect_keyword(Keyword::Select)?;
        let projection = self.projection()?;
        self.expect_keyword(Keyword::From)?;
        let table = self.ident("table name")?;

        let filter = if self.eat_keyword(Keyword::Where) {
            Some(self.or_expr()?)
        } else {
            None
        };

        let order_by = if self.eat_keyword(Keyword::Order) {
            self.expect_keyword(Keyword::By)?;
            let column = self.ident("column name")?;
            let direction = if self.eat_keyword(Keyword::Desc) {
                Direction::Desc
            } else {
                self.eat_keyword(Keyword::Asc);
                Direction::Asc
            };
            Some(OrderBy { column, direction })
        } else {
            None
        };

        let limit = if self.eat_keyword(Keyword::Limit) {
            match self.peek().tok {
                Tok::Int(n) if n >= 0 => {
                    self.bump();
                    Some(n as u64)
                }
                _ => return Err(self.error("non-negative integer")),
            }
        } else {
            None
        };

        Ok(QueryAst {
            projection,
            table,
            filter,
            order_by,
            limit,
        })
    }

    fn projection(&mut self) -> Result<Projection, SqlError> {
        if self.peek().tok == Tok::Star {
            self.bump();
            return Ok(Projection::All);
        }
        let mut cols = Vec::new();
        loop {
            let offset = self.peek().offset;
            let name = self.ident("column name or '*'")?;
            if cols.contains(&name) {
                return Err(SqlError::Syntax {
                    offset,
                    expected: "distinct column name".into(),
                    found: format!("duplicate {name:?}"),
                });
            }
            cols.push(name);
            if self.peek().tok != Tok::Comma {
                break;
            }
            self.bump();
        }
        Ok(Projection::Columns(cols))
    }

    fn or_expr(&mut self) -> Result<Predicate, SqlError> {
        let mut lhs = self.and_expr()?;
        while self.eat_keyword(Keyword::Or) {
            lhs = lhs.or(self.and_expr()?);
        }
        Ok(lhs)
    }

    fn and_expr(&mut self) -> Result<Predicate, SqlError> {
        let mut lhs = self.atom()?;
        while self.eat_keyword(Keyword::And) {
            lhs = lhs.and(self.atom()?);
        }
        Ok(lhs)
    }

    fn atom(&mut self) -> Result<Predicate, SqlError> {
        if self.peek().tok == Tok::LParen {
            self.bump();
            let inner = self.or_expr()?;
            if self.peek().tok != Tok::RParen {
                return Err(self.error("')'"));
            }
            self.bump();
            return Ok(inner.paren());
        }
        let column = self.ident("column name or '('")?;
        let op = match self.peek().tok {
            Tok::Op(op) => {
                self.bump();
                op
            }
            _ => return Err(self.error("comparison operator")),
        };
        let literal = match &self.peek().tok {
            Tok::Int(v) => Value::Int64(*v),
            Tok::Float(v) => Value::Float64(*v),
            Tok::Str(s) => Value::Text(s.clone()),
            Tok::Hex(b) => Value::Bytes(b.clone()),
            _ => return Err(self.error("literal")),
        };
        self.bump();
        Ok(Predicate::compare(column, op, literal))
    }
}
