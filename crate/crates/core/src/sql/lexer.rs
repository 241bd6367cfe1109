use super::SqlError;
use super::ast::CmpOp;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Keyword {
    Select,
    From,
    Where,
    Order,
    By,
    Asc,
    Desc,
    Limit,
    And,
    Or,
}

impl Keyword {
    fn lookup(word: &str) -> Option<Keyword> {
        const TABLE: [(&str, Keyword); 10] = [
            ("SELECT", Keyword::Select),
            ("FROM", Keyword::From),
            ("WHERE", Keyword::Where),
            ("ORDER", Keyword::Order),
            ("BY", Keyword::By),
            ("ASC", Keyword::Asc),
            ("DESC", Keyword::Desc),
            ("LIMIT", Keyword::Limit),
            ("AND", Keyword::And),
            ("OR", Keyword::Or),
        ];
        TABLE
            .iter()
            .find(|(k, _)| k.eq_ignore_ascii_case(word))
            .map(|(_, kw)| *kw)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Keyword::Select => "SELECT",
            Keyword::From => "FROM",
            Keyword::Where => "WHERE",
            Keyword::Order => "ORDER",
            Keyword::By => "BY",
            Keyword::Asc => "ASC",
            Keyword::Desc => "DESC",
            Keyword::Limit => "LIMIT",
            Keyword::And => "AND",
            Keyword::Or => "OR",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Tok {
    Keyword(Keyword),
    Ident(String),
    Int(i64),
    Float(f64),
    Str(String),
    Hex(Vec<u8>),
    Comma,
    Star,
    LParen,
    RParen,
    Op(CmpOp),
    Eof,
}

impl Tok {
    pub fn describe(&self) -> String {
        match self {
            Tok::Keyword(k) => k.as_str().to_string(),
            Tok::Ident(s) => format!("identifier {s:?}"),
            Tok::Int(v) => format!("integer {v}"),
            Tok::Float(v) => format!("number {v}"),
            Tok::Str(_) => "string literal".to_string(),
            Tok::Hex(_) => "hex literal".to_string(),
            Tok::Comma => "','".to_string(),
            Tok::Star => "'*'".to_string(),
            Tok::LParen => "'('".to_string(),
            Tok::RParen => "')'".to_string(),
            Tok::Op(op) => format!("'{}'", op.symbol()),
            Tok::Eof => "end of input".to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Token {
    pub tok: Tok,
    pub offset: usize,
}

pub fn tokenize(sql: &str) -> Result<Vec<Token>, SqlError> {
    let bytes = sql.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    let err = |offset: usize, expected: &str, found: &str| SqlError::Syntax {
        offset,
        expected: expected.to_string(),
        found: found.to_string(),
    };

    while i < bytes.len() {
        let c = bytes[i];
        let start = i;
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        let tok = match c {
            b',' => {
                i += 1;
                Tok::Comma
            }
            b'*' => {
                i += 1;
                Tok::Star
            }
            b'(' => {
                i += 1;
                Tok::LParen
            }
            b')' => {
                i += 1;
                Tok::RParen
            }
            b'=' => {
                i += if bytes.get(i + 1) == Some(&b'=') { 2 } else { 1 };
                Tok::Op(CmpOp::Eq)
            }
            b'!' => {
                if bytes.get(i + 1) != Some(&b'=') {
                    return Err(err(i, "'!='", "'!'"));
                }
                i += 2;
                Tok::Op(CmpOp::Ne)
            }
            b'<' => match bytes.get(i + 1) {
                Some(b'=') => {
                    i += 2;
                    Tok::Op(CmpOp::Le)
                }
                Some(b'>') => {
                    i += 2;
                    Tok::Op(CmpOp::Ne)
                }
                _ => {
                    i += 1;
                    Tok::Op(CmpOp::Lt)
                }
            },
            b'>' => {
                if bytes.get(i + 1) == Some(&b'=') {
                    i += 2;
                    Tok::Op(CmpOp::Ge)
                } else {
                    i += 1;
                    Tok::Op(CmpOp::Gt)
                }
            }
            b'\'' => {
                let (s, next) = lex_string(sql, i)?;
                i = next;
                Tok::Str(s)
            }
            b'x' | b'X' if bytes.get(i + 1) == Some(&b'\'') => {
                let (s, next) = lex_string(sql, i + 1)?;
                let decoded = hex::decode(&s).map_err(|_| err(i, "hex digits", "invalid hex literal"))?;
                i = next;
                Tok::Hex(decoded)
            }
            b'-' | b'0'..=b'9' | b'.' => {
                let (tok, next) = lex_number(sql, i)?;
                i = next;
                tok
            }
            c if c.is_ascii_alphabetic() || c == b'_' => {
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                let word = &sql[start..i];
                match Keyword::lookup(word) {
                    Some(kw) => Tok::Keyword(kw),
                    None => Tok::Ident(word.to_string()),
                }
            }
            _ => {
                let ch = sql[i..].chars().next().unwrap_or('?');
                return Err(err(i, "token", &format!("{ch:?}")));
            }
        };
        out.push(Token { tok, offset: start });
    }
    out.push(Token {
        tok: Tok::Eof,
        offset: sql.len(),
    });
    Ok(out)
}

/// Lex a single-quoted literal starting at `quote`; `''` escapes a quote.
fn lex_string(sql: &str, quote: usize) -> Result<(String, usize), SqlError> {
    let bytes = sql.as_bytes();
    let mut out = String::new();
    let mut i = quote + 1;
    let mut run_start = i;
    loop {
        match bytes.get(i) {
            None => {
                return Err(SqlError::Syntax {
                    offset: quote,
                    expected: "closing quote".into(),
                    found: "end of input".into(),
                })
            }
            Some(b'\'') if bytes.get(i + 1) == Some(&b'\'') => {
                out.push_str(&sql[run_start..=i]);
                i += 2;
                run_start = i;
            }
            Some(b'\'') => {
                out.push_str(&sql[run_start..i]);
                return Ok((out, i + 1));
            }
            Some(_) => i += 1,
        }
    }
}

fn lex_number(sql: &str, start: usize) -> Result<(Tok, usize), SqlError> {
    let bytes = sql.as_bytes();
    let mut i = start;
    if bytes[i] == b'-' {
        i += 1;
    }
    let digits_start = i;
    while i < bytes.len() && bytes[i].is_ascii_digit() {
        i += 1;
    }
    let mut is_float = false;
    if i < bytes.len() && bytes[i] == b'.' {
        is_float = true;
        i += 1;
        while i < bytes.len() && bytes[i].is_ascii_digit() {
            i += 1;
        }
    }
    if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
        let mut j = i + 1;
        if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
            j += 1;
        }
        if j < bytes.len() && bytes[j].is_ascii_digit() {
            is_float = true;
            i = j;
            while i < bytes.len() && bytes[i].is_ascii_digit() {
                i += 1;
            }
        }
    }
    let text = &sql[start..i];
    let bad = || SqlError::Syntax {
        offset: start,
        expected: "number".into(),
        found: format!("{text:?}"),
    };
    if !text[digits_start - start..].starts_with(|c: char| c.is_ascii_digit() || c == '.')
        || !text.bytes().any(|b| b.is_ascii_digit())
    {
        return Err(bad());
    }
    let tok = if is_float {
        let v: f64 = text.parse().map_err(|_| bad())?;
        if !v.is_finite() {
            return Err(bad());
        }
        Tok::Float(v)
    } else {
        Tok::Int(text.parse().map_err(|_| bad())?)
    };
    Ok((tok, i))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(sql: &str) -> Vec<Tok> {
        tokenize(sql).unwrap().into_iter().map(|t| t.tok).collect()
    }

    #[test]
    fn operators_and_aliases() {
        assert_eq!(
            toks("= == != <> < <= > >="),
            vec![
                Tok::Op(CmpOp::Eq),
                Tok::Op(CmpOp::Eq),
                Tok::Op(CmpOp::Ne),
                Tok::Op(CmpOp::Ne),
                Tok::Op(CmpOp::Lt),
                Tok::Op(CmpOp::Le),
                Tok::Op(CmpOp::Gt),
                Tok::Op(CmpOp::Ge),
                Tok::Eof
            ]
        );
    }

    #[test]
    fn literals() {
        assert_eq!(
            toks("'it''s' x'0aff' -12 3.5 1e3 -9223372036854775808"),
            vec![
                Tok::Str("it's".into()),
                Tok::Hex(vec![0x0a, 0xff]),
                Tok::Int(-12),
                Tok::Float(3.5),
                Tok::Float(1000.0),
                Tok::Int(i64::MIN),
                Tok::Eof
            ]
        );
    }

    #[test]
    fn keywords_are_case_insensitive() {
        assert_eq!(
            toks("select From xs"),
            vec![
                Tok::Keyword(Keyword::Select),
                Tok::Keyword(Keyword::From),
                Tok::Ident("xs".into()),
                Tok::Eof
            ]
        );
    }

    #[test]
    fn errors_carry_offsets() {
        match tokenize("SELECT a FROM t WHERE a = 'open") {
            Err(SqlError::Syntax { offset, .. }) => assert_eq!(offset, 26),
            other => panic!("{other:?}"),
        }
        assert!(matches!(tokenize("a ! b"), Err(SqlError::Syntax { offset: 2, .. })));
        assert!(matches!(tokenize("99999999999999999999"), Err(SqlError::Syntax { offset: 0, .. })));
        assert!(matches!(tokenize("-"), Err(SqlError::Syntax { .. })));
    }
}
