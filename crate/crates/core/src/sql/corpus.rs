//! Query corpus files: one query per line, `#` starts a comment line.
//!
//! A comment of the form `# expect: <outcome>` annotates the query that
//! follows it. Golden tests compare the outcome against the rendered error
//! (`UnknownColumn(data)`) or `ok`.

/// The corpus of queries quoted by the reference dataflows.
pub const REFERENCE_QUERIES: &str = include_str!("../../corpus/reference_queries.sql");

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusEntry {
    /// 1-based line number in the corpus file.
    pub line: usize,
    pub sql: String,
    pub expect: Option<String>,
}

pub fn load(text: &str) -> Vec<CorpusEntry> {
    let mut out = Vec::new();
    let mut pending_expect = None;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            if let Some(outcome) = comment.trim().strip_prefix("expect:") {
                pending_expect = Some(outcome.trim().to_string());
            }
            continue;
        }
        out.push(CorpusEntry {
            line: i + 1,
            sql: line.to_string(),
            expect: pending_expect.take(),
        });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn comments_and_directives() {
        let entries = load("# header\n\nSELECT a FROM T\n# expect: UnknownTable(U)\nSELECT a FROM U\n");
        assert_eq!(
            entries,
            vec![
                CorpusEntry {
                    line: 3,
                    sql: "SELECT a FROM T".into(),
                    expect: None
                },
                CorpusEntry {
                    line: 5,
                    sql: "SELECT a FROM U".into(),
                    expect: Some("UnknownTable(U)".into())
                },
            ]
        );
    }

    #[test]
    fn bundled_corpus_loads() {
        assert_eq!(load(REFERENCE_QUERIES).len(), 10);
    }
}
