//! Streaming reader for MediaWiki SQL dumps.
//!
//! Dumps are mysqldump output: DDL, comments, and huge multi-row
//! `INSERT INTO ... VALUES (...),(...);` statements. Rows are yielded one
//! at a time, so memory stays bounded by the largest single row.

use std::io::{self, BufRead};

#[derive(Debug, Clone, PartialEq)]
pub enum SqlValue {
    Null,
    Int(i64),
    Float(f64),
    Str(String),
}

impl SqlValue {
    pub fn as_int(&self) -> Option<i64> {
        match self {
            SqlValue::Int(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            SqlValue::Str(s) => Some(s),
            _ => None,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SqlDumpError {
    #[error("I/O error reading SQL dump: {0}")]
    Io(#[from] io::Error),
    #[error("SQL syntax error at byte {offset}: {message}")]
    Syntax { offset: u64, message: String },
    #[error("SQL dump truncated inside a statement at byte {offset}")]
    Truncated { offset: u64 },
}

/// One tuple of an `INSERT` statement.
#[derive(Debug, Clone, PartialEq)]
pub struct SqlRow {
    pub table: String,
    pub values: Vec<SqlValue>,
}

struct Bytes<R> {
    inner: R,
    offset: u64,
}

impl<R: BufRead> Bytes<R> {
    fn peek(&mut self) -> io::Result<Option<u8>> {
        Ok(self.inner.fill_buf()?.first().copied())
    }

    fn bump(&mut self) -> io::Result<Option<u8>> {
        let b = self.peek()?;
        if b.is_some() {
            self.inner.consume(1);
            self.offset += 1;
        }
        Ok(b)
    }

    fn skip_ws(&mut self) -> io::Result<()> {
        while let Some(b) = self.peek()? {
            if !b.is_ascii_whitespace() {
                break;
            }
            self.bump()?;
        }
        Ok(())
    }
}

/// Iterator over every row of every `INSERT` statement in a dump.
pub struct SqlInsertReader<R> {
    bytes: Bytes<R>,
    current_table: Option<String>,
}

impl<R: BufRead> SqlInsertReader<R> {
    pub fn new(reader: R) -> Self {
        SqlInsertReader {
            bytes: Bytes {
                inner: reader,
                offset: 0,
            },
            current_table: None,
        }
    }

    fn syntax(&self, message: impl Into<String>) -> SqlDumpError {
        SqlDumpError::Syntax {
            offset: self.bytes.offset,
            message: message.into(),
        }
    }

    fn truncated(&self) -> SqlDumpError {
        SqlDumpError::Truncated {
            offset: self.bytes.offset,
        }
    }

    fn expect_byte(&mut self) -> Result<u8, SqlDumpError> {
        self.bytes.bump()?.ok_or_else(|| self.truncated())
    }

    /// Reads a bare word (letters, digits, underscores).
    fn word(&mut self) -> Result<String, SqlDumpError> {
        let mut out = String::new();
        while let Some(b) = self.bytes.peek()? {
            if b.is_ascii_alphanumeric() || b == b'_' {
                out.push(b as char);
                self.bytes.bump()?;
            } else {
                break;
            }
        }
        Ok(out)
    }

    /// Skips a statement that is not an INSERT, honoring quotes and comments.
    fn skip_statement(&mut self) -> Result<(), SqlDumpError> {
        let mut quote: Option<u8> = None;
        loop {
            let Some(b) = self.bytes.bump()? else {
                return Ok(());
            };
            match quote {
                Some(q) => {
                    if b == b'\\' {
                        self.bytes.bump()?;
                    } else if b == q {
                        quote = None;
                    }
                }
                None => match b {
                    b'\'' | b'"' | b'`' => quote = Some(b),
                    b';' => return Ok(()),
                    _ => {}
                },
            }
        }
    }

    fn skip_line(&mut self) -> io::Result<()> {
        while let Some(b) = self.bytes.bump()? {
            if b == b'\n' {
                break;
            }
        }
        Ok(())
    }

    fn skip_block_comment(&mut self) -> Result<(), SqlDumpError> {
        let mut prev = 0u8;
        loop {
            let b = self.bytes.bump()?.ok_or_else(|| self.truncated())?;
            if prev == b'*' && b == b'/' {
                break;
            }
            prev = b;
        }
        // Conditional comments (`/*!40101 ... */;`) carry their own terminator.
        self.bytes.skip_ws()?;
        if self.bytes.peek()? == Some(b';') {
            self.bytes.bump()?;
        }
        Ok(())
    }

    /// Advances to the first tuple of the next INSERT statement.
    fn seek_insert(&mut self) -> Result<bool, SqlDumpError> {
        loop {
            self.bytes.skip_ws()?;
            let Some(b) = self.bytes.peek()? else {
                return Ok(false);
            };
            match b {
                b'-' => {
                    self.skip_line()?;
                    continue;
                }
                b'#' => {
                    self.skip_line()?;
                    continue;
                }
                b'/' => {
                    self.bytes.bump()?;
                    if self.bytes.peek()? == Some(b'*') {
                        self.bytes.bump()?;
                        self.skip_block_comment()?;
                    } else {
                        self.skip_statement()?;
                    }
                    continue;
                }
                _ => {}
            }
            let keyword = self.word()?;
            if !keyword.eq_ignore_ascii_case("INSERT") {
                if keyword.is_empty() {
                    self.bytes.bump()?;
                }
                self.skip_statement()?;
                continue;
            }
            self.bytes.skip_ws()?;
            let mut into = self.word()?;
            if into.eq_ignore_ascii_case("IGNORE") {
                self.bytes.skip_ws()?;
                into = self.word()?;
            }
            if !into.eq_ignore_ascii_case("INTO") {
                return Err(self.syntax("expected INTO after INSERT"));
            }
            self.bytes.skip_ws()?;
            let table = self.identifier()?;
            self.bytes.skip_ws()?;
            if self.bytes.peek()? == Some(b'(') {
                self.skip_parenthesized()?;
                self.bytes.skip_ws()?;
            }
            let values = self.word()?;
            if !values.eq_ignore_ascii_case("VALUES") {
                return Err(self.syntax("expected VALUES"));
            }
            self.current_table = Some(table);
            return Ok(true);
        }
    }

    fn identifier(&mut self) -> Result<String, SqlDumpError> {
        if self.bytes.peek()? == Some(b'`') {
            self.bytes.bump()?;
            let mut raw = Vec::new();
            loop {
                let b = self.expect_byte()?;
                if b == b'`' {
                    break;
                }
                raw.push(b);
            }
            Ok(String::from_utf8_lossy(&raw).into_owned())
        } else {
            let w = self.word()?;
            if w.is_empty() {
                return Err(self.syntax("expected table name"));
            }
            Ok(w)
        }
    }

    fn skip_parenthesized(&mut self) -> Result<(), SqlDumpError> {
        let mut depth = 0usize;
        loop {
            match self.expect_byte()? {
                b'(' => depth += 1,
                b')' => {
                    depth -= 1;
                    if depth == 0 {
                        return Ok(());
                    }
                }
                b'`' => while self.expect_byte()? != b'`' {},
                _ => {}
            }
        }
    }

    fn quoted(&mut self) -> Result<String, SqlDumpError> {
        let quote = self.expect_byte()?;
        let mut raw = Vec::new();
        loop {
            let b = self.expect_byte()?;
            if b == b'\\' {
                let escaped = self.expect_byte()?;
                raw.push(match escaped {
                    b'0' => 0,
                    b'n' => b'\n',
                    b'r' => b'\r',
                    b't' => b'\t',
                    b'Z' => 0x1a,
                    b'b' => 0x08,
                    other => other,
                });
            } else if b == quote {
                if self.bytes.peek()? == Some(quote) {
                    self.bytes.bump()?;
                    raw.push(quote);
                } else {
                    break;
                }
            } else {
                raw.push(b);
            }
        }
        Ok(String::from_utf8_lossy(&raw).into_owned())
    }

    fn value(&mut self) -> Result<SqlValue, SqlDumpError> {
        self.bytes.skip_ws()?;
        match self.bytes.peek()?.ok_or_else(|| self.truncated())? {
            b'\'' | b'"' => Ok(SqlValue::Str(self.quoted()?)),
            _ => {
                let mut raw = String::new();
                while let Some(b) = self.bytes.peek()? {
                    if b == b',' || b == b')' || b.is_ascii_whitespace() {
                        break;
                    }
                    raw.push(b as char);
                    self.bytes.bump()?;
                }
                if raw.is_empty() {
                    return Err(self.syntax("empty value"));
                }
                if raw.eq_ignore_ascii_case("NULL") {
                    Ok(SqlValue::Null)
                } else if let Ok(v) = raw.parse::<i64>() {
                    Ok(SqlValue::Int(v))
                } else if let Ok(v) = raw.parse::<f64>() {
                    Ok(SqlValue::Float(v))
                } else {
                    Err(self.syntax(format!("unrecognized value {raw:?}")))
                }
            }
        }
    }

    fn tuple(&mut self) -> Result<Vec<SqlValue>, SqlDumpError> {
        self.bytes.skip_ws()?;
        if self.expect_byte()? != b'(' {
            return Err(self.syntax("expected '('"));
        }
        let mut values = Vec::new();
        loop {
            values.push(self.value()?);
            self.bytes.skip_ws()?;
            match self.expect_byte()? {
                b',' => continue,
                b')' => return Ok(values),
                other => return Err(self.syntax(format!("unexpected {:?} in tuple", other as char))),
            }
        }
    }

    fn next_row(&mut self) -> Result<Option<SqlRow>, SqlDumpError> {
        if self.current_table.is_none() && !self.seek_insert()? {
            return Ok(None);
        }
        let values = self.tuple()?;
        let table = self.current_table.clone().expect("inside an insert");
        self.bytes.skip_ws()?;
        match self.expect_byte()? {
            b',' => {}
            b';' => self.current_table = None,
            other => return Err(self.syntax(format!("unexpected {:?} after tuple", other as char))),
        }
        Ok(Some(SqlRow { table, values }))
    }
}

impl<R: BufRead> Iterator for SqlInsertReader<R> {
    type Item = Result<SqlRow, SqlDumpError>;

    fn next(&mut self) -> Option<Self::Item> {
        self.next_row().transpose()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rows(text: &str) -> Result<Vec<SqlRow>, SqlDumpError> {
        SqlInsertReader::new(text.as_bytes()).collect()
    }

    #[test]
    fn reads_multi_row_inserts() {
        let dump = "-- MySQL dump\n/*!40101 SET NAMES binary*/;\nDROP TABLE IF EXISTS `page`;\n\
            CREATE TABLE `page` (\n  `page_id` int(8) NOT NULL,\n  `x` varchar(3) DEFAULT 'a;b'\n);\n\
            INSERT INTO `page` VALUES (1,0,'A_b',NULL,0.5),(2,14,'C\\'s',1,2);\n\
            INSERT INTO `page` (`page_id`) VALUES (3);\n";
        let rows = rows(dump).unwrap();
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[0].table, "page");
        assert_eq!(
            rows[0].values,
            vec![
                SqlValue::Int(1),
                SqlValue::Int(0),
                SqlValue::Str("A_b".into()),
                SqlValue::Null,
                SqlValue::Float(0.5)
            ]
        );
        assert_eq!(rows[1].values[2], SqlValue::Str("C's".into()));
        assert_eq!(rows[2].values, vec![SqlValue::Int(3)]);
    }

    #[test]
    fn escapes_and_separators_in_strings() {
        let rows = rows(r"INSERT INTO t VALUES ('a,b)\\',' x\n');").unwrap();
        assert_eq!(rows[0].values[0], SqlValue::Str("a,b)\\".into()));
        assert_eq!(rows[0].values[1], SqlValue::Str(" x\n".into()));
    }

    #[test]
    fn empty_input() {
        assert!(rows("").unwrap().is_empty());
    }

    #[test]
    fn truncated_statement_reports_offset() {
        let err = rows("INSERT INTO `page` VALUES (1,0,'abc").unwrap_err();
        match err {
            SqlDumpError::Truncated { offset } => assert_eq!(offset, 35),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            rows("INSERT INTO `page` VALUES (1,0),"),
            Err(SqlDumpError::Truncated { .. })
        ));
    }
}
