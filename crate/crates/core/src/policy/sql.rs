//! Leading-verb classification of SQL statements.

/// Returns the statement's first keyword, uppercased, after skipping
/// whitespace, `-- line` comments and `/* block */` comments. Statements that
/// do not start with a keyword classify as `UNKNOWN`.
pub fn classify_sql(statement: &str) -> String {
    let rest = skip_trivia(statement);
    let word: String = rest
        .chars()
        .take_while(|c| c.is_ascii_alphabetic() || *c == '_')
        .collect();
    if word.is_empty() {
        "UNKNOWN".to_string()
    } else {
        word.to_ascii_uppercase()
    }
}

fn skip_trivia(mut s: &str) -> &str {
    loop {
        s = s.trim_start();
        if let Some(after) = s.strip_prefix("--") {
            s = match after.find('\n') {
                Some(i) => &after[i + 1..],
                None => "",
            };
        } else if let Some(after) = s.strip_prefix("/*") {
            s = match after.find("*/") {
                Some(i) => &after[i + 2..],
                // unterminated comment swallows the statement
                None => "",
            };
        } else {
            return s;
        }
    }
}
