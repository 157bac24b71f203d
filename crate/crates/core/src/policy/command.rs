//! Token-prefix matching of shell commands.
//!
//! A pattern and a command are both split on whitespace. Each pattern token
//! must be a string prefix of the command token in the same position, a `*`
//! token matches any single token, and a trailing `*` matches whatever
//! remains (including nothing). Extra command tokens after the pattern are
//! accepted.
//!
//! Prefix matching means `rm -rf /` also matches `rm -rf /tmp/test`. Rules
//! that want the last literal token compared whole set `exact_path: true`.

/// Matches with prefix semantics on every token.
pub fn match_command(pattern: &str, command: &str) -> bool {
    match_command_with(pattern, command, false)
}

/// Like [`match_command`], but when `exact_final` is set the last literal
/// pattern token must equal its command token.
pub fn match_command_with(pattern: &str, command: &str, exact_final: bool) -> bool {
    let pat: Vec<&str> = pattern.split_whitespace().collect();
    if pat.is_empty() {
        return false;
    }
    let fixed = match pat.split_last() {
        Some((&"*", rest)) => rest,
        _ => &pat[..],
    };
    let last_literal = fixed.iter().rposition(|t| *t != "*");
    let mut cmd = command.split_whitespace();
    for (i, want) in fixed.iter().enumerate() {
        let Some(got) = cmd.next() else {
            return false;
        };
        if *want == "*" {
            continue;
        }
        let ok = if exact_final && Some(i) == last_literal {
            got == *want
        } else {
            got.starts_with(want)
        };
        if !ok {
            return false;
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn root_prefix_matches_tmp_path() {
        assert!(match_command("rm -rf /", "rm -rf /tmp/test"));
        assert!(match_command("rm -rf /", "rm -rf /"));
        assert!(match_command("rm -rf /", "rm  -rf   / --no-preserve-root"));
    }

    #[test]
    fn trailing_star() {
        assert!(match_command("sudo *", "sudo apt-get install x"));
        assert!(match_command("ls *", "ls"));
        assert!(match_command("ls *", "ls -la /tmp"));
        assert!(!match_command("sudo *", "echo sudo"));
    }

    #[test]
    fn too_few_tokens() {
        assert!(!match_command("rm -rf /", "rm -rf"));
        assert!(!match_command("git status", "git"));
        assert!(!match_command("rm -rf /", ""));
    }

    #[test]
    fn inner_star_is_one_token() {
        assert!(match_command("git * --force", "git push --force"));
        assert!(!match_command("git * --force", "git push"));
    }

    #[test]
    fn exact_final_token() {
        assert!(!match_command_with("rm -rf /", "rm -rf /tmp/test", true));
        assert!(match_command_with("rm -rf /", "rm -rf /", true));
        assert!(match_command_with(
            "rm -rf /",
            "rm -rf / --no-preserve-root",
            true
        ));
        // with a trailing star the last literal token is the one compared whole
        assert!(match_command_with("git diff *", "git diff HEAD", true));
        assert!(!match_command_with("git diff *", "git difftool HEAD", true));
        assert!(match_command("git diff *", "git difftool HEAD"));
    }

    #[test]
    fn empty_pattern_never_matches() {
        assert!(!match_command("", "ls"));
        assert!(!match_command("   ", "ls"));
    }
}
