//! Path and domain globs used by policy rules.
//!
//! Path patterns are anchored at the filesystem root (`/...`), the user's
//! home (`~/...`), the active workspace (`${workspace}/...`) or nowhere
//! (`**/...`). The anchor is compared as a literal directory prefix and only
//! the remainder goes through the glob, so a workspace path containing glob
//! metacharacters still matches literally.

use globset::{GlobBuilder, GlobMatcher};

const WORKSPACE_VAR: &str = "${workspace}";

#[derive(Debug, Clone)]
enum Anchor {
    /// Literal directory prefix fixed at parse time (root or home).
    Fixed(String),
    Workspace,
}

#[derive(Debug, Clone)]
pub struct PathPattern {
    raw: String,
    anchor: Anchor,
    tail: Option<GlobMatcher>,
}

impl PathPattern {
    pub fn parse(raw: &str, home: &str) -> Result<Self, String> {
        if let Some(pos) = raw.find("${") {
            let at_start = pos == 0 && raw.starts_with(WORKSPACE_VAR);
            if !at_start || raw[WORKSPACE_VAR.len()..].contains("${") {
                return Err(format!(
                    "path pattern `{raw}`: only a leading `{WORKSPACE_VAR}` substitution is supported"
                ));
            }
        }
        let (anchor, tail) = if let Some(rest) = raw.strip_prefix(WORKSPACE_VAR) {
            (Anchor::Workspace, rest)
        } else if raw == "~" || raw.starts_with("~/") {
            if !home.starts_with('/') {
                return Err(format!(
                    "path pattern `{raw}`: home directory is not absolute"
                ));
            }
            (Anchor::Fixed(dir_prefix(home)), &raw[1..])
        } else if raw.starts_with('/') || raw.starts_with("**") {
            (Anchor::Fixed(String::new()), raw)
        } else {
            return Err(format!(
                "path pattern `{raw}` must start with `/`, `~/`, `{WORKSPACE_VAR}` or `**`"
            ));
        };
        if !tail.is_empty() && !tail.starts_with('/') && !raw.starts_with("**") {
            return Err(format!(
                "path pattern `{raw}`: expected `/` after the anchor"
            ));
        }
        let tail = if tail.is_empty() {
            None
        } else {
            Some(
                GlobBuilder::new(tail)
                    .literal_separator(true)
                    .backslash_escape(true)
                    .build()
                    .map_err(|e| format!("path pattern `{raw}`: {e}"))?
                    .compile_matcher(),
            )
        };
        Ok(Self {
            raw: raw.to_string(),
            anchor,
            tail,
        })
    }

    pub fn as_str(&self) -> &str {
        &self.raw
    }

    /// `path` must already be normalized.
    pub fn matches(&self, path: &str, workspace_root: &str) -> bool {
        let ws;
        let prefix = match &self.anchor {
            Anchor::Fixed(p) => p.as_str(),
            Anchor::Workspace => {
                ws = dir_prefix(workspace_root);
                ws.as_str()
            }
        };
        let Some(rest) = path.strip_prefix(prefix) else {
            return false;
        };
        match &self.tail {
            None => rest.is_empty(),
            Some(glob) => {
                (prefix.is_empty() || rest.is_empty() || rest.starts_with('/'))
                    && glob.is_match(rest)
            }
        }
    }
}

// "/" becomes "" so that the tail keeps its leading separator.
fn dir_prefix(dir: &str) -> String {
    dir.trim_end_matches('/').to_string()
}

/// Case-insensitive glob over host names; `*` spans dots.
#[derive(Debug, Clone)]
pub struct DomainPattern {
    raw: String,
    glob: GlobMatcher,
}

impl DomainPattern {
    pub fn parse(raw: &str) -> Result<Self, String> {
        if raw.is_empty() {
            return Err("destination pattern is empty".into());
        }
        let glob = GlobBuilder::new(raw)
            .literal_separator(false)
            .case_insensitive(true)
            .build()
            .map_err(|e| format!("destination pattern `{raw}`: {e}"))?
            .compile_matcher();
        Ok(Self {
            raw: raw.to_string(),
            glob,
        })
    }

    pub fn as_str(&self) -> &str {
        &self.raw
    }

    pub fn matches(&self, host: &str) -> bool {
        self.glob.is_match(host)
    }
}
