use std::path::{Path, PathBuf};

pub const HOME_ENV: &str = "AGENTWALL_HOME";
pub const POLICY_ENV: &str = "AGENTWALL_POLICY";

/// `$AGENTWALL_HOME`, else `~/.agentwall`.
pub fn agentwall_home() -> PathBuf {
    if let Some(dir) = std::env::var_os(HOME_ENV).filter(|v| !v.is_empty()) {
        return PathBuf::from(dir);
    }
    user_home().join(".agentwall")
}

pub fn user_home() -> PathBuf {
    std::env::var_os("HOME")
        .filter(|v| !v.is_empty())
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("/"))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn from_env() -> Self {
        Self::new(agentwall_home())
    }

    pub fn policy(&self) -> PathBuf {
        self.root.join("policy.yaml")
    }

    pub fn sessions(&self) -> PathBuf {
        self.root.join("sessions")
    }

    pub fn token(&self) -> PathBuf {
        self.root.join("control.token")
    }

    /// Explicit flag, then `$AGENTWALL_POLICY`, then the layout default.
    pub fn resolve_policy(&self, flag: Option<&Path>) -> PathBuf {
        if let Some(p) = flag {
            return p.to_path_buf();
        }
        match std::env::var_os(POLICY_ENV).filter(|v| !v.is_empty()) {
            Some(p) => PathBuf::from(p),
            None => self.policy(),
        }
    }
}
