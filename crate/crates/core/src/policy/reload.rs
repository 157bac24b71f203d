//! Hot reload by content hash.
//!
//! The policy file is re-read and hashed before every evaluation. A changed
//! file that parses replaces the active document; a changed file that does
//! not parse (or a missing file) leaves the active document in place and
//! yields a warning.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};

use super::{content_hash, PolicyDocument, PolicyEnv, PolicyError};

#[derive(Debug, Clone)]
pub struct ReloadOutcome {
    pub doc: Arc<PolicyDocument>,
    pub reload_detected: bool,
    pub warning: Option<String>,
}

/// Stateless reload step: compares the file's hash to `current` and parses
/// it when they differ.
pub fn reload_if_changed(
    current: &Arc<PolicyDocument>,
    file: &Path,
    env: &PolicyEnv,
) -> ReloadOutcome {
    let keep = |warning: Option<String>| ReloadOutcome {
        doc: Arc::clone(current),
        reload_detected: false,
        warning,
    };
    let bytes = match std::fs::read(file) {
        Ok(b) => b,
        Err(e) => {
            return keep(Some(format!(
                "policy file {} unreadable ({e}); keeping policy {}",
                file.display(),
                short(&current.content_hash)
            )))
        }
    };
    if content_hash(&bytes) == current.content_hash {
        return keep(None);
    }
    match PolicyDocument::parse(&bytes, env) {
        Ok(doc) => ReloadOutcome {
            doc: Arc::new(doc),
            reload_detected: true,
            warning: None,
        },
        Err(e) => keep(Some(format!(
            "policy file {} rejected, keeping policy {}: {}",
            file.display(),
            short(&current.content_hash),
            one_line(&e)
        ))),
    }
}

fn short(hash: &str) -> &str {
    &hash[..hash.len().min(12)]
}

fn one_line(e: &PolicyError) -> String {
    e.violations().join("; ")
}

/// The active policy for a running proxy.
///
/// Readers get an `Arc` snapshot; a reload swaps the pointer, so concurrent
/// evaluations see either the old or the new document in full.
#[derive(Debug)]
pub struct PolicyStore {
    path: PathBuf,
    env: PolicyEnv,
    current: RwLock<Arc<PolicyDocument>>,
    // serializes check-and-swap; also remembers the last bad content so a
    // broken file warns once rather than on every call
    last_rejected: Mutex<Option<String>>,
}

impl PolicyStore {
    pub fn open(path: impl Into<PathBuf>, env: PolicyEnv) -> Result<Self, PolicyError> {
        let path = path.into();
        let doc = PolicyDocument::load(&path, &env)?;
        Ok(Self::with_document(path, env, doc))
    }

    pub fn with_document(path: impl Into<PathBuf>, env: PolicyEnv, doc: PolicyDocument) -> Self {
        Self {
            path: path.into(),
            env,
            current: RwLock::new(Arc::new(doc)),
            last_rejected: Mutex::new(None),
        }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn env(&self) -> &PolicyEnv {
        &self.env
    }

    pub fn current(&self) -> Arc<PolicyDocument> {
        Arc::clone(&self.current.read())
    }

    pub fn reload_if_changed(&self) -> ReloadOutcome {
        let mut last_rejected = self.last_rejected.lock();
        let current = self.current();
        let mut out = reload_if_changed(&current, &self.path, &self.env);
        if out.reload_detected {
            *self.current.write() = Arc::clone(&out.doc);
            *last_rejected = None;
        } else if out.warning.is_some() {
            let key = std::fs::read(&self.path)
                .map(|b| content_hash(&b))
                .unwrap_or_else(|_| "<missing>".to_string());
            if last_rejected.as_deref() == Some(key.as_str()) {
                out.warning = None;
            } else {
                *last_rejected = Some(key);
            }
        } else {
            *last_rejected = None;
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::DEFAULT_POLICY_YAML;

    fn env() -> PolicyEnv {
        PolicyEnv::new("/Users/a")
    }

    #[test]
    fn unchanged_file_is_identity() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("policy.yaml");
        std::fs::write(&p, DEFAULT_POLICY_YAML).unwrap();
        let store = PolicyStore::open(&p, env()).unwrap();
        let before = store.current();
        let out = store.reload_if_changed();
        assert!(!out.reload_detected);
        assert!(out.warning.is_none());
        assert!(Arc::ptr_eq(&before, &out.doc));
    }

    #[test]
    fn valid_change_swaps_document() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("policy.yaml");
        std::fs::write(&p, "version: 1\n").unwrap();
        let store = PolicyStore::open(&p, env()).unwrap();
        std::fs::write(&p, DEFAULT_POLICY_YAML).unwrap();
        let out = store.reload_if_changed();
        assert!(out.reload_detected);
        assert_eq!(store.current().rules.len(), 14);
        assert!(!store.reload_if_changed().reload_detected);
    }

    #[test]
    fn invalid_change_keeps_old_and_warns_once() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("policy.yaml");
        std::fs::write(&p, DEFAULT_POLICY_YAML).unwrap();
        let store = PolicyStore::open(&p, env()).unwrap();
        let hash = store.current().content_hash.clone();
        std::fs::write(&p, &DEFAULT_POLICY_YAML[..DEFAULT_POLICY_YAML.len() / 2]).unwrap();
        let out = store.reload_if_changed();
        assert!(!out.reload_detected);
        assert!(out.warning.is_some());
        assert_eq!(out.doc.content_hash, hash);
        assert!(store.reload_if_changed().warning.is_none());

        std::fs::remove_file(&p).unwrap();
        let out = store.reload_if_changed();
        assert!(out.warning.unwrap().contains("unreadable"));
        assert_eq!(store.current().content_hash, hash);
    }
}
