//! Peer configuration: the JSON file a node reads at startup, plus
//! environment overrides.

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{NodeError, NodeResult};
use crate::seal::{IdentityKey, IdentityKeyJson};

pub const DEFAULT_TIMEOUT_SECS: u64 = 30;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NeighborEntry {
    pub id: String,
    pub addr: String,
}

/// On-disk node configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PeerConfigFile {
    pub node_id: String,
    pub listen: String,
    pub neighbors: Vec<NeighborEntry>,
    pub data_dir: String,
    pub identity_key_path: String,
}

/// Loaded, validated runtime configuration.
#[derive(Debug, Clone)]
pub struct PeerConfig {
    pub node_id: String,
    pub listen: String,
    pub neighbors: Vec<NeighborEntry>,
    pub data_dir: PathBuf,
    pub identity: IdentityKey,
    /// Submission-window / fetch deadline (CNL_TIMEOUT_SECS overrides).
    pub timeout: Duration,
    /// Record every frame for instrumentation-based tests.
    pub record_frames: bool,
}

impl PeerConfig {
    pub fn from_file(path: &Path) -> NodeResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| NodeError::Config(format!("read {}: {}", path.display(), e)))?;
        let file: PeerConfigFile = serde_json::from_str(&text)
            .map_err(|e| NodeError::Config(format!("parse {}: {}", path.display(), e)))?;
        let key_path = Path::new(&file.identity_key_path);
        let key_path = if key_path.is_relative() {
            path.parent().unwrap_or(Path::new(".")).join(key_path)
        } else {
            key_path.to_path_buf()
        };
        let key_text = std::fs::read_to_string(&key_path)
            .map_err(|e| NodeError::Config(format!("read {}: {}", key_path.display(), e)))?;
        let key_json: IdentityKeyJson = serde_json::from_str(&key_text)
            .map_err(|e| NodeError::Config(format!("parse identity key: {}", e)))?;
        let identity = IdentityKey::from_json(&key_json)?;
        Self::assemble(file, identity)
    }

    pub fn assemble(file: PeerConfigFile, identity: IdentityKey) -> NodeResult<Self> {
        if file.node_id.is_empty() {
            return Err(NodeError::Config("node_id must be non-empty".into()));
        }
        let mut ids: Vec<&str> = file.neighbors.iter().map(|n| n.id.as_str()).collect();
        ids.sort_unstable();
        ids.dedup();
        if ids.len() != file.neighbors.len() {
            return Err(NodeError::Config("duplicate neighbor ids".into()));
        }
        if file.neighbors.iter().any(|n| n.id == file.node_id) {
            return Err(NodeError::Config("a node cannot neighbor itself".into()));
        }
        Ok(PeerConfig {
            node_id: file.node_id,
            listen: file.listen,
            neighbors: file.neighbors,
            data_dir: PathBuf::from(file.data_dir),
            identity,
            timeout: env_timeout(),
            record_frames: false,
        })
    }
}

/// CNL_TIMEOUT_SECS override with a 30s default.
pub fn env_timeout() -> Duration {
    let secs = std::env::var("CNL_TIMEOUT_SECS")
        .ok()
        .and_then(|v| v.parse::<u64>().ok())
        .unwrap_or(DEFAULT_TIMEOUT_SECS);
    Duration::from_secs(secs.max(1))
}

/// CNL_HE_COUNT override applied to a task's he_agency_count.
pub fn env_he_count(task_default: usize) -> usize {
    std::env::var("CNL_HE_COUNT")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .unwrap_or(task_default)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn file() -> PeerConfigFile {
        PeerConfigFile {
            node_id: "agency-0".into(),
            listen: "127.0.0.1:4600".into(),
            neighbors: vec![
                NeighborEntry {
                    id: "agency-1".into(),
                    addr: "127.0.0.1:4601".into(),
                },
                NeighborEntry {
                    id: "agency-2".into(),
                    addr: "127.0.0.1:4602".into(),
                },
            ],
            data_dir: "/tmp/cnl".into(),
            identity_key_path: "id.json".into(),
        }
    }

    #[test]
    fn rejects_duplicate_and_self_neighbors() {
        let identity = IdentityKey::generate().unwrap();
        let mut bad = file();
        bad.neighbors.push(NeighborEntry {
            id: "agency-1".into(),
            addr: "127.0.0.1:9".into(),
        });
        assert!(PeerConfig::assemble(bad, identity.clone()).is_err());
        let mut bad = file();
        bad.neighbors[0].id = "agency-0".into();
        assert!(PeerConfig::assemble(bad, identity).is_err());
    }

    #[test]
    fn config_file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let identity = IdentityKey::generate().unwrap();
        let key_path = dir.path().join("id.json");
        std::fs::write(
            &key_path,
            serde_json::to_string_pretty(&identity.to_json()).unwrap(),
        )
        .unwrap();
        let cfg_path = dir.path().join("node.json");
        std::fs::write(&cfg_path, serde_json::to_string_pretty(&file()).unwrap()).unwrap();
        let cfg = PeerConfig::from_file(&cfg_path).unwrap();
        assert_eq!(cfg.node_id, "agency-0");
        assert_eq!(cfg.neighbors.len(), 2);
    }
}
