//! Artifact directory handling. Files are only kept once the run commits;
//! dropping an uncommitted `Artifacts` removes whatever it wrote.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

pub struct Artifacts {
    dir: PathBuf,
    created: Vec<PathBuf>,
    written: Vec<PathBuf>,
    committed: bool,
}

impl Artifacts {
    pub fn create(dir: &Path) -> io::Result<Self> {
        // remember every directory level we make so a failed run leaves no trace
        let mut created = Vec::new();
        let mut p = dir.to_path_buf();
        while !p.as_os_str().is_empty() && !p.exists() {
            created.push(p.clone());
            match p.parent() {
                Some(q) => p = q.to_path_buf(),
                None => break,
            }
        }
        fs::create_dir_all(dir)?;
        Ok(Self { dir: dir.to_path_buf(), created, written: Vec::new(), committed: false })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn write(&mut self, name: &str, contents: &str) -> io::Result<PathBuf> {
        let path = self.dir.join(name);
        self.written.push(path.clone());
        fs::write(&path, contents)?;
        Ok(path)
    }

    pub fn names(&self) -> Vec<String> {
        self.written
            .iter()
            .filter_map(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()))
            .collect()
    }

    pub fn commit(mut self) {
        self.committed = true;
    }
}

impl Drop for Artifacts {
    fn drop(&mut self) {
        if self.committed {
            return;
        }
        for p in &self.written {
            let _ = fs::remove_file(p);
        }
        for d in &self.created {
            let _ = fs::remove_dir(d);
        }
    }
}

pub fn sha256_hex(text: &str) -> String {
    Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Serialize)]
pub struct Versions {
    pub hbmlab_cli: &'static str,
    pub hbmlab_core: &'static str,
    pub hbmlab_probe: &'static str,
    pub hbmlab_campaign: &'static str,
}

impl Versions {
    pub fn current() -> Self {
        Self {
            hbmlab_cli: env!("CARGO_PKG_VERSION"),
            hbmlab_core: hbmlab_core::VERSION,
            hbmlab_probe: hbmlab_probe::VERSION,
            hbmlab_campaign: hbmlab_campaign::VERSION,
        }
    }
}

/// Everything needed to rerun an artifact directory bit-exactly: the
/// canonical config (profile inlined) and the seed. `jobs` and the wall
/// clock are recorded but do not affect results, so the hash leaves out
/// `out` and `jobs`.
#[derive(Debug, Serialize)]
pub struct Manifest {
    pub command: String,
    pub args: Vec<String>,
    pub seed: u64,
    pub config_sha256: String,
    pub config: String,
    pub trr_hidden: bool,
    pub defaults: std::collections::BTreeMap<String, String>,
    pub versions: Versions,
    pub jobs: usize,
    pub outputs: Vec<String>,
    pub wall_clock_s: f64,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uncommitted_artifacts_are_removed() {
        let root = std::env::temp_dir().join(format!("hbmlab-art-{}", std::process::id()));
        let dir = root.join("a/b");
        {
            let mut a = Artifacts::create(&dir).unwrap();
            a.write("x.csv", "1\n").unwrap();
            assert!(dir.join("x.csv").exists());
        }
        assert!(!root.exists());
        let mut a = Artifacts::create(&dir).unwrap();
        a.write("x.csv", "1\n").unwrap();
        a.commit();
        assert!(dir.join("x.csv").exists());
        fs::remove_dir_all(&root).unwrap();
    }

    #[test]
    fn existing_directory_survives_a_failed_run() {
        let dir = std::env::temp_dir().join(format!("hbmlab-keep-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        fs::write(dir.join("old.txt"), "keep").unwrap();
        {
            let mut a = Artifacts::create(&dir).unwrap();
            a.write("new.csv", "").unwrap();
        }
        assert!(dir.join("old.txt").exists());
        assert!(!dir.join("new.csv").exists());
        fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn hash_is_hex_sha256() {
        assert_eq!(
            sha256_hex(""),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
    }
}
