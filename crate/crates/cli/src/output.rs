//! Output directory handling: every file a command writes is listed in its
//! manifest, and CSVs carry the manifest hash on their first line.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use namebias::manifest::{stamp_csv, RunManifest};
use serde_json::Value;

pub struct Run {
    pub manifest: RunManifest,
    out_dir: PathBuf,
    /// Hash fixed by the first stamped CSV; later changes to hashed fields are a bug.
    sealed: Option<String>,
}

impl Run {
    pub fn new(command: &str, out_dir: &Path) -> anyhow::Result<Self> {
        std::fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
        Ok(Self {
            manifest: RunManifest::new(command),
            out_dir: out_dir.to_path_buf(),
            sealed: None,
        })
    }

    pub fn input(&mut self, label: &str, path: &Path) -> anyhow::Result<()> {
        self.manifest
            .add_input(label, path)
            .with_context(|| format!("reading {}", path.display()))
    }

    pub fn seed(&mut self, label: &str, seed: u64) {
        self.manifest.seeds.insert(label.into(), seed);
    }

    pub fn threshold(&mut self, label: &str, value: impl Into<Value>) {
        self.manifest.thresholds.insert(label.into(), value.into());
    }

    pub fn setting(&mut self, label: &str, value: impl Into<Value>) {
        self.manifest.settings.insert(label.into(), value.into());
    }

    /// Seals the manifest and returns its hash.
    pub fn hash(&mut self) -> String {
        self.sealed.get_or_insert_with(|| self.manifest.hash()).clone()
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    pub fn write_csv(&mut self, name: &str, body: &str) -> anyhow::Result<PathBuf> {
        let hash = self.hash();
        self.write_bytes(name, stamp_csv(body, &hash).as_bytes())
    }

    /// Unstamped output; listed in the manifest but does not seal it.
    pub fn write_bytes(&mut self, name: &str, bytes: &[u8]) -> anyhow::Result<PathBuf> {
        let path = self.path(name);
        std::fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        self.manifest.record_output(name, bytes);
        Ok(path)
    }

    /// A buffered writer for large outputs; call [`Run::record_file`] once
    /// it is closed.
    pub fn create(&mut self, name: &str) -> anyhow::Result<BufWriter<File>> {
        let path = self.path(name);
        let file = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
        Ok(BufWriter::new(file))
    }

    pub fn record_file(&mut self, name: &str) -> anyhow::Result<()> {
        let digest = namebias::manifest::file_digest(self.path(name))?;
        self.manifest.outputs.insert(name.into(), digest);
        Ok(())
    }

    /// Writes `<command>.manifest.json`.
    pub fn finish(mut self) -> anyhow::Result<PathBuf> {
        if let Some(sealed) = &self.sealed {
            if *sealed != self.manifest.hash() {
                bail!("manifest changed after outputs were stamped");
            }
        }
        self.manifest.finish();
        let path = self.out_dir.join(format!("{}.manifest.json", self.manifest.command));
        let mut file = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
        file.write_all(self.manifest.to_json().as_bytes())?;
        log::info!("wrote {}", path.display());
        Ok(path)
    }
}
