use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{Value, json};
use sha2::{Digest, Sha256};

use slowmf::io;

use crate::config::Format;

/// Writes tables into the output directory and remembers every file for the manifest.
pub struct Sink {
    dir: PathBuf,
    format: Format,
    files: Vec<String>,
}

impl Sink {
    pub fn new(dir: &Path, format: Format) -> slowmf::Result<Self> {
        std::fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            format,
            files: Vec::new(),
        })
    }

    fn record(&mut self, name: String) {
        if !self.files.contains(&name) {
            self.files.push(name);
        }
    }

    /// `stem.csv` with a `stem.json` metadata sidecar, or a single `stem.json`
    /// holding columns, rows and metadata.
    pub fn table<I>(
        &mut self,
        stem: &str,
        header: &[&str],
        rows: I,
        meta: Value,
    ) -> slowmf::Result<()>
    where
        I: IntoIterator<Item = Vec<f64>>,
    {
        match self.format {
            Format::Csv => {
                let header: Vec<String> = header.iter().map(|s| s.to_string()).collect();
                let path = self.dir.join(format!("{stem}.csv"));
                io::write_rows(&path, &header, rows)?;
                io::write_sidecar(&path, &meta)?;
                self.record(format!("{stem}.csv"));
                self.record(format!("{stem}.json"));
            }
            Format::Json => {
                let rows: Vec<Vec<f64>> = rows.into_iter().collect();
                self.json(
                    stem,
                    &json!({ "columns": header, "rows": rows, "meta": meta }),
                )?;
            }
        }
        Ok(())
    }

    pub fn json<T: Serialize + ?Sized>(&mut self, stem: &str, value: &T) -> slowmf::Result<()> {
        io::write_json(&self.dir.join(format!("{stem}.json")), value)?;
        self.record(format!("{stem}.json"));
        Ok(())
    }

    /// `manifest.json`: command, seed, resolved config and a hash per file.
    pub fn finish(
        mut self,
        command: &str,
        seed: Option<u64>,
        config: &impl Serialize,
    ) -> slowmf::Result<PathBuf> {
        self.files.sort();
        let mut files = Vec::with_capacity(self.files.len());
        for name in &self.files {
            let bytes = std::fs::read(self.dir.join(name))?;
            let digest: String = Sha256::digest(&bytes)
                .iter()
                .map(|b| format!("{b:02x}"))
                .collect();
            files.push(json!({ "path": name, "bytes": bytes.len(), "sha256": digest }));
        }
        let path = self.dir.join("manifest.json");
        io::write_json(
            &path,
            &json!({
                "command": command,
                "version": env!("CARGO_PKG_VERSION"),
                "seed": seed,
                "config": config,
                "files": files,
            }),
        )?;
        Ok(path)
    }
}
