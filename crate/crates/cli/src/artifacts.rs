use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;

/// Writes run outputs under one directory, stamping each with the config hash and seed.
#[derive(Debug)]
pub struct ArtifactWriter {
    dir: PathBuf,
    config_hash: String,
    seed: u64,
    files: Vec<String>,
}

impl ArtifactWriter {
    pub fn create(dir: &Path, config_hash: &str, seed: u64) -> io::Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(ArtifactWriter {
            dir: dir.to_path_buf(),
            config_hash: config_hash.to_string(),
            seed,
            files: Vec::new(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn header_line(&self) -> String {
        format!("# rmtlab config_hash={} seed={}\n", self.config_hash, self.seed)
    }

    /// `body` starts with the column header row.
    pub fn csv(&mut self, name: &str, body: &str) -> io::Result<()> {
        let mut text = self.header_line();
        text.push_str(body);
        self.write(name, &text)
    }

    /// Objects gain a `header` field; other values are wrapped as `{"header", "data"}`.
    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> io::Result<()> {
        let header = serde_json::json!({ "config_hash": self.config_hash, "seed": self.seed });
        let value = serde_json::to_value(value).map_err(io::Error::other)?;
        let stamped = match value {
            Value::Object(mut map) => {
                map.insert("header".into(), header);
                Value::Object(map)
            }
            other => serde_json::json!({ "header": header, "data": other }),
        };
        let mut text = serde_json::to_string_pretty(&stamped).map_err(io::Error::other)?;
        text.push('\n');
        self.write(name, &text)
    }

    fn write(&mut self, name: &str, text: &str) -> io::Result<()> {
        fs::write(self.dir.join(name), text)?;
        if !self.files.iter().any(|f| f == name) {
            self.files.push(name.to_string());
        }
        Ok(())
    }

    pub fn files(&self) -> &[String] {
        &self.files
    }
}
