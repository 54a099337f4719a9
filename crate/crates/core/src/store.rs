//! On-disk run store: one directory per run.
//!
//! ```text
//! <root>/<run_id>/config.json
//! <root>/<run_id>/reference.png
//! <root>/<run_id>/iterations.jsonl
//! <root>/<run_id>/images/<step>.png
//! <root>/<run_id>/final.json
//! ```

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::image::ImageRef;
use crate::optimizer::{IterationRecord, RunConfig, RunResult, RunSink};

#[derive(Debug, Clone)]
pub struct RunStore {
    root: PathBuf,
}

impl RunStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn run_dir(&self, run_id: &str) -> RunDir {
        RunDir {
            path: self.root.join(run_id),
        }
    }
}

/// Files of a single run. Each run owns its directory, so distinct runs never contend.
#[derive(Debug, Clone)]
pub struct RunDir {
    path: PathBuf,
}

impl RunDir {
    pub fn at(path: impl Into<PathBuf>) -> Self {
        Self { path: path.into() }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn iterations_path(&self) -> PathBuf {
        self.path.join("iterations.jsonl")
    }

    pub fn final_path(&self) -> PathBuf {
        self.path.join("final.json")
    }

    pub fn image_path(&self, step: usize) -> PathBuf {
        self.path.join("images").join(format!("{step}.png"))
    }

    fn write_file(&self, path: &Path, bytes: &[u8]) -> Result<()> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    /// Creates the directory and writes the config. An existing iteration log is truncated.
    pub fn init(&self, config: &RunConfig, reference: &ImageRef) -> Result<()> {
        fs::create_dir_all(self.path.join("images")).map_err(|e| Error::io(&self.path, e))?;
        self.write_file(&self.path.join("config.json"), &serde_json::to_vec_pretty(config)?)?;
        if reference.has_bytes() {
            self.write_file(&self.path.join("reference.png"), &reference.bytes()?)?;
        }
        let log = self.iterations_path();
        File::create(&log).map_err(|e| Error::io(&log, e))?;
        Ok(())
    }

    pub fn append_iteration(&self, record: &IterationRecord) -> Result<()> {
        let path = self.iterations_path();
        let mut line = serde_json::to_string(record)?;
        line.push('\n');
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        file.write_all(line.as_bytes()).map_err(|e| Error::io(&path, e))
    }

    pub fn write_image(&self, step: usize, image: &ImageRef) -> Result<()> {
        self.write_file(&self.image_path(step), &image.bytes()?)
    }

    pub fn write_final(&self, result: &RunResult) -> Result<()> {
        self.write_file(&self.final_path(), &serde_json::to_vec_pretty(result)?)
    }

    pub fn read_iterations(&self) -> Result<Vec<IterationRecord>> {
        let path = self.iterations_path();
        let file = File::open(&path).map_err(|e| Error::io(&path, e))?;
        let mut out = Vec::new();
        for line in BufReader::new(file).lines() {
            let line = line.map_err(|e| Error::io(&path, e))?;
            if !line.trim().is_empty() {
                out.push(serde_json::from_str(&line)?);
            }
        }
        Ok(out)
    }

    pub fn read_final(&self) -> Result<RunResult> {
        let path = self.final_path();
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        Ok(serde_json::from_slice(&bytes)?)
    }
}

impl RunSink for RunDir {
    fn started(&mut self, _run_id: &str, config: &RunConfig, reference: &ImageRef) -> Result<()> {
        self.init(config, reference)
    }

    fn iteration(&mut self, record: &IterationRecord, image: Option<&ImageRef>) -> Result<()> {
        if let Some(img) = image {
            self.write_image(record.step, img)?;
        }
        self.append_iteration(record)
    }

    fn finished(&mut self, result: &RunResult) -> Result<()> {
        self.write_final(result)
    }
}
