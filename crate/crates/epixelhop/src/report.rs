//! JSON run reports: every command records the seed, the full config echo,
//! phase timings, and the fitted shapes, so a run is reproducible from its
//! report alone.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use crate::cascade::CascadeModel;
use crate::error::{Error, Result};

#[derive(Debug, Serialize)]
pub struct RunReport {
    pub command: String,
    pub seed: u64,
    pub config: BTreeMap<String, String>,
    pub timings_secs: Vec<(String, f64)>,
    /// Interleaved raw / pooled grid sides, e.g. [32, 15, 15, 7, 5, 3].
    pub hop_shapes: Vec<usize>,
    /// Emitted channel counts per hop for each color channel.
    pub spectral_p: Vec<usize>,
    pub spectral_q: Vec<usize>,
    pub outputs: Vec<String>,
}

impl RunReport {
    pub fn new(command: &str, seed: u64, config: BTreeMap<String, String>) -> Self {
        RunReport {
            command: command.to_string(),
            seed,
            config,
            timings_secs: Vec::new(),
            hop_shapes: Vec::new(),
            spectral_p: Vec::new(),
            spectral_q: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn record_shapes(&mut self, cascade_p: &CascadeModel, cascade_q: &CascadeModel) {
        self.hop_shapes.clear();
        for (cfg, &(s, _, _)) in cascade_p.config.hops.iter().zip(&cascade_p.output_shapes) {
            self.hop_shapes.push(s);
            if let Some(pool) = cfg.pool_after {
                self.hop_shapes.push((s - pool.window) / pool.stride + 1);
            }
        }
        self.spectral_p = cascade_p.output_shapes.iter().map(|&(_, _, k)| k).collect();
        self.spectral_q = cascade_q.output_shapes.iter().map(|&(_, _, k)| k).collect();
    }

    pub fn add_output(&mut self, path: &Path) {
        self.outputs.push(path.display().to_string());
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(format!(
            "run_report_{}.json",
            self.command.replace('-', "_")
        ));
        let body = serde_json::to_string_pretty(self).expect("report serializes");
        std::fs::write(&path, body).map_err(|source| Error::Io {
            path: path.clone(),
            source,
        })?;
        Ok(path)
    }
}

/// Wall-clock phase timer feeding `RunReport::timings_secs`.
pub struct PhaseTimer {
    start: Instant,
}

impl PhaseTimer {
    pub fn start() -> Self {
        PhaseTimer {
            start: Instant::now(),
        }
    }

    /// Record the elapsed phase and restart the clock.
    pub fn lap(&mut self, report: &mut RunReport, phase: &str) {
        report
            .timings_secs
            .push((phase.to_string(), self.start.elapsed().as_secs_f64()));
        self.start = Instant::now();
    }
}
