//! Line-oriented `key = value` run configuration. Unknown keys are rejected;
//! the defaults reproduce the standard architecture and experiment setup.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::cascade::{CascadeConfig, SelectionMode, P_CHANNEL_CAPS, Q_CHANNEL_CAPS};
use crate::error::{Error, Result};
use crate::gbdt::GbdtParams;
use crate::pipeline::PipelineConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub data_dir: PathBuf,
    pub seed: u64,
    pub mode: SelectionMode,
    pub th1: f64,
    pub th2: f64,
    /// Emitted-channel caps per hop for the first principal channel
    /// (fixed-K mode only).
    pub k_p: [usize; 4],
    pub k_q: [usize; 4],
    pub rounds: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub min_leaf: usize,
    pub subsample: f64,
    pub num_iter_stage1: usize,
    pub num_iter_stage2: usize,
    pub augment: bool,
    pub resolve_top_k: usize,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data_dir: PathBuf::from("data/cifar-10-batches-bin"),
            seed: 0,
            mode: SelectionMode::FixedK,
            th1: 1e-12,
            th2: 1e-12,
            k_p: P_CHANNEL_CAPS,
            k_q: Q_CHANNEL_CAPS,
            rounds: 200,
            max_depth: 4,
            learning_rate: 0.1,
            min_leaf: 20,
            subsample: 0.8,
            num_iter_stage1: 1,
            num_iter_stage2: 3,
            augment: true,
            resolve_top_k: 45,
            output_dir: PathBuf::from("out"),
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value for {key}: {value:?}")))
}

fn parse_caps(key: &str, value: &str) -> Result<[usize; 4]> {
    let parts: Vec<&str> = value.split(',').map(str::trim).collect();
    if parts.len() != 4 {
        return Err(Error::Config(format!(
            "{key} needs 4 comma-separated channel caps, got {value:?}"
        )));
    }
    let mut caps = [0usize; 4];
    for (c, p) in caps.iter_mut().zip(parts) {
        *c = parse_num(key, p)?;
        if *c == 0 {
            return Err(Error::Config(format!("{key} caps must be positive")));
        }
    }
    Ok(caps)
}

impl RunConfig {
    /// Parse `key = value` lines. `#` starts a comment; blank lines are
    /// skipped; every key must be known.
    pub fn parse(text: &str) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key = value", lineno + 1))
            })?;
            let (key, value) = (key.trim(), value.trim());
            match key {
                "data_dir" => cfg.data_dir = PathBuf::from(value),
                "seed" => cfg.seed = parse_num(key, value)?,
                "mode" => {
                    cfg.mode = match value {
                        "fixed_k" => SelectionMode::FixedK,
                        "threshold" => SelectionMode::Threshold,
                        _ => {
                            return Err(Error::Config(format!(
                                "mode must be fixed_k or threshold, got {value:?}"
                            )))
                        }
                    }
                }
                "th1" => cfg.th1 = parse_num(key, value)?,
                "th2" => cfg.th2 = parse_num(key, value)?,
                "k_p" => cfg.k_p = parse_caps(key, value)?,
                "k_q" => cfg.k_q = parse_caps(key, value)?,
                "rounds" => cfg.rounds = parse_num(key, value)?,
                "max_depth" => cfg.max_depth = parse_num(key, value)?,
                "learning_rate" => cfg.learning_rate = parse_num(key, value)?,
                "min_leaf" => cfg.min_leaf = parse_num(key, value)?,
                "subsample" => cfg.subsample = parse_num(key, value)?,
                "num_iter_stage1" => cfg.num_iter_stage1 = parse_num(key, value)?,
                "num_iter_stage2" => cfg.num_iter_stage2 = parse_num(key, value)?,
                "augment" => {
                    cfg.augment = match value {
                        "on" => true,
                        "off" => false,
                        _ => {
                            return Err(Error::Config(format!(
                                "augment must be on or off, got {value:?}"
                            )))
                        }
                    }
                }
                "resolve_top_k" => cfg.resolve_top_k = parse_num(key, value)?,
                "output_dir" => cfg.output_dir = PathBuf::from(value),
                _ => return Err(Error::Config(format!("unknown key {key:?}"))),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.th2 > self.th1 {
            return Err(Error::Config(format!(
                "th2 ({}) must not exceed th1 ({})",
                self.th2, self.th1
            )));
        }
        if self.num_iter_stage1 == 0 || self.num_iter_stage2 == 0 {
            return Err(Error::Config("num_iter must be at least 1".into()));
        }
        if !(0.0 < self.subsample && self.subsample <= 1.0) {
            return Err(Error::Config("subsample must lie in (0, 1]".into()));
        }
        Ok(())
    }

    fn cascade_config(&self, caps: [usize; 4]) -> CascadeConfig {
        let caps = match self.mode {
            SelectionMode::FixedK => caps.map(Some),
            SelectionMode::Threshold => [None; 4],
        };
        CascadeConfig::four_hop(self.mode, self.th1, self.th2, caps)
    }

    /// The pipeline configuration this run config describes (10 classes).
    pub fn pipeline_config(&self) -> PipelineConfig {
        self.pipeline_config_for_classes(10)
    }

    pub fn pipeline_config_for_classes(&self, class_count: usize) -> PipelineConfig {
        PipelineConfig {
            seed: self.seed,
            class_count,
            cascade_p: self.cascade_config(self.k_p),
            cascade_q: self.cascade_config(self.k_q),
            gbdt: GbdtParams {
                rounds: self.rounds,
                max_depth: self.max_depth,
                learning_rate: self.learning_rate,
                min_leaf_samples: self.min_leaf,
                subsample_fraction: self.subsample,
                lambda: 1.0,
                seed: self.seed,
            },
            num_iter_stage1: self.num_iter_stage1,
            num_iter_stage2: self.num_iter_stage2,
            augment: self.augment,
            resolve_top_k: self.resolve_top_k,
        }
    }

    /// Flat echo of every setting, for the run report.
    pub fn echo(&self) -> BTreeMap<String, String> {
        let caps = |c: &[usize; 4]| {
            c.iter()
                .map(|v| v.to_string())
                .collect::<Vec<_>>()
                .join(",")
        };
        let mut map = BTreeMap::new();
        map.insert("data_dir".into(), self.data_dir.display().to_string());
        map.insert("seed".into(), self.seed.to_string());
        map.insert(
            "mode".into(),
            match self.mode {
                SelectionMode::FixedK => "fixed_k".into(),
                SelectionMode::Threshold => "threshold".into(),
            },
        );
        map.insert("th1".into(), self.th1.to_string());
        map.insert("th2".into(), self.th2.to_string());
        map.insert("k_p".into(), caps(&self.k_p));
        map.insert("k_q".into(), caps(&self.k_q));
        map.insert("rounds".into(), self.rounds.to_string());
        map.insert("max_depth".into(), self.max_depth.to_string());
        map.insert("learning_rate".into(), self.learning_rate.to_string());
        map.insert("min_leaf".into(), self.min_leaf.to_string());
        map.insert("subsample".into(), self.subsample.to_string());
        map.insert("num_iter_stage1".into(), self.num_iter_stage1.to_string());
        map.insert("num_iter_stage2".into(), self.num_iter_stage2.to_string());
        map.insert(
            "augment".into(),
            if self.augment { "on" } else { "off" }.into(),
        );
        map.insert("resolve_top_k".into(), self.resolve_top_k.to_string());
        map.insert("output_dir".into(), self.output_dir.display().to_string());
        map
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cascade::hop_geometry;

    #[test]
    fn defaults_reproduce_standard_architecture() {
        let cfg = RunConfig::default();
        let pipeline = cfg.pipeline_config();
        assert_eq!(pipeline.num_iter_stage1, 1);
        assert_eq!(pipeline.num_iter_stage2, 3);
        assert!(pipeline.augment);
        let geom = hop_geometry(&pipeline.cascade_p, 32).unwrap();
        let shapes: Vec<usize> = geom
            .iter()
            .flat_map(|g| {
                let mut v = vec![g.raw_side];
                v.extend(g.pooled_side);
                v
            })
            .collect();
        assert_eq!(shapes, vec![32, 15, 15, 7, 5, 3]);
        let caps: Vec<usize> = pipeline
            .cascade_p
            .hops
            .iter()
            .map(|h| h.max_channels.unwrap())
            .collect();
        assert_eq!(caps, vec![24, 144, 203, 211]);
    }

    #[test]
    fn parses_overrides_and_comments() {
        let text = "\
# comment line
seed = 7
mode = threshold
th1 = 0.002   # trailing comment
th2 = 0.0005
augment = off
k_q = 1,2,3,4
output_dir = /tmp/xyz
";
        let cfg = RunConfig::parse(text).unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.mode, SelectionMode::Threshold);
        assert_eq!(cfg.th1, 0.002);
        assert!(!cfg.augment);
        assert_eq!(cfg.k_q, [1, 2, 3, 4]);
        assert_eq!(cfg.output_dir, PathBuf::from("/tmp/xyz"));
        // Threshold mode drops the caps.
        assert!(cfg
            .pipeline_config()
            .cascade_q
            .hops
            .iter()
            .all(|h| h.max_channels.is_none()));
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(matches!(
            RunConfig::parse("bogus_key = 1"),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            RunConfig::parse("seed = notanumber"),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            RunConfig::parse("mode = sideways"),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            RunConfig::parse("th1 = 0.001\nth2 = 0.01"),
            Err(Error::Config(_))
        ));
        assert!(matches!(RunConfig::parse("seed"), Err(Error::Config(_))));
    }

    #[test]
    fn echo_round_trips_through_parse() {
        let cfg = RunConfig {
            seed: 99,
            mode: SelectionMode::Threshold,
            th1: 0.01,
            th2: 0.001,
            ..Default::default()
        };
        let echoed: String = cfg
            .echo()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect();
        let reparsed = RunConfig::parse(&echoed).unwrap();
        assert_eq!(cfg, reparsed);
    }
}
