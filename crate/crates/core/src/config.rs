//! TOML run configuration shared by the command-line tool and examples.
//!
//! ```toml
//! run_dir = "runs/single"
//!
//! [data]
//! manifest = "corpus/manifest.jsonl"
//!
//! [segment]
//! l_max = 3072
//!
//! [model]
//! architecture = "SINGLE"
//!
//! [train]
//! max_epochs = 40
//! ```
//!
//! Every section is optional; missing keys take the library defaults.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, SegmentConfig};
use crate::error::{Error, Result};
use crate::fusion::{load_feature_table, Lexicon};
use crate::mtl::ModelSpec;
use crate::synthgen::SynthConfig;
use crate::trainer::{CvOptions, DataContext, FeatureTables, TrainConfig};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub manifest: Option<PathBuf>,
    /// Word-level acoustic feature CSVs; synthetic features are computed when absent.
    pub prominence_features: Option<PathBuf>,
    pub boundary_features: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub run_dir: Option<PathBuf>,
    pub data: DataConfig,
    pub segment: SegmentConfig,
    pub model: ModelSpec,
    pub train: TrainConfig,
    pub cv: CvOptions,
    pub synth: SynthConfig,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::validation("config", e.to_string()))
    }

    /// Relative paths inside the file resolve against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml_str(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(v) = p {
                if v.is_relative() {
                    *v = base.join(&*v);
                }
            }
        };
        fix(&mut cfg.data.manifest);
        fix(&mut cfg.data.prominence_features);
        fix(&mut cfg.data.boundary_features);
        fix(&mut cfg.run_dir);
        if let Some(v) = &mut cfg.model.fusion.lexical.vocabulary_path {
            if Path::new(v).is_relative() {
                *v = base.join(&*v).to_string_lossy().into_owned();
            }
        }
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::validation("config", e.to_string()))
    }

    /// Every violated field, one message each.
    pub fn problems(&self) -> Vec<String> {
        let mut out = self.model.problems();
        out.extend(self.train.problems());
        out.extend(self.synth.problems());
        if self.segment.l_max == 0 {
            out.push("segment.l_max: must be positive".into());
        }
        if self.segment.sample_rate_hz != self.model.frontend.sample_rate_hz {
            out.push(format!(
                "segment.sample_rate_hz: {} differs from model.frontend.sample_rate_hz {}",
                self.segment.sample_rate_hz, self.model.frontend.sample_rate_hz
            ));
        }
        if let Err(e) = self.model.frontend.output_lengths(self.segment.l_max) {
            out.push(format!("segment.l_max: {e}"));
        }
        if self.cv.outer_folds < 2 {
            out.push("cv.outer_folds: must be >= 2".into());
        }
        if self.cv.inner_folds < 2 {
            out.push("cv.inner_folds: must be >= 2".into());
        }
        if self.cv.jobs == 0 {
            out.push("cv.jobs: must be >= 1".into());
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.problems();
        if p.is_empty() {
            Ok(())
        } else {
            Err(Error::validation("config", p.join("\n  ")))
        }
    }

    pub fn manifest(&self) -> Result<&Path> {
        self.data
            .manifest
            .as_deref()
            .ok_or_else(|| Error::validation("data.manifest", "no manifest given"))
    }

    /// Feature tables and lexicon the model spec asks for.
    pub fn data_context(&self, corpus: &Corpus) -> Result<DataContext> {
        data_context(&self.model, &self.data, corpus, &self.segment)
    }
}

pub fn data_context(spec: &ModelSpec, data: &DataConfig, corpus: &Corpus, seg: &SegmentConfig) -> Result<DataContext> {
    let mut ctx = DataContext::for_spec(spec, corpus, seg)?;
    if spec.fusion.use_acoustic_features {
        let tables = ctx.features.get_or_insert_with(FeatureTables::default);
        if let Some(p) = &data.prominence_features {
            tables.prominence = load_feature_table(p, spec.fusion.prominence_feature_dim)?;
        }
        if let Some(p) = &data.boundary_features {
            tables.boundary = load_feature_table(p, spec.fusion.boundary_feature_dim)?;
        }
        let refs = corpus.refs();
        tables.prominence.check_complete(&refs)?;
        if spec.architecture.has_boundary() {
            tables.boundary.check_complete(&refs)?;
        }
    }
    if spec.fusion.use_lexical && ctx.lexicon.is_none() {
        ctx.lexicon = Some(Lexicon::from_pairs(spec.fusion.lexical.embedding_dim, []));
    }
    Ok(ctx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mtl::ArchitectureVariant;

    #[test]
    fn partial_file_fills_defaults() {
        let cfg = RunConfig::from_toml_str(
            "[model]\narchitecture = \"COND_B\"\n[train]\nmax_epochs = 3\n",
        )
        .unwrap();
        assert_eq!(cfg.model.architecture, ArchitectureVariant::CondB);
        assert_eq!(cfg.train.max_epochs, 3);
        assert_eq!(cfg.train.early_stop_patience, 12);
        assert_eq!(cfg.segment.l_max, 28_660);
    }

    #[test]
    fn every_violation_is_listed() {
        let cfg = RunConfig::from_toml_str("[model.loss]\nalpha = 1.5\n[train]\nbatch_size = 0\n[cv]\njobs = 0\n").unwrap();
        let p = cfg.problems();
        assert_eq!(p.len(), 3, "{p:?}");
        assert!(p.iter().any(|m| m.contains("alpha")));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_toml_str("[data]\nmanifesto = \"x\"\n").is_err());
    }

    #[test]
    fn round_trip() {
        let cfg = RunConfig::default();
        let back = RunConfig::from_toml_str(&cfg.to_toml_string().unwrap()).unwrap();
        assert_eq!(back, cfg);
    }
}
