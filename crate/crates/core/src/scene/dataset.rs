use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::features::mix_seed;
use super::io::{
    load_features, read_captions, read_vocabulary, save_features, write_captions, write_vocabulary,
};
use super::{
    caption_oracle, generate_scene, FeatureSynth, RegionFeatureSet, SceneConfig, SceneError,
    TokenSequence, Vocabulary, DEFAULT_WORLD_SEED,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub scene: SceneConfig,
    pub dim: usize,
    pub noise_sigma: f64,
    pub world_seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            scene: SceneConfig::default(),
            dim: 64,
            noise_sigma: 0.02,
            world_seed: DEFAULT_WORLD_SEED,
        }
    }
}

/// One image stand-in: its features and sorted references. The first
/// reference is the training target.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub name: String,
    pub features: RegionFeatureSet,
    pub references: Vec<TokenSequence>,
}

impl Sample {
    pub fn target(&self) -> &TokenSequence {
        &self.references[0]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub vocab: Vocabulary,
    pub samples: Vec<Sample>,
}

const VOCAB_FILE: &str = "vocab.txt";
const FEATURE_DIR: &str = "features";
const CAPTION_DIR: &str = "captions";

fn io_err(path: &Path, e: std::io::Error) -> SceneError {
    SceneError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

impl Dataset {
    /// `count` scenes; scene `i` draws its layout and its noise from seeds
    /// derived from `(seed, i)`.
    pub fn synthesize(count: usize, seed: u64, config: &SynthConfig) -> Result<Self, SceneError> {
        config.scene.validate()?;
        let vocab = config.scene.vocabulary()?;
        let synth = FeatureSynth::new(config.dim, config.noise_sigma, config.world_seed)?;
        let samples = (0..count)
            .map(|i| {
                let scene = generate_scene(mix_seed(&[seed, i as u64, 0]), &config.scene)?;
                let features = synth.features(&scene, mix_seed(&[seed, i as u64, 1]))?;
                let references = caption_oracle(&scene, &config.scene, &vocab)?;
                Ok(Sample {
                    name: format!("scene_{i:05}"),
                    features,
                    references,
                })
            })
            .collect::<Result<Vec<_>, SceneError>>()?;
        Ok(Self { vocab, samples })
    }

    /// Writes `vocab.txt`, `features/<name>.json` and `captions/<name>.txt`.
    pub fn save(&self, dir: &Path) -> Result<(), SceneError> {
        let fdir = dir.join(FEATURE_DIR);
        let cdir = dir.join(CAPTION_DIR);
        for d in [dir, fdir.as_path(), cdir.as_path()] {
            fs::create_dir_all(d).map_err(|e| io_err(d, e))?;
        }
        write_vocabulary(&dir.join(VOCAB_FILE), &self.vocab)?;
        for s in &self.samples {
            save_features(&fdir.join(format!("{}.json", s.name)), &s.features)?;
            write_captions(
                &cdir.join(format!("{}.txt", s.name)),
                &self.vocab,
                &s.references,
            )?;
        }
        Ok(())
    }

    /// Loads every `features/*.json` (sorted by name) with its caption file.
    pub fn load(dir: &Path) -> Result<Self, SceneError> {
        let vocab = read_vocabulary(&dir.join(VOCAB_FILE))?;
        let fdir = dir.join(FEATURE_DIR);
        let mut names: Vec<String> = fs::read_dir(&fdir)
            .map_err(|e| io_err(&fdir, e))?
            .filter_map(|entry| {
                let p = entry.ok()?.path();
                (p.extension()? == "json").then(|| p.file_stem()?.to_str().map(String::from))?
            })
            .collect();
        names.sort();
        let samples = names
            .into_iter()
            .map(|name| {
                let features = load_features(&fdir.join(format!("{name}.json")))?;
                let references =
                    read_captions(&dir.join(CAPTION_DIR).join(format!("{name}.txt")), &vocab)?;
                if references.is_empty() {
                    return Err(SceneError::Format(format!(
                        "{name} has no reference captions"
                    )));
                }
                Ok(Sample {
                    name,
                    features,
                    references,
                })
            })
            .collect::<Result<Vec<_>, SceneError>>()?;
        Ok(Self { vocab, samples })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn save_load_round_trip() {
        let cfg = SynthConfig {
            dim: 16,
            ..SynthConfig::default()
        };
        let ds = Dataset::synthesize(5, 1, &cfg).unwrap();
        assert_eq!(ds.len(), 5);
        let dir = tempfile::tempdir().unwrap();
        ds.save(dir.path()).unwrap();
        assert_eq!(Dataset::load(dir.path()).unwrap(), ds);
    }

    #[test]
    fn counts_match_scene_structure() {
        let cfg = SynthConfig {
            dim: 16,
            ..SynthConfig::default()
        };
        let ds = Dataset::synthesize(20, 4, &cfg).unwrap();
        for s in &ds.samples {
            assert!(s.references.len() <= s.features.k2().max(1));
            if s.features.k1() >= 2 {
                assert!(s.features.k2() >= 1);
            }
        }
        assert_eq!(ds, Dataset::synthesize(20, 4, &cfg).unwrap());
    }

    #[test]
    fn missing_dir_is_io_error() {
        let err = Dataset::load(Path::new("/nonexistent/aitpr")).unwrap_err();
        assert!(matches!(err, SceneError::Io { .. }));
    }
}
