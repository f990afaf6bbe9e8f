//! Synthetic scenes standing in for detected regions and inferred
//! relationships: grid-placed objects, position-derived predicates,
//! feature vectors and templated reference captions.

mod dataset;
mod features;
mod io;
mod vocab;

use std::fmt;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use dataset::{Dataset, Sample, SynthConfig};
pub use features::{scene_to_features, FeatureSynth, RegionFeatureSet, DEFAULT_WORLD_SEED};
pub use io::{
    load_features, parse_features, read_captions, read_vocabulary, save_features, write_captions,
    write_vocabulary,
};
pub use vocab::{TokenId, TokenSequence, Vocabulary, BOS, EOS, PAD, RESERVED, UNK};

use crate::tensor::TensorError;

#[derive(Debug, Error, PartialEq)]
pub enum SceneError {
    #[error("config error: {0}")]
    Config(String),
    #[error("scene has no objects to featurize")]
    EmptyFeatures,
    #[error("vocabulary does not cover token {token:?}")]
    Coverage { token: String },
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("format error: {0}")]
    Format(String),
    #[error("invalid token sequence: {0}")]
    Sequence(String),
    #[error("io error on {path}: {message}")]
    Io { path: String, message: String },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Predicate {
    LeftOf,
    RightOf,
    Above,
    Below,
}

impl Predicate {
    pub const ALL: [Predicate; 4] = [
        Predicate::LeftOf,
        Predicate::RightOf,
        Predicate::Above,
        Predicate::Below,
    ];

    pub fn word(self) -> &'static str {
        match self {
            Predicate::LeftOf => "left-of",
            Predicate::RightOf => "right-of",
            Predicate::Above => "above",
            Predicate::Below => "below",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    /// Relation of `subject` to `object` on the grid (y grows downward).
    /// The dominant axis wins; horizontal wins ties.
    pub fn between(subject: (u32, u32), object: (u32, u32)) -> Predicate {
        let dx = subject.0 as i64 - object.0 as i64;
        let dy = subject.1 as i64 - object.1 as i64;
        if dx.abs() >= dy.abs() {
            if dx < 0 {
                Predicate::LeftOf
            } else {
                Predicate::RightOf
            }
        } else if dy < 0 {
            Predicate::Above
        } else {
            Predicate::Below
        }
    }
}

impl fmt::Display for Predicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.word())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneObject {
    pub category: usize,
    pub attribute: usize,
    pub x: u32,
    pub y: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Relation {
    pub subject: usize,
    pub predicate: Predicate,
    pub object: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scene {
    pub objects: Vec<SceneObject>,
    pub relations: Vec<Relation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneConfig {
    pub grid_width: u32,
    pub grid_height: u32,
    pub min_objects: usize,
    pub max_objects: usize,
    /// Probability that a given object pair becomes a relation.
    pub relation_prob: f64,
    pub categories: Vec<String>,
    pub attributes: Vec<String>,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            grid_width: 4,
            grid_height: 4,
            min_objects: 1,
            max_objects: 6,
            relation_prob: 0.5,
            categories: ["square", "circle", "triangle", "star"]
                .map(String::from)
                .to_vec(),
            attributes: ["red", "green", "blue", "yellow"]
                .map(String::from)
                .to_vec(),
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<(), SceneError> {
        let cells = (self.grid_width as usize) * (self.grid_height as usize);
        let fail = |m: String| Err(SceneError::Config(m));
        if self.grid_width < 2 || self.grid_height < 2 {
            return fail(format!(
                "grid must be at least 2x2, got {}x{}",
                self.grid_width, self.grid_height
            ));
        }
        if self.categories.len() < 2 {
            return fail("need at least 2 categories".into());
        }
        if self.attributes.is_empty() {
            return fail("need at least 1 attribute".into());
        }
        if self.min_objects == 0 || self.min_objects > self.max_objects {
            return fail(format!(
                "object bounds {}..={} are invalid",
                self.min_objects, self.max_objects
            ));
        }
        if self.max_objects > cells {
            return fail(format!(
                "{} objects do not fit in {cells} cells",
                self.max_objects
            ));
        }
        if !(0.0..=1.0).contains(&self.relation_prob) {
            return fail(format!(
                "relation_prob {} outside [0, 1]",
                self.relation_prob
            ));
        }
        Ok(())
    }

    /// Every word the caption grammar can emit, in vocabulary order.
    pub fn vocabulary(&self) -> Result<Vocabulary, SceneError> {
        let mut words = vec!["a".to_string()];
        words.extend(self.attributes.iter().cloned());
        words.extend(self.categories.iter().cloned());
        words.extend(Predicate::ALL.iter().map(|p| p.word().to_string()));
        Vocabulary::new(&words)
    }
}

/// Deterministic in `(seed, config)`. Objects occupy distinct cells; each
/// unordered pair `(i, j)`, `i < j`, becomes a relation with probability
/// `relation_prob`, and at least one pair is kept when there are two or more
/// objects.
pub fn generate_scene(seed: u64, config: &SceneConfig) -> Result<Scene, SceneError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let count = rng.random_range(config.min_objects..=config.max_objects);
    let cells = (config.grid_width * config.grid_height) as usize;
    let objects: Vec<SceneObject> = sample(&mut rng, cells, count)
        .into_iter()
        .map(|cell| SceneObject {
            category: rng.random_range(0..config.categories.len()),
            attribute: rng.random_range(0..config.attributes.len()),
            x: (cell as u32) % config.grid_width,
            y: (cell as u32) / config.grid_width,
        })
        .collect();

    let pairs = candidate_pairs(objects.len());
    let mut relations: Vec<Relation> = pairs
        .iter()
        .filter(|_| rng.random_bool(config.relation_prob))
        .map(|&(i, j)| relation(&objects, i, j))
        .collect();
    if relations.is_empty() && !pairs.is_empty() {
        let (i, j) = pairs[rng.random_range(0..pairs.len())];
        relations.push(relation(&objects, i, j));
    }
    Ok(Scene { objects, relations })
}

fn candidate_pairs(n: usize) -> Vec<(usize, usize)> {
    (0..n)
        .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
        .collect()
}

fn relation(objects: &[SceneObject], i: usize, j: usize) -> Relation {
    let (s, o) = (&objects[i], &objects[j]);
    Relation {
        subject: i,
        predicate: Predicate::between((s.x, s.y), (o.x, o.y)),
        object: j,
    }
}

fn describe(obj: &SceneObject, config: &SceneConfig) -> String {
    format!(
        "a {} {}",
        config.attributes[obj.attribute], config.categories[obj.category]
    )
}

/// Plain-text references: one sentence per relation, or the lone object
/// phrase for a relation-free scene. Sorted and deduplicated, so the first
/// entry is a function of scene content alone and serves as the training target.
pub fn reference_sentences(scene: &Scene, config: &SceneConfig) -> Vec<String> {
    let mut out: Vec<String> = if scene.relations.is_empty() {
        scene.objects.iter().map(|o| describe(o, config)).collect()
    } else {
        scene
            .relations
            .iter()
            .map(|r| {
                format!(
                    "{} {} {}",
                    describe(&scene.objects[r.subject], config),
                    r.predicate,
                    describe(&scene.objects[r.object], config)
                )
            })
            .collect()
    };
    out.sort();
    out.dedup();
    out
}

/// Tokenized references for a scene; fails naming the first word the
/// vocabulary lacks.
pub fn caption_oracle(
    scene: &Scene,
    config: &SceneConfig,
    vocab: &Vocabulary,
) -> Result<Vec<TokenSequence>, SceneError> {
    reference_sentences(scene, config)
        .iter()
        .map(|s| vocab.encode(s))
        .collect()
}
