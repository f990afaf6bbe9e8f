use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{Predicate, Scene, SceneError};
use crate::tensor::Tensor;

/// Seed of the fixed "world" that prototypes and predicate projections are
/// drawn from. Scenes only vary the noise.
pub const DEFAULT_WORLD_SEED: u64 = 0x00A1_7B12;

/// Attribute vectors `v` (one per object), interaction vectors `v_prime`
/// (one per relation) and the attribute mean `v_bar`.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionFeatureSet {
    v: Tensor,
    v_prime: Option<Tensor>,
    v_bar: Tensor,
}

impl RegionFeatureSet {
    pub fn new(v: Vec<Vec<f64>>, v_prime: Vec<Vec<f64>>) -> Result<Self, SceneError> {
        if v.is_empty() {
            return Err(SceneError::EmptyFeatures);
        }
        let v = Tensor::from_rows(&v)?;
        let v_prime = if v_prime.is_empty() {
            None
        } else {
            let vp = Tensor::from_rows(&v_prime)?;
            if vp.cols() != v.cols() {
                return Err(SceneError::Format(format!(
                    "interaction dim {} differs from attribute dim {}",
                    vp.cols(),
                    v.cols()
                )));
            }
            Some(vp)
        };
        let v_bar = Tensor::row(column_mean(&[&v]));
        Ok(Self { v, v_prime, v_bar })
    }

    pub fn dim(&self) -> usize {
        self.v.cols()
    }

    /// Attribute count k₁.
    pub fn k1(&self) -> usize {
        self.v.rows()
    }

    /// Interaction count k₂.
    pub fn k2(&self) -> usize {
        self.v_prime.as_ref().map_or(0, Tensor::rows)
    }

    pub fn attributes(&self) -> &Tensor {
        &self.v
    }

    pub fn interactions(&self) -> Option<&Tensor> {
        self.v_prime.as_ref()
    }

    /// `[1, D]` mean of the attribute rows.
    pub fn v_bar(&self) -> &Tensor {
        &self.v_bar
    }

    /// `[1, D]` mean over attribute and interaction rows together.
    pub fn pooled_mean(&self) -> Tensor {
        match &self.v_prime {
            Some(vp) => Tensor::row(column_mean(&[&self.v, vp])),
            None => self.v_bar.clone(),
        }
    }

    /// Attribute rows followed by interaction rows, `[k₁ + k₂, D]`.
    pub fn stacked(&self) -> Tensor {
        match &self.v_prime {
            Some(vp) => {
                let mut data = self.v.data().to_vec();
                data.extend_from_slice(vp.data());
                Tensor::new(vec![self.k1() + self.k2(), self.dim()], data)
                    .expect("rows share the feature dim")
            }
            None => self.v.clone(),
        }
    }

    pub fn attribute_rows(&self) -> Vec<Vec<f64>> {
        (0..self.k1())
            .map(|i| self.v.row_slice(i).to_vec())
            .collect()
    }

    pub fn interaction_rows(&self) -> Vec<Vec<f64>> {
        self.v_prime
            .as_ref()
            .map(|t| (0..t.rows()).map(|i| t.row_slice(i).to_vec()).collect())
            .unwrap_or_default()
    }
}

fn column_mean(blocks: &[&Tensor]) -> Vec<f64> {
    let d = blocks[0].cols();
    let mut acc = vec![0.0; d];
    let mut n = 0usize;
    for b in blocks {
        for r in 0..b.rows() {
            for (a, x) in acc.iter_mut().zip(b.row_slice(r)) {
                *a += x;
            }
            n += 1;
        }
    }
    acc.iter_mut().for_each(|a| *a /= n as f64);
    acc
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

pub(crate) fn mix_seed(parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(0u64, |acc, &p| splitmix(acc ^ splitmix(p)))
}

/// Deterministic feature source: unit-norm Gaussian prototypes per
/// (category, attribute) pair and a fixed Gaussian projection per predicate.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSynth {
    pub dim: usize,
    pub noise_sigma: f64,
    pub world_seed: u64,
}

impl FeatureSynth {
    pub fn new(dim: usize, noise_sigma: f64, world_seed: u64) -> Result<Self, SceneError> {
        if dim < 8 {
            return Err(SceneError::Config(format!(
                "feature dim must be >= 8, got {dim}"
            )));
        }
        if !noise_sigma.is_finite() || noise_sigma < 0.0 {
            return Err(SceneError::Config(format!(
                "noise sigma {noise_sigma} is invalid"
            )));
        }
        Ok(Self {
            dim,
            noise_sigma,
            world_seed,
        })
    }

    pub fn prototype(&self, category: usize, attribute: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[
            self.world_seed,
            1,
            category as u64,
            attribute as u64,
        ]));
        let mut v: Vec<f64> = (0..self.dim)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter_mut().for_each(|x| *x /= norm);
        v
    }

    /// `[2D, D]` projection; entries `N(0, 1/(2D))` so unit-norm inputs map
    /// to roughly unit-norm outputs before the `tanh`.
    pub fn projection(&self, predicate: Predicate) -> Tensor {
        let mut rng =
            ChaCha8Rng::seed_from_u64(mix_seed(&[self.world_seed, 2, predicate.index() as u64]));
        let scale = (1.0 / (2.0 * self.dim as f64)).sqrt();
        let n = 2 * self.dim * self.dim;
        let data = (0..n)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                scale * z
            })
            .collect::<Vec<f64>>();
        Tensor::new(vec![2 * self.dim, self.dim], data).expect("shape matches")
    }

    /// `tanh(concat(subject, object) · P_predicate)`.
    pub fn interaction(&self, subject: &[f64], object: &[f64], predicate: Predicate) -> Vec<f64> {
        let mut input = subject.to_vec();
        input.extend_from_slice(object);
        let out = crate::tensor::matmul(&Tensor::row(input), &self.projection(predicate))
            .expect("concat has 2D entries");
        out.data().iter().map(|x| x.tanh()).collect()
    }

    pub fn features(&self, scene: &Scene, seed: u64) -> Result<RegionFeatureSet, SceneError> {
        if scene.objects.is_empty() {
            return Err(SceneError::EmptyFeatures);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v: Vec<Vec<f64>> = scene
            .objects
            .iter()
            .map(|o| {
                let mut p = self.prototype(o.category, o.attribute);
                if self.noise_sigma > 0.0 {
                    for x in p.iter_mut() {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        *x += self.noise_sigma * z;
                    }
                }
                p
            })
            .collect();
        let v_prime = scene
            .relations
            .iter()
            .map(|r| self.interaction(&v[r.subject], &v[r.object], r.predicate))
            .collect();
        RegionFeatureSet::new(v, v_prime)
    }
}

/// Features for `scene` in the default world.
pub fn scene_to_features(
    scene: &Scene,
    dim: usize,
    noise_sigma: f64,
    seed: u64,
) -> Result<RegionFeatureSet, SceneError> {
    FeatureSynth::new(dim, noise_sigma, DEFAULT_WORLD_SEED)?.features(scene, seed)
}
