//! Finite-difference verification of the full teacher-forced decoder loss.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{DecoderConfig, DecoderError, ModelDims, ModelParams, Param, Session};
use crate::gradcheck::GradCheck;
use crate::scene::{RegionFeatureSet, TokenId, BOS, EOS, RESERVED};

pub const DEFAULT_DIMS: ModelDims = ModelDims {
    feature: 16,
    hidden: 6,
    embed: 5,
    attention: 6,
    vocab: 12,
};

/// Finite differences cost two rollouts per entry; larger models are refused.
pub const MAX_CHECK_PARAMS: usize = 10_000;

pub const DEFAULT_EPS: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone)]
pub struct GradientReport {
    pub config: DecoderConfig,
    /// Max relative error per parameter tensor.
    pub groups: Vec<(&'static str, f64)>,
}

impl GradientReport {
    pub fn max_error(&self) -> f64 {
        self.groups.iter().map(|g| g.1).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_error() <= TOLERANCE
    }
}

/// Random features (three attributes, two interactions) and a random
/// six-token target for `dims`.
pub fn probe_inputs(
    dims: &ModelDims,
    seed: u64,
) -> Result<(RegionFeatureSet, Vec<TokenId>), DecoderError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = |k: usize| -> Vec<Vec<f64>> {
        (0..k)
            .map(|_| {
                (0..dims.feature)
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        0.5 * z
                    })
                    .collect()
            })
            .collect()
    };
    let (v, vp) = (rows(3), rows(2));
    let feats = RegionFeatureSet::new(v, vp).map_err(|e| DecoderError::Dimension(e.to_string()))?;
    if dims.vocab <= RESERVED.len() {
        return Err(DecoderError::Dimension(
            "vocabulary has no content tokens".into(),
        ));
    }
    let mut target = vec![BOS];
    for _ in 0..4 {
        target.push(rng.random_range(RESERVED.len()..dims.vocab));
    }
    target.push(EOS);
    Ok((feats, target))
}

/// Checks the analytic gradient of the teacher-forced loss with respect to
/// every parameter tensor. `corrupt` perturbs one analytic entry by 0.1.
pub fn check_decoder_gradients(
    dims: ModelDims,
    config: DecoderConfig,
    seed: u64,
    eps: f64,
    corrupt: bool,
) -> Result<GradientReport, DecoderError> {
    let count = dims.param_count();
    if count >= MAX_CHECK_PARAMS {
        return Err(DecoderError::TooLarge {
            params: count,
            limit: MAX_CHECK_PARAMS,
        });
    }
    let params = ModelParams::init_uniform(dims, seed, 0.5);
    let (feats, target) = probe_inputs(&dims, seed.wrapping_add(1))?;

    let mut checker = GradCheck::new(eps);
    if corrupt {
        checker = checker.corrupted(0.1);
    }
    // The closure must report tensor errors; decoder errors are carried out separately.
    let failure = std::cell::RefCell::new(None);
    let report = checker.run(
        |g, vars| {
            let mut s = Session::from_vars(g, vars.to_vec(), dims, config);
            let run = s
                .image(&feats)
                .and_then(|ctx| s.teacher_forced(&ctx, &target));
            match run {
                Ok((loss, _)) => Ok(loss),
                Err(DecoderError::Tensor(e)) => Err(e),
                Err(other) => {
                    let msg = other.to_string();
                    *failure.borrow_mut() = Some(other);
                    Err(crate::tensor::TensorError::Numeric(msg))
                }
            }
        },
        params.tensors(),
    );
    if let Some(e) = failure.into_inner() {
        return Err(e);
    }
    let report = report?;
    Ok(GradientReport {
        config,
        groups: Param::ALL
            .iter()
            .map(|p| p.name())
            .zip(report.per_param)
            .collect(),
    })
}
