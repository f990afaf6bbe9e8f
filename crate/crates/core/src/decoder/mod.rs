//! The attribute/interaction tensor-product decoder.
//!
//! One step consumes the previous token and produces next-token logits:
//!
//! 1. attention over attribute (and interaction) features gives `q_t = v̂_t`;
//! 2. `p_t` is the embedding of the previous token;
//! 3. optional semantic correction rescales `q_t` and/or `p_t` by `S`;
//! 4. the tensor-product gate `T_t` mixes the hidden state, the running
//!    embedding sum and the pooled feature vector `v_x`;
//! 5. a three-input LSTM block turns `(p_t, q_t, T_t)` into `h_t`, `c_t` and logits.
//!
//! Graph-level code lives in [`Session`]; [`Decoder`] wraps it with
//! tensor-in/tensor-out operations.

mod params;
mod session;
pub mod verify;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use params::{ModelDims, ModelParams, Param, INIT_SCALE};
pub use session::{AttentionVars, ImageContext, Session, StateVars, StepVars};

use crate::graph::Graph;
use crate::scene::{RegionFeatureSet, TokenId, TokenSequence, BOS, EOS, PAD};
use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DecoderError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("early fusion needs at least one interaction vector")]
    DegenerateBranch,
    #[error("token id {0} is outside the vocabulary")]
    Token(TokenId),
    #[error("alignment error: {steps} steps for a target of length {target_len}")]
    Alignment { steps: usize, target_len: usize },
    #[error("model has {params} parameters; gradient checks are limited to fewer than {limit}")]
    TooLarge { params: usize, limit: usize },
    #[error("invalid variant {0}; expected one of 1, 2, 3")]
    Variant(u8),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionMode {
    /// Separate softmaxes over attributes and interactions, averaged.
    Early,
    /// One softmax over attributes and interactions together.
    Late,
}

impl std::str::FromStr for FusionMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "early" => Ok(FusionMode::Early),
            "late" => Ok(FusionMode::Late),
            other => Err(format!(
                "unknown fusion mode {other:?}; expected early or late"
            )),
        }
    }
}

impl std::fmt::Display for FusionMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FusionMode::Early => "early",
            FusionMode::Late => "late",
        })
    }
}

/// Which semantic corrections are applied: `tag2a` on the visual input
/// `q_t`, `tag2b` on the word input `p_t`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct VariantFlags {
    pub apply_tag2a: bool,
    pub apply_tag2b: bool,
}

impl VariantFlags {
    pub fn variant(n: u8) -> Result<Self, DecoderError> {
        let (a, b) = match n {
            1 => (false, false),
            2 => (true, true),
            3 => (true, false),
            other => return Err(DecoderError::Variant(other)),
        };
        Ok(Self {
            apply_tag2a: a,
            apply_tag2b: b,
        })
    }

    /// Variant number, or `None` for the unused combination (false, true).
    pub fn number(&self) -> Option<u8> {
        match (self.apply_tag2a, self.apply_tag2b) {
            (false, false) => Some(1),
            (true, true) => Some(2),
            (true, false) => Some(3),
            (false, true) => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecoderConfig {
    pub mode: FusionMode,
    pub flags: VariantFlags,
    /// Under Early fusion, a scene without interactions attends over
    /// attributes alone instead of failing.
    pub attribute_only_fallback: bool,
}

impl DecoderConfig {
    pub fn new(mode: FusionMode, variant: u8) -> Result<Self, DecoderError> {
        Ok(Self {
            mode,
            flags: VariantFlags::variant(variant)?,
            attribute_only_fallback: true,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderState {
    pub h: Tensor,
    pub c: Tensor,
    /// Sum of the embeddings of every token consumed so far.
    pub embed_sum: Tensor,
    pub t: usize,
}

impl DecoderState {
    /// Folds a consumed token's embedding into the running sum.
    pub fn absorb(&self, embedding: &Tensor) -> DecoderState {
        let mut next = self.clone();
        next.embed_sum.add_assign(embedding);
        next
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Attention {
    pub alpha: Tensor,
    pub alpha_prime: Option<Tensor>,
}

/// Values of one decoding step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepTrace {
    pub token_in: TokenId,
    pub p_raw: Tensor,
    pub p: Tensor,
    pub q_raw: Tensor,
    pub q: Tensor,
    pub attention: Attention,
    pub gate: Tensor,
    pub h: Tensor,
    pub c: Tensor,
    pub embed_sum: Tensor,
    pub logits: Tensor,
    pub token_out: TokenId,
}

/// Argmax over logits, never choosing PAD or BOS; ties go to the lowest id.
pub fn greedy_token(logits: &Tensor) -> TokenId {
    let mut best = None;
    for (id, &v) in logits.data().iter().enumerate() {
        if id == PAD || id == BOS {
            continue;
        }
        match best {
            Some((_, b)) if v <= b => {}
            _ => best = Some((id, v)),
        }
    }
    best.map(|(id, _)| id).unwrap_or(EOS)
}

/// Mean negative log-likelihood of `target[k+1]` under `logits[k]`, PAD excluded.
pub fn sequence_loss(logits: &[Tensor], target: &[TokenId]) -> Result<f64, DecoderError> {
    let mut g = Graph::new();
    let vars: Vec<_> = logits.iter().map(|l| g.leaf(l.clone())).collect();
    let loss = session::sequence_loss_on(&mut g, &vars, target)?;
    Ok(g.value(loss).data()[0])
}

/// Tensor-level decoder over borrowed parameters.
#[derive(Debug, Clone, Copy)]
pub struct Decoder<'p> {
    pub params: &'p ModelParams,
    pub config: DecoderConfig,
}

impl<'p> Decoder<'p> {
    pub fn new(params: &'p ModelParams, config: DecoderConfig) -> Self {
        Self { params, config }
    }

    fn with_session<T>(
        &self,
        f: impl FnOnce(&mut Session<'_>) -> Result<T, DecoderError>,
    ) -> Result<T, DecoderError> {
        let mut g = Graph::new();
        let mut s = Session::new(&mut g, self.params, self.config);
        f(&mut s)
    }

    pub fn init_state(&self, v_bar: &Tensor) -> Result<DecoderState, DecoderError> {
        let d = self.params.dims().feature;
        if v_bar.shape() != [1, d] {
            return Err(DecoderError::Dimension(format!(
                "v_bar has shape {:?}, expected [1, {d}]",
                v_bar.shape()
            )));
        }
        self.with_session(|s| {
            let vb = s.leaf(v_bar.clone());
            let st = s.init_state(vb)?;
            Ok(state_values(s, st))
        })
    }

    pub fn attend(
        &self,
        h_prev: &Tensor,
        feats: &RegionFeatureSet,
    ) -> Result<(Attention, Tensor), DecoderError> {
        self.check_hidden(h_prev)?;
        self.with_session(|s| {
            let ctx = s.image(feats)?;
            let h = s.leaf(h_prev.clone());
            let a = s.attend(h, &ctx)?;
            Ok((attention_values(s, &a), s.value(a.v_hat).clone()))
        })
    }

    /// `S = tanh(mean(v ∪ v′) · W_S)`.
    pub fn semantic_vector(&self, feats: &RegionFeatureSet) -> Result<Tensor, DecoderError> {
        self.with_session(|s| {
            let ctx = s.image(feats)?;
            Ok(s.value(ctx.semantic).clone())
        })
    }

    /// Correction of the visual input `q` (dim `D`).
    pub fn semantic_correct_q(
        &self,
        q: &Tensor,
        semantic: &Tensor,
    ) -> Result<Tensor, DecoderError> {
        self.correct(q, semantic, self.params.dims().feature, true)
    }

    /// Correction of the word input `p` (dim `e`).
    pub fn semantic_correct_p(
        &self,
        p: &Tensor,
        semantic: &Tensor,
    ) -> Result<Tensor, DecoderError> {
        self.correct(p, semantic, self.params.dims().embed, false)
    }

    fn correct(
        &self,
        x: &Tensor,
        semantic: &Tensor,
        dim: usize,
        visual: bool,
    ) -> Result<Tensor, DecoderError> {
        if x.shape() != [1, dim] {
            return Err(DecoderError::Dimension(format!(
                "input has shape {:?}, expected [1, {dim}]",
                x.shape()
            )));
        }
        self.check_hidden(semantic)?;
        self.with_session(|s| {
            let xv = s.leaf(x.clone());
            let sv = s.leaf(semantic.clone());
            let out = if visual {
                s.correct_q(xv, sv)?
            } else {
                s.correct_p(xv, sv)?
            };
            Ok(s.value(out).clone())
        })
    }

    /// Gate from the state's hidden vector and embedding sum.
    pub fn tpr_gate(&self, state: &DecoderState, v_x: &Tensor) -> Result<Tensor, DecoderError> {
        self.check_hidden(&state.h)?;
        self.check_hidden(v_x)?;
        self.with_session(|s| {
            let st = s.load_state(state);
            let vx = s.leaf(v_x.clone());
            let t = s.tpr_gate(st.h, st.embed_sum, vx)?;
            Ok(s.value(t).clone())
        })
    }

    /// `v_x = mean(v ∪ v′) · W_x`.
    pub fn compose_vx(&self, feats: &RegionFeatureSet) -> Result<Tensor, DecoderError> {
        self.with_session(|s| {
            let ctx = s.image(feats)?;
            Ok(s.value(ctx.v_x).clone())
        })
    }

    /// LSTM block; `state.embed_sum` must already include the consumed token.
    pub fn cell_step(
        &self,
        p: &Tensor,
        q: &Tensor,
        gate: &Tensor,
        state: &DecoderState,
    ) -> Result<(Tensor, DecoderState), DecoderError> {
        self.with_session(|s| {
            let st = s.load_state(state);
            let (pv, qv, tv) = (s.leaf(p.clone()), s.leaf(q.clone()), s.leaf(gate.clone()));
            let (logits, next) = s.cell(pv, qv, tv, st)?;
            Ok((s.value(logits).clone(), state_values(s, next)))
        })
    }

    /// One greedy step from `state` consuming `prev_token`.
    pub fn decode_step(
        &self,
        state: &DecoderState,
        feats: &RegionFeatureSet,
        semantic: &Tensor,
        prev_token: TokenId,
    ) -> Result<(TokenId, DecoderState), DecoderError> {
        self.with_session(|s| {
            let ctx = s.image_with_semantic(feats, Some(semantic))?;
            let st = s.load_state(state);
            let out = s.step(st, &ctx, prev_token)?;
            let token = greedy_token(s.value(out.logits));
            Ok((token, state_values(s, out.state)))
        })
    }

    /// Greedy rollout from BOS; at most `max_len` ids including BOS and EOS.
    pub fn generate_caption(
        &self,
        feats: &RegionFeatureSet,
        max_len: usize,
    ) -> Result<TokenSequence, DecoderError> {
        Ok(self.generate_traced(feats, max_len)?.0)
    }

    pub fn generate_traced(
        &self,
        feats: &RegionFeatureSet,
        max_len: usize,
    ) -> Result<(TokenSequence, Vec<StepTrace>), DecoderError> {
        if max_len < 2 {
            return Err(DecoderError::Dimension(format!(
                "max_len must be >= 2, got {max_len}"
            )));
        }
        self.with_session(|s| {
            let ctx = s.image(feats)?;
            let mut state = s.init_state(ctx.v_bar)?;
            let mut ids = vec![BOS];
            let mut traces = Vec::new();
            while ids.len() < max_len - 1 {
                let prev = *ids.last().expect("nonempty");
                let out = s.step(state, &ctx, prev)?;
                let token = greedy_token(s.value(out.logits));
                traces.push(trace_values(s, &out, prev, token));
                state = out.state;
                ids.push(token);
                if token == EOS {
                    break;
                }
            }
            if *ids.last().expect("nonempty") != EOS {
                ids.push(EOS);
            }
            let seq =
                TokenSequence::new(ids).map_err(|e| DecoderError::Dimension(e.to_string()))?;
            Ok((seq, traces))
        })
    }

    /// Teacher-forced traces over `target`, with the greedy choice recorded per step.
    pub fn teacher_forced_trace(
        &self,
        feats: &RegionFeatureSet,
        target: &[TokenId],
    ) -> Result<(f64, Vec<StepTrace>), DecoderError> {
        self.with_session(|s| {
            let ctx = s.image(feats)?;
            let (loss, steps) = s.teacher_forced(&ctx, target)?;
            let traces = steps
                .iter()
                .zip(target)
                .map(|(st, &tok)| {
                    let out = greedy_token(s.value(st.logits));
                    trace_values(s, st, tok, out)
                })
                .collect();
            Ok((s.value(loss).data()[0], traces))
        })
    }

    /// Teacher-forced mean NLL of `target`.
    pub fn loss(&self, feats: &RegionFeatureSet, target: &[TokenId]) -> Result<f64, DecoderError> {
        self.with_session(|s| {
            let ctx = s.image(feats)?;
            let (loss, _) = s.teacher_forced(&ctx, target)?;
            Ok(s.value(loss).data()[0])
        })
    }

    fn check_hidden(&self, t: &Tensor) -> Result<(), DecoderError> {
        let d = self.params.dims().hidden;
        if t.shape() != [1, d] {
            return Err(DecoderError::Dimension(format!(
                "expected [1, {d}], got {:?}",
                t.shape()
            )));
        }
        Ok(())
    }
}

fn state_values(s: &Session<'_>, st: StateVars) -> DecoderState {
    DecoderState {
        h: s.value(st.h).clone(),
        c: s.value(st.c).clone(),
        embed_sum: s.value(st.embed_sum).clone(),
        t: st.t,
    }
}

fn attention_values(s: &Session<'_>, a: &AttentionVars) -> Attention {
    Attention {
        alpha: s.value(a.alpha).clone(),
        alpha_prime: a.alpha_prime.map(|v| s.value(v).clone()),
    }
}

fn trace_values(
    s: &Session<'_>,
    out: &StepVars,
    token_in: TokenId,
    token_out: TokenId,
) -> StepTrace {
    StepTrace {
        token_in,
        p_raw: s.value(out.p_raw).clone(),
        p: s.value(out.p).clone(),
        q_raw: s.value(out.q_raw).clone(),
        q: s.value(out.q).clone(),
        attention: attention_values(s, &out.attention),
        gate: s.value(out.gate).clone(),
        h: s.value(out.state.h).clone(),
        c: s.value(out.state.c).clone(),
        embed_sum: s.value(out.state.embed_sum).clone(),
        logits: s.value(out.logits).clone(),
        token_out,
    }
}
