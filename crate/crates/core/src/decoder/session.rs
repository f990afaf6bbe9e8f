//! Graph-level decoder: every operation of the step is recorded on a tape so
//! the same code serves inference, teacher-forced training and gradient checks.

use super::params::{ModelDims, ModelParams, Param};
use super::{DecoderConfig, DecoderError, FusionMode};
use crate::graph::{Graph, Var};
use crate::scene::{RegionFeatureSet, TokenId, PAD};
use crate::tensor::Tensor;

/// Per-image tape inputs. Feature matrices are stored transposed as well so
/// scores are a single row-times-matrix product.
#[derive(Debug, Clone)]
pub struct ImageContext {
    pub attrs: Var,
    pub attrs_t: Var,
    pub inter: Option<(Var, Var)>,
    pub stacked: Var,
    pub stacked_t: Var,
    pub v_bar: Var,
    pub v_x: Var,
    pub semantic: Var,
    pub k1: usize,
    pub k2: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct StateVars {
    pub h: Var,
    pub c: Var,
    pub embed_sum: Var,
    pub t: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct AttentionVars {
    /// Late: joint weights over all `k₁ + k₂` rows. Early: attribute weights.
    pub alpha: Var,
    /// Early only: interaction weights.
    pub alpha_prime: Option<Var>,
    pub v_hat: Var,
}

/// Every intermediate of one step, for tracing.
#[derive(Debug, Clone, Copy)]
pub struct StepVars {
    pub p_raw: Var,
    pub p: Var,
    pub q_raw: Var,
    pub q: Var,
    pub attention: AttentionVars,
    pub gate: Var,
    pub logits: Var,
    pub state: StateVars,
}

pub struct Session<'g> {
    graph: &'g mut Graph,
    vars: Vec<Var>,
    dims: ModelDims,
    config: DecoderConfig,
}

impl<'g> Session<'g> {
    /// Registers every parameter as a leaf on `graph`.
    pub fn new(graph: &'g mut Graph, params: &ModelParams, config: DecoderConfig) -> Self {
        let vars = params
            .tensors()
            .iter()
            .map(|t| graph.leaf(t.clone()))
            .collect();
        Self {
            graph,
            vars,
            dims: *params.dims(),
            config,
        }
    }

    /// Uses leaves already on `graph`, in [`Param::ALL`] order.
    pub fn from_vars(
        graph: &'g mut Graph,
        vars: Vec<Var>,
        dims: ModelDims,
        config: DecoderConfig,
    ) -> Self {
        assert_eq!(vars.len(), Param::ALL.len());
        Self {
            graph,
            vars,
            dims,
            config,
        }
    }

    pub fn graph(&self) -> &Graph {
        self.graph
    }

    pub fn value(&self, v: Var) -> &Tensor {
        self.graph.value(v)
    }

    pub fn param_vars(&self) -> &[Var] {
        &self.vars
    }

    pub fn config(&self) -> &DecoderConfig {
        &self.config
    }

    fn p(&self, p: Param) -> Var {
        self.vars[p as usize]
    }

    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.graph.leaf(t)
    }

    /// `x · W + b` style helper: Σ matmuls plus an optional bias.
    fn affine(&mut self, terms: &[(Var, Param)], bias: Option<Param>) -> Result<Var, DecoderError> {
        let mut acc: Option<Var> = None;
        for &(x, w) in terms {
            let wv = self.p(w);
            let y = self.graph.matmul(x, wv)?;
            acc = Some(match acc {
                Some(a) => self.graph.add(a, y)?,
                None => y,
            });
        }
        let mut acc = acc.expect("at least one term");
        if let Some(b) = bias {
            let bv = self.p(b);
            acc = self.graph.add(acc, bv)?;
        }
        Ok(acc)
    }

    pub fn image(&mut self, feats: &RegionFeatureSet) -> Result<ImageContext, DecoderError> {
        self.image_with_semantic(feats, None)
    }

    /// Loads features; `semantic` overrides the computed `S` when given.
    pub fn image_with_semantic(
        &mut self,
        feats: &RegionFeatureSet,
        semantic: Option<&Tensor>,
    ) -> Result<ImageContext, DecoderError> {
        if feats.dim() != self.dims.feature {
            return Err(DecoderError::Dimension(format!(
                "features have dim {}, model expects {}",
                feats.dim(),
                self.dims.feature
            )));
        }
        let attrs = self.graph.leaf(feats.attributes().clone());
        let attrs_t = self.graph.leaf(feats.attributes().transpose()?);
        let inter = match feats.interactions() {
            Some(t) => Some((self.graph.leaf(t.clone()), self.graph.leaf(t.transpose()?))),
            None => None,
        };
        let stacked_t = feats.stacked();
        let stacked = self.graph.leaf(stacked_t.clone());
        let stacked_t = self.graph.leaf(stacked_t.transpose()?);
        let v_bar = self.graph.leaf(feats.v_bar().clone());
        let pooled = self.graph.leaf(feats.pooled_mean());
        let v_x = self.affine(&[(pooled, Param::ComposeX)], None)?;
        let semantic = match semantic {
            Some(s) => {
                if s.shape() != [1, self.dims.hidden] {
                    return Err(DecoderError::Dimension(format!(
                        "semantic vector {:?}, expected [1, {}]",
                        s.shape(),
                        self.dims.hidden
                    )));
                }
                self.graph.leaf(s.clone())
            }
            None => {
                let z = self.affine(&[(pooled, Param::Semantic)], None)?;
                self.graph.tanh(z)?
            }
        };
        Ok(ImageContext {
            attrs,
            attrs_t,
            inter,
            stacked,
            stacked_t,
            v_bar,
            v_x,
            semantic,
            k1: feats.k1(),
            k2: feats.k2(),
        })
    }

    /// `h₀ = v̄ · W_h0`, `c₀ = v̄ · W_c0`, empty embedding sum.
    pub fn init_state(&mut self, v_bar: Var) -> Result<StateVars, DecoderError> {
        let h = self.affine(&[(v_bar, Param::InitHidden)], None)?;
        let c = self.affine(&[(v_bar, Param::InitCell)], None)?;
        let embed_sum = self.graph.leaf(Tensor::zeros(&[1, self.dims.embed]));
        Ok(StateVars {
            h,
            c,
            embed_sum,
            t: 0,
        })
    }

    pub fn load_state(&mut self, state: &super::DecoderState) -> StateVars {
        StateVars {
            h: self.graph.leaf(state.h.clone()),
            c: self.graph.leaf(state.c.clone()),
            embed_sum: self.graph.leaf(state.embed_sum.clone()),
            t: state.t,
        }
    }

    /// Scores `a = (tanh(h · W_h) · W_a) · Vᵀ`, normalized per fusion mode.
    pub fn attend(
        &mut self,
        h_prev: Var,
        ctx: &ImageContext,
    ) -> Result<AttentionVars, DecoderError> {
        let u = self.affine(&[(h_prev, Param::AttnHidden)], None)?;
        let u = self.graph.tanh(u)?;
        let query = self.affine(&[(u, Param::AttnScore)], None)?;
        match self.config.mode {
            FusionMode::Late => {
                let scores = self.graph.matmul(query, ctx.stacked_t)?;
                let alpha = self.graph.softmax(scores)?;
                let v_hat = self.graph.matmul(alpha, ctx.stacked)?;
                Ok(AttentionVars {
                    alpha,
                    alpha_prime: None,
                    v_hat,
                })
            }
            FusionMode::Early => {
                let scores = self.graph.matmul(query, ctx.attrs_t)?;
                let alpha = self.graph.softmax(scores)?;
                let attr_sum = self.graph.matmul(alpha, ctx.attrs)?;
                match ctx.inter {
                    Some((inter, inter_t)) => {
                        let scores2 = self.graph.matmul(query, inter_t)?;
                        let alpha2 = self.graph.softmax(scores2)?;
                        let inter_sum = self.graph.matmul(alpha2, inter)?;
                        let both = self.graph.add(attr_sum, inter_sum)?;
                        let v_hat = self.graph.scale(both, 0.5)?;
                        Ok(AttentionVars {
                            alpha,
                            alpha_prime: Some(alpha2),
                            v_hat,
                        })
                    }
                    None if self.config.attribute_only_fallback => Ok(AttentionVars {
                        alpha,
                        alpha_prime: None,
                        v_hat: attr_sum,
                    }),
                    None => Err(DecoderError::DegenerateBranch),
                }
            }
        }
    }

    /// `(S · W_hm) ⊙ (x · W_hn)` on the visual path.
    pub fn correct_q(&mut self, q: Var, semantic: Var) -> Result<Var, DecoderError> {
        let gate = self.affine(&[(semantic, Param::CorrectQGate)], None)?;
        let proj = self.affine(&[(q, Param::CorrectQ)], None)?;
        Ok(self.graph.mul(gate, proj)?)
    }

    /// `(S · W_hm) ⊙ (x · W_hn)` on the word path.
    pub fn correct_p(&mut self, p: Var, semantic: Var) -> Result<Var, DecoderError> {
        let gate = self.affine(&[(semantic, Param::CorrectPGate)], None)?;
        let proj = self.affine(&[(p, Param::CorrectP)], None)?;
        Ok(self.graph.mul(gate, proj)?)
    }

    /// `T = [σ(h·W_s11 + Σe·W_w1 + b₁)·W_s12] ⊙ tanh((v_x ⊙ σ(h·W_s21 + Σe·W_w2 + b₂))·W_s22 + b₃)`.
    pub fn tpr_gate(&mut self, h_prev: Var, embed_sum: Var, v_x: Var) -> Result<Var, DecoderError> {
        let a = self.affine(
            &[(h_prev, Param::S11), (embed_sum, Param::W1)],
            Some(Param::B1),
        )?;
        let a = self.graph.sigmoid(a)?;
        let first = self.affine(&[(a, Param::S12)], None)?;

        let b = self.affine(
            &[(h_prev, Param::S21), (embed_sum, Param::W2)],
            Some(Param::B2),
        )?;
        let b = self.graph.sigmoid(b)?;
        let ctx = self.graph.mul(v_x, b)?;
        let second = self.affine(&[(ctx, Param::S22)], Some(Param::B3))?;
        let second = self.graph.tanh(second)?;
        Ok(self.graph.mul(first, second)?)
    }

    /// Three-input LSTM block. The caller has already folded the consumed
    /// token into `state.embed_sum`.
    pub fn cell(
        &mut self,
        p: Var,
        q: Var,
        gate: Var,
        state: StateVars,
    ) -> Result<(Var, StateVars), DecoderError> {
        use Param::*;
        let i = self.affine(&[(p, Pi), (q, Qi), (gate, Ti)], Some(Bi))?;
        let i = self.graph.sigmoid(i)?;
        let f = self.affine(&[(p, Pf), (q, Qf), (gate, Tf)], Some(Bf))?;
        let f = self.graph.sigmoid(f)?;
        let o = self.affine(&[(p, Po), (q, Qo), (gate, To)], Some(Bo))?;
        let o = self.graph.sigmoid(o)?;
        let g = self.affine(&[(p, Pg), (q, Qg), (gate, Tg)], Some(Bg))?;
        let g = self.graph.tanh(g)?;

        let keep = self.graph.mul(f, state.c)?;
        let write = self.graph.mul(i, g)?;
        let c = self.graph.add(keep, write)?;
        let tc = self.graph.tanh(c)?;
        let h = self.graph.mul(o, tc)?;
        let logits = self.affine(&[(h, Output)], None)?;
        Ok((
            logits,
            StateVars {
                h,
                c,
                embed_sum: state.embed_sum,
                t: state.t + 1,
            },
        ))
    }

    /// One full step consuming `prev_token`.
    pub fn step(
        &mut self,
        state: StateVars,
        ctx: &ImageContext,
        prev_token: TokenId,
    ) -> Result<StepVars, DecoderError> {
        if prev_token >= self.dims.vocab {
            return Err(DecoderError::Token(prev_token));
        }
        let emb = self.p(Param::Embedding);
        let p_raw = self.graph.select_row(emb, prev_token)?;
        let embed_sum = self.graph.add(state.embed_sum, p_raw)?;

        let attention = self.attend(state.h, ctx)?;
        let q_raw = attention.v_hat;
        let flags = self.config.flags;
        let q = if flags.apply_tag2a {
            self.correct_q(q_raw, ctx.semantic)?
        } else {
            q_raw
        };
        let p = if flags.apply_tag2b {
            self.correct_p(p_raw, ctx.semantic)?
        } else {
            p_raw
        };
        let gate = self.tpr_gate(state.h, embed_sum, ctx.v_x)?;
        let (logits, state) = self.cell(p, q, gate, StateVars { embed_sum, ..state })?;
        Ok(StepVars {
            p_raw,
            p,
            q_raw,
            q,
            attention,
            gate,
            logits,
            state,
        })
    }

    /// Mean negative log-likelihood of `target[k+1]` under `logits[k]`,
    /// skipping PAD targets.
    pub fn sequence_loss(
        &mut self,
        logits: &[Var],
        target: &[TokenId],
    ) -> Result<Var, DecoderError> {
        sequence_loss_on(self.graph, logits, target)
    }

    /// Teacher-forced rollout over `target` (which may carry trailing PADs),
    /// returning the loss node and per-step intermediates.
    pub fn teacher_forced(
        &mut self,
        ctx: &ImageContext,
        target: &[TokenId],
    ) -> Result<(Var, Vec<StepVars>), DecoderError> {
        if target.len() < 2 {
            return Err(DecoderError::Alignment {
                steps: 0,
                target_len: target.len(),
            });
        }
        let mut state = self.init_state(ctx.v_bar)?;
        let mut steps = Vec::with_capacity(target.len() - 1);
        for &tok in &target[..target.len() - 1] {
            let s = self.step(state, ctx, tok)?;
            state = s.state;
            steps.push(s);
        }
        let logits: Vec<Var> = steps.iter().map(|s| s.logits).collect();
        let loss = self.sequence_loss(&logits, target)?;
        Ok((loss, steps))
    }
}

/// Mean negative log-likelihood of `target[k+1]` under `logits[k]`,
/// skipping PAD targets.
pub(crate) fn sequence_loss_on(
    graph: &mut Graph,
    logits: &[Var],
    target: &[TokenId],
) -> Result<Var, DecoderError> {
    let misaligned = || DecoderError::Alignment {
        steps: logits.len(),
        target_len: target.len(),
    };
    if target.len() != logits.len() + 1 {
        return Err(misaligned());
    }
    let mut total: Option<Var> = None;
    let mut count = 0usize;
    for (&l, &tok) in logits.iter().zip(&target[1..]) {
        if tok == PAD {
            continue;
        }
        let ce = graph.cross_entropy(l, tok)?;
        total = Some(match total {
            Some(t) => graph.add(t, ce)?,
            None => ce,
        });
        count += 1;
    }
    let total = total.ok_or_else(misaligned)?;
    Ok(graph.scale(total, 1.0 / count as f64)?)
}
