use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::tensor::Tensor;

/// Model sizes: feature dim `D`, hidden `d`, embedding `e`, attention `att`, vocabulary `|V|`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub feature: usize,
    pub hidden: usize,
    pub embed: usize,
    pub attention: usize,
    pub vocab: usize,
}

impl ModelDims {
    pub fn param_count(&self) -> usize {
        Param::ALL
            .iter()
            .map(|p| p.shape(self).iter().product::<usize>())
            .sum()
    }
}

macro_rules! params {
    ($($variant:ident => $name:literal, |$d:ident| $shape:expr;)*) => {
        /// Every learnable tensor of the decoder.
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
        pub enum Param { $($variant),* }

        impl Param {
            pub const ALL: &'static [Param] = &[$(Param::$variant),*];

            pub fn name(self) -> &'static str {
                match self { $(Param::$variant => $name),* }
            }

            pub fn shape(self, dims: &ModelDims) -> [usize; 2] {
                match self { $(Param::$variant => { let $d = dims; $shape }),* }
            }
        }
    };
}

params! {
    InitHidden => "w_h0", |m| [m.feature, m.hidden];
    InitCell => "w_c0", |m| [m.feature, m.hidden];
    AttnHidden => "w_h", |m| [m.hidden, m.attention];
    AttnScore => "w_a", |m| [m.attention, m.feature];
    Embedding => "w_e", |m| [m.vocab, m.embed];
    ComposeX => "w_x", |m| [m.feature, m.hidden];
    Semantic => "w_sem", |m| [m.feature, m.hidden];
    S11 => "w_s11", |m| [m.hidden, m.hidden];
    S12 => "w_s12", |m| [m.hidden, m.hidden];
    S21 => "w_s21", |m| [m.hidden, m.hidden];
    S22 => "w_s22", |m| [m.hidden, m.hidden];
    W1 => "w_w1", |m| [m.embed, m.hidden];
    W2 => "w_w2", |m| [m.embed, m.hidden];
    B1 => "b_1", |m| [1, m.hidden];
    B2 => "b_2", |m| [1, m.hidden];
    B3 => "b_3", |m| [1, m.hidden];
    CorrectQGate => "w_hm_q", |m| [m.hidden, m.feature];
    CorrectQ => "w_hn_q", |m| [m.feature, m.feature];
    CorrectPGate => "w_hm_p", |m| [m.hidden, m.embed];
    CorrectP => "w_hn_p", |m| [m.embed, m.embed];
    Pi => "w_pi", |m| [m.embed, m.hidden];
    Pf => "w_pf", |m| [m.embed, m.hidden];
    Po => "w_po", |m| [m.embed, m.hidden];
    Pg => "w_pg", |m| [m.embed, m.hidden];
    Qi => "w_qi", |m| [m.feature, m.hidden];
    Qf => "w_qf", |m| [m.feature, m.hidden];
    Qo => "w_qo", |m| [m.feature, m.hidden];
    Qg => "w_qg", |m| [m.feature, m.hidden];
    Ti => "w_ti", |m| [m.hidden, m.hidden];
    Tf => "w_tf", |m| [m.hidden, m.hidden];
    To => "w_to", |m| [m.hidden, m.hidden];
    Tg => "w_tg", |m| [m.hidden, m.hidden];
    Bi => "b_i", |m| [1, m.hidden];
    Bf => "b_f", |m| [1, m.hidden];
    Bo => "b_o", |m| [1, m.hidden];
    Bg => "b_g", |m| [1, m.hidden];
    Output => "w_hx", |m| [m.hidden, m.vocab];
}

pub const INIT_SCALE: f64 = 0.08;

/// All decoder weights, stored in [`Param::ALL`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    dims: ModelDims,
    tensors: Vec<Tensor>,
}

impl ModelParams {
    /// Uniform in `[-scale, scale]`, drawn in [`Param::ALL`] order from one seeded stream.
    pub fn init_uniform(dims: ModelDims, seed: u64, scale: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tensors = Param::ALL
            .iter()
            .map(|p| {
                let shape = p.shape(&dims);
                let n = shape[0] * shape[1];
                let data = (0..n).map(|_| rng.random_range(-scale..=scale)).collect();
                Tensor::new(shape.to_vec(), data).expect("param shapes are positive")
            })
            .collect();
        Self { dims, tensors }
    }

    pub fn init(dims: ModelDims, seed: u64) -> Self {
        Self::init_uniform(dims, seed, INIT_SCALE)
    }

    /// Rebuilds from tensors in [`Param::ALL`] order, checking every shape.
    pub fn from_tensors(dims: ModelDims, tensors: Vec<Tensor>) -> Result<Self, String> {
        if tensors.len() != Param::ALL.len() {
            return Err(format!(
                "expected {} tensors, got {}",
                Param::ALL.len(),
                tensors.len()
            ));
        }
        for (p, t) in Param::ALL.iter().zip(&tensors) {
            if t.shape() != p.shape(&dims) {
                return Err(format!(
                    "{} has shape {:?}, expected {:?}",
                    p.name(),
                    t.shape(),
                    p.shape(&dims)
                ));
            }
            if !t.is_finite() {
                return Err(format!("{} has non-finite entries", p.name()));
            }
        }
        Ok(Self { dims, tensors })
    }

    pub fn dims(&self) -> &ModelDims {
        &self.dims
    }

    pub fn get(&self, p: Param) -> &Tensor {
        &self.tensors[p as usize]
    }

    pub fn get_mut(&mut self, p: Param) -> &mut Tensor {
        &mut self.tensors[p as usize]
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn named(&self) -> impl Iterator<Item = (&'static str, &Tensor)> {
        Param::ALL.iter().map(|p| p.name()).zip(&self.tensors)
    }
}
