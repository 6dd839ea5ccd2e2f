use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Dims;
use crate::error::{Error, Result};

/// Which sub-network a tensor belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Group {
    Attention,
    Gate,
    Proposal,
    TransitionLinear,
    TransitionVariance,
    Emission,
    Embedding,
    BackwardGru,
    ForwardGru,
    Combiner,
    Initial,
}

macro_rules! dim {
    ($d:ident, l) => { $d.latent };
    ($d:ident, l2) => { 2 * $d.latent };
    ($d:ident, h) => { $d.hidden };
    ($d:ident, a) => { $d.attn_hidden };
    ($d:ident, p) => { $d.n_pp };
    ($d:ident, r) => { $d.n_rr };
}

macro_rules! param_table {
    ($($variant:ident => $name:literal, $group:ident, [$($dim:ident),+];)*) => {
        /// Every trainable tensor, in checkpoint order.
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
        pub enum Param { $($variant),* }

        impl Param {
            pub const ALL: &'static [Param] = &[$(Param::$variant),*];

            pub fn name(self) -> &'static str {
                match self { $(Param::$variant => $name),* }
            }

            pub fn group(self) -> Group {
                match self { $(Param::$variant => Group::$group),* }
            }

            pub fn shape(self, d: &Dims) -> Vec<usize> {
                match self { $(Param::$variant => vec![$(dim!(d, $dim)),+]),* }
            }
        }
    };
}

param_table! {
    AttnWx => "attn.w_x", Attention, [l, p];
    AttnWs => "attn.w_s", Attention, [a, l2];
    AttnBs => "attn.b_s", Attention, [a];
    AttnVs => "attn.v_s", Attention, [a];
    GateW1 => "trans.gate.w1", Gate, [h, l2];
    GateB1 => "trans.gate.b1", Gate, [h];
    GateW2 => "trans.gate.w2", Gate, [h, h];
    GateB2 => "trans.gate.b2", Gate, [h];
    GateW3 => "trans.gate.w3", Gate, [l, h];
    GateB3 => "trans.gate.b3", Gate, [l];
    PropW1 => "trans.prop.w1", Proposal, [h, l2];
    PropB1 => "trans.prop.b1", Proposal, [h];
    PropW2 => "trans.prop.w2", Proposal, [h, h];
    PropB2 => "trans.prop.b2", Proposal, [h];
    PropW3 => "trans.prop.w3", Proposal, [l, h];
    PropB3 => "trans.prop.b3", Proposal, [l];
    TransWmu => "trans.w_mu", TransitionLinear, [l, l2];
    TransBmu => "trans.b_mu", TransitionLinear, [l];
    TransWvar => "trans.w_var", TransitionVariance, [l, l];
    TransBvar => "trans.b_var", TransitionVariance, [l];
    EmitW1 => "emit.w1", Emission, [h, l];
    EmitB1 => "emit.b1", Emission, [h];
    EmitW2 => "emit.w2", Emission, [h, h];
    EmitB2 => "emit.b2", Emission, [h];
    EmitW3 => "emit.w3", Emission, [r, h];
    EmitB3 => "emit.b3", Emission, [r];
    PostWy => "post.w_y", Embedding, [h, r];
    BwdWr => "post.bwd.w_r", BackwardGru, [h, h];
    BwdUr => "post.bwd.u_r", BackwardGru, [h, h];
    BwdBr => "post.bwd.b_r", BackwardGru, [h];
    BwdWu => "post.bwd.w_u", BackwardGru, [h, h];
    BwdUu => "post.bwd.u_u", BackwardGru, [h, h];
    BwdBu => "post.bwd.b_u", BackwardGru, [h];
    BwdWn => "post.bwd.w_n", BackwardGru, [h, h];
    BwdUn => "post.bwd.u_n", BackwardGru, [h, h];
    BwdBn => "post.bwd.b_n", BackwardGru, [h];
    FwdWr => "post.fwd.w_r", ForwardGru, [h, h];
    FwdUr => "post.fwd.u_r", ForwardGru, [h, h];
    FwdBr => "post.fwd.b_r", ForwardGru, [h];
    FwdWu => "post.fwd.w_u", ForwardGru, [h, h];
    FwdUu => "post.fwd.u_u", ForwardGru, [h, h];
    FwdBu => "post.fwd.b_u", ForwardGru, [h];
    FwdWn => "post.fwd.w_n", ForwardGru, [h, h];
    FwdUn => "post.fwd.u_n", ForwardGru, [h, h];
    FwdBn => "post.fwd.b_n", ForwardGru, [h];
    CombWh => "post.comb.w_h", Combiner, [h, l];
    CombBh => "post.comb.b_h", Combiner, [h];
    CombWmu => "post.comb.w_mu", Combiner, [l, h];
    CombBmu => "post.comb.b_mu", Combiner, [l];
    CombWvar => "post.comb.w_var", Combiner, [l, h];
    CombBvar => "post.comb.b_var", Combiner, [l];
    ZInit => "z_init", Initial, [l];
}

impl Param {
    pub fn from_name(name: &str) -> Option<Param> {
        Param::ALL.iter().copied().find(|p| p.name() == name)
    }

    pub fn is_matrix(self) -> bool {
        self.shape(&Dims::tiny()).len() == 2
    }
}

/// Gate output bias at initialization; keeps the transition mostly linear early on.
pub const GATE_BIAS_INIT: f64 = -2.0;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self { shape, data: vec![0.0; n] }
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        if self.shape.len() > 1 {
            self.shape[1]
        } else {
            1
        }
    }
}

/// All trainable weights of the score, transition, emission and posterior
/// networks plus the learned initial latent state. Also used, zeroed, as the
/// gradient accumulator and for optimizer moments.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSet {
    dims: Dims,
    tensors: Vec<Tensor>,
}

impl ParameterSet {
    pub fn zeros(dims: Dims) -> Self {
        let tensors = Param::ALL.iter().map(|p| Tensor::zeros(p.shape(&dims))).collect();
        Self { dims, tensors }
    }

    /// Weights uniform in ±1/sqrt(fan_in), biases zero, gate output bias -2,
    /// `z_init` zero.
    pub fn init(dims: Dims, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut set = Self::zeros(dims);
        for &p in Param::ALL {
            let t = &mut set.tensors[p as usize];
            if p.is_matrix() {
                let bound = 1.0 / (t.cols() as f64).sqrt();
                t.data.iter_mut().for_each(|v| *v = rng.random_range(-bound..bound));
            } else if p == Param::AttnVs {
                let bound = 1.0 / (t.rows() as f64).sqrt();
                t.data.iter_mut().for_each(|v| *v = rng.random_range(-bound..bound));
            } else if p == Param::GateB3 {
                t.data.iter_mut().for_each(|v| *v = GATE_BIAS_INIT);
            }
        }
        set
    }

    pub fn dims(&self) -> &Dims {
        &self.dims
    }

    pub fn get(&self, p: Param) -> &Tensor {
        &self.tensors[p as usize]
    }

    pub fn get_mut(&mut self, p: Param) -> &mut Tensor {
        &mut self.tensors[p as usize]
    }

    pub fn iter(&self) -> impl Iterator<Item = (Param, &Tensor)> {
        Param::ALL.iter().copied().zip(self.tensors.iter())
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (Param, &mut Tensor)> {
        Param::ALL.iter().copied().zip(self.tensors.iter_mut())
    }

    /// Total number of scalars.
    pub fn count(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    pub fn add_assign(&mut self, other: &ParameterSet) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            a.data.iter_mut().zip(&b.data).for_each(|(x, y)| *x += y);
        }
    }

    pub fn scale(&mut self, k: f64) {
        self.tensors.iter_mut().flat_map(|t| t.data.iter_mut()).for_each(|v| *v *= k);
    }

    pub fn global_norm(&self) -> f64 {
        self.tensors.iter().flat_map(|t| &t.data).map(|v| v * v).sum::<f64>().sqrt()
    }

    /// First non-finite tensor, if any.
    pub fn first_non_finite(&self) -> Option<Param> {
        self.iter().find(|(_, t)| t.data.iter().any(|v| !v.is_finite())).map(|(p, _)| p)
    }

    pub fn same_shape(&self, other: &ParameterSet) -> bool {
        self.dims == other.dims
    }

    pub(crate) fn from_tensors(dims: Dims, tensors: Vec<Tensor>) -> Result<Self> {
        if tensors.len() != Param::ALL.len() {
            return Err(Error::Shape(format!("expected {} tensors, got {}", Param::ALL.len(), tensors.len())));
        }
        for (&p, t) in Param::ALL.iter().zip(&tensors) {
            if t.shape != p.shape(&dims) || t.data.len() != t.shape.iter().product::<usize>() {
                return Err(Error::Shape(format!("{}: shape {:?} != {:?}", p.name(), t.shape, p.shape(&dims))));
            }
        }
        Ok(Self { dims, tensors })
    }
}
