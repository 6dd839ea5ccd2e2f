use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::params::{Param, ParameterSet};
use super::tape::{Tape, Var};
use super::{Dims, ModelOptions};

pub(crate) struct AttentionInputs {
    /// `W_x x_i`
    embedded: Vec<Var>,
    /// Input half of the score layer applied to each embedding.
    keys: Vec<Var>,
}

#[derive(Clone, Copy)]
struct GruCell {
    w_r: Param,
    u_r: Param,
    b_r: Param,
    w_u: Param,
    u_u: Param,
    b_u: Param,
    w_n: Param,
    u_n: Param,
    b_n: Param,
}

const BACKWARD_GRU: GruCell = GruCell {
    w_r: Param::BwdWr,
    u_r: Param::BwdUr,
    b_r: Param::BwdBr,
    w_u: Param::BwdWu,
    u_u: Param::BwdUu,
    b_u: Param::BwdBu,
    w_n: Param::BwdWn,
    u_n: Param::BwdUn,
    b_n: Param::BwdBn,
};

const FORWARD_GRU: GruCell = GruCell {
    w_r: Param::FwdWr,
    u_r: Param::FwdUr,
    b_r: Param::FwdBr,
    w_u: Param::FwdWu,
    u_u: Param::FwdUu,
    b_u: Param::FwdBu,
    w_n: Param::FwdWn,
    u_n: Param::FwdUn,
    b_n: Param::FwdBn,
};

#[derive(Clone, Copy)]
pub(crate) struct Step {
    pub mu: Var,
    pub var: Var,
    pub z: Var,
}

#[derive(Clone, Copy)]
pub(crate) struct PriorStep {
    pub alpha: Var,
    pub mu: Var,
    pub var: Var,
    pub z: Var,
    pub emission: Var,
}

pub(crate) struct ElboNodes {
    pub reconstruction: Var,
    pub kl: Vec<Var>,
    pub total: Var,
    pub posterior: Vec<Step>,
    pub context: Vec<Var>,
    pub attention: Vec<Var>,
}

pub(crate) struct Graph<'p> {
    pub tape: Tape<'p>,
    dims: Dims,
    opts: ModelOptions,
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParameterSet, opts: ModelOptions) -> Self {
        Self { tape: Tape::new(params), dims: *params.dims(), opts }
    }

    pub fn embed_inputs(&mut self, x: &[Vec<f64>]) -> AttentionInputs {
        let latent = self.dims.latent;
        let mut embedded = Vec::with_capacity(x.len());
        let mut keys = Vec::with_capacity(x.len());
        for row in x {
            let xi = self.tape.leaf(row.clone());
            let e = self.tape.affine(Param::AttnWx, None, xi);
            keys.push(self.tape.affine_cols(Param::AttnWs, latent, None, e));
            embedded.push(e);
        }
        AttentionInputs { embedded, keys }
    }

    /// `s_i = v_s . tanh(W_s [z; W_x x_i] + b_s)`, `alpha = softmax(s)`,
    /// context = `sum_i alpha_i W_x x_i`.
    pub fn attend(&mut self, z_prev: Var, inputs: &AttentionInputs) -> (Var, Var) {
        let query = self.tape.affine_cols(Param::AttnWs, 0, Some(Param::AttnBs), z_prev);
        let scores: Vec<Var> = inputs
            .keys
            .iter()
            .map(|&k| {
                let pre = self.tape.add(query, k);
                let h = self.tape.tanh(pre);
                self.tape.dot_param(Param::AttnVs, h)
            })
            .collect();
        let s = self.tape.concat(&scores);
        let alpha = self.tape.softmax(s);
        let c = self.tape.weighted_sum(alpha, &inputs.embedded);
        (c, alpha)
    }

    fn mlp3(&mut self, input: Var, layers: [(Param, Param); 3]) -> Var {
        let h1 = self.tape.affine(layers[0].0, Some(layers[0].1), input);
        let h1 = self.tape.relu(h1);
        let h2 = self.tape.affine(layers[1].0, Some(layers[1].1), h1);
        let h2 = self.tape.relu(h2);
        self.tape.affine(layers[2].0, Some(layers[2].1), h2)
    }

    /// Gated transition: the gate mixes a linear map of `[z; c]` with a
    /// nonlinear proposal; the variance comes from the proposal.
    pub fn transition(&mut self, z: Var, c: Var) -> (Var, Var) {
        let zc = self.tape.concat(&[z, c]);
        let gate_pre = self.mlp3(
            zc,
            [(Param::GateW1, Param::GateB1), (Param::GateW2, Param::GateB2), (Param::GateW3, Param::GateB3)],
        );
        let gate = self.tape.sigmoid(gate_pre);
        let proposal = self.mlp3(
            zc,
            [(Param::PropW1, Param::PropB1), (Param::PropW2, Param::PropB2), (Param::PropW3, Param::PropB3)],
        );
        let linear = self.tape.affine(Param::TransWmu, Some(Param::TransBmu), zc);
        let keep = self.tape.one_minus(gate);
        let a = self.tape.mul(keep, linear);
        let b = self.tape.mul(gate, proposal);
        let mu = self.tape.add(a, b);
        let rp = self.tape.relu(proposal);
        let pre = self.tape.affine(Param::TransWvar, Some(Param::TransBvar), rp);
        let sp = self.tape.softplus(pre);
        let var = self.tape.add_const(sp, self.opts.var_floor);
        (mu, var)
    }

    pub fn emit(&mut self, z: Var) -> Var {
        self.mlp3(z, [(Param::EmitW1, Param::EmitB1), (Param::EmitW2, Param::EmitB2), (Param::EmitW3, Param::EmitB3)])
    }

    fn gru_step(&mut self, cell: GruCell, x: Var, h: Var) -> Var {
        let t = &mut self.tape;
        let rx = t.affine(cell.w_r, Some(cell.b_r), x);
        let rh = t.affine(cell.u_r, None, h);
        let r_pre = t.add(rx, rh);
        let r = t.sigmoid(r_pre);
        let ux = t.affine(cell.w_u, Some(cell.b_u), x);
        let uh = t.affine(cell.u_u, None, h);
        let u_pre = t.add(ux, uh);
        let u = t.sigmoid(u_pre);
        let nx = t.affine(cell.w_n, Some(cell.b_n), x);
        let rh = t.mul(r, h);
        let nh = t.affine(cell.u_n, None, rh);
        let n_pre = t.add(nx, nh);
        let n = t.tanh(n_pre);
        let keep = t.one_minus(u);
        let a = t.mul(keep, n);
        let b = t.mul(u, h);
        t.add(a, b)
    }

    fn run_gru(&mut self, cell: GruCell, inputs: &[Var]) -> Var {
        let mut h = self.tape.leaf(vec![0.0; self.dims.hidden]);
        for &x in inputs {
            h = self.gru_step(cell, x, h);
        }
        h
    }

    fn sample(&mut self, mu: Var, var: Var, rng: &mut ChaCha8Rng) -> Var {
        let k = self.opts.noise_scale;
        let eps: Vec<f64> = (0..self.dims.latent).map(|_| k * rng.sample::<f64, _>(StandardNormal)).collect();
        let sd = self.tape.sqrt(var);
        let noise = self.tape.mul_const(sd, eps);
        self.tape.add(mu, noise)
    }

    /// Posterior steps `q(z_t | z_{t-1}, y)` with reparameterized samples.
    pub fn posterior(&mut self, y: &[Vec<f64>], rng: &mut ChaCha8Rng) -> Vec<Step> {
        let n = y.len();
        let emb: Vec<Var> = y
            .iter()
            .map(|row| {
                let v = self.tape.leaf(row.clone());
                self.tape.affine(Param::PostWy, None, v)
            })
            .collect();

        // backward[t] summarizes y[t..] read from the end
        let mut backward = vec![emb[0]; n];
        let mut h = self.tape.leaf(vec![0.0; self.dims.hidden]);
        for t in (0..n).rev() {
            h = self.gru_step(BACKWARD_GRU, emb[t], h);
            backward[t] = h;
        }
        let forward: Vec<Var> = if self.opts.strict_posterior {
            (0..n).map(|t| self.run_gru(FORWARD_GRU, &emb[t..])).collect()
        } else {
            let mut out = Vec::with_capacity(n);
            let mut g = self.tape.leaf(vec![0.0; self.dims.hidden]);
            for &e in &emb {
                g = self.gru_step(FORWARD_GRU, e, g);
                out.push(g);
            }
            out
        };

        let mut z_prev = self.tape.param(Param::ZInit);
        let mut steps = Vec::with_capacity(n);
        for t in 0..n {
            let hz = self.tape.affine(Param::CombWh, Some(Param::CombBh), z_prev);
            let hz = self.tape.tanh(hz);
            let s = self.tape.add(hz, backward[t]);
            let s = self.tape.add(s, forward[t]);
            let combined = self.tape.scale(s, 1.0 / 3.0);
            let mu = self.tape.affine(Param::CombWmu, Some(Param::CombBmu), combined);
            let pre = self.tape.affine(Param::CombWvar, Some(Param::CombBvar), combined);
            let sp = self.tape.softplus(pre);
            let var = self.tape.add_const(sp, self.opts.var_floor);
            let z = self.sample(mu, var, rng);
            steps.push(Step { mu, var, z });
            z_prev = z;
        }
        steps
    }

    pub fn elbo(&mut self, x: &[Vec<f64>], y: &[Vec<f64>], beta: f64, seed: u64) -> ElboNodes {
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let posterior = self.posterior(y, &mut rng);
        let inputs = self.embed_inputs(x);
        let mut z_prev = self.tape.param(Param::ZInit);
        let mut recon = Vec::with_capacity(y.len());
        let mut kl = Vec::with_capacity(y.len());
        let mut context = Vec::with_capacity(y.len());
        let mut attention = Vec::with_capacity(y.len());
        for (t, step) in posterior.iter().enumerate() {
            let (c, alpha) = self.attend(z_prev, &inputs);
            let (mu_p, var_p) = self.transition(z_prev, c);
            kl.push(self.tape.kl_diag(step.mu, step.var, mu_p, var_p));
            let mu_y = self.emit(step.z);
            recon.push(self.tape.gauss_loglik(mu_y, y[t].clone()));
            context.push(c);
            attention.push(alpha);
            z_prev = step.z;
        }
        let reconstruction = self.tape.sum(&recon);
        let kl_sum = self.tape.sum(&kl);
        let weighted = self.tape.scale(kl_sum, beta);
        let total = self.tape.sub(reconstruction, weighted);
        ElboNodes { reconstruction, kl, total, posterior, context, attention }
    }

    pub fn prior_rollout(&mut self, x: &[Vec<f64>], mut rng: Option<&mut ChaCha8Rng>) -> Vec<PriorStep> {
        let inputs = self.embed_inputs(x);
        let mut z_prev = self.tape.param(Param::ZInit);
        let mut steps = Vec::with_capacity(x.len());
        for _ in 0..x.len() {
            let (c, alpha) = self.attend(z_prev, &inputs);
            let (mu, var) = self.transition(z_prev, c);
            let z = match rng.as_deref_mut() {
                Some(r) => self.sample(mu, var, r),
                None => mu,
            };
            let emission = self.emit(z);
            steps.push(PriorStep { alpha, mu, var, z, emission });
            z_prev = z;
        }
        steps
    }
}
