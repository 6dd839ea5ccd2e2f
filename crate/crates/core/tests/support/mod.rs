//! Straight-line reimplementations used as test oracles. Nothing here calls
//! into the model's graph code; only raw parameter tensors are read.
#![allow(dead_code)]

use adssm::model::{Param, ParameterSet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn matvec(params: &ParameterSet, w: Param, x: &[f64], col0: usize) -> Vec<f64> {
    let t = params.get(w);
    let (rows, cols) = (t.shape[0], t.shape[1]);
    let mut out = vec![0.0; rows];
    for r in 0..rows {
        let mut acc = 0.0;
        for (k, xv) in x.iter().enumerate() {
            acc += t.data[r * cols + col0 + k] * xv;
        }
        out[r] = acc;
    }
    out
}

fn lin(params: &ParameterSet, w: Param, b: Param, x: &[f64]) -> Vec<f64> {
    let mut out = matvec(params, w, x, 0);
    for (o, bv) in out.iter_mut().zip(&params.get(b).data) {
        *o += bv;
    }
    out
}

fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

fn sig(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

fn softplus(v: f64) -> f64 {
    (1.0 + v.exp()).ln()
}

fn relu(v: &[f64]) -> Vec<f64> {
    v.iter().map(|x| x.max(0.0)).collect()
}

fn mlp(params: &ParameterSet, layers: [(Param, Param); 3], x: &[f64]) -> Vec<f64> {
    let h1 = relu(&lin(params, layers[0].0, layers[0].1, x));
    let h2 = relu(&lin(params, layers[1].0, layers[1].1, &h1));
    lin(params, layers[2].0, layers[2].1, &h2)
}

/// `(context, weights)` of additive attention.
pub fn attention(params: &ParameterSet, z: &[f64], x: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let l = z.len();
    let emb: Vec<Vec<f64>> = x.iter().map(|row| matvec(params, Param::AttnWx, row, 0)).collect();
    let v = &params.get(Param::AttnVs).data;
    let scores: Vec<f64> = emb
        .iter()
        .map(|e| {
            let mut concat = z.to_vec();
            concat.extend_from_slice(e);
            let pre = lin(params, Param::AttnWs, Param::AttnBs, &concat);
            pre.iter().zip(v).map(|(p, w)| p.tanh() * w).sum()
        })
        .collect();
    let m = scores.iter().cloned().fold(f64::MIN, f64::max);
    let z_sum: f64 = scores.iter().map(|s| (s - m).exp()).sum();
    let alpha: Vec<f64> = scores.iter().map(|s| (s - m).exp() / z_sum).collect();
    let mut c = vec![0.0; l];
    for (a, e) in alpha.iter().zip(&emb) {
        for k in 0..l {
            c[k] += a * e[k];
        }
    }
    (c, alpha)
}

pub fn transition(params: &ParameterSet, z: &[f64], c: &[f64], var_floor: f64) -> (Vec<f64>, Vec<f64>) {
    let mut zc = z.to_vec();
    zc.extend_from_slice(c);
    use Param::*;
    let gate: Vec<f64> = mlp(params, [(GateW1, GateB1), (GateW2, GateB2), (GateW3, GateB3)], &zc).into_iter().map(sig).collect();
    let prop = mlp(params, [(PropW1, PropB1), (PropW2, PropB2), (PropW3, PropB3)], &zc);
    let linear = lin(params, TransWmu, TransBmu, &zc);
    let mu = (0..z.len()).map(|k| (1.0 - gate[k]) * linear[k] + gate[k] * prop[k]).collect();
    let var = lin(params, TransWvar, TransBvar, &relu(&prop)).into_iter().map(|v| softplus(v) + var_floor).collect();
    (mu, var)
}

pub fn emission(params: &ParameterSet, z: &[f64]) -> Vec<f64> {
    use Param::*;
    mlp(params, [(EmitW1, EmitB1), (EmitW2, EmitB2), (EmitW3, EmitB3)], z)
}

struct Gru {
    w: [Param; 3],
    u: [Param; 3],
    b: [Param; 3],
}

fn gru(params: &ParameterSet, cell: &Gru, x: &[f64], h: &[f64]) -> Vec<f64> {
    let gate = |i: usize, hh: &[f64]| add(&lin(params, cell.w[i], cell.b[i], x), &matvec(params, cell.u[i], hh, 0));
    let r: Vec<f64> = gate(0, h).into_iter().map(sig).collect();
    let u: Vec<f64> = gate(1, h).into_iter().map(sig).collect();
    let rh: Vec<f64> = r.iter().zip(h).map(|(a, b)| a * b).collect();
    let n: Vec<f64> = gate(2, &rh).into_iter().map(f64::tanh).collect();
    (0..h.len()).map(|k| (1.0 - u[k]) * n[k] + u[k] * h[k]).collect()
}

/// Diagonal Gaussian KL from means and variances, written out term by term.
pub fn kl(mq: &[f64], vq: &[f64], mp: &[f64], vp: &[f64]) -> f64 {
    let mut total = 0.0;
    for k in 0..mq.len() {
        let d = mq[k] - mp[k];
        total += 0.5 * ((vp[k] / vq[k]).ln() + vq[k] / vp[k] + d * d / vp[k] - 1.0);
    }
    total
}

/// `(mean, variance, sample)` per posterior step, noise drawn step-major from `ChaCha8Rng(seed)`.
pub fn posterior(params: &ParameterSet, y: &[Vec<f64>], var_floor: f64, seed: u64) -> Vec<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    use Param::*;
    let d = *params.dims();
    let bwd = Gru { w: [BwdWr, BwdWu, BwdWn], u: [BwdUr, BwdUu, BwdUn], b: [BwdBr, BwdBu, BwdBn] };
    let fwd = Gru { w: [FwdWr, FwdWu, FwdWn], u: [FwdUr, FwdUu, FwdUn], b: [FwdBr, FwdBu, FwdBn] };
    let n = y.len();
    let emb: Vec<Vec<f64>> = y.iter().map(|r| matvec(params, PostWy, r, 0)).collect();
    let mut back = vec![vec![]; n];
    let mut h = vec![0.0; d.hidden];
    for t in (0..n).rev() {
        h = gru(params, &bwd, &emb[t], &h);
        back[t] = h.clone();
    }
    let mut fore = Vec::with_capacity(n);
    let mut g = vec![0.0; d.hidden];
    for e in &emb {
        g = gru(params, &fwd, e, &g);
        fore.push(g.clone());
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut z_prev = params.get(ZInit).data.clone();
    let mut steps = Vec::with_capacity(n);
    for t in 0..n {
        let hz: Vec<f64> = lin(params, CombWh, CombBh, &z_prev).into_iter().map(f64::tanh).collect();
        let comb: Vec<f64> = (0..d.hidden).map(|k| (hz[k] + back[t][k] + fore[t][k]) / 3.0).collect();
        let mu = lin(params, CombWmu, CombBmu, &comb);
        let var: Vec<f64> = lin(params, CombWvar, CombBvar, &comb).into_iter().map(|v| softplus(v) + var_floor).collect();
        let z: Vec<f64> = (0..d.latent)
            .map(|k| {
                let eps: f64 = rng.sample(StandardNormal);
                mu[k] + var[k].sqrt() * eps
            })
            .collect();
        z_prev = z.clone();
        steps.push((mu, var, z));
    }
    steps
}

/// The single-sample ELBO with the same noise stream as [`posterior`].
pub fn elbo(x: &[Vec<f64>], y: &[Vec<f64>], params: &ParameterSet, beta: f64, var_floor: f64, seed: u64) -> f64 {
    let d = *params.dims();
    let posterior = posterior(params, y, var_floor, seed);
    let mut z_prev = params.get(Param::ZInit).data.clone();
    let mut recon = 0.0;
    let mut kl_sum = 0.0;
    for (t, (mq, vq, z)) in posterior.iter().enumerate() {
        let (c, _) = attention(params, &z_prev, x);
        let (mp, vp) = transition(params, &z_prev, &c, var_floor);
        kl_sum += kl(mq, vq, &mp, &vp);
        let mu_y = emission(params, z);
        let sq: f64 = mu_y.iter().zip(&y[t]).map(|(a, b)| (a - b).powi(2)).sum();
        recon += -0.5 * sq - 0.5 * d.n_rr as f64 * (2.0 * std::f64::consts::PI).ln();
        z_prev = z.clone();
    }
    recon - beta * kl_sum
}

pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (sa, sb): (f64, f64) = (a.iter().sum(), b.iter().sum());
    let sab: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let saa: f64 = a.iter().map(|x| x * x).sum();
    let sbb: f64 = b.iter().map(|x| x * x).sum();
    (n * sab - sa * sb) / ((n * saa - sa * sa).sqrt() * (n * sbb - sb * sb).sqrt())
}

pub fn rmse(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += (a[i] - b[i]) * (a[i] - b[i]);
    }
    (s / a.len() as f64).sqrt()
}

pub fn snr_db(y: &[f64], yhat: &[f64]) -> f64 {
    let mut sig = 0.0;
    let mut res = 0.0;
    for i in 0..y.len() {
        sig += y[i] * y[i];
        res += (y[i] - yhat[i]) * (y[i] - yhat[i]);
    }
    20.0 * (sig / res).log10()
}
