//! Straight-line reference implementations of both forward passes and a
//! finite-difference gradient check, shared by the model tests and the
//! acceptance suite.
#![allow(dead_code)]

use mcqa_transfer::corpus::{McqaExample, PAD};
use mcqa_transfer::memn2n;
use mcqa_transfer::model::Model;
use mcqa_transfer::qacnn::{self, QacnnHyper};
use mcqa_transfer::tensor::check::{max_relative_error, numerical_grad};
use mcqa_transfer::tensor::{Graph, ParamStore, Tensor};

pub fn o_dot(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += a[i] * b[i];
    }
    s
}

pub fn o_cos(a: &[f64], b: &[f64]) -> f64 {
    let na = o_dot(a, a).sqrt();
    let nb = o_dot(b, b).sqrt();
    if na < 1e-12 || nb < 1e-12 {
        0.0
    } else {
        o_dot(a, b) / (na * nb)
    }
}

pub fn o_softmax(x: &[f64]) -> Vec<f64> {
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.iter().map(|v| v / z).collect()
}

/// Same-padded convolution with ReLU, written index by index.
pub fn o_conv(seq: &[Vec<f64>], w: &Tensor, b: &Tensor) -> Vec<Vec<f64>> {
    let (width, din, dout) = (w.shape()[0], w.shape()[1], w.shape()[2]);
    let half = (width / 2) as isize;
    let wd = w.data();
    let mut out = vec![vec![0.0; dout]; seq.len()];
    for t in 0..seq.len() {
        for o in 0..dout {
            let mut acc = b.data()[o];
            for k in 0..width {
                let s = t as isize + k as isize - half;
                if s < 0 || s >= seq.len() as isize {
                    continue;
                }
                for i in 0..din {
                    acc += seq[s as usize][i] * wd[(k * din + i) * dout + o];
                }
            }
            out[t][o] = acc.max(0.0);
        }
    }
    out
}

pub fn o_pool(weights: &[f64], rows: &[Vec<f64>]) -> Vec<f64> {
    let mut out = vec![0.0; rows[0].len()];
    for (w, r) in weights.iter().zip(rows) {
        for (o, v) in out.iter_mut().zip(r) {
            *o += w * v;
        }
    }
    out
}

pub fn emb(p: &ParamStore, name: &str, id: usize) -> Vec<f64> {
    p.get(name).unwrap().row(id).to_vec()
}

pub fn o_qacnn(p: &ParamStore, h: &QacnnHyper, ex: &McqaExample) -> Vec<f64> {
    let e = |id| emb(p, qacnn::EMBED, id);
    let q: Vec<Vec<f64>> = ex.question.iter().map(|i| e(*i)).collect();
    let story: Vec<Vec<Vec<f64>>> = ex.story.iter().map(|s| s.iter().map(|i| e(*i)).collect()).collect();
    let mut word_att = Vec::new();
    let mut sent_logit = Vec::new();
    for s in &story {
        let mut row_max = Vec::new();
        let mut block_max = f64::NEG_INFINITY;
        for x in s {
            let m = q.iter().map(|y| o_cos(x, y)).fold(f64::NEG_INFINITY, f64::max);
            row_max.push(h.attention_scale * m);
            block_max = block_max.max(m);
        }
        word_att.push(o_softmax(&row_max));
        sent_logit.push(h.attention_scale * block_max);
    }
    let sent_att = o_softmax(&sent_logit);
    let get = |n: &str| p.get(n).unwrap().clone();
    let (w1, b1, w2, b2) = (get(qacnn::CNN1_W), get(qacnn::CNN1_B), get(qacnn::CNN2_W), get(qacnn::CNN2_B));
    let (f1w, f1b, f2w, f2b) = (get(qacnn::FC1_W), get(qacnn::FC1_B), get(qacnn::FC2_W), get(qacnn::FC2_B));
    let mut scores = Vec::new();
    for ch in &ex.choices {
        let mut c: Vec<Vec<f64>> = ch.iter().take(h.max_choice_len).map(|i| e(*i)).collect();
        while c.len() < h.max_choice_len {
            c.push(e(PAD));
        }
        let mut feats = Vec::new();
        for (si, s) in story.iter().enumerate() {
            let sc: Vec<Vec<f64>> = s.iter().map(|x| c.iter().map(|y| o_cos(x, y)).collect()).collect();
            feats.push(o_pool(&word_att[si], &o_conv(&sc, &w1, &b1)));
        }
        let feat = o_pool(&sent_att, &o_conv(&feats, &w2, &b2));
        let hid = f1b.numel();
        let mut score = f2b.data()[0];
        for j in 0..hid {
            let mut z = f1b.data()[j];
            for (i, v) in feat.iter().enumerate() {
                z += v * f1w.data()[i * hid + j];
            }
            score += z.max(0.0) * f2w.data()[j];
        }
        scores.push(score);
    }
    o_softmax(&scores)
}

pub fn o_mean(rows: &[Vec<f64>]) -> Vec<f64> {
    let mut out = vec![0.0; rows[0].len()];
    for r in rows {
        for (o, v) in out.iter_mut().zip(r) {
            *o += v / rows.len() as f64;
        }
    }
    out
}

pub fn o_memn2n(p: &ParamStore, hops: usize, ex: &McqaExample) -> Vec<f64> {
    let enc = |name: &str, ids: &[usize]| -> Vec<f64> {
        let rows: Vec<Vec<f64>> = ids.iter().filter(|i| **i != PAD).map(|i| emb(p, name, *i)).collect();
        o_mean(&rows)
    };
    let m: Vec<Vec<f64>> = ex.story.iter().map(|s| enc(memn2n::EMBED_A, s)).collect();
    let c: Vec<Vec<f64>> = ex.story.iter().map(|s| enc(memn2n::EMBED_C, s)).collect();
    let mut u = enc(memn2n::EMBED_B, &ex.question);
    for _ in 0..hops {
        let att = o_softmax(&m.iter().map(|mi| o_dot(mi, &u)).collect::<Vec<_>>());
        let o = o_pool(&att, &c);
        for (x, y) in u.iter_mut().zip(o) {
            *x += y;
        }
    }
    let scores: Vec<f64> = ex.choices.iter().map(|ch| o_dot(&u, &enc(memn2n::EMBED_F, ch))).collect();
    o_softmax(&scores)
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Central-difference gradients of every unfrozen parameter, keyed by name.
/// The PAD embedding row is dropped: the zero-norm guard makes the loss
/// discontinuous there.
pub fn numeric_grads(m: &Model, ex: &McqaExample, target: usize, h: f64) -> Vec<(String, Vec<f64>)> {
    m.params
        .trainable_names()
        .into_iter()
        .map(|name| {
            let x = m.params.get(&name).unwrap().clone();
            let numeric = numerical_grad(&x, h, |probe| {
                let mut m2 = m.clone();
                m2.params.get_mut(&name).unwrap().data_mut().copy_from_slice(probe.data());
                let mut g = Graph::inference();
                let l = m2.loss(&mut g, ex, target)?;
                Ok(g.scalar(l))
            })
            .unwrap();
            let skip = if name.contains("embed") { x.shape()[1] } else { 0 };
            (name, numeric[skip..].to_vec())
        })
        .collect()
}

/// Largest relative error between analytic and central-difference gradients.
pub fn max_gradient_error(m: &Model, ex: &McqaExample, target: usize, h: f64) -> f64 {
    let mut g = Graph::new();
    let loss = m.loss(&mut g, ex, target).unwrap();
    let grads = g.backward(loss).unwrap();
    let mut worst: f64 = 0.0;
    for (name, numeric) in numeric_grads(m, ex, target, h) {
        let analytic = grads.param(&name).unwrap().to_vec();
        let skip = analytic.len() - numeric.len();
        worst = worst.max(max_relative_error(&analytic[skip..], &numeric));
    }
    worst
}

/// True when central differences at `h` and `h / 10` disagree, which means
/// a ReLU or max switches inside the probe interval. A wrong analytic
/// gradient does not trigger this: both step sizes agree with each other and
/// disagree with it.
pub fn straddles_kink(m: &Model, ex: &McqaExample, target: usize, h: f64) -> bool {
    let coarse = numeric_grads(m, ex, target, h);
    let fine = numeric_grads(m, ex, target, h / 10.0);
    coarse
        .iter()
        .zip(&fine)
        .any(|((_, a), (_, b))| max_relative_error(a, b) > 1e-3)
}
