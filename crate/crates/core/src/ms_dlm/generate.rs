use ndarray::{Array1, ArrayView1, ArrayView2, Axis};
use rand::Rng;

use super::{position_encoding, MsDlm};
use crate::error::{Error, Result};
use crate::nn::{self, AttnSlots, Slot};
use crate::token_codec::{PrefixSequence, Special, Stream, StreamPair};

/// Outputs at the newest position of one channel.
#[derive(Clone, Debug)]
pub struct StepOutput {
    pub logits: [Array1<f64>; 2],
    pub durations: [f64; 2],
}

#[derive(Default, Clone)]
struct LayerKv {
    self_k: Vec<f64>,
    self_v: Vec<f64>,
    cross_k: Vec<f64>,
    cross_v: Vec<f64>,
}

/// Incremental decoder that caches keys and values so each new position costs
/// one row of work per layer.
pub struct Decoder<'m> {
    model: &'m MsDlm,
    kv: Vec<Vec<LayerKv>>,
    pos: usize,
}

fn ln_row(x: &Array1<f64>, g: Slot, b: Slot, p: &[f64]) -> Array1<f64> {
    let (y, _) = nn::layer_norm(&x.view().insert_axis(Axis(0)), g, b, p);
    y.index_axis_move(Axis(0), 0)
}

fn lin_row(x: &Array1<f64>, w: Slot, b: Slot, p: &[f64]) -> Array1<f64> {
    x.dot(&w.mat(p)) + b.vec(p)
}

fn attend(q: &Array1<f64>, k: &[f64], v: &[f64], heads: usize) -> Array1<f64> {
    let d = q.len();
    let n = k.len() / d;
    let k = ArrayView2::from_shape((n, d), k).unwrap();
    let v = ArrayView2::from_shape((n, d), v).unwrap();
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut out = Array1::zeros(d);
    for h in 0..heads {
        let r = h * dh..(h + 1) * dh;
        let kh = k.slice(ndarray::s![.., r.clone()]);
        let scores = kh.dot(&q.slice(ndarray::s![r.clone()]));
        let m = scores.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let e = scores.mapv(|s| ((s - m) * scale).exp());
        let w = &e / e.sum();
        out.slice_mut(ndarray::s![r.clone()]).assign(&w.dot(&v.slice(ndarray::s![.., r])));
    }
    out
}

fn project(a: &AttnSlots, x: &Array1<f64>, p: &[f64]) -> (Array1<f64>, Array1<f64>, Array1<f64>) {
    (lin_row(x, a.wq, a.bq, p), lin_row(x, a.wk, a.bk, p), lin_row(x, a.wv, a.bv, p))
}

impl<'m> Decoder<'m> {
    pub fn new(model: &'m MsDlm, channels: usize) -> Result<Self> {
        if channels == 0 || channels > 2 {
            return Err(Error::input("decoder needs one or two channels"));
        }
        let layers = model.config.num_layers;
        Ok(Decoder { model, kv: vec![vec![LayerKv::default(); layers]; channels], pos: 0 })
    }

    /// Number of positions consumed so far.
    pub fn position(&self) -> usize {
        self.pos
    }

    /// Feed one `(content, pitch)` token pair per channel.
    pub fn step(&mut self, tokens: &[(u32, u32)]) -> Result<Vec<StepOutput>> {
        let m = self.model;
        let p = &m.params;
        let nch = self.kv.len();
        if tokens.len() != nch {
            return Err(Error::input("one token pair per channel required"));
        }
        if let Some(&(c, q)) = tokens.iter().find(|&&(c, q)| c as usize >= m.vocab.len() || q as usize >= m.vocab.len()) {
            return Err(Error::input(format!("token pair ({c}, {q}) outside the vocabulary")));
        }
        let d = m.config.embed_dim;
        let heads = m.config.heads;
        let mut xs: Vec<Array1<f64>> = tokens
            .iter()
            .map(|&(c, q)| position_encoding(self.pos, d) + m.emb_row(0, c) + m.emb_row(1, q))
            .collect();
        for (l, ls) in m.layout.layers.iter().enumerate() {
            for c in 0..nch {
                let a = ln_row(&xs[c], ls.ln1_g, ls.ln1_b, p);
                let (q, k, v) = project(&ls.attn, &a, p);
                let kv = &mut self.kv[c][l];
                kv.self_k.extend(k.iter());
                kv.self_v.extend(v.iter());
                let o = attend(&q, &kv.self_k, &kv.self_v, heads);
                xs[c] += &lin_row(&o, ls.attn.wo, ls.attn.bo, p);
            }
            if let (Some(cs), 2) = (ls.cross, nch) {
                let ci: Vec<Array1<f64>> = xs.iter().map(|x| ln_row(x, cs.ln_g, cs.ln_b, p)).collect();
                for c in 0..2 {
                    let q = lin_row(&ci[c], cs.attn.wq, cs.attn.bq, p);
                    let k = lin_row(&ci[1 - c], cs.attn.wk, cs.attn.bk, p);
                    let v = lin_row(&ci[1 - c], cs.attn.wv, cs.attn.bv, p);
                    let kv = &mut self.kv[c][l];
                    kv.cross_k.extend(k.iter());
                    kv.cross_v.extend(v.iter());
                    let o = attend(&q, &kv.cross_k, &kv.cross_v, heads);
                    xs[c] += &lin_row(&o, cs.attn.wo, cs.attn.bo, p);
                }
            }
            for x in xs.iter_mut() {
                let f = ln_row(x, ls.ln2_g, ls.ln2_b, p);
                let h = lin_row(&f, ls.w1, ls.b1, p).mapv(nn::gelu);
                *x += &lin_row(&h, ls.w2, ls.b2, p);
            }
        }
        self.pos += 1;
        Ok(xs
            .iter()
            .map(|x| {
                let hf = ln_row(x, m.layout.lnf_g, m.layout.lnf_b, p);
                let logits = m.layout.unit_head.map(|h| lin_row(&hf, h.w, h.b, p));
                let durations = m.layout.dur_head.map(|h| nn::softplus(lin_row(&hf, h.w, h.b, p)[0]));
                StepOutput { logits, durations }
            })
            .collect())
    }
}

/// Full-vocabulary distribution of one head: tokens the head cannot emit get exactly zero.
pub fn masked_distribution(model: &MsDlm, stream: Stream, logits: &ArrayView1<f64>) -> Vec<f64> {
    let (_, probs) = nn::log_softmax(logits);
    let mut full = vec![0.0; model.vocab.len()];
    for (i, &pr) in probs.iter().enumerate() {
        full[model.vocab.output_token(stream, i) as usize] = pr;
    }
    full
}

/// Keep the smallest set of most probable tokens whose mass reaches `p`, renormalized.
pub fn nucleus_filter(probs: &[f64], p: f64) -> Result<Vec<f64>> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::input(format!("nucleus p must lie in (0, 1], got {p}")));
    }
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    let mut out = vec![0.0; probs.len()];
    let mut cum = 0.0;
    for &i in &order {
        out[i] = probs[i];
        cum += probs[i];
        if cum >= p {
            break;
        }
    }
    if cum > 0.0 {
        out.iter_mut().for_each(|v| *v /= cum);
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Sampling {
    Greedy,
    Nucleus(f64),
}

fn choose<R: Rng>(logits: &Array1<f64>, sampling: Sampling, rng: &mut R) -> Result<usize> {
    let (_, probs) = nn::log_softmax(&logits.view());
    match sampling {
        Sampling::Greedy => Ok(probs
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
            .0),
        Sampling::Nucleus(p) => {
            let kept = nucleus_filter(probs.as_slice().unwrap(), p)?;
            let r: f64 = rng.gen();
            let mut acc = 0.0;
            let mut last = 0;
            for (i, &v) in kept.iter().enumerate() {
                if v > 0.0 {
                    acc += v;
                    last = i;
                    if r < acc {
                        return Ok(i);
                    }
                }
            }
            Ok(last)
        }
    }
}

/// Generate one segment for each channel given their prefixes.
///
/// Each stream keeps its own run: a sampled unit is repeated for its
/// predicted duration before the next unit is drawn. Generation stops when
/// any channel's content stream draws EOS, or after `max_frames` frames.
/// Special tokens in the output are replaced by `content_filler` (content)
/// and the unvoiced unit 0 (pitch).
pub fn generate<R: Rng>(
    model: &MsDlm,
    prefixes: &[PrefixSequence],
    sampling: Sampling,
    max_frames: usize,
    content_filler: u32,
    rng: &mut R,
) -> Result<Vec<StreamPair>> {
    if prefixes.is_empty() || prefixes.len() > 2 {
        return Err(Error::input("generation needs one or two prefixes"));
    }
    let plen = prefixes[0].len();
    if plen == 0 || prefixes.iter().any(|x| x.len() != plen || x.pitch.len() != plen) {
        return Err(Error::input("prefixes must be non-empty and of equal length"));
    }
    let nch = prefixes.len();
    let vocab = &model.vocab;
    let pad = vocab.special(Special::Pad);
    let eos = vocab.special(Special::Eos);
    let mut dec = Decoder::new(model, nch)?;
    let mut last = Vec::new();
    for i in 0..plen {
        let toks: Vec<(u32, u32)> = prefixes.iter().map(|x| (x.content[i], x.pitch[i])).collect();
        last = dec.step(&toks)?;
    }
    let cap = max_frames + 1;
    let mut units = vec![[pad; 2]; nch];
    let mut remaining = vec![[0usize; 2]; nch];
    let mut frames: Vec<Vec<(u32, u32)>> = Vec::new();
    for t in 0..cap {
        let mut fresh = vec![[false; 2]; nch];
        for c in 0..nch {
            for s in Stream::BOTH {
                let k = s.index();
                if remaining[c][k] > 0 {
                    continue;
                }
                units[c][k] = if s == Stream::Pitch && t == 0 {
                    pad
                } else {
                    vocab.output_token(s, choose(&last[c].logits[k], sampling, rng)?)
                };
                fresh[c][k] = true;
            }
        }
        if units.iter().any(|u| u[0] == eos) {
            break;
        }
        let toks: Vec<(u32, u32)> = units.iter().map(|u| (u[0], u[1])).collect();
        frames.push(toks.clone());
        if t + 1 == cap {
            break;
        }
        last = dec.step(&toks)?;
        for c in 0..nch {
            for k in 0..2 {
                if fresh[c][k] {
                    let dur = if k == 1 && t == 0 {
                        1
                    } else {
                        (last[c].durations[k].round() as usize).clamp(1, model.config.max_duration as usize)
                    };
                    remaining[c][k] = dur - 1;
                } else {
                    remaining[c][k] -= 1;
                }
            }
        }
    }
    let g = frames.len();
    Ok((0..nch)
        .map(|c| {
            let content = frames[..g.saturating_sub(1)]
                .iter()
                .map(|f| if f[c].0 < vocab.n_content() { f[c].0 } else { content_filler })
                .collect();
            let pitch = frames
                .iter()
                .skip(1)
                .map(|f| if f[c].1 < vocab.n_pitch() { f[c].1 } else { 0 })
                .collect();
            StreamPair { content, pitch }
        })
        .collect())
}
