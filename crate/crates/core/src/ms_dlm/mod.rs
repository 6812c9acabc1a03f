//! Multi-stream dialogue language model: two weight-shared transformer towers
//! (one per channel) joined by cross-attention, each reading and predicting a
//! content stream and a pitch stream with unit and duration heads.

mod generate;
mod train;

pub use generate::{generate, masked_distribution, nucleus_filter, Decoder, Sampling, StepOutput};
pub use train::{inverse_sqrt_lr, pretrain_single_channel, train, TrainConfig, TrainRecord};

use ndarray::{s, Array1, Array2, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;
use crate::nn::{self, AttnCache, AttnSlots, Init, LayoutBuilder, LnCache, Slot};
use crate::token_codec::{AssembledExample, Stream, Vocabulary, DEFAULT_MAX_DURATION};

const CHECKPOINT_MAGIC: &[u8; 8] = b"CHATSLM\0";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub num_layers: usize,
    pub num_cross_attention_layers: usize,
    pub heads: usize,
    pub embed_dim: usize,
    pub ffn_dim: usize,
    /// Context length C in frames.
    pub context_len: usize,
    pub nucleus_p: f64,
    pub max_generation_frames: usize,
    pub max_duration: u32,
    pub seed: u64,
}

impl ModelConfig {
    pub fn desk() -> Self {
        ModelConfig {
            num_layers: 2,
            num_cross_attention_layers: 1,
            heads: 4,
            embed_dim: 64,
            ffn_dim: 256,
            context_len: 50,
            nucleus_p: 0.9,
            max_generation_frames: 500,
            max_duration: DEFAULT_MAX_DURATION,
            seed: 0,
        }
    }

    pub fn paper() -> Self {
        ModelConfig {
            num_layers: 6,
            num_cross_attention_layers: 4,
            heads: 8,
            embed_dim: 512,
            ffn_dim: 2048,
            context_len: 500,
            nucleus_p: 0.9,
            max_generation_frames: 1500,
            max_duration: DEFAULT_MAX_DURATION,
            seed: 0,
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Self::desk()),
            "paper" => Ok(Self::paper()),
            _ => Err(Error::input(format!("unknown model preset {name:?} (expected desk or paper)"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_layers == 0 || self.embed_dim == 0 || self.ffn_dim == 0 || self.heads == 0 {
            return Err(Error::input("model dimensions must be positive"));
        }
        if self.num_cross_attention_layers > self.num_layers {
            return Err(Error::input("more cross-attention layers than layers"));
        }
        if !self.embed_dim.is_multiple_of(self.heads) {
            return Err(Error::input("embed_dim must be divisible by heads"));
        }
        if !(self.nucleus_p > 0.0 && self.nucleus_p <= 1.0) {
            return Err(Error::input("nucleus_p must lie in (0, 1]"));
        }
        if self.max_duration == 0 {
            return Err(Error::input("max_duration must be positive"));
        }
        Ok(())
    }

    /// Cross-attention sits in the last `num_cross_attention_layers` layers.
    pub fn has_cross(&self, layer: usize) -> bool {
        layer >= self.num_layers - self.num_cross_attention_layers
    }
}

#[derive(Clone, Copy, Debug)]
struct CrossSlots {
    ln_g: Slot,
    ln_b: Slot,
    attn: AttnSlots,
}

#[derive(Clone, Copy, Debug)]
struct LayerSlots {
    ln1_g: Slot,
    ln1_b: Slot,
    attn: AttnSlots,
    cross: Option<CrossSlots>,
    ln2_g: Slot,
    ln2_b: Slot,
    w1: Slot,
    b1: Slot,
    w2: Slot,
    b2: Slot,
}

#[derive(Clone, Copy, Debug)]
struct Head {
    w: Slot,
    b: Slot,
}

#[derive(Clone, Debug)]
struct Layout {
    emb: [Slot; 2],
    layers: Vec<LayerSlots>,
    lnf_g: Slot,
    lnf_b: Slot,
    unit_head: [Head; 2],
    dur_head: [Head; 2],
    builder: LayoutBuilder,
}

impl Layout {
    fn new(cfg: &ModelConfig, vocab: &Vocabulary) -> Self {
        let d = cfg.embed_dim;
        let v = vocab.len();
        let mut b = LayoutBuilder::new();
        let emb = [b.add(v, d, Init::Normal(1.0)), b.add(v, d, Init::Normal(1.0))];
        let layers = (0..cfg.num_layers)
            .map(|l| LayerSlots {
                ln1_g: b.add(1, d, Init::Ones),
                ln1_b: b.add(1, d, Init::Zeros),
                attn: AttnSlots::new(&mut b, d),
                cross: cfg.has_cross(l).then(|| CrossSlots {
                    ln_g: b.add(1, d, Init::Ones),
                    ln_b: b.add(1, d, Init::Zeros),
                    attn: AttnSlots::new(&mut b, d),
                }),
                ln2_g: b.add(1, d, Init::Ones),
                ln2_b: b.add(1, d, Init::Zeros),
                w1: b.add(d, cfg.ffn_dim, Init::Xavier),
                b1: b.add(1, cfg.ffn_dim, Init::Zeros),
                w2: b.add(cfg.ffn_dim, d, Init::Xavier),
                b2: b.add(1, d, Init::Zeros),
            })
            .collect();
        let lnf_g = b.add(1, d, Init::Ones);
        let lnf_b = b.add(1, d, Init::Zeros);
        let unit_head = [Stream::Content, Stream::Pitch].map(|s| Head {
            w: b.add(d, vocab.output_size(s), Init::Normal(0.02)),
            b: b.add(1, vocab.output_size(s), Init::Zeros),
        });
        let dur_head = [0, 1].map(|_| Head { w: b.add(d, 1, Init::Normal(0.02)), b: b.add(1, 1, Init::Zeros) });
        Layout { emb, layers, lnf_g, lnf_b, unit_head, dur_head, builder: b }
    }
}

/// Token inputs of one channel (content and pitch streams, equal length).
#[derive(Clone, Copy, Debug)]
pub struct ChannelInput<'a> {
    pub content: &'a [u32],
    pub pitch: &'a [u32],
}

/// Per-position head outputs of one channel.
#[derive(Clone, Debug)]
pub struct ChannelOutput {
    /// Logits over each stream's output tokens (units, PAD, EOS), indexed by [`Stream::index`].
    pub logits: [Array2<f64>; 2],
    /// Predicted durations (positive), indexed by [`Stream::index`].
    pub durations: [Array1<f64>; 2],
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    /// Summed negative log-likelihood of edge units.
    pub eu: f64,
    /// Summed absolute duration error at edges.
    pub ed: f64,
    pub edges: usize,
    pub duration_edges: usize,
}

impl LossBreakdown {
    pub fn total(&self) -> f64 {
        self.eu + self.ed
    }

    pub fn eu_per_edge(&self) -> f64 {
        if self.edges == 0 {
            0.0
        } else {
            self.eu / self.edges as f64
        }
    }

    pub fn ed_per_edge(&self) -> f64 {
        if self.duration_edges == 0 {
            0.0
        } else {
            self.ed / self.duration_edges as f64
        }
    }

    pub fn add(&mut self, o: &LossBreakdown) {
        self.eu += o.eu;
        self.ed += o.ed;
        self.edges += o.edges;
        self.duration_edges += o.duration_edges;
    }
}

struct CrossCache {
    ln: LnCache,
    attn: Option<AttnCache>,
}

struct LayerCache {
    ln1: LnCache,
    a_in: Array2<f64>,
    attn: AttnCache,
    cross: Option<CrossCache>,
    /// Normalized cross-attention input, shared as key/value source by the partner tower.
    c_in: Option<Array2<f64>>,
    ln2: LnCache,
    f_in: Array2<f64>,
    h_pre: Array2<f64>,
    h_act: Array2<f64>,
}

struct TowerCache {
    tokens: (Vec<u32>, Vec<u32>),
    layers: Vec<LayerCache>,
    lnf: LnCache,
    hf: Array2<f64>,
    dur_pre: [Array1<f64>; 2],
}

/// Sinusoidal position encoding row for position `pos`.
pub fn position_encoding(pos: usize, d: usize) -> Array1<f64> {
    Array1::from_shape_fn(d, |i| {
        let freq = 1.0 / 10000f64.powf((2 * (i / 2)) as f64 / d as f64);
        let a = pos as f64 * freq;
        if i % 2 == 0 {
            a.sin()
        } else {
            a.cos()
        }
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct CheckpointHeader {
    config: ModelConfig,
    vocabulary: String,
}

#[derive(Clone, Debug)]
pub struct MsDlm {
    pub config: ModelConfig,
    pub vocab: Vocabulary,
    pub params: Vec<f64>,
    layout: Layout,
}

impl MsDlm {
    pub fn new(config: ModelConfig, vocab: Vocabulary) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config, &vocab);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let params = layout.builder.initialize(&mut rng);
        Ok(MsDlm { config, vocab, params, layout })
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    /// Zero the unit and duration heads (outputs become uniform / constant).
    pub fn zero_heads(&mut self) {
        for h in self.layout.unit_head.iter().chain(self.layout.dur_head.iter()) {
            self.params[h.w.range()].fill(0.0);
            self.params[h.b.range()].fill(0.0);
        }
    }

    /// Copy parameters from a model with identical architecture and vocabulary.
    pub fn warm_start_from(&mut self, other: &MsDlm) -> Result<()> {
        if other.vocab != self.vocab {
            return Err(Error::precondition("warm start requires the same vocabulary"));
        }
        let (a, b) = (&self.config, &other.config);
        if (a.num_layers, a.num_cross_attention_layers, a.heads, a.embed_dim, a.ffn_dim)
            != (b.num_layers, b.num_cross_attention_layers, b.heads, b.embed_dim, b.ffn_dim)
        {
            return Err(Error::precondition("warm start requires the same architecture"));
        }
        self.params.copy_from_slice(&other.params);
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = CheckpointHeader { config: self.config.clone(), vocabulary: self.vocab.to_text() };
        io::encode_params(CHECKPOINT_MAGIC, &header, &self.params)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (header, params): (CheckpointHeader, Vec<f64>) = io::decode_params(CHECKPOINT_MAGIC, bytes)?;
        Self::from_parts(header, params)
    }

    fn from_parts(header: CheckpointHeader, params: Vec<f64>) -> Result<Self> {
        let vocab = Vocabulary::from_text(&header.vocabulary)?;
        let mut m = MsDlm::new(header.config, vocab)?;
        if params.len() != m.params.len() {
            return Err(Error::Format(format!(
                "checkpoint has {} parameters, architecture needs {}",
                params.len(),
                m.params.len()
            )));
        }
        m.params = params;
        Ok(m)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let header = CheckpointHeader { config: self.config.clone(), vocabulary: self.vocab.to_text() };
        io::save_params(path, CHECKPOINT_MAGIC, &header, &self.params)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let (header, params) = io::load_params(path, CHECKPOINT_MAGIC)?;
        Self::from_parts(header, params)
    }

    fn check_inputs(&self, inputs: &[ChannelInput<'_>]) -> Result<usize> {
        if inputs.is_empty() || inputs.len() > 2 {
            return Err(Error::input("forward needs one or two channels"));
        }
        let l = inputs[0].content.len();
        for ch in inputs {
            if ch.content.len() != l || ch.pitch.len() != l {
                return Err(Error::input("input lengths differ between channels or streams"));
            }
            if let Some(t) = ch.content.iter().chain(ch.pitch).find(|&&t| t as usize >= self.vocab.len()) {
                return Err(Error::input(format!("token {t} outside the vocabulary")));
            }
        }
        if l == 0 {
            return Err(Error::input("empty input"));
        }
        Ok(l)
    }

    fn embed(&self, ch: &ChannelInput<'_>) -> Array2<f64> {
        let p = &self.params;
        let d = self.config.embed_dim;
        let (ec, ep) = (self.layout.emb[0].mat(p), self.layout.emb[1].mat(p));
        let mut x = Array2::zeros((ch.content.len(), d));
        for (i, mut row) in x.rows_mut().into_iter().enumerate() {
            row.assign(&position_encoding(i, d));
            row += &ec.row(ch.content[i] as usize);
            row += &ep.row(ch.pitch[i] as usize);
        }
        x
    }

    fn forward_cached(&self, inputs: &[ChannelInput<'_>]) -> Result<(Vec<ChannelOutput>, Vec<TowerCache>)> {
        self.check_inputs(inputs)?;
        let p = &self.params;
        let heads = self.config.heads;
        let nch = inputs.len();
        let mut xs: Vec<Array2<f64>> = inputs.iter().map(|c| self.embed(c)).collect();
        let mut caches: Vec<Vec<LayerCache>> = (0..nch).map(|_| Vec::new()).collect();
        for ls in &self.layout.layers {
            let mut partial = Vec::with_capacity(nch);
            for x in xs.iter_mut() {
                let (a_in, ln1) = nn::layer_norm(&x.view(), ls.ln1_g, ls.ln1_b, p);
                let (o, attn) = nn::causal_attention(&a_in.view(), &a_in.view(), &ls.attn, heads, p);
                *x += &o;
                partial.push((ln1, a_in, attn));
            }
            let mut cross_in: Vec<Option<(Array2<f64>, LnCache)>> = (0..nch).map(|_| None).collect();
            if let (Some(cs), 2) = (ls.cross, nch) {
                for c in 0..2 {
                    let (y, cache) = nn::layer_norm(&xs[c].view(), cs.ln_g, cs.ln_b, p);
                    cross_in[c] = Some((y, cache));
                }
            }
            let mut cross_attn: Vec<Option<AttnCache>> = (0..nch).map(|_| None).collect();
            if let (Some(cs), 2) = (ls.cross, nch) {
                for c in 0..2 {
                    let q = &cross_in[c].as_ref().unwrap().0;
                    let kv = &cross_in[1 - c].as_ref().unwrap().0;
                    let (o, cache) = nn::causal_attention(&q.view(), &kv.view(), &cs.attn, heads, p);
                    xs[c] += &o;
                    cross_attn[c] = Some(cache);
                }
            }
            for (c, ((ln1, a_in, attn), (ci, ca))) in
                partial.into_iter().zip(cross_in.into_iter().zip(cross_attn)).enumerate()
            {
                let x = &mut xs[c];
                let (f_in, ln2) = nn::layer_norm(&x.view(), ls.ln2_g, ls.ln2_b, p);
                let h_pre = nn::linear(&f_in.view(), ls.w1, ls.b1, p);
                let h_act = h_pre.mapv(nn::gelu);
                *x += &nn::linear(&h_act.view(), ls.w2, ls.b2, p);
                let (c_in, cross) = match ci {
                    Some((y, ln)) => (Some(y), Some(CrossCache { ln, attn: ca })),
                    None => (None, None),
                };
                caches[c].push(LayerCache { ln1, a_in, attn, cross, c_in, ln2, f_in, h_pre, h_act });
            }
        }
        let mut outs = Vec::with_capacity(nch);
        let mut towers = Vec::with_capacity(nch);
        for (c, (x, layers)) in xs.into_iter().zip(caches).enumerate() {
            let (hf, lnf) = nn::layer_norm(&x.view(), self.layout.lnf_g, self.layout.lnf_b, p);
            let logits = self.layout.unit_head.map(|h| nn::linear(&hf.view(), h.w, h.b, p));
            let dur_pre = self.layout.dur_head.map(|h| nn::linear(&hf.view(), h.w, h.b, p).column(0).to_owned());
            let durations = [dur_pre[0].mapv(nn::softplus), dur_pre[1].mapv(nn::softplus)];
            outs.push(ChannelOutput { logits, durations });
            towers.push(TowerCache {
                tokens: (inputs[c].content.to_vec(), inputs[c].pitch.to_vec()),
                layers,
                lnf,
                hf,
                dur_pre,
            });
        }
        Ok((outs, towers))
    }

    /// Head outputs for every position of one or two channels.
    pub fn forward(&self, inputs: &[ChannelInput<'_>]) -> Result<Vec<ChannelOutput>> {
        Ok(self.forward_cached(inputs)?.0)
    }

    fn example_inputs(ex: &AssembledExample) -> Vec<ChannelInput<'_>> {
        ex.channels
            .iter()
            .map(|c| ChannelInput { content: &c.content.input, pitch: &c.pitch.input })
            .collect()
    }

    /// Edge-unit and edge-duration losses of one assembled example.
    pub fn loss(&self, ex: &AssembledExample) -> Result<LossBreakdown> {
        let (outs, _) = self.forward_cached(&Self::example_inputs(ex))?;
        Ok(self.loss_terms(ex, &outs, None)?.0)
    }

    /// Computes the loss and accumulates `scale · ∂(L_EU + L_ED)/∂θ` into `grad`.
    pub fn loss_and_grad(&self, ex: &AssembledExample, grad: &mut [f64], scale: f64) -> Result<LossBreakdown> {
        if grad.len() != self.params.len() {
            return Err(Error::input("gradient buffer has the wrong size"));
        }
        let (outs, towers) = self.forward_cached(&Self::example_inputs(ex))?;
        let (loss, dlogits, ddur) = self.loss_terms(ex, &outs, Some(scale))?;
        self.backward(&towers, &dlogits.unwrap(), &ddur.unwrap(), grad);
        Ok(loss)
    }

    #[allow(clippy::type_complexity)]
    fn loss_terms(
        &self,
        ex: &AssembledExample,
        outs: &[ChannelOutput],
        scale: Option<f64>,
    ) -> Result<(LossBreakdown, Option<Vec<[Array2<f64>; 2]>>, Option<Vec<[Array1<f64>; 2]>>)> {
        let mut loss = LossBreakdown::default();
        let mut dlogits = Vec::new();
        let mut ddur = Vec::new();
        for (ch, out) in ex.channels.iter().zip(outs) {
            let mut dl = [Array2::zeros(out.logits[0].raw_dim()), Array2::zeros(out.logits[1].raw_dim())];
            let mut dd = [Array1::zeros(out.durations[0].len()), Array1::zeros(out.durations[1].len())];
            for s in Stream::BOTH {
                let k = s.index();
                let se = ch.stream(s);
                for i in 0..se.input.len() {
                    if se.unit_mask[i] {
                        let idx = self.vocab.output_index(s, se.target[i]).ok_or_else(|| {
                            Error::input(format!("target {} cannot be emitted by the {s:?} head", se.target[i]))
                        })?;
                        let row = out.logits[k].row(i);
                        let (lse, probs) = nn::log_softmax(&row);
                        loss.eu += lse - row[idx];
                        loss.edges += 1;
                        if let Some(sc) = scale {
                            let mut g = probs * sc;
                            g[idx] -= sc;
                            dl[k].row_mut(i).assign(&g);
                        }
                    }
                    if se.duration_mask[i] {
                        let diff = out.durations[k][i] - se.durations[i] as f64;
                        loss.ed += diff.abs();
                        loss.duration_edges += 1;
                        if scale.is_some() && diff != 0.0 {
                            dd[k][i] = diff.signum();
                        }
                    }
                }
            }
            if let Some(sc) = scale {
                dd[0] *= sc;
                dd[1] *= sc;
            }
            dlogits.push(dl);
            ddur.push(dd);
        }
        if loss.edges == 0 {
            log::warn!("example has no edge positions; loss is zero");
        }
        Ok((loss, scale.map(|_| dlogits), scale.map(|_| ddur)))
    }

    fn backward(&self, towers: &[TowerCache], dlogits: &[[Array2<f64>; 2]], ddur: &[[Array1<f64>; 2]], g: &mut [f64]) {
        let p = &self.params;
        let heads = self.config.heads;
        let nch = towers.len();
        let mut dxs: Vec<Array2<f64>> = Vec::with_capacity(nch);
        for (c, t) in towers.iter().enumerate() {
            let mut dhf = Array2::zeros(t.hf.raw_dim());
            for k in 0..2 {
                let h = self.layout.unit_head[k];
                dhf += &nn::linear_backward(&t.hf.view(), &dlogits[c][k].view(), h.w, h.b, p, g);
                let dz = (&ddur[c][k] * &t.dur_pre[k].mapv(nn::sigmoid)).insert_axis(ndarray::Axis(1));
                let h = self.layout.dur_head[k];
                dhf += &nn::linear_backward(&t.hf.view(), &dz.view(), h.w, h.b, p, g);
            }
            dxs.push(nn::layer_norm_backward(&dhf.view(), &t.lnf, self.layout.lnf_g, self.layout.lnf_b, p, g));
        }
        for (l, ls) in self.layout.layers.iter().enumerate().rev() {
            for c in 0..nch {
                let lc = &towers[c].layers[l];
                let d_act = nn::linear_backward(&lc.h_act.view(), &dxs[c].view(), ls.w2, ls.b2, p, g);
                let d_pre = &d_act * &lc.h_pre.mapv(nn::gelu_grad);
                let d_fin = nn::linear_backward(&lc.f_in.view(), &d_pre.view(), ls.w1, ls.b1, p, g);
                let dx = nn::layer_norm_backward(&d_fin.view(), &lc.ln2, ls.ln2_g, ls.ln2_b, p, g);
                dxs[c] += &dx;
            }
            if let (Some(cs), 2) = (ls.cross, nch) {
                let mut dcin: Vec<Array2<f64>> = dxs.iter().map(|d| Array2::zeros(d.raw_dim())).collect();
                for c in 0..2 {
                    let q = towers[c].layers[l].c_in.as_ref().unwrap();
                    let kv = towers[1 - c].layers[l].c_in.as_ref().unwrap();
                    let cache = towers[c].layers[l].cross.as_ref().unwrap().attn.as_ref().unwrap();
                    let (dq, dkv) =
                        nn::causal_attention_backward(&dxs[c].view(), &q.view(), &kv.view(), cache, &cs.attn, heads, p, g);
                    dcin[c] += &dq;
                    dcin[1 - c] += &dkv;
                }
                for c in 0..2 {
                    let ln = &towers[c].layers[l].cross.as_ref().unwrap().ln;
                    let dx = nn::layer_norm_backward(&dcin[c].view(), ln, cs.ln_g, cs.ln_b, p, g);
                    dxs[c] += &dx;
                }
            }
            for c in 0..nch {
                let lc = &towers[c].layers[l];
                let a = lc.a_in.view();
                let (dq, dkv) = nn::causal_attention_backward(&dxs[c].view(), &a, &a, &lc.attn, &ls.attn, heads, p, g);
                let da = dq + dkv;
                let dx = nn::layer_norm_backward(&da.view(), &lc.ln1, ls.ln1_g, ls.ln1_b, p, g);
                dxs[c] += &dx;
            }
        }
        for (t, dx) in towers.iter().zip(&dxs) {
            self.embed_backward(&t.tokens, dx.view(), g);
        }
    }

    fn embed_backward(&self, tokens: &(Vec<u32>, Vec<u32>), dx: ArrayView2<f64>, g: &mut [f64]) {
        for (k, toks) in [&tokens.0, &tokens.1].into_iter().enumerate() {
            let mut e = self.layout.emb[k].mat_mut(g);
            for (i, &t) in toks.iter().enumerate() {
                let mut row = e.row_mut(t as usize);
                row += &dx.row(i);
            }
        }
    }

    // Accessors used by the incremental decoder.
    fn emb_row(&self, stream: usize, token: u32) -> ndarray::ArrayView1<'_, f64> {
        self.layout.emb[stream].mat(&self.params).slice_move(s![token as usize, ..])
    }
}
