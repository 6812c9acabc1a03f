//! Speaker/listener classifier for IPUs that containment alone cannot label:
//! a bidirectional LSTM over content units, mean-pooled, with a logistic head
//! giving the listener posterior.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;
use crate::nn::{self, Adam, Init, LayoutBuilder, Slot};

const MAGIC: &[u8; 8] = b"CHATSIPU";

/// Posterior above which an IPU is called a listener IPU; ties go to speaker.
pub const DECISION_THRESHOLD: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IpuRole {
    Speaker,
    Listener,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledUnitSequence {
    pub content_units: Vec<u32>,
    pub label: IpuRole,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifierConfig {
    pub vocab_size: usize,
    pub num_layers: usize,
    pub embedding_dim: usize,
    pub hidden_dim: usize,
    pub learning_rate: f64,
    pub max_steps: usize,
    pub batch_size: usize,
    pub eval_every: usize,
    pub seed: u64,
}

impl ClassifierConfig {
    pub fn paper(vocab_size: usize) -> Self {
        ClassifierConfig {
            vocab_size,
            num_layers: 3,
            embedding_dim: 256,
            hidden_dim: 512,
            learning_rate: 1e-4,
            max_steps: 10_000,
            batch_size: 32,
            eval_every: 200,
            seed: 0,
        }
    }

    pub fn desk(vocab_size: usize) -> Self {
        ClassifierConfig {
            vocab_size,
            num_layers: 1,
            embedding_dim: 16,
            hidden_dim: 16,
            learning_rate: 1e-2,
            max_steps: 300,
            batch_size: 16,
            eval_every: 50,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab_size == 0 || self.num_layers == 0 || self.embedding_dim == 0 || self.hidden_dim == 0 {
            return Err(Error::input("classifier dimensions must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::input("classifier batch_size must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
struct LstmSlots {
    w: Slot,
    u: Slot,
    b: Slot,
}

#[derive(Clone, Debug)]
struct Layout {
    emb: Slot,
    layers: Vec<[LstmSlots; 2]>,
    head_w: Slot,
    head_b: Slot,
    builder: LayoutBuilder,
}

impl Layout {
    fn new(cfg: &ClassifierConfig) -> Self {
        let h = cfg.hidden_dim;
        let mut b = LayoutBuilder::new();
        let emb = b.add(cfg.vocab_size, cfg.embedding_dim, Init::Normal(1.0));
        let scale = 1.0 / (h as f64).sqrt();
        let layers = (0..cfg.num_layers)
            .map(|l| {
                let input = if l == 0 { cfg.embedding_dim } else { 2 * h };
                [0, 1].map(|_| LstmSlots {
                    w: b.add(input, 4 * h, Init::Uniform(scale)),
                    u: b.add(h, 4 * h, Init::Uniform(scale)),
                    b: b.add(1, 4 * h, Init::Zeros),
                })
            })
            .collect();
        let head_w = b.add(2 * h, 1, Init::Xavier);
        let head_b = b.add(1, 1, Init::Zeros);
        Layout { emb, layers, head_w, head_b, builder: b }
    }
}

struct LstmCache {
    x: Array2<f64>,
    /// Gate activations per step: i, f, g, o (each `h` wide).
    gates: Array2<f64>,
    c: Array2<f64>,
    h: Array2<f64>,
}

fn lstm_forward(x: Array2<f64>, s: &LstmSlots, hd: usize, p: &[f64]) -> LstmCache {
    let t_len = x.nrows();
    let xw = nn::linear(&x.view(), s.w, s.b, p);
    let u = s.u.mat(p);
    let mut gates = Array2::zeros((t_len, 4 * hd));
    let mut c = Array2::<f64>::zeros((t_len, hd));
    let mut h = Array2::zeros((t_len, hd));
    let mut h_prev = Array1::zeros(hd);
    let mut c_prev = Array1::zeros(hd);
    for t in 0..t_len {
        let a = &xw.row(t) + &h_prev.dot(&u);
        let mut g = gates.row_mut(t);
        for j in 0..hd {
            g[j] = nn::sigmoid(a[j]);
            g[hd + j] = nn::sigmoid(a[hd + j]);
            g[2 * hd + j] = a[2 * hd + j].tanh();
            g[3 * hd + j] = nn::sigmoid(a[3 * hd + j]);
            c[[t, j]] = g[hd + j] * c_prev[j] + g[j] * g[2 * hd + j];
            h[[t, j]] = g[3 * hd + j] * c[[t, j]].tanh();
        }
        h_prev = h.row(t).to_owned();
        c_prev = c.row(t).to_owned();
    }
    LstmCache { x, gates, c, h }
}

fn lstm_backward(dh_out: &ArrayView2<f64>, cache: &LstmCache, s: &LstmSlots, hd: usize, p: &[f64], g: &mut [f64]) -> Array2<f64> {
    let t_len = cache.x.nrows();
    let u = s.u.mat(p);
    let mut da_all = Array2::zeros((t_len, 4 * hd));
    let mut dh_next = Array1::<f64>::zeros(hd);
    let mut dc_next = Array1::<f64>::zeros(hd);
    for t in (0..t_len).rev() {
        let gt = cache.gates.row(t);
        let mut da = da_all.row_mut(t);
        for j in 0..hd {
            let (i, f, gg, o) = (gt[j], gt[hd + j], gt[2 * hd + j], gt[3 * hd + j]);
            let tc = cache.c[[t, j]].tanh();
            let dh = dh_out[[t, j]] + dh_next[j];
            let dc = dh * o * (1.0 - tc * tc) + dc_next[j];
            let c_prev = if t > 0 { cache.c[[t - 1, j]] } else { 0.0 };
            da[j] = dc * gg * i * (1.0 - i);
            da[hd + j] = dc * c_prev * f * (1.0 - f);
            da[2 * hd + j] = dc * i * (1.0 - gg * gg);
            da[3 * hd + j] = dh * tc * o * (1.0 - o);
            dc_next[j] = dc * f;
        }
        dh_next = da.dot(&u.t());
        if t > 0 {
            let hp = cache.h.row(t - 1).insert_axis(Axis(0));
            nn::matmul_acc(&hp.t(), &da.view().insert_axis(Axis(0)), &mut s.u.mat_mut(g));
        }
    }
    nn::linear_backward(&cache.x.view(), &da_all.view(), s.w, s.b, p, g)
}

fn reversed(x: &ArrayView2<f64>) -> Array2<f64> {
    x.slice(s![..;-1, ..]).to_owned()
}

struct ForwardCache {
    layers: Vec<[LstmCache; 2]>,
    pooled: Array2<f64>,
    logit: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub label: IpuRole,
    /// Posterior probability of the listener class.
    pub p_listener: f64,
}

#[derive(Clone, Debug)]
pub struct IpuClassifier {
    pub config: ClassifierConfig,
    pub params: Vec<f64>,
    layout: Layout,
}

impl IpuClassifier {
    pub fn new(config: ClassifierConfig) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = layout.builder.initialize(&mut rng);
        // forget-gate bias starts at 1
        let h = config.hidden_dim;
        for dirs in &layout.layers {
            for d in dirs {
                params[d.b.offset + h..d.b.offset + 2 * h].fill(1.0);
            }
        }
        Ok(IpuClassifier { config, params, layout })
    }

    fn check(&self, units: &[u32]) -> Result<()> {
        if units.is_empty() {
            return Err(Error::input("cannot classify an empty unit sequence"));
        }
        if let Some(u) = units.iter().find(|&&u| u as usize >= self.config.vocab_size) {
            return Err(Error::input(format!("unit {u} outside the classifier vocabulary")));
        }
        Ok(())
    }

    fn forward(&self, units: &[u32]) -> ForwardCache {
        let p = &self.params;
        let hd = self.config.hidden_dim;
        let emb = self.layout.emb.mat(p);
        let mut x = Array2::zeros((units.len(), self.config.embedding_dim));
        for (mut row, &u) in x.rows_mut().into_iter().zip(units) {
            row.assign(&emb.row(u as usize));
        }
        let mut layers = Vec::with_capacity(self.layout.layers.len());
        for dirs in &self.layout.layers {
            let fw = lstm_forward(x.clone(), &dirs[0], hd, p);
            let bw = lstm_forward(reversed(&x.view()), &dirs[1], hd, p);
            let mut next = Array2::zeros((units.len(), 2 * hd));
            next.slice_mut(s![.., ..hd]).assign(&fw.h);
            next.slice_mut(s![.., hd..]).assign(&bw.h.slice(s![..;-1, ..]));
            layers.push([fw, bw]);
            x = next;
        }
        let pooled = x.mean_axis(Axis(0)).unwrap().insert_axis(Axis(0));
        let logit = nn::linear(&pooled.view(), self.layout.head_w, self.layout.head_b, p)[[0, 0]];
        ForwardCache { layers, pooled, logit }
    }

    /// Binary cross-entropy of one sequence; accumulates `scale · gradient` when `grad` is given.
    fn loss(&self, ex: &LabeledUnitSequence, grad: Option<(&mut [f64], f64)>) -> f64 {
        let cache = self.forward(&ex.content_units);
        let y = if ex.label == IpuRole::Listener { 1.0 } else { 0.0 };
        let z = cache.logit;
        let loss = nn::softplus(z) - y * z;
        if let Some((g, scale)) = grad {
            let p = &self.params;
            let hd = self.config.hidden_dim;
            let t_len = ex.content_units.len();
            let dz = Array2::from_elem((1, 1), (nn::sigmoid(z) - y) * scale);
            let dpool = nn::linear_backward(&cache.pooled.view(), &dz.view(), self.layout.head_w, self.layout.head_b, p, g);
            let mut dx = Array2::from_shape_fn((t_len, 2 * hd), |(_, j)| dpool[[0, j]] / t_len as f64);
            for (dirs, lc) in self.layout.layers.iter().zip(&cache.layers).rev() {
                let dfw = lstm_backward(&dx.slice(s![.., ..hd]), &lc[0], &dirs[0], hd, p, g);
                let dbw_rev = reversed(&dx.slice(s![.., hd..]));
                let dbw = lstm_backward(&dbw_rev.view(), &lc[1], &dirs[1], hd, p, g);
                dx = dfw + dbw.slice(s![..;-1, ..]);
            }
            let mut e = self.layout.emb.mat_mut(g);
            for (t, &u) in ex.content_units.iter().enumerate() {
                let mut row = e.row_mut(u as usize);
                row += &dx.row(t);
            }
        }
        loss
    }

    pub fn classify(&self, units: &[u32]) -> Result<Classification> {
        self.check(units)?;
        let p_listener = nn::sigmoid(self.forward(units).logit);
        let label = if p_listener > DECISION_THRESHOLD { IpuRole::Listener } else { IpuRole::Speaker };
        Ok(Classification { label, p_listener })
    }

    pub fn mean_loss(&self, examples: &[LabeledUnitSequence]) -> Result<f64> {
        if examples.is_empty() {
            return Err(Error::input("no examples"));
        }
        for ex in examples {
            self.check(&ex.content_units)?;
        }
        Ok(examples.iter().map(|e| self.loss(e, None)).sum::<f64>() / examples.len() as f64)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        io::encode_params(MAGIC, &self.config, &self.params)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (config, params): (ClassifierConfig, Vec<f64>) = io::decode_params(MAGIC, bytes)?;
        Self::with_params(config, params)
    }

    fn with_params(config: ClassifierConfig, params: Vec<f64>) -> Result<Self> {
        let mut m = IpuClassifier::new(config)?;
        if params.len() != m.params.len() {
            return Err(Error::Format("classifier parameter count does not match its config".into()));
        }
        m.params = params;
        Ok(m)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        io::save_params(path, MAGIC, &self.config, &self.params)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let (config, params) = io::load_params(path, MAGIC)?;
        Self::with_params(config, params)
    }
}

#[derive(Clone, Debug)]
pub struct TrainedClassifier {
    pub model: IpuClassifier,
    pub final_loss: f64,
    pub best_validation_loss: Option<f64>,
}

/// Train with Adam on shuffled minibatches. When a validation set is given,
/// the parameters with the lowest validation loss are returned.
pub fn train_classifier(
    examples: &[LabeledUnitSequence],
    config: &ClassifierConfig,
    validation: Option<&[LabeledUnitSequence]>,
) -> Result<TrainedClassifier> {
    let mut model = IpuClassifier::new(config.clone())?;
    if examples.is_empty() {
        return Err(Error::input("no training examples"));
    }
    for ex in examples.iter().chain(validation.unwrap_or(&[])) {
        model.check(&ex.content_units)?;
    }
    let has = |r| examples.iter().any(|e| e.label == r);
    if !has(IpuRole::Speaker) || !has(IpuRole::Listener) {
        return Err(Error::Training("training set must contain both speaker and listener examples".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x1b5);
    let mut adam = Adam::new(model.params.len(), 0.9, 0.98, 1e-8);
    let mut grad = vec![0.0; model.params.len()];
    let mut order: Vec<usize> = Vec::new();
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut final_loss = f64::NAN;
    let val = validation.filter(|v| !v.is_empty());
    for step in 1..=config.max_steps {
        grad.fill(0.0);
        let mut total = 0.0;
        let scale = 1.0 / config.batch_size as f64;
        for _ in 0..config.batch_size {
            if order.is_empty() {
                order = (0..examples.len()).collect();
                order.shuffle(&mut rng);
            }
            let ex = &examples[order.pop().unwrap()];
            total += model.loss(ex, Some((&mut grad, scale)));
        }
        final_loss = total * scale;
        if !final_loss.is_finite() {
            return Err(Error::Training(format!("classifier loss diverged at step {step}")));
        }
        adam.update(&mut model.params, &grad, config.learning_rate);
        if let Some(v) = val {
            if step % config.eval_every.max(1) == 0 || step == config.max_steps {
                let vl = model.mean_loss(v)?;
                log::debug!("classifier step {step}: train {final_loss:.4} validation {vl:.4}");
                if best.as_ref().is_none_or(|(b, _)| vl < *b) {
                    best = Some((vl, model.params.clone()));
                }
            }
        }
    }
    let best_validation_loss = best.as_ref().map(|b| b.0);
    if let Some((_, params)) = best {
        model.params = params;
    }
    Ok(TrainedClassifier { model, final_loss, best_validation_loss })
}

/// Fraction of examples whose predicted label matches.
pub fn evaluate_classifier(model: &IpuClassifier, examples: &[LabeledUnitSequence]) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::input("cannot evaluate on an empty set"));
    }
    let mut correct = 0usize;
    for ex in examples {
        if model.classify(&ex.content_units)?.label == ex.label {
            correct += 1;
        }
    }
    Ok(correct as f64 / examples.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn tiny() -> ClassifierConfig {
        ClassifierConfig { num_layers: 2, embedding_dim: 3, hidden_dim: 4, ..ClassifierConfig::desk(10) }
    }

    /// Speaker sequences draw units 0..10, listener sequences 490..500.
    fn separable(n: usize, seed: u64) -> Vec<LabeledUnitSequence> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let len = rng.gen_range(1..12);
                let listener = i % 2 == 1;
                let base = if listener { 490 } else { 0 };
                LabeledUnitSequence {
                    content_units: (0..len).map(|_| base + rng.gen_range(0..10)).collect(),
                    label: if listener { IpuRole::Listener } else { IpuRole::Speaker },
                }
            })
            .collect()
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut m = IpuClassifier::new(tiny()).unwrap();
        let ex = LabeledUnitSequence { content_units: vec![1, 4, 4, 9, 0], label: IpuRole::Listener };
        let mut g = vec![0.0; m.params.len()];
        m.loss(&ex, Some((&mut g, 1.0)));
        let h = 1e-6;
        for i in 0..m.params.len() {
            let orig = m.params[i];
            m.params[i] = orig + h;
            let up = m.loss(&ex, None);
            m.params[i] = orig - h;
            let dn = m.loss(&ex, None);
            m.params[i] = orig;
            let num = (up - dn) / (2.0 * h);
            let rel = (num - g[i]).abs() / num.abs().max(g[i].abs()).max(1e-6);
            assert!(rel < 1e-4, "param {i}: {num} vs {}", g[i]);
        }
    }

    #[test]
    fn separable_units_are_learned() {
        let data = separable(500, 1);
        let (train, test) = data.split_at(400);
        let cfg = ClassifierConfig::desk(500);
        let trained = train_classifier(train, &cfg, Some(test)).unwrap();
        let acc = evaluate_classifier(&trained.model, test).unwrap();
        assert!(acc >= 0.95, "held-out accuracy {acc}");
        let speaker_only: Vec<u32> = (0..8).collect();
        assert_eq!(trained.model.classify(&speaker_only).unwrap().label, IpuRole::Speaker);
        assert!(trained.model.classify(&[495]).is_ok());
    }

    #[test]
    fn overfits_twenty_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let data: Vec<LabeledUnitSequence> = (0..20)
            .map(|i| LabeledUnitSequence {
                content_units: (0..rng.gen_range(2..8)).map(|_| rng.gen_range(0..10)).collect(),
                label: if i % 2 == 0 { IpuRole::Speaker } else { IpuRole::Listener },
            })
            .collect();
        let cfg = ClassifierConfig { max_steps: 400, ..ClassifierConfig::desk(10) };
        let trained = train_classifier(&data, &cfg, None).unwrap();
        assert!(evaluate_classifier(&trained.model, &data).unwrap() >= 0.95);
    }

    #[test]
    fn single_class_is_an_error() {
        let data: Vec<_> = separable(10, 2).into_iter().filter(|e| e.label == IpuRole::Listener).collect();
        assert!(matches!(
            train_classifier(&data, &ClassifierConfig::desk(500), None),
            Err(Error::Training(_))
        ));
    }

    #[test]
    fn training_is_deterministic() {
        let data = separable(40, 3);
        let cfg = ClassifierConfig { max_steps: 20, ..ClassifierConfig::desk(500) };
        let a = train_classifier(&data, &cfg, None).unwrap();
        let b = train_classifier(&data, &cfg, None).unwrap();
        assert_eq!(a.model.params, b.model.params);
    }

    #[test]
    fn ties_go_to_speaker_and_constant_model_scores_half() {
        let mut m = IpuClassifier::new(ClassifierConfig::desk(500)).unwrap();
        m.params.fill(0.0);
        let c = m.classify(&[3]).unwrap();
        assert_eq!(c.p_listener, 0.5);
        assert_eq!(c.label, IpuRole::Speaker);
        assert_eq!(evaluate_classifier(&m, &separable(10, 4)).unwrap(), 0.5);
        assert!(m.classify(&[]).is_err());
        assert!(evaluate_classifier(&m, &[]).is_err());
    }

    #[test]
    fn persistence_round_trip() {
        let m = IpuClassifier::new(tiny()).unwrap();
        let back = IpuClassifier::from_bytes(&m.to_bytes().unwrap()).unwrap();
        assert_eq!(back.params, m.params);
        assert_eq!(back.classify(&[1, 2]).unwrap(), m.classify(&[1, 2]).unwrap());
    }
}
