//! A small encoder-decoder trained from scratch on CPU.
//!
//! Encoder: hashed token embeddings, mean-pooled, then one tanh layer.
//! Decoder: byte-level; each step sees the encoder state, the previous byte
//! and a learned position embedding, and emits a distribution over 256 bytes
//! plus end-of-sequence. Training is teacher-forced cross-entropy with Adam.
//! Decoding is greedy.
//!
//! With the default sizes the model has about 2.2M parameters, almost all of
//! them in the source embedding table.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::backend::{whitespace_tokens, Backend, BackendError, TrainPair};

const BOS: usize = 256;
const EOS: usize = 257;
const TARGET_VOCAB: usize = 258;
const MAX_TARGET_TOKENS: usize = 8;
const MAGIC: &[u8; 8] = b"GCS2S\x00\x00\x02";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Seq2SeqConfig {
    pub buckets: usize,
    pub dim: usize,
    pub learning_rate: f32,
    pub seed: u64,
}

impl Default for Seq2SeqConfig {
    fn default() -> Self {
        Seq2SeqConfig {
            buckets: 32_768,
            dim: 64,
            learning_rate: 0.01,
            seed: 0,
        }
    }
}

/// Row-major dense matrix with Adam moments.
#[derive(Debug, Clone)]
struct Param {
    rows: usize,
    cols: usize,
    w: Vec<f32>,
    m: Vec<f32>,
    v: Vec<f32>,
}

impl Param {
    fn uniform(rows: usize, cols: usize, scale: f32, rng: &mut ChaCha8Rng) -> Self {
        let w = (0..rows * cols).map(|_| rng.gen_range(-scale..scale)).collect();
        Self::from_weights(rows, cols, w)
    }

    fn zeros(rows: usize, cols: usize) -> Self {
        Self::from_weights(rows, cols, vec![0.0; rows * cols])
    }

    fn from_weights(rows: usize, cols: usize, w: Vec<f32>) -> Self {
        let n = w.len();
        Param {
            rows,
            cols,
            w,
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    fn row(&self, r: usize) -> &[f32] {
        &self.w[r * self.cols..(r + 1) * self.cols]
    }

    /// `out = W x`
    fn matvec(&self, x: &[f32], out: &mut [f32]) {
        for (r, o) in out.iter_mut().enumerate() {
            *o = self.row(r).iter().zip(x).map(|(a, b)| a * b).sum();
        }
    }

    /// `out += W^T y`
    fn matvec_t_acc(&self, y: &[f32], out: &mut [f32]) {
        for (r, &yr) in y.iter().enumerate() {
            if yr == 0.0 {
                continue;
            }
            for (o, w) in out.iter_mut().zip(self.row(r)) {
                *o += w * yr;
            }
        }
    }
}

struct Adam {
    lr: f32,
    beta1: f32,
    beta2: f32,
    eps: f32,
    step: i32,
}

impl Adam {
    fn corrections(&self) -> (f32, f32) {
        (1.0 - self.beta1.powi(self.step), 1.0 - self.beta2.powi(self.step))
    }

    fn update_range(&self, p: &mut Param, grad: &[f32], start: usize) {
        let (c1, c2) = self.corrections();
        for (i, &g) in grad.iter().enumerate() {
            let j = start + i;
            p.m[j] = self.beta1 * p.m[j] + (1.0 - self.beta1) * g;
            p.v[j] = self.beta2 * p.v[j] + (1.0 - self.beta2) * g * g;
            let m_hat = p.m[j] / c1;
            let v_hat = p.v[j] / c2;
            p.w[j] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

#[derive(Debug, Clone)]
pub struct TinySeq2Seq {
    config: Seq2SeqConfig,
    src_embed: Param,
    enc_w: Param,
    enc_b: Param,
    tgt_embed: Param,
    pos_embed: Param,
    dec_w: Param,
    dec_b: Param,
    out_w: Param,
    out_b: Param,
    step: i32,
}

/// Gradient buffers for one batch. The source embedding gradient is sparse.
struct Grads {
    src_rows: std::collections::BTreeMap<usize, Vec<f32>>,
    enc_w: Vec<f32>,
    enc_b: Vec<f32>,
    tgt_embed: Vec<f32>,
    pos_embed: Vec<f32>,
    dec_w: Vec<f32>,
    dec_b: Vec<f32>,
    out_w: Vec<f32>,
    out_b: Vec<f32>,
}

fn fnv1a(token: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in token.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

fn softmax_in_place(xs: &mut [f32]) {
    let max = xs.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let mut sum = 0.0;
    for x in xs.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in xs.iter_mut() {
        *x /= sum;
    }
}

fn outer_acc(grad: &mut [f32], dy: &[f32], x: &[f32]) {
    let cols = x.len();
    for (r, &d) in dy.iter().enumerate() {
        if d == 0.0 {
            continue;
        }
        for (g, &xv) in grad[r * cols..(r + 1) * cols].iter_mut().zip(x) {
            *g += d * xv;
        }
    }
}

impl TinySeq2Seq {
    pub fn new(config: Seq2SeqConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let d = config.dim;
        let glorot = |fan_in: usize, fan_out: usize| (6.0 / (fan_in + fan_out) as f32).sqrt();
        TinySeq2Seq {
            src_embed: Param::uniform(config.buckets, d, 1.0, &mut rng),
            enc_w: Param::uniform(d, d, glorot(d, d), &mut rng),
            enc_b: Param::zeros(1, d),
            tgt_embed: Param::uniform(TARGET_VOCAB, d, 1.0, &mut rng),
            pos_embed: Param::uniform(MAX_TARGET_TOKENS + 1, d, 1.0, &mut rng),
            dec_w: Param::uniform(d, 3 * d, glorot(3 * d, d), &mut rng),
            dec_b: Param::zeros(1, d),
            out_w: Param::uniform(TARGET_VOCAB, d, glorot(d, TARGET_VOCAB), &mut rng),
            out_b: Param::zeros(1, TARGET_VOCAB),
            config,
            step: 0,
        }
    }

    pub fn config(&self) -> &Seq2SeqConfig {
        &self.config
    }

    pub fn parameter_count(&self) -> usize {
        [
            &self.src_embed,
            &self.enc_w,
            &self.enc_b,
            &self.tgt_embed,
            &self.pos_embed,
            &self.dec_w,
            &self.dec_b,
            &self.out_w,
            &self.out_b,
        ]
        .iter()
        .map(|p| p.w.len())
        .sum()
    }

    fn buckets_of(&self, input: &[String]) -> Vec<usize> {
        input
            .iter()
            .map(|t| (fnv1a(t) % self.config.buckets as u64) as usize)
            .collect()
    }

    /// Returns `(pooled, hidden)`.
    fn encode(&self, buckets: &[usize]) -> (Vec<f32>, Vec<f32>) {
        let d = self.config.dim;
        let mut pooled = vec![0.0; d];
        if !buckets.is_empty() {
            for &b in buckets {
                for (p, e) in pooled.iter_mut().zip(self.src_embed.row(b)) {
                    *p += e;
                }
            }
            let n = buckets.len() as f32;
            pooled.iter_mut().for_each(|p| *p /= n);
        }
        let mut hidden = vec![0.0; d];
        self.enc_w.matvec(&pooled, &mut hidden);
        for (h, b) in hidden.iter_mut().zip(&self.enc_b.w) {
            *h = (*h + b).tanh();
        }
        (pooled, hidden)
    }

    /// Returns `(decoder input, state, probabilities)` for one step.
    fn decode_step(&self, hidden: &[f32], prev: usize, pos: usize) -> (Vec<f32>, Vec<f32>, Vec<f32>) {
        let d = self.config.dim;
        let mut x = Vec::with_capacity(3 * d);
        x.extend_from_slice(hidden);
        x.extend_from_slice(self.tgt_embed.row(prev));
        x.extend_from_slice(self.pos_embed.row(pos));
        let mut state = vec![0.0; d];
        self.dec_w.matvec(&x, &mut state);
        for (s, b) in state.iter_mut().zip(&self.dec_b.w) {
            *s = (*s + b).tanh();
        }
        let mut probs = vec![0.0; TARGET_VOCAB];
        self.out_w.matvec(&state, &mut probs);
        for (p, b) in probs.iter_mut().zip(&self.out_b.w) {
            *p += b;
        }
        softmax_in_place(&mut probs);
        (x, state, probs)
    }

    /// Target bytes, capped at the decoding limit, then end-of-sequence.
    fn target_ids(target: &str) -> Vec<usize> {
        target
            .bytes()
            .take(MAX_TARGET_TOKENS)
            .map(usize::from)
            .chain(std::iter::once(EOS))
            .collect()
    }

    fn zero_grads(&self) -> Grads {
        Grads {
            src_rows: Default::default(),
            enc_w: vec![0.0; self.enc_w.w.len()],
            enc_b: vec![0.0; self.enc_b.w.len()],
            tgt_embed: vec![0.0; self.tgt_embed.w.len()],
            pos_embed: vec![0.0; self.pos_embed.w.len()],
            dec_w: vec![0.0; self.dec_w.w.len()],
            dec_b: vec![0.0; self.dec_b.w.len()],
            out_w: vec![0.0; self.out_w.w.len()],
            out_b: vec![0.0; self.out_b.w.len()],
        }
    }

    /// Forward and backward for one pair; gradients are scaled by `weight`.
    fn accumulate(&self, pair: &TrainPair, weight: f32, g: &mut Grads) -> f32 {
        let d = self.config.dim;
        let buckets = self.buckets_of(&pair.input);
        let (pooled, hidden) = self.encode(&buckets);
        let targets = Self::target_ids(&pair.target);
        let step_weight = weight / targets.len() as f32;
        let mut d_hidden = vec![0.0; d];
        let mut loss = 0.0;
        let mut prev = BOS;
        for (pos, &y) in targets.iter().enumerate() {
            let (x, state, mut probs) = self.decode_step(&hidden, prev, pos);
            loss -= probs[y].max(1e-12).ln();
            probs[y] -= 1.0;
            probs.iter_mut().for_each(|p| *p *= step_weight);
            let d_logits = probs;
            outer_acc(&mut g.out_w, &d_logits, &state);
            g.out_b.iter_mut().zip(&d_logits).for_each(|(a, b)| *a += b);
            let mut d_state = vec![0.0; d];
            self.out_w.matvec_t_acc(&d_logits, &mut d_state);
            let d_z: Vec<f32> = d_state.iter().zip(&state).map(|(ds, s)| ds * (1.0 - s * s)).collect();
            outer_acc(&mut g.dec_w, &d_z, &x);
            g.dec_b.iter_mut().zip(&d_z).for_each(|(a, b)| *a += b);
            let mut d_x = vec![0.0; 3 * d];
            self.dec_w.matvec_t_acc(&d_z, &mut d_x);
            d_hidden.iter_mut().zip(&d_x[..d]).for_each(|(a, b)| *a += b);
            g.tgt_embed[prev * d..(prev + 1) * d]
                .iter_mut()
                .zip(&d_x[d..2 * d])
                .for_each(|(a, b)| *a += b);
            g.pos_embed[pos * d..(pos + 1) * d]
                .iter_mut()
                .zip(&d_x[2 * d..])
                .for_each(|(a, b)| *a += b);
            prev = y;
        }
        let d_z_enc: Vec<f32> = d_hidden.iter().zip(&hidden).map(|(dh, h)| dh * (1.0 - h * h)).collect();
        outer_acc(&mut g.enc_w, &d_z_enc, &pooled);
        g.enc_b.iter_mut().zip(&d_z_enc).for_each(|(a, b)| *a += b);
        if !buckets.is_empty() {
            let mut d_pooled = vec![0.0; d];
            self.enc_w.matvec_t_acc(&d_z_enc, &mut d_pooled);
            let n = buckets.len() as f32;
            for &b in &buckets {
                let row = g.src_rows.entry(b).or_insert_with(|| vec![0.0; d]);
                row.iter_mut().zip(&d_pooled).for_each(|(r, dp)| *r += dp / n);
            }
        }
        loss / targets.len() as f32
    }

    fn apply(&mut self, g: Grads) {
        self.step += 1;
        let adam = Adam {
            lr: self.config.learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: self.step,
        };
        // Lazy Adam on the embedding table: only rows seen in this batch move.
        let d = self.config.dim;
        for (b, row) in &g.src_rows {
            adam.update_range(&mut self.src_embed, row, b * d);
        }
        adam.update_range(&mut self.enc_w, &g.enc_w, 0);
        adam.update_range(&mut self.enc_b, &g.enc_b, 0);
        adam.update_range(&mut self.tgt_embed, &g.tgt_embed, 0);
        adam.update_range(&mut self.pos_embed, &g.pos_embed, 0);
        adam.update_range(&mut self.dec_w, &g.dec_w, 0);
        adam.update_range(&mut self.dec_b, &g.dec_b, 0);
        adam.update_range(&mut self.out_w, &g.out_w, 0);
        adam.update_range(&mut self.out_b, &g.out_b, 0);
    }

    /// Mean per-token cross-entropy of one pair, without updating anything.
    pub fn loss(&self, pair: &TrainPair) -> f32 {
        let mut g = self.zero_grads();
        self.accumulate(pair, 1.0, &mut g)
    }

    fn params(&self) -> [&Param; 9] {
        [
            &self.src_embed,
            &self.enc_w,
            &self.enc_b,
            &self.tgt_embed,
            &self.pos_embed,
            &self.dec_w,
            &self.dec_b,
            &self.out_w,
            &self.out_b,
        ]
    }
}

impl Backend for TinySeq2Seq {
    fn name(&self) -> &'static str {
        "tiny-seq2seq"
    }

    fn tokenize(&self, text: &str) -> Vec<String> {
        whitespace_tokens(text)
    }

    fn train_epoch(&mut self, batches: &[Vec<TrainPair>]) -> Result<f64, BackendError> {
        let mut total = 0.0f64;
        let mut count = 0usize;
        for batch in batches.iter().filter(|b| !b.is_empty()) {
            let mut g = self.zero_grads();
            let weight = 1.0 / batch.len() as f32;
            for pair in batch {
                let loss = self.accumulate(pair, weight, &mut g);
                if !loss.is_finite() {
                    return Err(BackendError::Failed("non-finite training loss".into()));
                }
                total += f64::from(loss);
                count += 1;
            }
            self.apply(g);
        }
        Ok(if count == 0 { 0.0 } else { total / count as f64 })
    }

    fn generate(&self, input: &[String]) -> Result<String, BackendError> {
        let (_, hidden) = self.encode(&self.buckets_of(input));
        let mut bytes = Vec::new();
        let mut prev = BOS;
        for pos in 0..MAX_TARGET_TOKENS {
            let (_, _, probs) = self.decode_step(&hidden, prev, pos);
            let next = probs
                .iter()
                .enumerate()
                .fold((0, f32::NEG_INFINITY), |best, (i, &p)| if p > best.1 { (i, p) } else { best })
                .0;
            if next == EOS || next == BOS {
                break;
            }
            bytes.push(next as u8);
            prev = next;
        }
        Ok(String::from_utf8_lossy(&bytes).into_owned())
    }

    fn save(&self, path: &Path) -> Result<(), BackendError> {
        let mut out = std::io::BufWriter::new(fs::File::create(path)?);
        out.write_all(MAGIC)?;
        for v in [self.config.buckets as u64, self.config.dim as u64, self.config.seed, self.step as u64] {
            out.write_all(&v.to_le_bytes())?;
        }
        out.write_all(&self.config.learning_rate.to_le_bytes())?;
        for p in self.params() {
            for w in &p.w {
                out.write_all(&w.to_le_bytes())?;
            }
        }
        out.flush()?;
        Ok(())
    }

    fn load(path: &Path) -> Result<Self, BackendError> {
        let mut input = std::io::BufReader::new(fs::File::open(path)?);
        let mut magic = [0u8; 8];
        input.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(BackendError::Corrupt("bad magic".into()));
        }
        let mut u64s = [0u64; 4];
        for v in u64s.iter_mut() {
            let mut buf = [0u8; 8];
            input.read_exact(&mut buf)?;
            *v = u64::from_le_bytes(buf);
        }
        let mut lr = [0u8; 4];
        input.read_exact(&mut lr)?;
        let [buckets, dim, seed, step] = u64s;
        if buckets == 0 || dim == 0 || buckets > 1 << 24 || dim > 4096 {
            return Err(BackendError::Corrupt(format!("implausible sizes {buckets}x{dim}")));
        }
        let mut model = TinySeq2Seq::new(Seq2SeqConfig {
            buckets: buckets as usize,
            dim: dim as usize,
            learning_rate: f32::from_le_bytes(lr),
            seed,
        });
        model.step = step as i32;
        let mut buf = [0u8; 4];
        for p in [
            &mut model.src_embed,
            &mut model.enc_w,
            &mut model.enc_b,
            &mut model.tgt_embed,
            &mut model.pos_embed,
            &mut model.dec_w,
            &mut model.dec_b,
            &mut model.out_w,
            &mut model.out_b,
        ] {
            debug_assert_eq!(p.w.len(), p.rows * p.cols);
            for w in p.w.iter_mut() {
                input
                    .read_exact(&mut buf)
                    .map_err(|_| BackendError::Corrupt("truncated weights".into()))?;
                *w = f32::from_le_bytes(buf);
            }
        }
        Ok(model)
    }

    fn settings(&self) -> Vec<(String, String)> {
        vec![
            ("backend.parameters".into(), self.parameter_count().to_string()),
            ("backend.buckets".into(), self.config.buckets.to_string()),
            ("backend.dim".into(), self.config.dim.to_string()),
            ("backend.optimizer".into(), "adam(beta1=0.9,beta2=0.999,eps=1e-8)".into()),
            ("backend.learning_rate".into(), self.config.learning_rate.to_string()),
            ("backend.init_seed".into(), self.config.seed.to_string()),
            ("backend.decoding".into(), format!("greedy,max_tokens={MAX_TARGET_TOKENS}")),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> TinySeq2Seq {
        TinySeq2Seq::new(Seq2SeqConfig {
            buckets: 64,
            dim: 8,
            learning_rate: 0.05,
            seed: 3,
        })
    }

    fn pair(input: &str, target: &str) -> TrainPair {
        TrainPair {
            input: whitespace_tokens(input),
            target: target.into(),
        }
    }

    /// Central finite differences against the analytic gradient on a few
    /// coordinates of every parameter block.
    #[test]
    fn gradients_match_finite_differences() {
        let model = small();
        let p = pair("alpha beta gamma", "12");
        let mut g = model.zero_grads();
        model.accumulate(&p, 1.0, &mut g);
        let eps = 1e-2f32;
        let bucket = model.buckets_of(&p.input)[0];
        let check = |analytic: f32, perturb: &dyn Fn(&mut TinySeq2Seq, f32)| {
            let mut plus = model.clone();
            perturb(&mut plus, eps);
            let mut minus = model.clone();
            perturb(&mut minus, -eps);
            let numeric = (plus.loss(&p) - minus.loss(&p)) / (2.0 * eps);
            assert!(
                (numeric - analytic).abs() < 2e-3 + 2e-2 * analytic.abs(),
                "numeric {numeric} analytic {analytic}"
            );
        };
        for i in [0, 5, 17] {
            check(g.out_w[i], &|m, e| m.out_w.w[i] += e);
            check(g.dec_w[i], &|m, e| m.dec_w.w[i] += e);
            check(g.enc_w[i], &|m, e| m.enc_w.w[i] += e);
        }
        check(g.out_b[b'1' as usize], &|m, e| m.out_b.w[b'1' as usize] += e);
        check(g.dec_b[2], &|m, e| m.dec_b.w[2] += e);
        check(g.enc_b[1], &|m, e| m.enc_b.w[1] += e);
        check(g.tgt_embed[BOS * 8 + 3], &|m, e| m.tgt_embed.w[BOS * 8 + 3] += e);
        check(g.pos_embed[8 + 2], &|m, e| m.pos_embed.w[8 + 2] += e);
        check(g.src_rows[&bucket][4], &|m, e| m.src_embed.w[bucket * 8 + 4] += e);
    }

    #[test]
    fn learns_a_tiny_mapping() {
        let mut model = small();
        let data = vec![vec![pair("cat", "1"), pair("dog", "2")], vec![pair("cow", "33")]];
        let first = model.train_epoch(&data).unwrap();
        let mut last = first;
        for _ in 0..60 {
            last = model.train_epoch(&data).unwrap();
        }
        assert!(last < first);
        assert_eq!(model.generate(&whitespace_tokens("cat")).unwrap(), "1");
        assert_eq!(model.generate(&whitespace_tokens("cow")).unwrap(), "33");
    }

    #[test]
    fn save_load_generates_identically() {
        let dir = tempfile::tempdir().unwrap();
        let mut model = small();
        model.train_epoch(&[vec![pair("a b", "1")]]).unwrap();
        let path = dir.path().join("w.bin");
        model.save(&path).unwrap();
        let back = TinySeq2Seq::load(&path).unwrap();
        let input = whitespace_tokens("a b c");
        assert_eq!(back.generate(&input).unwrap(), model.generate(&input).unwrap());
        assert_eq!(back.loss(&pair("a b", "1")), model.loss(&pair("a b", "1")));
        fs::write(&path, b"junk").unwrap();
        assert!(TinySeq2Seq::load(&path).is_err());
    }

    #[test]
    fn default_size_is_a_few_million() {
        let n = TinySeq2Seq::new(Seq2SeqConfig::default()).parameter_count();
        assert!((2_000_000..5_000_000).contains(&n), "{n}");
    }
}
