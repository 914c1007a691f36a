use crate::cif::{fire_embeddings, predict_weights, quantity_loss_graph, scale_weights_graph, FireMode, FirePlan};
use crate::ctc::{
    averaging_matrix, collapse, compress, ctc_loss, greedy_decode, viterbi_align, CompressedPosterior, LabelSequence,
    PosteriorMatrix, BLANK,
};
use crate::tensor::{Graph, Tensor, Var};

use super::layers::{self, predictor_vars, Layout};
use super::{Batch, Model, ModelError, Result, Variant};

/// Batch-mean loss terms before weighting, plus the weighted total.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossTerms {
    pub ce: Option<f64>,
    pub ctc: Option<f64>,
    pub quantity: Option<f64>,
    pub total: f64,
    /// Decoder positions per utterance (fires or compressed rows); empty for ctc.
    pub decoder_lengths: Vec<usize>,
}

pub struct LossOutput {
    pub loss: Var,
    pub terms: LossTerms,
}

/// A decoded hypothesis with its generation cost.
#[derive(Clone, Debug, PartialEq)]
pub struct Transcript {
    pub tokens: LabelSequence,
    /// Decoder passes spent; 0 when the decoder was skipped.
    pub decoder_calls: usize,
    /// Summed log-probability of the decoded sequence (ar_aed only).
    pub log_prob: Option<f64>,
    /// Decoder input length: CIF fires, compressed rows, or AR steps.
    pub units: usize,
}

impl Transcript {
    pub fn is_null(&self) -> bool {
        self.tokens.is_empty()
    }
}

struct UttTerms {
    ce: Option<Var>,
    ctc: Option<Var>,
    quantity: Option<Var>,
    decoder_len: Option<usize>,
}

/// `-mean_u log softmax(logits)[u, targets[u]]`.
fn cross_entropy(g: &mut Graph, logits: Var, targets: &[usize]) -> Result<Var> {
    let (n, c) = (g.shape(logits)[0], g.shape(logits)[1]);
    let lsm = g.log_softmax(logits)?;
    let mut onehot = vec![0.0; n * c];
    for (u, &y) in targets.iter().enumerate() {
        onehot[u * c + y] = 1.0;
    }
    let sel = g.constant(Tensor::matrix(n, c, onehot)?);
    let picked = g.mul(lsm, sel)?;
    let s = g.sum(picked)?;
    Ok(g.scale(s, -1.0 / n as f64)?)
}

fn one_hot_rows(tokens: &[usize], width: usize) -> Tensor {
    let mut data = vec![0.0; tokens.len() * width];
    for (i, &k) in tokens.iter().enumerate() {
        data[i * width + k] = 1.0;
    }
    Tensor::matrix(tokens.len(), width, data).expect("consistent shape")
}

fn batch_mean(g: &mut Graph, terms: &[Var]) -> Result<Var> {
    let all = if terms.len() == 1 { terms[0] } else { g.concat(terms, 0)? };
    Ok(g.mean(all)?)
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = k;
        }
    }
    best
}

/// Per-position argmax with blank (class 0) positions dropped.
fn nar_tokens(logits: &Tensor) -> LabelSequence {
    let tokens = (0..logits.rows())
        .map(|u| argmax(logits.row(u)))
        .filter(|&k| k != BLANK)
        .collect();
    LabelSequence::new(tokens).expect("blank filtered")
}

fn log_softmax_row(row: &[f64]) -> Vec<f64> {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + row.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
    row.iter().map(|x| x - lse).collect()
}

/// Frozen parameters recorded on a scratch graph for inference.
struct Session<'m> {
    model: &'m Model,
    g: Graph,
    p: Vec<Var>,
}

impl<'m> Session<'m> {
    fn new(model: &'m Model) -> Self {
        let mut g = Graph::new();
        let p = model.params.bind(&mut g, false);
        Session { model, g, p }
    }

    fn layout(&self) -> &'m Layout {
        &self.model.layout
    }

    fn heads(&self) -> usize {
        self.model.config.n_heads
    }

    fn encode(&mut self, features: &Tensor) -> Result<Var> {
        let x = self.g.constant(features.clone());
        let (lay, heads) = (self.layout(), self.heads());
        Ok(layers::encode(&mut self.g, &self.p, &lay.encoder, heads, 0.0, x)?)
    }

    fn ctc_log_probs(&mut self, h: Var) -> Result<Var> {
        let head = self.layout().ctc_head.expect("variant has a CTC head");
        let logits = layers::linear(&mut self.g, &self.p, head, h)?;
        Ok(self.g.log_softmax(logits)?)
    }

    fn nar(&mut self, e: Var, h: Var) -> Result<Tensor> {
        let dec = self.layout().decoder.as_ref().expect("variant has a decoder");
        let mem = layers::memory(&mut self.g, &self.p, dec, h)?;
        let heads = self.heads();
        let logits = layers::decode(&mut self.g, &self.p, dec, heads, 0.0, e, &mem, false)?;
        Ok(self.g.value(logits).clone())
    }

    /// Log-probabilities of the next symbol after `prefix` (sos first).
    fn ar_step(&mut self, prefix: &[usize], mem: &[(Var, Var)]) -> Result<Vec<f64>> {
        let cfg = &self.model.config;
        let dec = self.layout().decoder.as_ref().expect("variant has a decoder");
        let table = self.p[self.layout().embed.expect("token table")];
        let onehot = self.g.constant(one_hot_rows(prefix, cfg.vocab_size + 2));
        let e = self.g.matmul(onehot, table)?;
        let heads = self.heads();
        let logits = layers::decode(&mut self.g, &self.p, dec, heads, 0.0, e, mem, true)?;
        let last = self.g.value(logits).row(prefix.len() - 1);
        Ok(log_softmax_row(last))
    }
}

#[derive(Clone)]
struct Hyp {
    prefix: Vec<usize>,
    score: f64,
    done: bool,
}

impl Model {
    /// Training loss of a batch with every parameter trainable. The
    /// returned [`LossOutput::loss`] is the batch mean of
    /// `ce_weight * CE + ctc_weight * CTC + quantity_weight * |sum(alpha) - U|`
    /// over the terms the variant uses.
    pub fn forward_loss(&self, g: &mut Graph, batch: &Batch) -> Result<(Vec<Var>, LossOutput)> {
        let p = self.params.bind(g, true);
        let out = self.forward_loss_with(g, &p, batch)?;
        Ok((p, out))
    }

    /// As [`Model::forward_loss`] with caller-bound parameter nodes, in
    /// [`super::ParamStore`] order.
    pub fn forward_loss_with(&self, g: &mut Graph, p: &[Var], batch: &Batch) -> Result<LossOutput> {
        if batch.is_empty() {
            return Err(ModelError::Config("empty batch".into()));
        }
        let (mut ce, mut ctc, mut qty, mut lens) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for b in 0..batch.len() {
            let x = g.constant(batch.utterance_features(b));
            let target = batch.target(b);
            let terms = self
                .utterance_terms(g, p, x, &target)
                .map_err(|e| ModelError::Utterance {
                    utterance: batch.ids[b].clone(),
                    source: Box::new(e),
                })?;
            ce.extend(terms.ce);
            ctc.extend(terms.ctc);
            qty.extend(terms.quantity);
            lens.extend(terms.decoder_len);
        }
        let cfg = &self.config;
        let mut parts = Vec::new();
        let mut report = LossTerms {
            decoder_lengths: lens,
            ..LossTerms::default()
        };
        for (terms, weight, slot) in [
            (&ce, cfg.ce_weight, &mut report.ce),
            (&ctc, cfg.ctc_weight, &mut report.ctc),
            (&qty, cfg.quantity_weight, &mut report.quantity),
        ] {
            if terms.is_empty() {
                continue;
            }
            let m = batch_mean(g, terms)?;
            *slot = Some(g.value(m).data()[0]);
            parts.push(g.scale(m, weight)?);
        }
        let mut loss = parts[0];
        for &part in &parts[1..] {
            loss = g.add(loss, part)?;
        }
        report.total = g.value(loss).data()[0];
        Ok(LossOutput { loss, terms: report })
    }

    fn utterance_terms(&self, g: &mut Graph, p: &[Var], x: Var, target: &LabelSequence) -> Result<UttTerms> {
        let cfg = &self.config;
        target.check_vocab(cfg.vocab_size)?;
        let lay = &self.layout;
        let (heads, drop) = (cfg.n_heads, cfg.dropout);
        let h = layers::encode(g, p, &lay.encoder, heads, drop, x)?;
        let u = target.len();
        let zero = |g: &mut Graph| g.constant(Tensor::scalar(0.0));
        let mut out = UttTerms {
            ce: None,
            ctc: None,
            quantity: None,
            decoder_len: None,
        };
        match cfg.variant {
            Variant::Ctc => {
                let logits = layers::linear(g, p, lay.ctc_head.expect("ctc head"), h)?;
                let lp = g.log_softmax(logits)?;
                out.ctc = Some(ctc_loss(g, lp, target, 1.0 / u.max(1) as f64)?);
            }
            Variant::ParaformerV2 => {
                let logits = layers::linear(g, p, lay.ctc_head.expect("ctc head"), h)?;
                let lp = g.log_softmax(logits)?;
                out.ctc = Some(ctc_loss(g, lp, target, 1.0 / u.max(1) as f64)?);
                let frames = g.shape(lp)[0];
                let alignment = viterbi_align(g.value(lp), target)?;
                let spans = alignment.token_spans();
                debug_assert_eq!(spans.len(), u);
                out.decoder_len = Some(spans.len());
                if u == 0 {
                    out.ce = Some(zero(g));
                } else {
                    let probs = g.exp(lp)?;
                    let avg = g.constant(averaging_matrix(&spans, frames));
                    let comp = g.matmul(avg, probs)?;
                    let e = g.matmul(comp, p[lay.embed.expect("embed")])?;
                    let dec = lay.decoder.as_ref().expect("decoder");
                    let mem = layers::memory(g, p, dec, h)?;
                    let d_out = layers::decode(g, p, dec, heads, drop, e, &mem, false)?;
                    out.ce = Some(cross_entropy(g, d_out, target.tokens())?);
                }
            }
            Variant::Paraformer => {
                let alpha = predict_weights(g, h, &predictor_vars(p, lay.predictor.expect("predictor")))?;
                out.quantity = Some(quantity_loss_graph(g, alpha, u)?);
                if u == 0 {
                    out.ce = Some(zero(g));
                    out.decoder_len = Some(0);
                } else {
                    let scaled = scale_weights_graph(g, alpha, u)?;
                    let plan = FirePlan::new(g.value(scaled).data(), cfg.cif_threshold, FireMode::Training)?;
                    out.decoder_len = Some(plan.len());
                    let e = fire_embeddings(g, h, scaled, &plan)?.expect("scaled weights fire U times");
                    let dec = lay.decoder.as_ref().expect("decoder");
                    let mem = layers::memory(g, p, dec, h)?;
                    let d_out = layers::decode(g, p, dec, heads, drop, e, &mem, false)?;
                    let n = plan.len().min(u);
                    let d_out = if n < plan.len() { g.slice(d_out, 0, 0, n)? } else { d_out };
                    out.ce = Some(cross_entropy(g, d_out, &target.tokens()[..n])?);
                }
            }
            Variant::ArAed => {
                let mut input = vec![cfg.sos()];
                input.extend_from_slice(target.tokens());
                let mut expect = target.tokens().to_vec();
                expect.push(BLANK);
                let onehot = g.constant(one_hot_rows(&input, cfg.vocab_size + 2));
                let e = g.matmul(onehot, p[lay.embed.expect("token table")])?;
                let dec = lay.decoder.as_ref().expect("decoder");
                let mem = layers::memory(g, p, dec, h)?;
                let d_out = layers::decode(g, p, dec, heads, drop, e, &mem, true)?;
                out.ce = Some(cross_entropy(g, d_out, &expect)?);
                out.decoder_len = Some(input.len());
            }
        }
        Ok(out)
    }

    /// Encoder output `[T', d_model]` of one unpadded utterance.
    pub fn encode_utterance(&self, features: &Tensor) -> Result<Tensor> {
        let mut s = Session::new(self);
        let h = s.encode(features)?;
        Ok(s.g.value(h).clone())
    }

    /// Encoder output `[B, T'_max, d_model]`; rows past each utterance's
    /// length are zero.
    pub fn encode(&self, batch: &Batch) -> Result<Tensor> {
        let outs: Vec<Tensor> = (0..batch.len())
            .map(|b| self.encode_utterance(&batch.utterance_features(b)))
            .collect::<Result<_>>()?;
        let t_max = outs.iter().map(Tensor::rows).max().unwrap_or(0);
        let d = self.config.d_model;
        let mut data = vec![0.0; outs.len() * t_max * d];
        for (b, h) in outs.iter().enumerate() {
            data[b * t_max * d..b * t_max * d + h.len()].copy_from_slice(h.data());
        }
        Ok(Tensor::new(vec![outs.len(), t_max, d], data)?)
    }

    /// CTC log posteriors `[T', V+1]` (ctc and paraformer_v2).
    pub fn ctc_log_posteriors(&self, features: &Tensor) -> Result<Tensor> {
        if !self.config.variant.has_ctc_head() {
            return Err(ModelError::Config(format!("{} has no CTC head", self.config.variant)));
        }
        let mut s = Session::new(self);
        let h = s.encode(features)?;
        let lp = s.ctc_log_probs(h)?;
        Ok(s.g.value(lp).clone())
    }

    /// `E = Pcomp * Embed`, or `None` for an empty compression.
    pub fn embed_compressed(&self, pcomp: &CompressedPosterior) -> Result<Option<Tensor>> {
        let embed = self
            .layout
            .embed
            .filter(|_| self.config.variant == Variant::ParaformerV2)
            .ok_or_else(|| ModelError::Config(format!("{} has no posterior embedding", self.config.variant)))?;
        let Some(rows) = pcomp.to_tensor() else {
            return Ok(None);
        };
        if rows.cols() != self.config.classes() {
            return Err(ModelError::EmbedWidth {
                got: rows.cols(),
                expected: self.config.classes(),
            });
        }
        let mut s = Session::new(self);
        let x = s.g.constant(rows);
        let e = s.g.matmul(x, s.p[embed])?;
        Ok(Some(s.g.value(e).clone()))
    }

    /// One bidirectional decoder pass: `e: [U', d]`, `h: [T, d]` to
    /// `[U', V+1]` logits.
    pub fn nar_decode(&self, e: &Tensor, h: &Tensor) -> Result<Tensor> {
        if !self.config.variant.has_decoder() || self.config.variant.is_autoregressive() {
            return Err(ModelError::Config(format!("{} has no NAR decoder", self.config.variant)));
        }
        let mut s = Session::new(self);
        let (e, h) = (s.g.constant(e.clone()), s.g.constant(h.clone()));
        s.nar(e, h)
    }

    /// Autoregressive generation from encodings `h`. `beam == 1` is greedy
    /// argmax; wider beams keep the best prefixes by summed log-probability.
    pub fn ar_generate(&self, h: &Tensor, max_len: usize, beam: usize) -> Result<Transcript> {
        if !self.config.variant.is_autoregressive() {
            return Err(ModelError::Config(format!("{} is not autoregressive", self.config.variant)));
        }
        if beam == 0 || max_len == 0 {
            return Err(ModelError::Config("beam and max_len must be >= 1".into()));
        }
        let mut s = Session::new(self);
        let hv = s.g.constant(h.clone());
        let dec = s.layout().decoder.as_ref().expect("decoder");
        let mem = layers::memory(&mut s.g, &s.p, dec, hv)?;
        if beam == 1 {
            greedy(&mut s, &mem, max_len)
        } else {
            beam_search(&mut s, &mem, max_len, beam)
        }
    }

    /// Beam search code path even for `beam == 1`, for cross-checking.
    pub fn ar_beam_search(&self, h: &Tensor, max_len: usize, beam: usize) -> Result<Transcript> {
        let mut s = Session::new(self);
        let hv = s.g.constant(h.clone());
        let dec = s.layout().decoder.as_ref().expect("decoder");
        let mem = layers::memory(&mut s.g, &s.p, dec, hv)?;
        beam_search(&mut s, &mem, max_len, beam.max(1))
    }

    /// Decode one utterance end to end. `beam` applies to ar_aed only,
    /// whose generation is capped at the encoder length.
    pub fn transcribe(&self, features: &Tensor, beam: usize) -> Result<Transcript> {
        let mut s = Session::new(self);
        let h = s.encode(features)?;
        match self.config.variant {
            Variant::Ctc => {
                let lp = s.ctc_log_probs(h)?;
                let post = PosteriorMatrix::from_log(s.g.value(lp))?;
                let alignment = greedy_decode(&post);
                Ok(Transcript {
                    tokens: collapse(&alignment),
                    decoder_calls: 0,
                    log_prob: None,
                    units: 0,
                })
            }
            Variant::ParaformerV2 => {
                let lp = s.ctc_log_probs(h)?;
                let post = PosteriorMatrix::from_log(s.g.value(lp))?;
                let comp = compress(&post, &greedy_decode(&post))?;
                let Some(rows) = comp.to_tensor() else {
                    return Ok(null_transcript(0));
                };
                let x = s.g.constant(rows);
                let e = s.g.matmul(x, s.p[self.layout.embed.expect("embed")])?;
                let logits = s.nar(e, h)?;
                Ok(Transcript {
                    tokens: nar_tokens(&logits),
                    decoder_calls: 1,
                    log_prob: None,
                    units: comp.len(),
                })
            }
            Variant::Paraformer => {
                let pv = predictor_vars(&s.p, self.layout.predictor.expect("predictor"));
                let alpha = predict_weights(&mut s.g, h, &pv)?;
                let plan = FirePlan::new(s.g.value(alpha).data(), self.config.cif_threshold, FireMode::Inference)?;
                if plan.is_empty() {
                    return Ok(null_transcript(0));
                }
                let w = s.g.constant(plan.weight_matrix());
                let e = s.g.matmul(w, h)?;
                let logits = s.nar(e, h)?;
                Ok(Transcript {
                    tokens: nar_tokens(&logits),
                    decoder_calls: 1,
                    log_prob: None,
                    units: plan.len(),
                })
            }
            Variant::ArAed => {
                let max_len = s.g.shape(h)[0].max(1);
                let dec = self.layout.decoder.as_ref().expect("decoder");
                let mem = layers::memory(&mut s.g, &s.p, dec, h)?;
                if beam <= 1 {
                    greedy(&mut s, &mem, max_len)
                } else {
                    beam_search(&mut s, &mem, max_len, beam)
                }
            }
        }
    }
}

fn null_transcript(units: usize) -> Transcript {
    Transcript {
        tokens: LabelSequence::empty(),
        decoder_calls: 0,
        log_prob: None,
        units,
    }
}

fn greedy(s: &mut Session<'_>, mem: &[(Var, Var)], max_len: usize) -> Result<Transcript> {
    let mut prefix = vec![s.model.config.sos()];
    let mut calls = 0;
    let mut log_prob = 0.0;
    while prefix.len() <= max_len {
        calls += 1;
        let lp = s.ar_step(&prefix, mem)?;
        let k = argmax(&lp);
        log_prob += lp[k];
        if k == BLANK {
            break;
        }
        prefix.push(k);
    }
    let tokens = prefix[1..].to_vec();
    Ok(Transcript {
        units: tokens.len(),
        tokens: LabelSequence::new(tokens).expect("end symbol stops generation"),
        decoder_calls: calls,
        log_prob: Some(log_prob),
    })
}

fn beam_search(s: &mut Session<'_>, mem: &[(Var, Var)], max_len: usize, beam: usize) -> Result<Transcript> {
    let mut pool = vec![Hyp {
        prefix: vec![s.model.config.sos()],
        score: 0.0,
        done: false,
    }];
    let mut calls = 0;
    for _ in 0..max_len {
        if pool.iter().all(|h| h.done) {
            break;
        }
        let mut next = Vec::new();
        for hyp in &pool {
            if hyp.done {
                next.push(hyp.clone());
                continue;
            }
            calls += 1;
            let lp = s.ar_step(&hyp.prefix, mem)?;
            for (k, &l) in lp.iter().enumerate() {
                let mut prefix = hyp.prefix.clone();
                let done = k == BLANK;
                if !done {
                    prefix.push(k);
                }
                next.push(Hyp {
                    prefix,
                    score: hyp.score + l,
                    done,
                });
            }
        }
        // Stable: equal scores keep generation order (earlier hypothesis, smaller symbol).
        next.sort_by(|a, b| b.score.total_cmp(&a.score));
        next.truncate(beam);
        pool = next;
    }
    let best = pool
        .iter()
        .reduce(|a, b| if b.score > a.score { b } else { a })
        .expect("non-empty beam");
    let tokens = best.prefix[1..].to_vec();
    Ok(Transcript {
        units: tokens.len(),
        tokens: LabelSequence::new(tokens).expect("end symbol is not kept"),
        decoder_calls: calls,
        log_prob: Some(best.score),
    })
}
