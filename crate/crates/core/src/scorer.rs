//! Masked-token scoring: the contract plus a small trainable reference model.
//!
//! The reference model embeds tokens and positions, runs one single-head
//! self-attention step with the mask position as the only query, and
//! projects the attended value to the vocabulary through the tied
//! token-embedding matrix. Everything is double precision with an exact hand-derived
//! backward pass; [`grad_check`] verifies it against central finite
//! differences, which is the correctness anchor for the whole training stack.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use thiserror::Error;

use crate::vocab::MASK_ID;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScorerError {
    #[error("input token sequence is empty")]
    EmptyInput,
    #[error("sequence length {len} exceeds the model window {max_len}")]
    TooLong { len: usize, max_len: usize },
    #[error("mask position {pos} outside sequence of length {len}")]
    MaskOutOfRange { pos: usize, len: usize },
    #[error("token at mask position {0} is not the mask token")]
    NotMaskToken(usize),
    #[error("token id {id} outside vocabulary of size {vocab}")]
    TokenOutOfRange { id: u32, vocab: usize },
    #[error("parameter vector has length {got}, model needs {expected}")]
    ParamLength { got: usize, expected: usize },
    #[error("embedding dimension must be at least 2")]
    DimTooSmall,
    #[error("non-finite value produced during {0}")]
    NonFinite(&'static str),
}

/// Read-side contract: anything that can score the mask slot over a
/// vocabulary. Inference-only adapters implement just this.
pub trait MaskScorer {
    fn vocab_size(&self) -> usize;
    /// Longest token sequence the scorer accepts.
    fn max_len(&self) -> usize;
    /// Logits over the vocabulary for the token at `mask_pos`.
    fn forward(&self, tokens: &[u32], mask_pos: usize) -> Result<Vec<f64>, ScorerError>;
}

/// Shape of the reference model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToyMlmConfig {
    /// Embedding dimension (>= 2).
    pub dim: usize,
    /// Input window; sequences longer than this are rejected.
    pub max_len: usize,
    /// Half-width of the uniform initialization interval.
    pub init_scale: f64,
}

impl ToyMlmConfig {
    pub fn with_dim(dim: usize) -> Self {
        Self {
            dim,
            max_len: 128,
            init_scale: 1.0 / libm::sqrt(dim as f64),
        }
    }
}

impl Default for ToyMlmConfig {
    fn default() -> Self {
        Self::with_dim(32)
    }
}

/// Trainable reference scorer with a flat `f64` parameter vector laid out as
/// `[token embeddings | position embeddings | Wq | Wk | Wv]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyMlm {
    config: ToyMlmConfig,
    vocab_size: usize,
    params: Vec<f64>,
}

impl ToyMlm {
    pub fn param_count(config: &ToyMlmConfig, vocab_size: usize) -> usize {
        (vocab_size + config.max_len + 3 * config.dim) * config.dim
    }

    /// Fresh model with seeded zero-mean uniform initialization.
    pub fn new(config: ToyMlmConfig, vocab_size: usize, seed: u64) -> Result<Self, ScorerError> {
        if config.dim < 2 {
            return Err(ScorerError::DimTooSmall);
        }
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let scale = config.init_scale;
        let params = (0..Self::param_count(&config, vocab_size))
            .map(|_| rng.gen_range(-scale..scale))
            .collect();
        Ok(Self {
            config,
            vocab_size,
            params,
        })
    }

    /// Rebuild from checkpointed parts.
    pub fn from_parts(
        config: ToyMlmConfig,
        vocab_size: usize,
        params: Vec<f64>,
    ) -> Result<Self, ScorerError> {
        if config.dim < 2 {
            return Err(ScorerError::DimTooSmall);
        }
        let expected = Self::param_count(&config, vocab_size);
        if params.len() != expected {
            return Err(ScorerError::ParamLength {
                got: params.len(),
                expected,
            });
        }
        Ok(Self {
            config,
            vocab_size,
            params,
        })
    }

    pub fn config(&self) -> &ToyMlmConfig {
        &self.config
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn token_row(&self, id: usize) -> usize {
        id * self.config.dim
    }

    fn pos_row(&self, j: usize) -> usize {
        (self.vocab_size + j) * self.config.dim
    }

    fn wq_off(&self) -> usize {
        (self.vocab_size + self.config.max_len) * self.config.dim
    }

    fn wk_off(&self) -> usize {
        self.wq_off() + self.config.dim * self.config.dim
    }

    fn wv_off(&self) -> usize {
        self.wk_off() + self.config.dim * self.config.dim
    }

    fn check_input(&self, tokens: &[u32], mask_pos: usize) -> Result<(), ScorerError> {
        if tokens.is_empty() {
            return Err(ScorerError::EmptyInput);
        }
        if tokens.len() > self.config.max_len {
            return Err(ScorerError::TooLong {
                len: tokens.len(),
                max_len: self.config.max_len,
            });
        }
        if mask_pos >= tokens.len() {
            return Err(ScorerError::MaskOutOfRange {
                pos: mask_pos,
                len: tokens.len(),
            });
        }
        if tokens[mask_pos] != MASK_ID {
            return Err(ScorerError::NotMaskToken(mask_pos));
        }
        if let Some(&id) = tokens.iter().find(|&&id| (id as usize) >= self.vocab_size) {
            return Err(ScorerError::TokenOutOfRange {
                id,
                vocab: self.vocab_size,
            });
        }
        Ok(())
    }

    /// Run the network and keep every intermediate needed by the backward
    /// pass.
    fn forward_pass(&self, tokens: &[u32], mask_pos: usize) -> Result<ForwardPass, ScorerError> {
        self.check_input(tokens, mask_pos)?;
        let d = self.config.dim;
        let len = tokens.len();
        let p = &self.params;

        // x_j = E[t_j] + P[j]
        let mut x = vec![0.0; len * d];
        for j in 0..len {
            let e = self.token_row(tokens[j] as usize);
            let pos = self.pos_row(j);
            for a in 0..d {
                x[j * d + a] = p[e + a] + p[pos + a];
            }
        }

        let matvec = |off: usize, input: &[f64]| -> Vec<f64> {
            let mut out = vec![0.0; d];
            for a in 0..d {
                let row = off + a * d;
                let xa = input[a];
                for (b, slot) in out.iter_mut().enumerate() {
                    *slot += xa * p[row + b];
                }
            }
            out
        };

        let q = matvec(self.wq_off(), &x[mask_pos * d..(mask_pos + 1) * d]);
        let mut k = vec![0.0; len * d];
        let mut v = vec![0.0; len * d];
        for j in 0..len {
            let kj = matvec(self.wk_off(), &x[j * d..(j + 1) * d]);
            let vj = matvec(self.wv_off(), &x[j * d..(j + 1) * d]);
            k[j * d..(j + 1) * d].copy_from_slice(&kj);
            v[j * d..(j + 1) * d].copy_from_slice(&vj);
        }

        let scale = 1.0 / libm::sqrt(d as f64);
        let mut scores = vec![0.0; len];
        for j in 0..len {
            let mut s = 0.0;
            for a in 0..d {
                s += q[a] * k[j * d + a];
            }
            scores[j] = s * scale;
        }
        let max_score = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut attn = vec![0.0; len];
        let mut norm = 0.0;
        for j in 0..len {
            let e = libm::exp(scores[j] - max_score);
            attn[j] = e;
            norm += e;
        }
        for a in attn.iter_mut() {
            *a /= norm;
        }

        // u = sum_j attn_j v_j
        let mut u = vec![0.0; d];
        for j in 0..len {
            let aj = attn[j];
            for b in 0..d {
                u[b] += aj * v[j * d + b];
            }
        }

        let mut logits = vec![0.0; self.vocab_size];
        for (w, slot) in logits.iter_mut().enumerate() {
            let e = self.token_row(w);
            let mut s = 0.0;
            for b in 0..d {
                s += u[b] * p[e + b];
            }
            *slot = s;
        }
        if logits.iter().any(|l| !l.is_finite()) {
            return Err(ScorerError::NonFinite("forward"));
        }
        Ok(ForwardPass {
            x,
            q,
            k,
            v,
            attn,
            u,
            logits,
        })
    }

    /// Accumulate d(loss)/d(params) into `grad` for the given upstream
    /// `dlogits`. Exact derivative of [`MaskScorer::forward`].
    pub fn backward(
        &self,
        tokens: &[u32],
        mask_pos: usize,
        dlogits: &[f64],
        grad: &mut [f64],
    ) -> Result<(), ScorerError> {
        if grad.len() != self.params.len() {
            return Err(ScorerError::ParamLength {
                got: grad.len(),
                expected: self.params.len(),
            });
        }
        if dlogits.len() != self.vocab_size {
            return Err(ScorerError::ParamLength {
                got: dlogits.len(),
                expected: self.vocab_size,
            });
        }
        let pass = self.forward_pass(tokens, mask_pos)?;
        let d = self.config.dim;
        let len = tokens.len();
        let p = &self.params;
        let scale = 1.0 / libm::sqrt(d as f64);

        // Output projection is tied to the embedding table:
        // logits[w] = u . E[w]  =>  dE[w] += dlogits[w] * u, du = sum_w dlogits[w] E[w]
        let mut du = vec![0.0; d];
        for w in 0..self.vocab_size {
            let g = dlogits[w];
            if g == 0.0 {
                continue;
            }
            let e = self.token_row(w);
            for b in 0..d {
                grad[e + b] += g * pass.u[b];
                du[b] += g * p[e + b];
            }
        }

        // u = h with h = sum_j attn_j v_j
        let mut dx = vec![0.0; len * d];
        let dh = &du;

        // h -> attention weights and values
        let mut dattn = vec![0.0; len];
        let mut dv = vec![0.0; len * d];
        for j in 0..len {
            let aj = pass.attn[j];
            let mut s = 0.0;
            for b in 0..d {
                s += dh[b] * pass.v[j * d + b];
                dv[j * d + b] += aj * dh[b];
            }
            dattn[j] = s;
        }

        // softmax backward: ds_j = a_j (dattn_j - sum_i a_i dattn_i)
        let mixed: f64 = (0..len).map(|i| pass.attn[i] * dattn[i]).sum();
        let mut dscores = vec![0.0; len];
        for j in 0..len {
            dscores[j] = pass.attn[j] * (dattn[j] - mixed);
        }

        // scores_j = scale * q . k_j
        let mut dq = vec![0.0; d];
        let mut dk = vec![0.0; len * d];
        for j in 0..len {
            let ds = dscores[j] * scale;
            for a in 0..d {
                dq[a] += ds * pass.k[j * d + a];
                dk[j * d + a] += ds * pass.q[a];
            }
        }

        // Projections: y = x . W  =>  dW[a][b] += x[a] dy[b], dx[a] += dy[b] W[a][b]
        let mut backprop_proj = |off: usize, j: usize, dy: &[f64], dx: &mut [f64]| {
            for a in 0..d {
                let xa = pass.x[j * d + a];
                let row = off + a * d;
                let mut acc = 0.0;
                for b in 0..d {
                    grad[row + b] += xa * dy[b];
                    acc += dy[b] * p[row + b];
                }
                dx[j * d + a] += acc;
            }
        };
        backprop_proj(self.wq_off(), mask_pos, &dq, &mut dx);
        for j in 0..len {
            let dkj = dk[j * d..(j + 1) * d].to_vec();
            backprop_proj(self.wk_off(), j, &dkj, &mut dx);
            let dvj = dv[j * d..(j + 1) * d].to_vec();
            backprop_proj(self.wv_off(), j, &dvj, &mut dx);
        }

        // x_j = E[t_j] + P[j]: scatter into both embedding tables
        for j in 0..len {
            let e = self.token_row(tokens[j] as usize);
            let pos = self.pos_row(j);
            for a in 0..d {
                let g = dx[j * d + a];
                grad[e + a] += g;
                grad[pos + a] += g;
            }
        }
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(ScorerError::NonFinite("backward"));
        }
        Ok(())
    }
}

struct ForwardPass {
    x: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    attn: Vec<f64>,
    u: Vec<f64>,
    logits: Vec<f64>,
}

impl MaskScorer for ToyMlm {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn max_len(&self) -> usize {
        self.config.max_len
    }

    fn forward(&self, tokens: &[u32], mask_pos: usize) -> Result<Vec<f64>, ScorerError> {
        Ok(self.forward_pass(tokens, mask_pos)?.logits)
    }
}

/// Compare analytic gradients against central finite differences (step 1e-5)
/// on at least `coords` randomly chosen parameter coordinates; returns the
/// maximum relative error. `loss` maps logits to a value and its dlogits.
pub fn grad_check<L>(
    model: &mut ToyMlm,
    tokens: &[u32],
    mask_pos: usize,
    loss: L,
    coords: usize,
    seed: u64,
) -> Result<f64, ScorerError>
where
    L: Fn(&[f64]) -> (f64, Vec<f64>),
{
    let logits = model.forward(tokens, mask_pos)?;
    let (_, dlogits) = loss(&logits);
    let mut analytic = vec![0.0; model.params().len()];
    model.backward(tokens, mask_pos, &dlogits, &mut analytic)?;

    let mut order: Vec<usize> = (0..model.params().len()).collect();
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let picked = coords.min(order.len());

    let h = 1e-5;
    let mut max_rel = 0.0f64;
    for &idx in order.iter().take(picked) {
        let original = model.params()[idx];
        model.params_mut()[idx] = original + h;
        let plus = loss(&model.forward(tokens, mask_pos)?).0;
        model.params_mut()[idx] = original - h;
        let minus = loss(&model.forward(tokens, mask_pos)?).0;
        model.params_mut()[idx] = original;
        let fd = (plus - minus) / (2.0 * h);
        if !fd.is_finite() {
            return Err(ScorerError::NonFinite("finite-difference probe"));
        }
        let rel = libm::fabs(analytic[idx] - fd)
            / libm::fabs(analytic[idx]).max(libm::fabs(fd)).max(1e-6);
        max_rel = max_rel.max(rel);
    }
    Ok(max_rel)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_input() -> (Vec<u32>, usize) {
        // [CLS] t5 t6 [MASK] t7 [SEP] over a 12-token vocabulary
        (vec![2, 5, 6, MASK_ID, 7, 3], 3)
    }

    fn small_model(seed: u64) -> ToyMlm {
        let config = ToyMlmConfig {
            dim: 8,
            max_len: 16,
            init_scale: 0.35,
        };
        ToyMlm::new(config, 12, seed).unwrap()
    }

    #[test]
    fn forward_is_finite_and_deterministic() {
        let model = small_model(1);
        let (tokens, mask) = sample_input();
        let a = model.forward(&tokens, mask).unwrap();
        assert_eq!(a.len(), 12);
        assert!(a.iter().all(|l| l.is_finite()));
        let b = model.forward(&tokens, mask).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn input_validation_catches_bad_masks() {
        let model = small_model(2);
        assert!(matches!(
            model.forward(&[], 0),
            Err(ScorerError::EmptyInput)
        ));
        assert!(matches!(
            model.forward(&[2, 5, 3], 1),
            Err(ScorerError::NotMaskToken(1))
        ));
        assert!(matches!(
            model.forward(&[2, MASK_ID, 3], 9),
            Err(ScorerError::MaskOutOfRange { .. })
        ));
        assert!(matches!(
            model.forward(&[2, MASK_ID, 99], 1),
            Err(ScorerError::TokenOutOfRange { .. })
        ));
        let long = vec![MASK_ID; 17];
        assert!(matches!(
            model.forward(&long, 0),
            Err(ScorerError::TooLong { .. })
        ));
    }

    #[test]
    fn dim_below_two_is_rejected() {
        let config = ToyMlmConfig {
            dim: 1,
            max_len: 8,
            init_scale: 0.1,
        };
        assert!(matches!(
            ToyMlm::new(config, 4, 0),
            Err(ScorerError::DimTooSmall)
        ));
    }

    #[test]
    fn checkpoint_parts_round_trip() {
        let model = small_model(3);
        let rebuilt =
            ToyMlm::from_parts(*model.config(), model.vocab_size(), model.params().to_vec())
                .unwrap();
        assert_eq!(model, rebuilt);
        assert!(matches!(
            ToyMlm::from_parts(*model.config(), 12, vec![0.0; 3]),
            Err(ScorerError::ParamLength { .. })
        ));
    }

    /// Loss poking several logits nonlinearly, to exercise every path.
    fn quadratic_loss(logits: &[f64]) -> (f64, Vec<f64>) {
        let targets = [5usize, 7, 9];
        let mut value = 0.0;
        let mut dlogits = vec![0.0; logits.len()];
        for (rank, &t) in targets.iter().enumerate() {
            let w = 0.5 + rank as f64;
            value += w * logits[t] * logits[t];
            dlogits[t] = 2.0 * w * logits[t];
        }
        (value, dlogits)
    }

    #[test]
    fn analytic_gradients_match_finite_differences() {
        let mut model = small_model(4);
        let (tokens, mask) = sample_input();
        let err = grad_check(&mut model, &tokens, mask, quadratic_loss, 200, 11).unwrap();
        assert!(err < 1e-4, "max relative error {err}");
    }

    #[test]
    fn gradient_covers_all_parameter_blocks() {
        let model = small_model(5);
        let (tokens, mask) = sample_input();
        let logits = model.forward(&tokens, mask).unwrap();
        let (_, dlogits) = quadratic_loss(&logits);
        let mut grad = vec![0.0; model.params().len()];
        model.backward(&tokens, mask, &dlogits, &mut grad).unwrap();
        let d = 8;
        let wq = (12 + 16) * d;
        let blocks = [
            ("token embeddings", 0, 12 * d),
            ("position embeddings", 12 * d, wq),
            ("Wq", wq, wq + d * d),
            ("Wk", wq + d * d, wq + 2 * d * d),
            ("Wv", wq + 2 * d * d, wq + 3 * d * d),
        ];
        for (name, lo, hi) in blocks {
            assert!(
                grad[lo..hi].iter().any(|&g| g != 0.0),
                "no gradient reached {name}"
            );
        }
    }

    #[test]
    fn unused_embedding_rows_get_zero_gradient() {
        let model = small_model(6);
        let (tokens, mask) = sample_input();
        let logits = model.forward(&tokens, mask).unwrap();
        let (_, dlogits) = quadratic_loss(&logits);
        let mut grad = vec![0.0; model.params().len()];
        model.backward(&tokens, mask, &dlogits, &mut grad).unwrap();
        // token 11 is absent from the input and from the loss targets
        let row = 11 * 8;
        assert!(grad[row..row + 8].iter().all(|&g| g == 0.0));
        // position rows beyond the sequence length are untouched
        let pos_row = (12 + 10) * 8;
        assert!(grad[pos_row..pos_row + 8].iter().all(|&g| g == 0.0));
    }

    #[test]
    fn constant_loss_gives_zero_gradients() {
        let mut model = small_model(7);
        let (tokens, mask) = sample_input();
        let err = grad_check(
            &mut model,
            &tokens,
            mask,
            |logits| (42.0, vec![0.0; logits.len()]),
            120,
            13,
        )
        .unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn mask_query_attends_to_content() {
        // permuting a content token changes the logits (attention sees it)
        let model = small_model(8);
        let (tokens, mask) = sample_input();
        let base = model.forward(&tokens, mask).unwrap();
        let mut swapped = tokens.clone();
        swapped[1] = 9;
        let other = model.forward(&swapped, mask).unwrap();
        assert_ne!(base, other);
    }
}
