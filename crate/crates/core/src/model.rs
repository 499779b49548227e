//! Shared extractor with a clean head and a structurally identical noisy head.

use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::nn::{
    checkpoint, check_simplex_rows, cross_entropy, softmax_cross_entropy_grad, Activation,
    Activations, LayerSpec, Matrix, Mlp, NnError, OutputGrad, ParamTensor, Sgd,
};

/// Default extractor widths; the last one is the feature dimension.
pub const DEFAULT_HIDDEN: [usize; 2] = [128, 64];
pub const DEFAULT_BATCH_SIZE: usize = 128;
pub const DEFAULT_LAMBDA: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct TwoHeadModel {
    pub extractor: Mlp,
    pub clean_head: Mlp,
    pub noisy_head: Mlp,
}

/// Outputs of one shared extractor pass feeding both heads.
#[derive(Debug, Clone)]
pub struct TwoHeadForward {
    pub extractor: Activations,
    pub clean: Activations,
    pub noisy: Activations,
}

impl TwoHeadForward {
    pub fn features(&self) -> &Matrix {
        self.extractor.output().expect("extractor has layers")
    }

    pub fn clean_probs(&self) -> &Matrix {
        self.clean.output().expect("head has layers")
    }

    pub fn noisy_probs(&self) -> &Matrix {
        self.noisy.output().expect("head has layers")
    }

    pub fn clean_logits(&self) -> &Matrix {
        self.clean.logits().expect("head has layers")
    }
}

impl TwoHeadModel {
    /// Extractor `d -> hidden[0] -> ... -> hidden[last]` with ReLU after every
    /// layer; each head is a single softmax layer onto `classes`.
    pub fn new<R: Rng + ?Sized>(
        input_dim: usize,
        classes: usize,
        hidden: &[usize],
        rng: &mut R,
    ) -> Result<Self, NnError> {
        if hidden.is_empty() {
            return Err(NnError::Shape("extractor needs at least one hidden layer".into()));
        }
        let mut specs = Vec::with_capacity(hidden.len());
        let mut prev = input_dim;
        for &h in hidden {
            specs.push(LayerSpec::new(prev, h, Activation::Relu));
            prev = h;
        }
        let head = [LayerSpec::new(prev, classes, Activation::Softmax)];
        Ok(Self {
            extractor: Mlp::new(&specs, rng)?,
            clean_head: Mlp::new(&head, rng)?,
            noisy_head: Mlp::new(&head, rng)?,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.extractor.in_dim()
    }

    pub fn feature_dim(&self) -> usize {
        self.extractor.out_dim()
    }

    pub fn classes(&self) -> usize {
        self.clean_head.out_dim()
    }

    pub fn forward(&self, x: &Matrix) -> Result<TwoHeadForward, NnError> {
        let extractor = self.extractor.forward(x)?;
        let z = extractor.output().expect("extractor has layers");
        let clean = self.clean_head.forward(z)?;
        let noisy = self.noisy_head.forward(z)?;
        Ok(TwoHeadForward {
            extractor,
            clean,
            noisy,
        })
    }

    pub fn clean_probs(&self, x: &Matrix) -> Result<Matrix, NnError> {
        let z = self.extractor.predict(x)?;
        self.clean_head.predict(&z)
    }

    /// `mean CE(f, corrected) + lambda * mean CE(f_n, noisy)`.
    pub fn joint_loss(
        &self,
        x: &Matrix,
        corrected: &Matrix,
        noisy: &Matrix,
        lambda: f64,
    ) -> Result<f64, NnError> {
        check_lambda(lambda)?;
        let out = self.forward(x)?;
        Ok(cross_entropy(out.clean_probs(), corrected)?
            + lambda * cross_entropy(out.noisy_probs(), noisy)?)
    }

    /// Zeroes all gradients, then backpropagates the joint loss. Returns the loss.
    pub fn joint_loss_and_backward(
        &mut self,
        x: &Matrix,
        corrected: &Matrix,
        noisy: &Matrix,
        lambda: f64,
    ) -> Result<f64, NnError> {
        check_lambda(lambda)?;
        self.weighted_backward(x, corrected, noisy, 1.0, lambda)
    }

    fn weighted_backward(
        &mut self,
        x: &Matrix,
        corrected: &Matrix,
        noisy: &Matrix,
        clean_weight: f64,
        noisy_weight: f64,
    ) -> Result<f64, NnError> {
        let out = self.forward(x)?;
        let clean_loss = cross_entropy(out.clean_probs(), corrected)?;
        let noisy_loss = cross_entropy(out.noisy_probs(), noisy)?;
        let g_clean = softmax_cross_entropy_grad(out.clean_probs(), corrected, clean_weight);
        let g_noisy = softmax_cross_entropy_grad(out.noisy_probs(), noisy, noisy_weight);

        self.zero_grad();
        let mut dz = self
            .clean_head
            .backward(&out.clean, OutputGrad::Logits(&g_clean))?;
        let dz_noisy = self
            .noisy_head
            .backward(&out.noisy, OutputGrad::Logits(&g_noisy))?;
        for (a, b) in dz.as_mut_slice().iter_mut().zip(dz_noisy.as_slice()) {
            *a += b;
        }
        self.extractor
            .backward(&out.extractor, OutputGrad::Output(&dz))?;
        Ok(clean_weight * clean_loss + noisy_weight * noisy_loss)
    }

    pub fn zero_grad(&mut self) {
        self.extractor.zero_grad();
        self.clean_head.zero_grad();
        self.noisy_head.zero_grad();
    }

    /// Extractor, clean head, noisy head, in that order.
    pub fn params(&self) -> Vec<&ParamTensor> {
        let mut p = self.extractor.params();
        p.extend(self.clean_head.params());
        p.extend(self.noisy_head.params());
        p
    }

    pub fn params_mut(&mut self) -> Vec<&mut ParamTensor> {
        let mut p = self.extractor.params_mut();
        p.extend(self.clean_head.params_mut());
        p.extend(self.noisy_head.params_mut());
        p
    }

    /// One pass of shuffled mini-batch SGD on the joint loss. Returns the
    /// sample-weighted mean batch loss.
    #[allow(clippy::too_many_arguments)]
    pub fn train_epoch(
        &mut self,
        x: &Matrix,
        corrected: &Matrix,
        noisy: &Matrix,
        lambda: f64,
        opt: &mut Sgd,
        epoch: usize,
        batch_size: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<f64, NnError> {
        check_lambda(lambda)?;
        let n = x.rows();
        if corrected.rows() != n || noisy.rows() != n {
            return Err(NnError::Shape(format!(
                "{n} samples but {} corrected and {} noisy label rows",
                corrected.rows(),
                noisy.rows()
            )));
        }
        if batch_size == 0 {
            return Err(NnError::Validation("batch_size must be positive".into()));
        }
        check_simplex_rows(corrected, "corrected label")?;
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);
        let mut total = 0.0;
        for chunk in order.chunks(batch_size) {
            let bx = x.select_rows(chunk);
            let bc = corrected.select_rows(chunk);
            let bn = noisy.select_rows(chunk);
            let loss = self.weighted_backward(&bx, &bc, &bn, 1.0, lambda)?;
            if !loss.is_finite() {
                return Err(NnError::NonFinite(format!("loss at epoch {epoch}")));
            }
            total += loss * chunk.len() as f64;
            opt.step(&mut self.params_mut(), epoch)?;
        }
        Ok(total / n as f64)
    }

    /// Runs `epochs` epochs starting at epoch 0 with a fresh shuffle stream.
    #[allow(clippy::too_many_arguments)]
    pub fn train_epochs(
        &mut self,
        x: &Matrix,
        corrected: &Matrix,
        noisy: &Matrix,
        lambda: f64,
        opt: &mut Sgd,
        epochs: usize,
        batch_size: usize,
        seed: u64,
    ) -> Result<Vec<f64>, NnError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..epochs)
            .map(|e| self.train_epoch(x, corrected, noisy, lambda, opt, e, batch_size, &mut rng))
            .collect()
    }

    /// Evaluation-mode pass over the noisy pool and the whole meta set.
    pub fn snapshot(
        &self,
        train_x: &Matrix,
        meta_x: &Matrix,
        iteration: usize,
    ) -> Result<FeatureSnapshot, NnError> {
        let tr = self.forward(train_x)?;
        let me = self.forward(meta_x)?;
        Ok(FeatureSnapshot {
            iteration,
            z_train: tr.features().clone(),
            z_meta: me.features().clone(),
            noisy_posterior_meta: me.noisy_probs().clone(),
            clean_logits_train: tr.clean_logits().clone(),
            clean_logits_meta: me.clean_logits().clone(),
            clean_probs_train: tr.clean_probs().clone(),
            clean_probs_meta: me.clean_probs().clone(),
        })
    }

    pub fn save<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        checkpoint::write_checkpoint(w, &self.params())
    }

    /// Loads values into a model of identical architecture.
    pub fn load_into<R: Read>(&mut self, r: &mut R) -> Result<(), NnError> {
        let loaded = checkpoint::read_checkpoint(r)?;
        checkpoint::restore_into(&mut self.params_mut(), &loaded)
    }
}

fn check_lambda(lambda: f64) -> Result<(), NnError> {
    if lambda >= 0.0 && lambda.is_finite() {
        Ok(())
    } else {
        Err(NnError::Validation(format!("lambda must be >= 0, got {lambda}")))
    }
}

/// Frozen per-round view of the classifier used by the corrector.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSnapshot {
    pub iteration: usize,
    /// Extractor output (post-ReLU) on the noisy pool.
    pub z_train: Matrix,
    /// Extractor output on the meta set, indexed like `MetaSet::clean_labels`.
    pub z_meta: Matrix,
    /// Noisy-head softmax on the meta set (simulated noisy posterior).
    pub noisy_posterior_meta: Matrix,
    pub clean_logits_train: Matrix,
    pub clean_logits_meta: Matrix,
    pub clean_probs_train: Matrix,
    pub clean_probs_meta: Matrix,
}
