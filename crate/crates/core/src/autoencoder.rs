//! End-to-end learned coded modulation: encoder network, Walsh-domain
//! converter model, power normalization, AWGN, decoder network, and the
//! alternating training loop that fits them.

use crate::channel::{shannon_snr_db, snr_db_to_sigma};
use crate::error::{Error, Result};
use crate::evaluate::{hard_decision, LinkSystem};
use crate::matrix::Matrix;
use crate::neural::{
    adam_step, bce_grad, bce_loss, Activation, AdamHyper, AdamState, BatchNormLayer, FcLayer,
    ForwardPass, Layer, LayerSpec, Mode, Network, PowerNormLayer, PowerNormTape,
};
use crate::rng::{derive_seed, SplitRng};
use crate::wht::{WalshSpec, WalshTransform};

pub mod checkpoint;

/// Signal domain the codeword lives in between encoder and channel.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Domain {
    /// Encoder emits Walsh coefficients; the converter pair (IFWHT/FWHT)
    /// brackets the channel.
    Walsh,
    /// Plain time-domain autoencoder, no transforms.
    Time,
}

/// Architecture hyperparameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    /// Channel uses per message (block length).
    pub n: usize,
    /// Information bits per message.
    pub k: usize,
    /// Neurons per hidden layer.
    pub q: usize,
    /// Hidden layers per side.
    pub v: usize,
    pub activation: Activation,
    pub batch_norm: bool,
    /// Dropout rate; None disables the layer entirely.
    pub dropout: Option<f64>,
    /// L2 weight-penalty coefficient; None disables it.
    pub l2: Option<f64>,
    pub domain: Domain,
}

impl ModelConfig {
    /// The architecture selected by the hyperparameter search: batch norm,
    /// LeakyReLU, L2 on, dropout off.
    pub fn selected(n: usize, k: usize, q: usize, v: usize, domain: Domain) -> Self {
        Self {
            n,
            k,
            q,
            v,
            activation: Activation::LeakyRelu(0.01),
            batch_norm: true,
            dropout: None,
            l2: Some(1e-5),
            domain,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.k == 0 || self.q == 0 || self.v == 0 {
            return Err(Error::InvalidArgument(
                "model dimensions must be positive".into(),
            ));
        }
        if self.domain == Domain::Walsh && (self.n < 2 || !self.n.is_power_of_two()) {
            return Err(Error::InvalidOrder(self.n));
        }
        if let Some(rate) = self.dropout {
            if !(0.0..1.0).contains(&rate) {
                return Err(Error::InvalidArgument(format!(
                    "dropout rate {rate} outside [0, 1)"
                )));
            }
        }
        Ok(())
    }

    pub fn rate(&self) -> f64 {
        self.k as f64 / self.n as f64
    }

    pub fn l2_lambda(&self) -> f64 {
        self.l2.unwrap_or(0.0)
    }
}

/// Layer plan for the transmitter: V intermediate blocks, linear projection
/// to n, converter (Walsh only), power normalization.
pub fn encoder_plan(cfg: &ModelConfig) -> Vec<LayerSpec> {
    let mut plan = Vec::new();
    let mut in_dim = cfg.k;
    for _ in 0..cfg.v {
        push_block(&mut plan, cfg, in_dim);
        in_dim = cfg.q;
    }
    plan.push(LayerSpec::FullyConnected {
        in_dim,
        out_dim: cfg.n,
    });
    if cfg.domain == Domain::Walsh {
        plan.push(LayerSpec::Transform { dim: cfg.n });
    }
    plan.push(LayerSpec::PowerNorm { dim: cfg.n });
    plan
}

/// Layer plan for the receiver: converter (Walsh only), V intermediate
/// blocks, head to k probabilities.
pub fn decoder_plan(cfg: &ModelConfig) -> Vec<LayerSpec> {
    let mut plan = Vec::new();
    if cfg.domain == Domain::Walsh {
        plan.push(LayerSpec::Transform { dim: cfg.n });
    }
    let mut in_dim = cfg.n;
    for _ in 0..cfg.v {
        push_block(&mut plan, cfg, in_dim);
        in_dim = cfg.q;
    }
    plan.push(LayerSpec::FullyConnected {
        in_dim,
        out_dim: cfg.k,
    });
    plan.push(LayerSpec::SigmoidHead { dim: cfg.k });
    plan
}

fn push_block(plan: &mut Vec<LayerSpec>, cfg: &ModelConfig, in_dim: usize) {
    plan.push(LayerSpec::FullyConnected {
        in_dim,
        out_dim: cfg.q,
    });
    if cfg.batch_norm {
        plan.push(LayerSpec::BatchNorm { dim: cfg.q });
    }
    plan.push(LayerSpec::Activation {
        kind: cfg.activation,
        dim: cfg.q,
    });
    if let Some(rate) = cfg.dropout {
        plan.push(LayerSpec::Dropout { rate, dim: cfg.q });
    }
}

/// Which half of the autoencoder a training step updates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TrainPhase {
    Encoder,
    Decoder,
}

/// The assembled system: two networks around the converter/channel stage.
#[derive(Clone, Debug)]
pub struct Model {
    pub cfg: ModelConfig,
    pub encoder: Network,
    pub power_norm: PowerNormLayer,
    pub decoder: Network,
    transform: Option<WalshTransform>,
}

/// Everything one end-to-end pass records; inputs to [`Model::backward`].
pub struct PipelinePass {
    enc: ForwardPass,
    power_tape: PowerNormTape,
    /// Codeword after power normalization (the channel input).
    pub transmitted: Matrix,
    /// Channel output before the receiver-side transform.
    pub received: Matrix,
    dec: ForwardPass,
}

impl PipelinePass {
    pub fn probs(&self) -> &Matrix {
        &self.dec.output
    }

    /// Mean-square amplitude of the transmitted codeword batch.
    pub fn transmit_power(&self) -> f64 {
        self.transmitted.mean_square()
    }
}

/// Parameter gradients for the two halves.
pub struct PipelineGrads {
    pub encoder: Option<Vec<f64>>,
    pub decoder: Vec<f64>,
}

impl Model {
    /// Builds the model with seed-deterministic initialization. Walsh and
    /// time domains share the same parameter draw order, so equal seeds give
    /// identical tensors.
    pub fn build(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = SplitRng::new(seed);
        let encoder = materialize(&encoder_plan(cfg), &mut rng);
        let decoder = materialize(&decoder_plan(cfg), &mut rng);
        let transform = match cfg.domain {
            Domain::Walsh => Some(WalshTransform::new(WalshSpec::orthonormal_sequency(cfg.n)?)),
            Domain::Time => None,
        };
        Ok(Self {
            cfg: cfg.clone(),
            encoder,
            power_norm: PowerNormLayer::new(),
            decoder,
            transform,
        })
    }

    /// Trainable parameters over both halves.
    pub fn param_count(&self) -> usize {
        self.encoder.param_count() + self.decoder.param_count()
    }

    /// Runs bits -> encoder -> (IFWHT) -> power norm -> +sigma*noise ->
    /// (FWHT) -> decoder with an externally supplied unit-variance noise
    /// realization.
    ///
    /// `phase` controls which half updates its running statistics; `None`
    /// freezes both (validation, analysis passes).
    pub fn end_to_end_fixed_noise(
        &mut self,
        bits: &Matrix,
        noise_unit: &Matrix,
        sigma: f64,
        mode: Mode,
        phase: Option<TrainPhase>,
        rng: &mut SplitRng,
    ) -> Result<PipelinePass> {
        bits.check_cols(self.cfg.k, "autoencoder input bits")?;
        if sigma < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "negative noise deviation {sigma}"
            )));
        }
        let enc_stats = mode == Mode::Training && phase == Some(TrainPhase::Encoder);
        let dec_stats = mode == Mode::Training && phase == Some(TrainPhase::Decoder);

        let enc = self.encoder.forward(bits, mode, enc_stats, rng)?;
        let pre_norm = match &self.transform {
            Some(t) => t.inverse_batch(&enc.output)?,
            None => enc.output.clone(),
        };
        let (transmitted, power_tape) = self.power_norm.forward(&pre_norm, mode, enc_stats)?;

        if noise_unit.rows() != transmitted.rows() || noise_unit.cols() != transmitted.cols() {
            return Err(Error::DimensionMismatch {
                expected: transmitted.cols(),
                got: noise_unit.cols(),
                context: "channel noise realization",
            });
        }
        let mut received = transmitted.clone();
        for (y, z) in received
            .as_mut_slice()
            .iter_mut()
            .zip(noise_unit.as_slice())
        {
            *y += sigma * z;
        }

        let dec_in = match &self.transform {
            Some(t) => t.forward_batch(&received)?,
            None => received.clone(),
        };
        let dec = self.decoder.forward(&dec_in, mode, dec_stats, rng)?;
        Ok(PipelinePass {
            enc,
            power_tape,
            transmitted,
            received,
            dec,
        })
    }

    /// [`Model::end_to_end_fixed_noise`] with noise drawn from the stream.
    pub fn end_to_end(
        &mut self,
        bits: &Matrix,
        sigma: f64,
        mode: Mode,
        phase: Option<TrainPhase>,
        rng: &mut SplitRng,
    ) -> Result<PipelinePass> {
        let mut noise = Matrix::zeros(bits.rows(), self.cfg.n);
        rng.fill_gaussian(noise.as_mut_slice(), 1.0);
        self.end_to_end_fixed_noise(bits, &noise, sigma, mode, phase, rng)
    }

    /// Training objective for this pass: BCE plus the L2 penalty over both
    /// networks' fully-connected weights.
    pub fn loss(&self, pass: &PipelinePass, bits: &Matrix) -> Result<f64> {
        let l2 = self.cfg.l2_lambda();
        Ok(bce_loss(pass.probs(), bits)?
            + self.encoder.l2_penalty(l2)
            + self.decoder.l2_penalty(l2))
    }

    /// Exact gradients of [`Model::loss`]. Decoder gradients always come out;
    /// encoder gradients flow through the frozen decoder when requested.
    pub fn backward(
        &self,
        pass: &PipelinePass,
        bits: &Matrix,
        want_encoder: bool,
    ) -> Result<PipelineGrads> {
        let l2 = self.cfg.l2_lambda();
        let g_probs = bce_grad(pass.probs(), bits)?;
        let (g_dec_in, dec_grads) = self.decoder.backward(&pass.dec, &g_probs, l2);
        if !want_encoder {
            return Ok(PipelineGrads {
                encoder: None,
                decoder: dec_grads,
            });
        }
        // Through the receiver transform, the channel (identity in x), the
        // power normalization and the transmitter transform.
        let g_received = match &self.transform {
            Some(t) => t.forward_vjp_batch(&g_dec_in)?,
            None => g_dec_in,
        };
        let g_pre_norm = self.power_norm.backward(&pass.power_tape, &g_received);
        let g_enc_out = match &self.transform {
            Some(t) => t.inverse_vjp_batch(&g_pre_norm)?,
            None => g_pre_norm,
        };
        let (_, enc_grads) = self.encoder.backward(&pass.enc, &g_enc_out, l2);
        Ok(PipelineGrads {
            encoder: Some(enc_grads),
            decoder: dec_grads,
        })
    }

}

fn materialize(plan: &[LayerSpec], rng: &mut SplitRng) -> Network {
    // Initialization gain follows the layer that consumes the output.
    let mut layers = Vec::new();
    for (idx, spec) in plan.iter().enumerate() {
        match *spec {
            LayerSpec::FullyConnected { in_dim, out_dim } => {
                let gain = plan[idx + 1..]
                    .iter()
                    .find_map(|s| match s {
                        LayerSpec::Activation { kind, .. } => Some(kind.gain()),
                        LayerSpec::FullyConnected { .. }
                        | LayerSpec::PowerNorm { .. }
                        | LayerSpec::SigmoidHead { .. }
                        | LayerSpec::Transform { .. } => Some(1.0),
                        _ => None,
                    })
                    .unwrap_or(1.0);
                layers.push(Layer::FullyConnected(FcLayer::init(
                    in_dim, out_dim, gain, rng,
                )));
            }
            LayerSpec::BatchNorm { dim } => layers.push(Layer::BatchNorm(BatchNormLayer::new(dim))),
            LayerSpec::Activation { kind, .. } => layers.push(Layer::Activation(kind)),
            LayerSpec::Dropout { rate, .. } => layers.push(Layer::Dropout(rate)),
            // The power norm and the transforms live outside the networks.
            LayerSpec::PowerNorm { .. } | LayerSpec::Transform { .. } => {}
            LayerSpec::SigmoidHead { .. } => layers.push(Layer::SigmoidHead),
        }
    }
    Network::new(layers)
}

/// Training-loop hyperparameters.
#[derive(Clone, Debug)]
pub struct TrainConfig {
    /// Training SNR offset S above the Shannon SNR, in dB.
    pub snr_offset_db: f64,
    /// Decoder-phase SNR half-range (uniform draw in dB around the center).
    pub decoder_snr_half_range_db: f64,
    /// Batch size N_B.
    pub batch_size: usize,
    /// Encoder steps per epoch.
    pub enc_steps: usize,
    /// Decoder steps per epoch.
    pub dec_steps: usize,
    /// Epoch budget E.
    pub max_epochs: usize,
    pub initial_lr: f64,
    /// Training stops once the learning rate falls below this.
    pub lr_floor: f64,
    /// Epochs without validation improvement before the rate halves.
    pub patience: usize,
    pub val_size: usize,
    pub seed: u64,
}

impl TrainConfig {
    /// Full-scale schedule; desk experiments shrink most of these.
    pub fn paper_default(seed: u64) -> Self {
        Self {
            snr_offset_db: 3.0,
            decoder_snr_half_range_db: 2.0,
            batch_size: 50_000,
            enc_steps: 100,
            dec_steps: 300,
            max_epochs: 500,
            initial_lr: 1e-3,
            lr_floor: 1e-10,
            patience: 20,
            val_size: 50_000,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0
            || self.enc_steps == 0
            || self.dec_steps == 0
            || self.max_epochs == 0
            || self.val_size == 0
        {
            return Err(Error::InvalidArgument(
                "training counts must be positive".into(),
            ));
        }
        if self.decoder_snr_half_range_db < 0.0 {
            return Err(Error::InvalidArgument(
                "decoder SNR half-range must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// gamma_train = gamma_Shannon(R) + S, in dB.
pub fn train_snr_db(cfg: &ModelConfig, tcfg: &TrainConfig) -> f64 {
    shannon_snr_db(cfg.rate()) + tcfg.snr_offset_db
}

/// One decoder-phase SNR draw: uniform in dB over the half-range around the
/// center. Returns (snr_db, sigma).
pub fn decoder_snr_draw(center_db: f64, half_range_db: f64, rng: &mut SplitRng) -> (f64, f64) {
    let db = rng.uniform_in(center_db - half_range_db, center_db + half_range_db);
    (db, snr_db_to_sigma(db))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub enc_loss: f64,
    pub dec_loss: f64,
    pub val_loss: f64,
    pub val_acc: f64,
    pub lr: f64,
}

#[derive(Clone, Debug, Default)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,enc_loss,dec_loss,val_loss,val_acc,lr\n");
        for e in &self.epochs {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                e.epoch, e.enc_loss, e.dec_loss, e.val_loss, e.val_acc, e.lr
            ));
        }
        out
    }
}

/// Validation-loss patience tracker: halves the rate after `patience` epochs
/// without strict improvement, resets the counter on halving.
struct LrSchedule {
    lr: f64,
    floor: f64,
    patience: usize,
    best: f64,
    stale: usize,
}

impl LrSchedule {
    fn new(initial: f64, floor: f64, patience: usize) -> Self {
        Self {
            lr: initial,
            floor,
            patience,
            best: f64::INFINITY,
            stale: 0,
        }
    }

    /// Feeds one epoch's validation loss; returns false when training should
    /// stop (rate fell below the floor).
    fn observe(&mut self, val_loss: f64) -> bool {
        if val_loss < self.best {
            self.best = val_loss;
            self.stale = 0;
            return true;
        }
        self.stale += 1;
        if self.stale >= self.patience {
            self.lr *= 0.5;
            self.stale = 0;
        }
        self.lr >= self.floor
    }
}

fn abort_on_non_finite(e: Error, phase: &str, epoch: usize) -> Error {
    match e {
        Error::NonFinite(what) => Error::TrainAborted(format!(
            "non-finite {what} during the {phase} phase of epoch {epoch}"
        )),
        other => other,
    }
}

/// Alternating training: per epoch, `enc_steps` encoder-only updates at the
/// fixed training SNR, then `dec_steps` decoder-only updates with the SNR
/// drawn per batch, then validation on a fixed set.
pub fn train(cfg: &ModelConfig, tcfg: &TrainConfig) -> Result<(Model, TrainLog)> {
    cfg.validate()?;
    tcfg.validate()?;
    let mut model = Model::build(cfg, derive_seed(tcfg.seed, 1))?;
    let mut enc_rng = SplitRng::new(derive_seed(tcfg.seed, 2));
    let mut dec_rng = SplitRng::new(derive_seed(tcfg.seed, 3));
    let mut val_rng = SplitRng::new(derive_seed(tcfg.seed, 4));

    let center_db = train_snr_db(cfg, tcfg);
    let sigma_train = snr_db_to_sigma(center_db);

    // Validation set fixed once per run: bits and the noise realization.
    let mut val_bits = Matrix::zeros(tcfg.val_size, cfg.k);
    val_rng.fill_bits(val_bits.as_mut_slice());
    let mut val_noise = Matrix::zeros(tcfg.val_size, cfg.n);
    val_rng.fill_gaussian(val_noise.as_mut_slice(), 1.0);

    let mut enc_opt = AdamState::new(model.encoder.param_count());
    let mut dec_opt = AdamState::new(model.decoder.param_count());
    let mut schedule = LrSchedule::new(tcfg.initial_lr, tcfg.lr_floor, tcfg.patience);
    let mut log = TrainLog::default();

    for epoch in 1..=tcfg.max_epochs {
        let hyper = AdamHyper::with_lr(schedule.lr);

        let mut enc_loss_sum = 0.0;
        for _ in 0..tcfg.enc_steps {
            let mut bits = Matrix::zeros(tcfg.batch_size, cfg.k);
            enc_rng.fill_bits(bits.as_mut_slice());
            let pass = model
                .end_to_end(
                    &bits,
                    sigma_train,
                    Mode::Training,
                    Some(TrainPhase::Encoder),
                    &mut enc_rng,
                )
                .map_err(|e| abort_on_non_finite(e, "encoder", epoch))?;
            let loss = bce_loss(pass.probs(), &bits)?;
            if !loss.is_finite() {
                return Err(Error::TrainAborted(format!(
                    "non-finite encoder loss at epoch {epoch}"
                )));
            }
            enc_loss_sum += loss;
            let grads = model.backward(&pass, &bits, true)?;
            adam_step(
                &mut model.encoder,
                grads.encoder.as_ref().expect("requested encoder grads"),
                &mut enc_opt,
                &hyper,
            )?;
        }

        let mut dec_loss_sum = 0.0;
        for _ in 0..tcfg.dec_steps {
            let mut bits = Matrix::zeros(tcfg.batch_size, cfg.k);
            dec_rng.fill_bits(bits.as_mut_slice());
            let (_, sigma_dec) =
                decoder_snr_draw(center_db, tcfg.decoder_snr_half_range_db, &mut dec_rng);
            let pass = model
                .end_to_end(
                    &bits,
                    sigma_dec,
                    Mode::Training,
                    Some(TrainPhase::Decoder),
                    &mut dec_rng,
                )
                .map_err(|e| abort_on_non_finite(e, "decoder", epoch))?;
            let loss = bce_loss(pass.probs(), &bits)?;
            if !loss.is_finite() {
                return Err(Error::TrainAborted(format!(
                    "non-finite decoder loss at epoch {epoch}"
                )));
            }
            dec_loss_sum += loss;
            let grads = model.backward(&pass, &bits, false)?;
            adam_step(&mut model.decoder, &grads.decoder, &mut dec_opt, &hyper)?;
        }

        let (val_loss, val_acc) =
            validate_fixed(&mut model, &val_bits, &val_noise, sigma_train)
                .map_err(|e| abort_on_non_finite(e, "validation", epoch))?;
        let lr_before_observe = schedule.lr;
        let keep_going = schedule.observe(val_loss);
        log.epochs.push(EpochRecord {
            epoch,
            enc_loss: enc_loss_sum / tcfg.enc_steps as f64,
            dec_loss: dec_loss_sum / tcfg.dec_steps as f64,
            val_loss,
            val_acc,
            lr: lr_before_observe,
        });
        if !keep_going {
            break;
        }
    }
    Ok((model, log))
}

/// Loss and bit accuracy on a fixed validation set (inference mode).
pub fn validate_fixed(
    model: &mut Model,
    bits: &Matrix,
    noise_unit: &Matrix,
    sigma: f64,
) -> Result<(f64, f64)> {
    let mut unused = SplitRng::new(0);
    let pass = model.end_to_end_fixed_noise(
        bits,
        noise_unit,
        sigma,
        Mode::Inference,
        None,
        &mut unused,
    )?;
    let loss = bce_loss(pass.probs(), bits)?;
    let decided = hard_decision(pass.probs());
    let total = bits.rows() * bits.cols();
    let correct = decided
        .as_slice()
        .iter()
        .zip(bits.as_slice())
        .filter(|(d, b)| (**d > 0.5) == (**b > 0.5))
        .count();
    Ok((loss, correct as f64 / total as f64))
}

/// Loss and accuracy on a fresh random batch at the training SNR.
pub fn validate(
    model: &mut Model,
    tcfg: &TrainConfig,
    seed: u64,
) -> Result<(f64, f64)> {
    let mut rng = SplitRng::new(seed);
    let mut bits = Matrix::zeros(tcfg.val_size, model.cfg.k);
    rng.fill_bits(bits.as_mut_slice());
    let mut noise = Matrix::zeros(tcfg.val_size, model.cfg.n);
    rng.fill_gaussian(noise.as_mut_slice(), 1.0);
    let sigma = snr_db_to_sigma(train_snr_db(&model.cfg, tcfg));
    validate_fixed(model, &bits, &noise, sigma)
}

/// Inference-mode transmission for the Monte-Carlo estimator.
impl LinkSystem for Model {
    fn info_bits(&self) -> usize {
        self.cfg.k
    }

    fn transmit(&mut self, bits: &Matrix, sigma: f64, rng: &mut SplitRng) -> Result<Matrix> {
        let pass = self.end_to_end(bits, sigma, Mode::Inference, None, rng)?;
        Ok(hard_decision(pass.probs()))
    }

    fn preferred_batch(&self) -> usize {
        1024
    }
}
