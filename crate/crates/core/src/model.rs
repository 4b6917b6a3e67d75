//! The five networks: encoder, two mirrored decoders, label predictor and
//! domain discriminator, with explicit forward caches and backward passes.
//!
//! Encoder: `conv1d → batchnorm → relu → maxpool → flatten → dropout → dense`
//! (linear latent). Decoder: `dense → relu → reshape → upsample → deconv1d`,
//! zero-padded to the window length when the mirrored length falls short.
//! Predictor: `dense → softmax`. Discriminator: `dense → relu → dense → sigmoid`
//! with outputs clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]`.

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::nn::batchnorm::{self, BatchNormCache, BatchStats, Mode, RunningStats};
use crate::nn::conv::{conv1d_backward_raw, conv1d_raw, deconv1d_backward_raw, deconv1d_raw};
use crate::nn::dense::{dense_backward_raw, dense_raw};
use crate::nn::dropout;
use crate::nn::pool::{maxpool_backward_raw, maxpool_raw, upsample_backward_raw, upsample_raw};
use crate::nn::{activation, Param};
use crate::rng::{Rng, Stream};
use crate::tensor::Tensor;

pub const PROB_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub channels: usize,
    pub window_len: usize,
    pub conv_filters: usize,
    pub kernel_len: usize,
    pub pool_w: usize,
    pub latent_dim: usize,
    pub n_classes: usize,
    pub disc_hidden: usize,
    pub keep_prob: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            channels: 4,
            window_len: 128,
            conv_filters: 8,
            kernel_len: 9,
            pool_w: 4,
            latent_dim: 32,
            n_classes: 4,
            disc_hidden: 64,
            keep_prob: 0.5,
            seed: 0,
        }
    }
}

impl ModelConfig {
    /// Tiny configuration used by gradient checks.
    pub fn tiny() -> Self {
        ModelConfig {
            channels: 2,
            window_len: 16,
            conv_filters: 2,
            kernel_len: 3,
            pool_w: 2,
            latent_dim: 4,
            n_classes: 2,
            disc_hidden: 6,
            keep_prob: 1.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("channels", self.channels),
            ("window_len", self.window_len),
            ("conv_filters", self.conv_filters),
            ("kernel_len", self.kernel_len),
            ("pool_w", self.pool_w),
            ("latent_dim", self.latent_dim),
            ("disc_hidden", self.disc_hidden),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if self.n_classes < 2 {
            return Err(Error::Config("n_classes must be at least 2".into()));
        }
        if self.kernel_len > self.window_len {
            return Err(Error::Config(format!(
                "kernel_len {} exceeds window_len {}",
                self.kernel_len, self.window_len
            )));
        }
        if self.conv_len() < self.pool_w {
            return Err(Error::Config(format!(
                "pool_w {} exceeds convolution output length {}",
                self.pool_w,
                self.conv_len()
            )));
        }
        if !(self.keep_prob > 0.0 && self.keep_prob <= 1.0) {
            return Err(Error::Config(format!(
                "keep_prob must be in (0, 1], got {}",
                self.keep_prob
            )));
        }
        Ok(())
    }

    pub fn conv_len(&self) -> usize {
        self.window_len + 1 - self.kernel_len
    }

    pub fn pooled_len(&self) -> usize {
        self.conv_len() / self.pool_w
    }

    pub fn flat_len(&self) -> usize {
        self.conv_filters * self.pooled_len()
    }

    /// Length produced by the mirrored decoder before padding to `window_len`.
    pub fn decoded_len(&self) -> usize {
        self.pooled_len() * self.pool_w + self.kernel_len - 1
    }

    /// Trailing time steps the decoder fills with zeros.
    pub fn decoder_padding(&self) -> usize {
        self.window_len - self.decoded_len()
    }
}

/// The five parameter groups of the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Part {
    Encoder,
    DecoderL,
    DecoderU,
    Predictor,
    Discriminator,
}

impl Part {
    pub const ALL: [Part; 5] = [
        Part::Encoder,
        Part::DecoderL,
        Part::DecoderU,
        Part::Predictor,
        Part::Discriminator,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Part::Encoder => "enc",
            Part::DecoderL => "dec_l",
            Part::DecoderU => "dec_u",
            Part::Predictor => "pred",
            Part::Discriminator => "disc",
        }
    }
}

/// Which decoder to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Domain {
    Labeled,
    Unlabeled,
}

impl std::str::FromStr for Domain {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "L" | "l" | "labeled" => Ok(Domain::Labeled),
            "U" | "u" | "unlabeled" => Ok(Domain::Unlabeled),
            other => Err(Error::InvalidArgument(format!(
                "unknown decoder `{other}` (expected L or U)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub conv_w: Param,
    pub conv_b: Param,
    pub bn_gamma: Param,
    pub bn_beta: Param,
    pub bn_running: RunningStats,
    pub fc_w: Param,
    pub fc_b: Param,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderParams {
    pub fc_w: Param,
    pub fc_b: Param,
    pub deconv_w: Param,
    pub deconv_b: Param,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictorParams {
    pub w: Param,
    pub b: Param,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscriminatorParams {
    pub w1: Param,
    pub b1: Param,
    pub w2: Param,
    pub b2: Param,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub enc: EncoderParams,
    pub dec_l: DecoderParams,
    pub dec_u: DecoderParams,
    pub pred: PredictorParams,
    pub disc: DiscriminatorParams,
}

fn glorot(name: String, shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut Rng) -> Param {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.uniform_range(-a, a)).collect();
    Param::new(
        name,
        Tensor::new(shape.to_vec(), data).expect("glorot shape"),
    )
}

fn zeros(name: String, shape: &[usize]) -> Param {
    Param::new(name, Tensor::zeros(shape))
}

impl DecoderParams {
    fn init(prefix: &str, cfg: &ModelConfig, rng: &mut Rng) -> Self {
        let (f, c, k, flat, d) = (
            cfg.conv_filters,
            cfg.channels,
            cfg.kernel_len,
            cfg.flat_len(),
            cfg.latent_dim,
        );
        DecoderParams {
            fc_w: glorot(format!("{prefix}.fc_w"), &[flat, d], d, flat, rng),
            fc_b: zeros(format!("{prefix}.fc_b"), &[flat]),
            deconv_w: glorot(format!("{prefix}.deconv_w"), &[f, c, k], f * k, c * k, rng),
            deconv_b: zeros(format!("{prefix}.deconv_b"), &[c]),
        }
    }

    fn params(&self) -> Vec<&Param> {
        vec![&self.fc_w, &self.fc_b, &self.deconv_w, &self.deconv_b]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![
            &mut self.fc_w,
            &mut self.fc_b,
            &mut self.deconv_w,
            &mut self.deconv_b,
        ]
    }
}

/// Glorot-uniform weights, zero biases, unit batchnorm scale. Deterministic
/// in `config.seed`.
pub fn init_params(config: &ModelConfig) -> Result<ModelParams> {
    config.validate()?;
    let mut rng = Rng::stream(config.seed, Stream::Init);
    let cfg = config;
    let (c, f, k, d, m, h, flat) = (
        cfg.channels,
        cfg.conv_filters,
        cfg.kernel_len,
        cfg.latent_dim,
        cfg.n_classes,
        cfg.disc_hidden,
        cfg.flat_len(),
    );
    let enc = EncoderParams {
        conv_w: glorot("enc.conv_w".into(), &[f, c, k], c * k, f * k, &mut rng),
        conv_b: zeros("enc.conv_b".into(), &[f]),
        bn_gamma: Param::new("enc.bn_gamma", Tensor::full(&[f], 1.0)),
        bn_beta: zeros("enc.bn_beta".into(), &[f]),
        bn_running: RunningStats::new(f),
        fc_w: glorot("enc.fc_w".into(), &[d, flat], flat, d, &mut rng),
        fc_b: zeros("enc.fc_b".into(), &[d]),
    };
    let dec_l = DecoderParams::init("dec_l", cfg, &mut rng);
    let dec_u = DecoderParams::init("dec_u", cfg, &mut rng);
    let pred = PredictorParams {
        w: glorot("pred.w".into(), &[m, d], d, m, &mut rng),
        b: zeros("pred.b".into(), &[m]),
    };
    let disc = DiscriminatorParams {
        w1: glorot("disc.w1".into(), &[h, d], d, h, &mut rng),
        b1: zeros("disc.b1".into(), &[h]),
        w2: glorot("disc.w2".into(), &[1, h], h, 1, &mut rng),
        b2: zeros("disc.b2".into(), &[1]),
    };
    Ok(ModelParams {
        config: config.clone(),
        enc,
        dec_l,
        dec_u,
        pred,
        disc,
    })
}

impl ModelParams {
    pub fn part(&self, part: Part) -> Vec<&Param> {
        match part {
            Part::Encoder => {
                let e = &self.enc;
                vec![
                    &e.conv_w,
                    &e.conv_b,
                    &e.bn_gamma,
                    &e.bn_beta,
                    &e.fc_w,
                    &e.fc_b,
                ]
            }
            Part::DecoderL => self.dec_l.params(),
            Part::DecoderU => self.dec_u.params(),
            Part::Predictor => vec![&self.pred.w, &self.pred.b],
            Part::Discriminator => vec![&self.disc.w1, &self.disc.b1, &self.disc.w2, &self.disc.b2],
        }
    }

    pub fn part_mut(&mut self, part: Part) -> Vec<&mut Param> {
        match part {
            Part::Encoder => {
                let e = &mut self.enc;
                vec![
                    &mut e.conv_w,
                    &mut e.conv_b,
                    &mut e.bn_gamma,
                    &mut e.bn_beta,
                    &mut e.fc_w,
                    &mut e.fc_b,
                ]
            }
            Part::DecoderL => self.dec_l.params_mut(),
            Part::DecoderU => self.dec_u.params_mut(),
            Part::Predictor => vec![&mut self.pred.w, &mut self.pred.b],
            Part::Discriminator => {
                let s = &mut self.disc;
                vec![&mut s.w1, &mut s.b1, &mut s.w2, &mut s.b2]
            }
        }
    }

    pub fn all_params(&self) -> Vec<&Param> {
        Part::ALL.iter().flat_map(|&p| self.part(p)).collect()
    }

    pub fn all_params_mut(&mut self) -> Vec<&mut Param> {
        let ModelParams {
            enc,
            dec_l,
            dec_u,
            pred,
            disc,
            ..
        } = self;
        let mut v = vec![
            &mut enc.conv_w,
            &mut enc.conv_b,
            &mut enc.bn_gamma,
            &mut enc.bn_beta,
            &mut enc.fc_w,
            &mut enc.fc_b,
        ];
        v.extend(dec_l.params_mut());
        v.extend(dec_u.params_mut());
        v.extend([&mut pred.w, &mut pred.b]);
        v.extend([&mut disc.w1, &mut disc.b1, &mut disc.w2, &mut disc.b2]);
        v
    }

    pub fn zero_grad(&mut self) {
        self.all_params_mut().into_iter().for_each(Param::zero_grad);
    }

    /// SHA-256 over the learnable values of one part. Batchnorm running
    /// statistics are not learnable and are excluded.
    pub fn part_hash(&self, part: Part) -> [u8; 32] {
        let mut h = Sha256::new();
        for p in self.part(part) {
            h.update(p.name.as_bytes());
            for v in p.value.data() {
                h.update(v.to_le_bytes());
            }
        }
        h.finalize().into()
    }

    pub fn decoder(&self, which: Domain) -> &DecoderParams {
        match which {
            Domain::Labeled => &self.dec_l,
            Domain::Unlabeled => &self.dec_u,
        }
    }

    pub fn decoder_mut(&mut self, which: Domain) -> &mut DecoderParams {
        match which {
            Domain::Labeled => &mut self.dec_l,
            Domain::Unlabeled => &mut self.dec_u,
        }
    }
}

fn check_input(cfg: &ModelConfig, x: &Tensor) -> Result<usize> {
    x.expect_rank("encode", 3)?;
    if x.dim(1) != cfg.channels {
        return Err(Error::shape("encode", "channels", cfg.channels, x.dim(1)));
    }
    if x.dim(2) != cfg.window_len {
        return Err(Error::shape(
            "encode",
            "window length",
            cfg.window_len,
            x.dim(2),
        ));
    }
    Ok(x.dim(0))
}

fn check_latent(op: &'static str, cfg: &ModelConfig, z: &Tensor) -> Result<usize> {
    z.expect_rank(op, 2)?;
    if z.dim(1) != cfg.latent_dim {
        return Err(Error::shape(op, "latent dim", cfg.latent_dim, z.dim(1)));
    }
    Ok(z.dim(0))
}

#[derive(Debug, Clone)]
pub struct EncoderCache {
    x: Tensor,
    bn: BatchNormCache,
    /// Post-batchnorm, pre-relu activations `B×F×T1`.
    pre_relu: Tensor,
    pool_idx: Vec<usize>,
    dropped: Tensor,
    mask: Option<Vec<f64>>,
}

impl EncoderCache {
    /// Batch statistics observed in train mode, for committing to the
    /// running averages.
    pub fn batch_stats(&self) -> Option<&BatchStats> {
        self.bn.stats.as_ref()
    }
}

pub fn encoder_forward(
    params: &ModelParams,
    x: &Tensor,
    mode: Mode,
    rng: &mut Rng,
) -> Result<(Tensor, EncoderCache)> {
    let cfg = &params.config;
    let b = check_input(cfg, x)?;
    let e = &params.enc;
    let (c, t, f, k, t1, flat, d) = (
        cfg.channels,
        cfg.window_len,
        cfg.conv_filters,
        cfg.kernel_len,
        cfg.conv_len(),
        cfg.flat_len(),
        cfg.latent_dim,
    );
    let mut conv = Tensor::zeros(&[b, f, t1]);
    for bi in 0..b {
        conv1d_raw(
            x.outer(bi),
            c,
            t,
            e.conv_w.value.data(),
            Some(e.conv_b.value.data()),
            f,
            k,
            conv.outer_mut(bi),
        );
    }
    let (pre_relu, bn) = batchnorm::batchnorm(
        &conv,
        &e.bn_gamma.value,
        &e.bn_beta.value,
        &e.bn_running,
        mode,
    )?;
    let act = activation::relu(&pre_relu);
    let mut pooled = Tensor::zeros(&[b, flat]);
    let mut pool_idx = vec![0; b * flat];
    maxpool_raw(
        act.data(),
        b * f,
        t1,
        cfg.pool_w,
        pooled.data_mut(),
        &mut pool_idx,
    );
    let (dropped, mask) = dropout::dropout(&pooled, cfg.keep_prob, rng, mode)?;
    let mut z = Tensor::zeros(&[b, d]);
    dense_raw(
        dropped.data(),
        b,
        flat,
        e.fc_w.value.data(),
        e.fc_b.value.data(),
        d,
        z.data_mut(),
    );
    Ok((
        z,
        EncoderCache {
            x: x.clone(),
            bn,
            pre_relu,
            pool_idx,
            dropped,
            mask,
        },
    ))
}

/// Accumulates encoder gradients; returns the input gradient when requested.
pub fn encoder_backward(
    params: &mut ModelParams,
    cache: &EncoderCache,
    dz: &Tensor,
    want_dx: bool,
) -> Result<Option<Tensor>> {
    let cfg = params.config.clone();
    let b = cache.x.dim(0);
    if dz.shape() != [b, cfg.latent_dim] {
        return Err(Error::shape(
            "encoder_backward",
            "dz",
            format!("[{b}, {}]", cfg.latent_dim),
            format!("{:?}", dz.shape()),
        ));
    }
    let e = &mut params.enc;
    let (c, t, f, k, t1, flat, d) = (
        cfg.channels,
        cfg.window_len,
        cfg.conv_filters,
        cfg.kernel_len,
        cfg.conv_len(),
        cfg.flat_len(),
        cfg.latent_dim,
    );
    let mut ddrop = Tensor::zeros(&[b, flat]);
    dense_backward_raw(
        cache.dropped.data(),
        b,
        flat,
        e.fc_w.value.data(),
        d,
        dz.data(),
        Some(ddrop.data_mut()),
        e.fc_w.grad.data_mut(),
        e.fc_b.grad.data_mut(),
    );
    let dpool = dropout::dropout_backward(&ddrop, cache.mask.as_deref());
    let mut dact = Tensor::zeros(&[b, f, t1]);
    maxpool_backward_raw(
        dpool.data(),
        &cache.pool_idx,
        b * f,
        cfg.pooled_len(),
        t1,
        dact.data_mut(),
    );
    let dpre = activation::relu_backward(&cache.pre_relu, &dact);
    let g = batchnorm::batchnorm_backward(&cache.bn, &e.bn_gamma.value, &dpre)?;
    e.bn_gamma.grad.add_assign(&g.gamma);
    e.bn_beta.grad.add_assign(&g.beta);
    let mut dx = want_dx.then(|| Tensor::zeros(&[b, c, t]));
    for bi in 0..b {
        conv1d_backward_raw(
            cache.x.outer(bi),
            c,
            t,
            e.conv_w.value.data(),
            f,
            k,
            g.input.outer(bi),
            dx.as_mut().map(|dx| dx.outer_mut(bi)),
            e.conv_w.grad.data_mut(),
            e.conv_b.grad.data_mut(),
        );
    }
    Ok(dx)
}

/// Latent features `B×d`.
pub fn encode(params: &ModelParams, x: &Tensor, mode: Mode, rng: &mut Rng) -> Result<Tensor> {
    Ok(encoder_forward(params, x, mode, rng)?.0)
}

#[derive(Debug, Clone)]
pub struct DecoderCache {
    which: Domain,
    z: Tensor,
    pre_relu: Tensor,
    upsampled: Tensor,
}

pub fn decoder_forward(
    params: &ModelParams,
    z: &Tensor,
    which: Domain,
) -> Result<(Tensor, DecoderCache)> {
    let cfg = &params.config;
    let b = check_latent("decode", cfg, z)?;
    let dp = params.decoder(which);
    let (c, t, f, k, p, w, flat, d) = (
        cfg.channels,
        cfg.window_len,
        cfg.conv_filters,
        cfg.kernel_len,
        cfg.pooled_len(),
        cfg.pool_w,
        cfg.flat_len(),
        cfg.latent_dim,
    );
    let mut pre = Tensor::zeros(&[b, flat]);
    dense_raw(
        z.data(),
        b,
        d,
        dp.fc_w.value.data(),
        dp.fc_b.value.data(),
        flat,
        pre.data_mut(),
    );
    let act = activation::relu(&pre);
    let mut up = Tensor::zeros(&[b, f, p * w]);
    upsample_raw(act.data(), b * flat, w, up.data_mut());
    let dl = cfg.decoded_len();
    let mut out = Tensor::zeros(&[b, c, t]);
    let mut buf = vec![0.0; c * dl];
    for bi in 0..b {
        deconv1d_raw(
            up.outer(bi),
            f,
            p * w,
            dp.deconv_w.value.data(),
            Some(dp.deconv_b.value.data()),
            c,
            k,
            &mut buf,
        );
        let o = out.outer_mut(bi);
        for ci in 0..c {
            o[ci * t..ci * t + dl].copy_from_slice(&buf[ci * dl..(ci + 1) * dl]);
        }
    }
    Ok((
        out,
        DecoderCache {
            which,
            z: z.clone(),
            pre_relu: pre,
            upsampled: up,
        },
    ))
}

/// Accumulates decoder gradients and returns the latent gradient.
pub fn decoder_backward(
    params: &mut ModelParams,
    cache: &DecoderCache,
    dx: &Tensor,
) -> Result<Tensor> {
    let cfg = params.config.clone();
    let b = cache.z.dim(0);
    let (c, t, f, k, p, w, flat, d) = (
        cfg.channels,
        cfg.window_len,
        cfg.conv_filters,
        cfg.kernel_len,
        cfg.pooled_len(),
        cfg.pool_w,
        cfg.flat_len(),
        cfg.latent_dim,
    );
    if dx.shape() != [b, c, t] {
        return Err(Error::shape(
            "decoder_backward",
            "dx",
            format!("[{b}, {c}, {t}]"),
            format!("{:?}", dx.shape()),
        ));
    }
    let dp = params.decoder_mut(cache.which);
    let dl = cfg.decoded_len();
    let mut dcrop = vec![0.0; c * dl];
    let mut dup = Tensor::zeros(&[b, f, p * w]);
    for bi in 0..b {
        let src = dx.outer(bi);
        for ci in 0..c {
            dcrop[ci * dl..(ci + 1) * dl].copy_from_slice(&src[ci * t..ci * t + dl]);
        }
        deconv1d_backward_raw(
            cache.upsampled.outer(bi),
            f,
            p * w,
            dp.deconv_w.value.data(),
            c,
            k,
            &dcrop,
            Some(dup.outer_mut(bi)),
            dp.deconv_w.grad.data_mut(),
            dp.deconv_b.grad.data_mut(),
        );
    }
    let mut dact = Tensor::zeros(&[b, flat]);
    upsample_backward_raw(dup.data(), b * flat, w, dact.data_mut());
    let dpre = activation::relu_backward(&cache.pre_relu, &dact);
    let mut dz = Tensor::zeros(&[b, d]);
    dense_backward_raw(
        cache.z.data(),
        b,
        d,
        dp.fc_w.value.data(),
        flat,
        dpre.data(),
        Some(dz.data_mut()),
        dp.fc_w.grad.data_mut(),
        dp.fc_b.grad.data_mut(),
    );
    Ok(dz)
}

/// Reconstruction `B×C×T` from latents through the chosen decoder.
pub fn decode(params: &ModelParams, z: &Tensor, which: Domain) -> Result<Tensor> {
    Ok(decoder_forward(params, z, which)?.0)
}

#[derive(Debug, Clone)]
pub struct PredictorOutput {
    pub logits: Tensor,
    pub probs: Tensor,
    z: Tensor,
}

pub fn predictor_forward(params: &ModelParams, z: &Tensor) -> Result<PredictorOutput> {
    let cfg = &params.config;
    let b = check_latent("predict_label", cfg, z)?;
    let (d, m) = (cfg.latent_dim, cfg.n_classes);
    let mut logits = Tensor::zeros(&[b, m]);
    dense_raw(
        z.data(),
        b,
        d,
        params.pred.w.value.data(),
        params.pred.b.value.data(),
        m,
        logits.data_mut(),
    );
    let probs = activation::softmax(&logits)?;
    Ok(PredictorOutput {
        logits,
        probs,
        z: z.clone(),
    })
}

/// Accumulates predictor gradients from a logit gradient; returns `dz`.
pub fn predictor_backward(
    params: &mut ModelParams,
    out: &PredictorOutput,
    dlogits: &Tensor,
) -> Tensor {
    let cfg = &params.config;
    let (b, d, m) = (out.z.dim(0), cfg.latent_dim, cfg.n_classes);
    let mut dz = Tensor::zeros(&[b, d]);
    dense_backward_raw(
        out.z.data(),
        b,
        d,
        params.pred.w.value.data(),
        m,
        dlogits.data(),
        Some(dz.data_mut()),
        params.pred.w.grad.data_mut(),
        params.pred.b.grad.data_mut(),
    );
    dz
}

/// Class probabilities `B×M`.
pub fn predict_label(params: &ModelParams, z: &Tensor) -> Result<Tensor> {
    Ok(predictor_forward(params, z)?.probs)
}

#[derive(Debug, Clone)]
pub struct DiscriminatorOutput {
    /// Clamped probabilities of "labeled-pool" per row.
    pub probs: Vec<f64>,
    /// Whether the clamp was active (zero local derivative).
    clamped: Vec<bool>,
    z: Tensor,
    hidden_pre: Tensor,
    hidden: Tensor,
}

pub fn discriminator_forward(params: &ModelParams, z: &Tensor) -> Result<DiscriminatorOutput> {
    let cfg = &params.config;
    let b = check_latent("discriminate", cfg, z)?;
    let (d, h) = (cfg.latent_dim, cfg.disc_hidden);
    let s = &params.disc;
    let mut hidden_pre = Tensor::zeros(&[b, h]);
    dense_raw(
        z.data(),
        b,
        d,
        s.w1.value.data(),
        s.b1.value.data(),
        h,
        hidden_pre.data_mut(),
    );
    let hidden = activation::relu(&hidden_pre);
    let mut logit = vec![0.0; b];
    dense_raw(
        hidden.data(),
        b,
        h,
        s.w2.value.data(),
        s.b2.value.data(),
        1,
        &mut logit,
    );
    let mut probs = Vec::with_capacity(b);
    let mut clamped = Vec::with_capacity(b);
    for l in logit {
        let p = activation::sigmoid_scalar(l);
        let c = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
        clamped.push(c != p);
        probs.push(c);
    }
    Ok(DiscriminatorOutput {
        probs,
        clamped,
        z: z.clone(),
        hidden_pre,
        hidden,
    })
}

/// Backward from `dprobs` (gradient w.r.t. the clamped probabilities);
/// accumulates discriminator gradients and returns `dz`.
pub fn discriminator_backward(
    params: &mut ModelParams,
    out: &DiscriminatorOutput,
    dprobs: &[f64],
) -> Tensor {
    let cfg = &params.config;
    let (b, d, h) = (out.z.dim(0), cfg.latent_dim, cfg.disc_hidden);
    let dlogit: Vec<f64> = out
        .probs
        .iter()
        .zip(&out.clamped)
        .zip(dprobs)
        .map(|((&p, &c), &g)| if c { 0.0 } else { g * p * (1.0 - p) })
        .collect();
    let s = &mut params.disc;
    let mut dhidden = Tensor::zeros(&[b, h]);
    dense_backward_raw(
        out.hidden.data(),
        b,
        h,
        s.w2.value.data(),
        1,
        &dlogit,
        Some(dhidden.data_mut()),
        s.w2.grad.data_mut(),
        s.b2.grad.data_mut(),
    );
    let dpre = activation::relu_backward(&out.hidden_pre, &dhidden);
    let mut dz = Tensor::zeros(&[b, d]);
    dense_backward_raw(
        out.z.data(),
        b,
        d,
        s.w1.value.data(),
        h,
        dpre.data(),
        Some(dz.data_mut()),
        s.w1.grad.data_mut(),
        s.b1.grad.data_mut(),
    );
    dz
}

/// Probability that each latent row came from the labeled pool.
pub fn discriminate(params: &ModelParams, z: &Tensor) -> Result<Vec<f64>> {
    Ok(discriminator_forward(params, z)?.probs)
}

/// Eval-mode argmax class predictions for a `B×C×T` batch.
pub fn predict_classes(params: &ModelParams, x: &Tensor) -> Result<Vec<usize>> {
    let mut rng = Rng::new(0);
    let z = encode(params, x, Mode::Eval, &mut rng)?;
    let probs = predict_label(params, &z)?;
    let m = params.config.n_classes;
    Ok(probs
        .data()
        .chunks(m)
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| {
                    if v > bv {
                        (i, v)
                    } else {
                        (bi, bv)
                    }
                })
                .0
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn batch(cfg: &ModelConfig, b: usize, seed: u64) -> Tensor {
        let mut rng = Rng::new(seed);
        let n = b * cfg.channels * cfg.window_len;
        Tensor::new(
            vec![b, cfg.channels, cfg.window_len],
            (0..n).map(|_| rng.normal()).collect(),
        )
        .unwrap()
    }

    #[test]
    fn init_is_deterministic_with_zero_biases() {
        let cfg = ModelConfig {
            seed: 5,
            ..Default::default()
        };
        let a = init_params(&cfg).unwrap();
        let b = init_params(&cfg).unwrap();
        assert_eq!(a, b);
        for p in a.all_params() {
            if p.name.ends_with("_b")
                || p.name.ends_with(".b")
                || p.name.ends_with("b1")
                || p.name.ends_with("b2")
                || p.name.ends_with("beta")
            {
                assert!(p.value.data().iter().all(|&v| v == 0.0), "{}", p.name);
            }
        }
        assert!(a.enc.bn_gamma.value.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn init_weights_centered_within_three_sigma() {
        let cfg = ModelConfig {
            latent_dim: 64,
            ..Default::default()
        };
        let p = init_params(&cfg).unwrap();
        for w in [&p.enc.fc_w, &p.dec_l.fc_w, &p.dec_u.fc_w] {
            let (fan_out, fan_in) = (w.value.dim(0), w.value.dim(1));
            let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let n = w.len() as f64;
            assert!(n >= 1e4, "{} has only {n} draws", w.name);
            let sigma = a / 3f64.sqrt() / n.sqrt();
            assert!(
                w.value.mean().abs() < 3.0 * sigma,
                "{}: mean {}",
                w.name,
                w.value.mean()
            );
            assert!(w.value.data().iter().all(|v| v.abs() <= a));
        }
    }

    #[test]
    fn config_validation() {
        assert!(ModelConfig {
            kernel_len: 200,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(ModelConfig {
            n_classes: 1,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(ModelConfig {
            pool_w: 121,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(ModelConfig::default().validate().is_ok());
    }

    #[test]
    fn shapes_round_trip() {
        for cfg in [
            ModelConfig::default(),
            ModelConfig::tiny(),
            ModelConfig {
                window_len: 37,
                kernel_len: 5,
                pool_w: 3,
                ..ModelConfig::tiny()
            },
        ] {
            let p = init_params(&cfg).unwrap();
            let x = batch(&cfg, 3, 1);
            let mut rng = Rng::new(0);
            let z = encode(&p, &x, Mode::Train, &mut rng).unwrap();
            assert_eq!(z.shape(), &[3, cfg.latent_dim]);
            for which in [Domain::Labeled, Domain::Unlabeled] {
                assert_eq!(decode(&p, &z, which).unwrap().shape(), x.shape());
            }
        }
    }

    #[test]
    fn eval_encode_is_deterministic() {
        let cfg = ModelConfig::default();
        let p = init_params(&cfg).unwrap();
        let x = batch(&cfg, 2, 3);
        let a = encode(&p, &x, Mode::Eval, &mut Rng::new(1)).unwrap();
        let b = encode(&p, &x, Mode::Eval, &mut Rng::new(2)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn decoders_are_independent() {
        let cfg = ModelConfig::default();
        let p = init_params(&cfg).unwrap();
        let z = Tensor::full(&[2, cfg.latent_dim], 0.5);
        assert_ne!(
            decode(&p, &z, Domain::Labeled).unwrap(),
            decode(&p, &z, Domain::Unlabeled).unwrap()
        );
        assert!("X".parse::<Domain>().is_err());
    }

    #[test]
    fn predictor_rows_normalized_and_uniform_at_zero() {
        let cfg = ModelConfig::default();
        let mut p = init_params(&cfg).unwrap();
        let z = batch(
            &ModelConfig {
                channels: 1,
                window_len: cfg.latent_dim,
                ..cfg.clone()
            },
            5,
            9,
        )
        .reshape(&[5, cfg.latent_dim])
        .unwrap();
        let out = predictor_forward(&p, &z).unwrap();
        for (row, lrow) in out
            .probs
            .data()
            .chunks(cfg.n_classes)
            .zip(out.logits.data().chunks(cfg.n_classes))
        {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let am = |r: &[f64]| {
                r.iter()
                    .enumerate()
                    .max_by(|a, b| a.1.total_cmp(b.1))
                    .unwrap()
                    .0
            };
            assert_eq!(am(row), am(lrow));
        }
        p.pred.w.value.fill(0.0);
        let probs = predict_label(&p, &z).unwrap();
        assert!(probs
            .data()
            .iter()
            .all(|&v| (v - 1.0 / cfg.n_classes as f64).abs() < 1e-15));
    }

    #[test]
    fn discriminator_half_at_zero_and_strictly_inside() {
        let cfg = ModelConfig::default();
        let mut p = init_params(&cfg).unwrap();
        let z = Tensor::full(&[3, cfg.latent_dim], 1e4);
        assert!(discriminate(&p, &z)
            .unwrap()
            .iter()
            .all(|&v| v > 0.0 && v < 1.0));
        p.disc.w1.value.fill(0.0);
        p.disc.w2.value.fill(0.0);
        assert!(discriminate(&p, &z).unwrap().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn part_hash_tracks_values() {
        let mut p = init_params(&ModelConfig::tiny()).unwrap();
        let before: Vec<_> = Part::ALL.iter().map(|&x| p.part_hash(x)).collect();
        p.pred.b.value.data_mut()[0] += 1.0;
        let after: Vec<_> = Part::ALL.iter().map(|&x| p.part_hash(x)).collect();
        for (i, part) in Part::ALL.iter().enumerate() {
            assert_eq!(before[i] != after[i], *part == Part::Predictor);
        }
    }

    #[test]
    fn every_param_in_exactly_one_part() {
        let p = init_params(&ModelConfig::tiny()).unwrap();
        let mut names: Vec<&str> = p.all_params().iter().map(|q| q.name.as_str()).collect();
        let total = names.len();
        names.sort_unstable();
        names.dedup();
        assert_eq!(names.len(), total);
        assert_eq!(total, 6 + 4 + 4 + 2 + 4);
    }
}
