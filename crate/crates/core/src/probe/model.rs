use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::data::{Clip, INPUT_CHANNELS};
use crate::baselines::{involution, project, self_attention, InvolutionParams, SaFlags, SaParams};
use crate::grad::{involution_backward, rsa_backward, sa_backward};
use crate::rsa::{rsa_forward_fast, RsaConfig, RsaParams};
use crate::tensor::{derive_seed, seeded, softmax, FeatureMap, Matrix, NeighborhoodSpec};
use crate::{Error, Result};

pub const CLASSES: usize = 4;

/// The single transform layer of a probe model.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TransformKind {
    #[default]
    Rsa,
    SaContent,
    SaFull,
    Involution,
}

impl TransformKind {
    pub const ALL: [TransformKind; 4] = [
        TransformKind::Rsa,
        TransformKind::SaContent,
        TransformKind::SaFull,
        TransformKind::Involution,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TransformKind::Rsa => "rsa",
            TransformKind::SaContent => "sa-content",
            TransformKind::SaFull => "sa-full",
            TransformKind::Involution => "involution",
        }
    }
}

impl fmt::Display for TransformKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TransformKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TransformKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::config(format!("unknown transform {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfig {
    pub transform: TransformKind,
    pub channels: usize,
    /// RSA sub-queries `L`.
    pub queries: usize,
    /// RSA latent width `D`.
    pub latent: usize,
    /// RSA correlation groups.
    pub groups: usize,
    pub window: NeighborhoodSpec,
    pub normalize: bool,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            transform: TransformKind::Rsa,
            channels: 16,
            queries: 2,
            latent: 8,
            groups: 8,
            window: NeighborhoodSpec::new(3, 3, 3).unwrap(),
            normalize: true,
        }
    }
}

impl ProbeConfig {
    pub fn rsa_config(&self) -> RsaConfig {
        RsaConfig {
            channels: self.channels,
            queries: self.queries,
            latent: self.latent,
            groups: self.groups,
            normalize: self.normalize,
            window: self.window,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 {
            return Err(Error::config("channels must be positive"));
        }
        match self.transform {
            TransformKind::Rsa => self.rsa_config().validate(),
            _ => Ok(()),
        }
    }

    /// Kernels dumped per sub-query.
    pub fn kernel_kinds(&self) -> &'static [&'static str] {
        match self.transform {
            TransformKind::Rsa => &["basic", "relational"],
            TransformKind::SaContent | TransformKind::SaFull => &["attention"],
            TransformKind::Involution => &["involution"],
        }
    }

    /// Number of independent kernels per target.
    pub fn kernel_heads(&self) -> usize {
        match self.transform {
            TransformKind::Rsa => self.queries,
            _ => 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Layer {
    Rsa(RsaParams<f64>),
    Sa(SaParams<f64>),
    Involution(InvolutionParams<f64>),
}

/// Input projection, one transform, global average pooling and a linear
/// classifier.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbeModel {
    pub config: ProbeConfig,
    pub seed: u64,
    /// `[C_in, C]`
    pub input_proj: Matrix<f64>,
    pub layer: Layer,
    /// `[C, 4]`
    pub classifier: Matrix<f64>,
}

/// Gradients of one clip's loss, in [`ProbeModel::tensors`] order.
pub struct ClipGrad {
    pub loss: f64,
    pub correct: bool,
    pub grads: Vec<Matrix<f64>>,
}

impl ProbeModel {
    pub fn new(config: ProbeConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let c = config.channels;
        let m = config.window.size();
        let layer_seed = derive_seed(seed, 1);
        let layer = match config.transform {
            TransformKind::Rsa => Layer::Rsa(RsaParams::random(config.rsa_config(), layer_seed)?),
            TransformKind::SaContent | TransformKind::SaFull => {
                let mut flags = if config.transform == TransformKind::SaFull {
                    SaFlags::FULL
                } else {
                    SaFlags::CONTENT
                };
                flags.normalize = config.normalize;
                Layer::Sa(SaParams::random(c, m, flags, layer_seed))
            }
            TransformKind::Involution => Layer::Involution(InvolutionParams::random(c, m, layer_seed)),
        };
        let mut rng = seeded(derive_seed(seed, 2));
        let input_proj = Matrix::random_normal(INPUT_CHANNELS, c, 1.0, &mut rng);
        let classifier = Matrix::random_uniform(c, CLASSES, 1.0 / (c as f64).sqrt(), &mut rng);
        Ok(ProbeModel {
            config,
            seed,
            input_proj,
            layer,
            classifier,
        })
    }

    /// Every trainable matrix with its name, in a fixed order.
    pub fn tensors(&self) -> Vec<(&'static str, &Matrix<f64>)> {
        let mut out = vec![("input_proj", &self.input_proj)];
        match &self.layer {
            Layer::Rsa(p) => out.extend(crate::rsa::params::PARAM_NAMES.into_iter().zip(p.matrices())),
            Layer::Sa(p) => out.extend([("e_q", &p.e_q), ("e_k", &p.e_k), ("e_v", &p.e_v), ("pos", &p.pos)]),
            Layer::Involution(p) => out.push(("pos", &p.pos)),
        }
        out.push(("classifier", &self.classifier));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix<f64>> {
        let mut out = vec![&mut self.input_proj];
        match &mut self.layer {
            Layer::Rsa(p) => out.extend(p.matrices_mut()),
            Layer::Sa(p) => out.extend([&mut p.e_q, &mut p.e_k, &mut p.e_v, &mut p.pos]),
            Layer::Involution(p) => out.push(&mut p.pos),
        }
        out.push(&mut self.classifier);
        out
    }

    fn check_clip(&self, x: &FeatureMap<f64>) -> Result<()> {
        let s = x.shape();
        if s.channels != INPUT_CHANNELS || s.batch != 1 {
            return Err(Error::shape(format!(
                "probe clips are [1, T, H, W, {INPUT_CHANNELS}], got {s:?}"
            )));
        }
        Ok(())
    }

    /// Features entering the transform layer, `x · W_in`.
    pub fn embed(&self, x: &FeatureMap<f64>) -> Result<FeatureMap<f64>> {
        self.check_clip(x)?;
        let h = project(x.data(), &self.input_proj);
        FeatureMap::new(x.shape().with_channels(self.config.channels), h)
    }

    pub fn transform(&self, h: &FeatureMap<f64>) -> Result<FeatureMap<f64>> {
        let spec = &self.config.window;
        match &self.layer {
            Layer::Rsa(p) => rsa_forward_fast(h, p),
            Layer::Sa(p) => self_attention(h, spec, p),
            Layer::Involution(p) => involution(h, spec, p),
        }
    }

    fn pool(y: &FeatureMap<f64>) -> Vec<f64> {
        let c = y.shape().channels;
        let n = y.shape().positions() as f64;
        let mut out = vec![0.0; c];
        for row in y.data().chunks_exact(c) {
            out.iter_mut().zip(row).for_each(|(o, v)| *o += v);
        }
        out.iter_mut().for_each(|o| *o /= n);
        out
    }

    fn classify(&self, pooled: &[f64]) -> Vec<f64> {
        let mut logits = vec![0.0; CLASSES];
        crate::tensor::matrix::vec_mat(pooled, self.classifier.data(), CLASSES, &mut logits);
        logits
    }

    /// Class scores for one clip.
    pub fn logits(&self, x: &FeatureMap<f64>) -> Result<Vec<f64>> {
        let y = self.transform(&self.embed(x)?)?;
        Ok(self.classify(&Self::pool(&y)))
    }

    /// Softmax cross-entropy and its gradient for one labelled clip.
    pub fn clip_grad(&self, clip: &Clip) -> Result<ClipGrad> {
        let x = &clip.data;
        let h = self.embed(x)?;
        let y = self.transform(&h)?;
        let pooled = Self::pool(&y);
        let logits = self.classify(&pooled);
        let label = clip.label.index();
        let probs = softmax(&logits);
        let loss = -probs[label].max(f64::MIN_POSITIVE).ln();
        let correct = argmax(&logits) == label;

        let mut d_logits = probs;
        d_logits[label] -= 1.0;
        let c = self.config.channels;
        let mut d_cls = Matrix::zeros(c, CLASSES);
        let mut d_pooled = vec![0.0; c];
        for (i, &p) in pooled.iter().enumerate() {
            for (k, &d) in d_logits.iter().enumerate() {
                d_cls.data_mut()[i * CLASSES + k] = p * d;
                d_pooled[i] += self.classifier.get(i, k) * d;
            }
        }
        let n = h.shape().positions() as f64;
        d_pooled.iter_mut().for_each(|v| *v /= n);
        let upstream = FeatureMap::new(
            h.shape(),
            d_pooled.iter().copied().cycle().take(h.data().len()).collect(),
        )?;

        let spec = &self.config.window;
        let (layer_grads, dh) = match &self.layer {
            Layer::Rsa(p) => {
                let g = rsa_backward(&h, p, &upstream)?;
                (vec![g.e_q, g.e_k, g.e_v, g.p1, g.h1, g.h2, g.g_ctx], g.input)
            }
            Layer::Sa(p) => {
                let g = sa_backward(&h, spec, p, &upstream)?;
                (vec![g.e_q, g.e_k, g.e_v, g.pos], g.input)
            }
            Layer::Involution(p) => {
                let g = involution_backward(&h, spec, p, &upstream)?;
                (vec![g.pos], g.input)
            }
        };
        let mut scratch = vec![0.0; x.data().len()];
        let d_in = crate::grad::embed_backward(x.data(), &self.input_proj, dh.data(), &mut scratch);

        let mut grads = Vec::with_capacity(layer_grads.len() + 2);
        grads.push(d_in);
        grads.extend(layer_grads);
        grads.push(d_cls);
        Ok(ClipGrad { loss, correct, grads })
    }
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    (0..v.len()).fold(0, |best, i| if v[i] > v[best] { i } else { best })
}
