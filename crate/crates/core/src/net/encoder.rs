//! Coefficient encoders: process parameters (and optionally the initial
//! image) to the nine basis coefficients.
//!
//! ```text
//! tabular-only : [T, V] -> FC 16 -> FC 16 --------------------> FC 9 = beta
//! multi-modal  : [T, V] -> FC 16 -> FC 16 --\
//!                image  -> conv4 -> pool -> conv8 -> pool -> FC 16 --+-> FC 9 = beta
//! ```
//!
//! The head is linear. Its output is multiplied by `target_scale`, so the
//! network works in units of the training set's largest ΔE.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layers::{avg_pool2, avg_pool2_backward, Activation, Conv2d, Dense, NamedParams, Params, TensorVisitor};
use super::NetError;
use crate::basis::{CoefficientVector, BASIS_SIZE};
use crate::dataset::{ProcessCondition, Raster};

pub const LATENT_WIDTH: usize = 16;
pub const IMAGE_SIZE: usize = 32;
const CONV1_CHANNELS: usize = 4;
const CONV2_CHANNELS: usize = 8;
const FLAT_WIDTH: usize = CONV2_CHANNELS * (IMAGE_SIZE / 4) * (IMAGE_SIZE / 4);

/// Normalized inputs must stay within this band around `[0, 1]`.
pub const GUARD_BAND: (f64, f64) = (-0.5, 1.5);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    TabularOnly,
    MultiModal,
}

impl Modality {
    pub fn as_str(&self) -> &'static str {
        match self {
            Modality::TabularOnly => "tabular_only",
            Modality::MultiModal => "multi_modal",
        }
    }
}

/// Min-max scaling of process parameters fitted on the training conditions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConditionScaler {
    pub temperature_min: f64,
    pub temperature_max: f64,
    pub velocity_min: f64,
    pub velocity_max: f64,
}

impl Default for ConditionScaler {
    fn default() -> Self {
        Self {
            temperature_min: 0.0,
            temperature_max: 1.0,
            velocity_min: 0.0,
            velocity_max: 1.0,
        }
    }
}

impl ConditionScaler {
    pub fn fit<'a>(conditions: impl IntoIterator<Item = &'a ProcessCondition>) -> Self {
        let mut s = Self {
            temperature_min: f64::INFINITY,
            temperature_max: f64::NEG_INFINITY,
            velocity_min: f64::INFINITY,
            velocity_max: f64::NEG_INFINITY,
        };
        for c in conditions {
            s.temperature_min = s.temperature_min.min(c.temperature);
            s.temperature_max = s.temperature_max.max(c.temperature);
            s.velocity_min = s.velocity_min.min(c.air_velocity);
            s.velocity_max = s.velocity_max.max(c.air_velocity);
        }
        if !s.temperature_min.is_finite() {
            return Self::default();
        }
        s
    }

    fn scale(v: f64, lo: f64, hi: f64) -> f64 {
        if hi > lo {
            (v - lo) / (hi - lo)
        } else {
            // a single training value maps to the middle of the range
            0.5 + (v - lo)
        }
    }

    /// Normalized `[temperature, velocity]`, rejected outside the guard band.
    pub fn transform(&self, c: &ProcessCondition) -> Result<[f64; 2], NetError> {
        let x = [
            Self::scale(c.temperature, self.temperature_min, self.temperature_max),
            Self::scale(c.air_velocity, self.velocity_min, self.velocity_max),
        ];
        check_normalized(&x)?;
        Ok(x)
    }
}

fn check_normalized(x: &[f64; 2]) -> Result<(), NetError> {
    for (name, v) in ["temperature", "air_velocity"].iter().zip(x) {
        if !(GUARD_BAND.0..=GUARD_BAND.1).contains(v) {
            return Err(NetError::NotNormalized {
                feature: (*name).to_string(),
                value: *v,
            });
        }
    }
    Ok(())
}

/// Convolutional image-feature extractor for 32x32 grayscale inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBranch {
    pub conv1: Conv2d,
    pub conv2: Conv2d,
    pub fc: Dense,
}

#[derive(Debug, Clone)]
pub(crate) struct ImageTrace {
    input: Vec<f64>,
    a1: Vec<f64>,
    p1: Vec<f64>,
    a2: Vec<f64>,
    p2: Vec<f64>,
    pub(crate) features: Vec<f64>,
}

impl ImageBranch {
    pub fn zeros() -> Self {
        Self {
            conv1: Conv2d::zeros(1, CONV1_CHANNELS),
            conv2: Conv2d::zeros(CONV1_CHANNELS, CONV2_CHANNELS),
            fc: Dense::zeros(FLAT_WIDTH, LATENT_WIDTH),
        }
    }

    pub fn init<R: Rng>(rng: &mut R) -> Self {
        Self {
            conv1: Conv2d::glorot(rng, 1, CONV1_CHANNELS),
            conv2: Conv2d::glorot(rng, CONV1_CHANNELS, CONV2_CHANNELS),
            fc: Dense::glorot(rng, FLAT_WIDTH, LATENT_WIDTH),
        }
    }

    fn zeros_like(&self) -> Self {
        Self::zeros()
    }

    pub(crate) fn forward(&self, input: Vec<f64>, act: Activation) -> ImageTrace {
        let s = IMAGE_SIZE;
        let mut a1 = self.conv1.forward(&input, s, s);
        act.apply(&mut a1);
        let p1 = avg_pool2(&a1, CONV1_CHANNELS, s, s);
        let mut a2 = self.conv2.forward(&p1, s / 2, s / 2);
        act.apply(&mut a2);
        let p2 = avg_pool2(&a2, CONV2_CHANNELS, s / 2, s / 2);
        let mut features = self.fc.forward(&p2);
        act.apply(&mut features);
        ImageTrace {
            input,
            a1,
            p1,
            a2,
            p2,
            features,
        }
    }

    fn backward(&self, tr: &ImageTrace, grad_features: &[f64], act: Activation, grads: &mut ImageBranch) {
        let s = IMAGE_SIZE;
        let mut g = grad_features.to_vec();
        act.backprop(&tr.features, &mut g);
        let g_p2 = self.fc.backward(&tr.p2, &g, &mut grads.fc);
        let mut g_a2 = avg_pool2_backward(&g_p2, CONV2_CHANNELS, s / 2, s / 2);
        act.backprop(&tr.a2, &mut g_a2);
        let g_p1 = self
            .conv2
            .backward(&tr.p1, s / 2, s / 2, &g_a2, &mut grads.conv2, true)
            .expect("input gradient requested");
        let mut g_a1 = avg_pool2_backward(&g_p1, CONV1_CHANNELS, s, s);
        act.backprop(&tr.a1, &mut g_a1);
        self.conv1.backward(&tr.input, s, s, &g_a1, &mut grads.conv1, false);
    }
}

/// Image pixels scaled to `[0, 1]`; the raster must be 32x32.
pub fn image_input(image: &Raster) -> Result<Vec<f64>, NetError> {
    if image.width != IMAGE_SIZE || image.height != IMAGE_SIZE {
        return Err(NetError::BadImageSize {
            width: image.width,
            height: image.height,
        });
    }
    Ok(image.normalized())
}

/// Parameters of a coefficient encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientEncoder {
    pub modality: Modality,
    pub activation: Activation,
    pub scaler: ConditionScaler,
    pub target_scale: f64,
    pub tabular: [Dense; 2],
    pub image: Option<ImageBranch>,
    pub head: Dense,
}

/// Intermediate values of one forward pass.
#[derive(Debug, Clone)]
pub(crate) struct EncoderTrace {
    x: [f64; 2],
    h1: Vec<f64>,
    h2: Vec<f64>,
    image: Option<ImageTrace>,
    z: Vec<f64>,
    pub(crate) beta: [f64; BASIS_SIZE],
}

impl CoefficientEncoder {
    fn head_inputs(modality: Modality) -> usize {
        match modality {
            Modality::TabularOnly => LATENT_WIDTH,
            Modality::MultiModal => 2 * LATENT_WIDTH,
        }
    }

    /// All-zero parameters with identity scaling.
    pub fn zeros(modality: Modality) -> Self {
        Self {
            modality,
            activation: Activation::Tanh,
            scaler: ConditionScaler::default(),
            target_scale: 1.0,
            tabular: [Dense::zeros(2, LATENT_WIDTH), Dense::zeros(LATENT_WIDTH, LATENT_WIDTH)],
            image: (modality == Modality::MultiModal).then(ImageBranch::zeros),
            head: Dense::zeros(Self::head_inputs(modality), BASIS_SIZE),
        }
    }

    /// Glorot-initialized hidden layers; the head starts at zero.
    pub fn init<R: Rng>(modality: Modality, rng: &mut R) -> Self {
        let tabular = [
            Dense::glorot(rng, 2, LATENT_WIDTH),
            Dense::glorot(rng, LATENT_WIDTH, LATENT_WIDTH),
        ];
        let image = (modality == Modality::MultiModal).then(|| ImageBranch::init(rng));
        Self {
            modality,
            activation: Activation::Tanh,
            scaler: ConditionScaler::default(),
            target_scale: 1.0,
            tabular,
            image,
            head: Dense::zeros(Self::head_inputs(modality), BASIS_SIZE),
        }
    }

    /// A gradient accumulator with the same layout.
    pub fn zeros_like(&self) -> Self {
        Self {
            scaler: self.scaler,
            target_scale: self.target_scale,
            activation: self.activation,
            ..Self::zeros(self.modality)
        }
    }

    /// Tabular latent features of already-normalized inputs.
    pub fn encode_normalized(&self, x: &[f64; 2]) -> Vec<f64> {
        let mut h1 = self.tabular[0].forward(x);
        self.activation.apply(&mut h1);
        let mut h2 = self.tabular[1].forward(&h1);
        self.activation.apply(&mut h2);
        h2
    }

    /// 16 tabular latent features for a process condition.
    pub fn encode_tabular(&self, condition: &ProcessCondition) -> Result<Vec<f64>, NetError> {
        Ok(self.encode_normalized(&self.scaler.transform(condition)?))
    }

    /// 16 visual features of a 32x32 image.
    pub fn encode_image(&self, image: &Raster) -> Result<Vec<f64>, NetError> {
        let branch = self
            .image
            .as_ref()
            .ok_or_else(|| NetError::ModalityMismatch("tabular-only encoder has no image branch".into()))?;
        Ok(branch.forward(image_input(image)?, self.activation).features)
    }

    pub(crate) fn forward(
        &self,
        condition: &ProcessCondition,
        image: Option<&Raster>,
    ) -> Result<EncoderTrace, NetError> {
        let x = self.scaler.transform(condition)?;
        let image_in = match (self.modality, image) {
            (Modality::TabularOnly, None) => None,
            (Modality::MultiModal, Some(img)) => Some(image_input(img)?),
            (Modality::TabularOnly, Some(_)) => {
                return Err(NetError::ModalityMismatch(
                    "an image was supplied to a tabular-only encoder".into(),
                ))
            }
            (Modality::MultiModal, None) => {
                return Err(NetError::ModalityMismatch(
                    "the multi-modal encoder needs an initial image".into(),
                ))
            }
        };
        Ok(self.forward_inputs(x, image_in))
    }

    pub(crate) fn forward_inputs(&self, x: [f64; 2], image_in: Option<Vec<f64>>) -> EncoderTrace {
        let mut h1 = self.tabular[0].forward(&x);
        self.activation.apply(&mut h1);
        let mut h2 = self.tabular[1].forward(&h1);
        self.activation.apply(&mut h2);
        let image = match (&self.image, image_in) {
            (Some(branch), Some(input)) => Some(branch.forward(input, self.activation)),
            _ => None,
        };
        let mut z = h2.clone();
        if let Some(tr) = &image {
            z.extend_from_slice(&tr.features);
        }
        let out = self.head.forward(&z);
        let mut beta = [0.0; BASIS_SIZE];
        for (b, o) in beta.iter_mut().zip(&out) {
            *b = o * self.target_scale;
        }
        EncoderTrace {
            x,
            h1,
            h2,
            image,
            z,
            beta,
        }
    }

    /// Backpropagates `dL/dbeta` into `grads`.
    pub(crate) fn backward(&self, tr: &EncoderTrace, grad_beta: &[f64; BASIS_SIZE], grads: &mut CoefficientEncoder) {
        let g_out: Vec<f64> = grad_beta.iter().map(|g| g * self.target_scale).collect();
        let g_z = self.head.backward(&tr.z, &g_out, &mut grads.head);
        let mut g_h2 = g_z[..LATENT_WIDTH].to_vec();
        if let (Some(branch), Some(itr), Some(gb)) = (&self.image, &tr.image, grads.image.as_mut()) {
            branch.backward(itr, &g_z[LATENT_WIDTH..], self.activation, gb);
        }
        self.activation.backprop(&tr.h2, &mut g_h2);
        let mut g_h1 = self.tabular[1].backward(&tr.h1, &g_h2, &mut grads.tabular[1]);
        self.activation.backprop(&tr.h1, &mut g_h1);
        self.tabular[0].backward(&tr.x, &g_h1, &mut grads.tabular[0]);
    }

    /// Gradient of `grad_beta · beta(condition, image)` with respect to every
    /// parameter, returned in a zeroed copy of this encoder.
    pub fn coefficient_gradient(
        &self,
        condition: &ProcessCondition,
        image: Option<&Raster>,
        grad_beta: &[f64; BASIS_SIZE],
    ) -> Result<CoefficientEncoder, NetError> {
        let tr = self.forward(condition, image)?;
        let mut grads = self.zeros_like();
        self.backward(&tr, grad_beta, &mut grads);
        Ok(grads)
    }

    /// The nine coefficients for a condition (and image, for multi-modal
    /// encoders). The head output is linear.
    pub fn predict_coefficients(
        &self,
        condition: &ProcessCondition,
        image: Option<&Raster>,
    ) -> Result<CoefficientVector, NetError> {
        let tr = self.forward(condition, image)?;
        CoefficientVector::new(tr.beta).map_err(NetError::from)
    }
}

impl Params for CoefficientEncoder {
    fn visit(&self, f: &mut TensorVisitor) {
        self.tabular[0].visit_prefixed("tabular.0", f);
        self.tabular[1].visit_prefixed("tabular.1", f);
        if let Some(img) = &self.image {
            img.conv1.visit_prefixed("image.conv1", f);
            img.conv2.visit_prefixed("image.conv2", f);
            img.fc.visit_prefixed("image.fc", f);
        }
        self.head.visit_prefixed("head", f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64])) {
        self.tabular[0].visit_prefixed_mut("tabular.0", f);
        self.tabular[1].visit_prefixed_mut("tabular.1", f);
        if let Some(img) = &mut self.image {
            img.conv1.visit_prefixed_mut("image.conv1", f);
            img.conv2.visit_prefixed_mut("image.conv2", f);
            img.fc.visit_prefixed_mut("image.fc", f);
        }
        self.head.visit_prefixed_mut("head", f);
    }
}

impl ImageBranch {
    /// Convenience for tests and diagnostics: gradient accumulator.
    pub fn gradient_buffer(&self) -> Self {
        self.zeros_like()
    }

    /// Backpropagates a gradient on the feature vector of `image`.
    pub fn feature_gradient(&self, image: &[f64], grad_features: &[f64], act: Activation) -> ImageBranch {
        let tr = self.forward(image.to_vec(), act);
        let mut grads = self.zeros_like();
        self.backward(&tr, grad_features, act, &mut grads);
        grads
    }

    pub fn features(&self, image: &[f64], act: Activation) -> Vec<f64> {
        self.forward(image.to_vec(), act).features
    }
}

impl Params for ImageBranch {
    fn visit(&self, f: &mut TensorVisitor) {
        self.conv1.visit_prefixed("image.conv1", f);
        self.conv2.visit_prefixed("image.conv2", f);
        self.fc.visit_prefixed("image.fc", f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64])) {
        self.conv1.visit_prefixed_mut("image.conv1", f);
        self.conv2.visit_prefixed_mut("image.conv2", f);
        self.fc.visit_prefixed_mut("image.fc", f);
    }
}
