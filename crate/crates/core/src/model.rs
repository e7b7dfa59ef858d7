//! Shared encoder with two softmax heads, reverse-mode gradients, and SGD.
//!
//! The encoder is a rectifier perceptron `D → hidden… → H` whose last layer is
//! affine (no rectifier), so embeddings may take either sign. Both heads are
//! affine maps of the embedding followed by softmax.

use std::path::Path;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};
use crate::numerics::{softmax, softmax_vjp, Matrix};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderSpec {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub embed_dim: usize,
}

impl Default for EncoderSpec {
    fn default() -> Self {
        Self { input_dim: 16, hidden_dims: vec![64, 64], embed_dim: 32 }
    }
}

impl EncoderSpec {
    pub fn validate(&self) -> Result<()> {
        contract!(self.input_dim > 0 && self.embed_dim > 0, "encoder dimensions must be positive");
        contract!(self.hidden_dims.iter().all(|&d| d > 0), "hidden dimensions must be positive");
        Ok(())
    }

    /// Number of affine layers in the encoder.
    pub fn depth(&self) -> usize {
        self.hidden_dims.len() + 1
    }

    fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.depth());
        let mut fan_in = self.input_dim;
        for &h in self.hidden_dims.iter().chain(std::iter::once(&self.embed_dim)) {
            dims.push((h, fan_in));
            fan_in = h;
        }
        dims
    }
}

/// Mutable view of one parameter tensor and its gradient buffer.
pub struct ParamTensor<'a, F> {
    pub values: &'a mut [F],
    pub grads: &'a mut [F],
    pub trainable: bool,
}

/// Anything the optimizer can update.
///
/// Implementations must return tensors in a stable order, since optimizer
/// velocities are matched positionally.
pub trait Parameters<F> {
    fn param_tensors(&mut self) -> Vec<ParamTensor<'_, F>>;

    fn zero_grads(&mut self)
    where
        F: Scalar,
    {
        for t in self.param_tensors() {
            t.grads.fill(F::zero());
        }
    }
}

/// Affine map `y = W x + b` with gradient buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<F> {
    weight: Matrix<F>,
    bias: Vec<F>,
    grad_weight: Matrix<F>,
    grad_bias: Vec<F>,
}

impl<F: Scalar> Linear<F> {
    pub fn zeros(out_dim: usize, in_dim: usize) -> Self {
        Self {
            weight: Matrix::zeros(out_dim, in_dim),
            bias: vec![F::zero(); out_dim],
            grad_weight: Matrix::zeros(out_dim, in_dim),
            grad_bias: vec![F::zero(); out_dim],
        }
    }

    /// Weights `U(−1/√fan_in, 1/√fan_in)`, zero bias.
    pub fn init_uniform<R: Rng + ?Sized>(out_dim: usize, in_dim: usize, rng: &mut R) -> Self {
        let mut layer = Self::zeros(out_dim, in_dim);
        let bound = 1.0 / (in_dim as f64).sqrt();
        for w in layer.weight.as_mut_slice() {
            *w = F::lit(rng.random_range(-bound..bound));
        }
        layer
    }

    pub fn from_parts(weight: Matrix<F>, bias: Vec<F>) -> Result<Self> {
        contract!(bias.len() == weight.rows(), "bias length {} != {} rows", bias.len(), weight.rows());
        let (r, c) = (weight.rows(), weight.cols());
        Ok(Self { weight, bias, grad_weight: Matrix::zeros(r, c), grad_bias: vec![F::zero(); r] })
    }

    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn weight(&self) -> &Matrix<F> {
        &self.weight
    }

    pub fn bias(&self) -> &[F] {
        &self.bias
    }

    pub fn grad_weight(&self) -> &Matrix<F> {
        &self.grad_weight
    }

    pub fn grad_bias(&self) -> &[F] {
        &self.grad_bias
    }

    pub fn forward(&self, x: &[F]) -> Vec<F> {
        let mut y = self.weight.matvec(x);
        for (yi, &bi) in y.iter_mut().zip(&self.bias) {
            *yi += bi;
        }
        y
    }

    /// Accumulates `dy ⊗ x` into the gradient buffers when `accumulate` is set
    /// and returns `Wᵀ dy`.
    pub fn backward(&mut self, x: &[F], dy: &[F], accumulate: bool) -> Vec<F> {
        if accumulate {
            self.grad_weight.add_outer(dy, x);
            for (g, &d) in self.grad_bias.iter_mut().zip(dy) {
                *g += d;
            }
        }
        self.weight.matvec_t(dy)
    }
}

impl<F: Scalar> Parameters<F> for Linear<F> {
    fn param_tensors(&mut self) -> Vec<ParamTensor<'_, F>> {
        vec![
            ParamTensor { values: self.weight.as_mut_slice(), grads: self.grad_weight.as_mut_slice(), trainable: true },
            ParamTensor { values: &mut self.bias, grads: &mut self.grad_bias, trainable: true },
        ]
    }
}

/// Activations recorded by [`ModelState::forward`] for one input.
#[derive(Debug, Clone)]
pub struct Tape<F> {
    version: u64,
    /// Input of every encoder layer; entry `i > 0` is the rectified output of layer `i - 1`.
    layer_inputs: Vec<Vec<F>>,
    z: Vec<F>,
    p_l: Vec<F>,
    p_u: Vec<F>,
}

#[derive(Debug, Clone)]
pub struct Forward<F> {
    pub z: Vec<F>,
    pub p_l: Vec<F>,
    pub p_u: Vec<F>,
    pub tape: Tape<F>,
}

/// Upstream gradients for one forward pass.
///
/// Head gradients may be given with respect to probabilities, to logits, or
/// both; they are summed after the softmax Jacobian is applied.
#[derive(Debug, Clone, PartialEq)]
pub struct Upstream<F> {
    pub d_z: Vec<F>,
    pub d_p_l: Vec<F>,
    pub d_logits_l: Vec<F>,
    pub d_p_u: Vec<F>,
    pub d_logits_u: Vec<F>,
}

impl<F: Scalar> Upstream<F> {
    pub fn zeros(embed_dim: usize, labeled_classes: usize, unlabeled_classes: usize) -> Self {
        Self {
            d_z: vec![F::zero(); embed_dim],
            d_p_l: vec![F::zero(); labeled_classes],
            d_logits_l: vec![F::zero(); labeled_classes],
            d_p_u: vec![F::zero(); unlabeled_classes],
            d_logits_u: vec![F::zero(); unlabeled_classes],
        }
    }

    pub fn for_model(ms: &ModelState<F>) -> Self {
        Self::zeros(ms.embed_dim(), ms.labeled_classes(), ms.unlabeled_classes())
    }
}

/// Encoder layers, both heads, gradient buffers and the frozen-prefix mask.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState<F> {
    spec: EncoderSpec,
    layers: Vec<Linear<F>>,
    head_l: Linear<F>,
    head_u: Linear<F>,
    frozen_prefix: usize,
    seed: u64,
    version: u64,
}

impl<F: Scalar> ModelState<F> {
    /// Seeded initialization.
    pub fn new(spec: EncoderSpec, labeled_classes: usize, unlabeled_classes: usize, seed: u64) -> Result<Self> {
        spec.validate()?;
        contract!(labeled_classes > 0 && unlabeled_classes > 0, "head sizes must be positive");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = spec
            .layer_dims()
            .into_iter()
            .map(|(o, i)| Linear::init_uniform(o, i, &mut rng))
            .collect();
        let head_l = Linear::init_uniform(labeled_classes, spec.embed_dim, &mut rng);
        let head_u = Linear::init_uniform(unlabeled_classes, spec.embed_dim, &mut rng);
        Ok(Self { spec, layers, head_l, head_u, frozen_prefix: 0, seed, version: 0 })
    }

    /// All weights and biases zero.
    pub fn zeros(spec: EncoderSpec, labeled_classes: usize, unlabeled_classes: usize) -> Result<Self> {
        spec.validate()?;
        contract!(labeled_classes > 0 && unlabeled_classes > 0, "head sizes must be positive");
        let layers = spec.layer_dims().into_iter().map(|(o, i)| Linear::zeros(o, i)).collect();
        Ok(Self {
            head_l: Linear::zeros(labeled_classes, spec.embed_dim),
            head_u: Linear::zeros(unlabeled_classes, spec.embed_dim),
            spec,
            layers,
            frozen_prefix: 0,
            seed: 0,
            version: 0,
        })
    }

    pub fn spec(&self) -> &EncoderSpec {
        &self.spec
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn embed_dim(&self) -> usize {
        self.spec.embed_dim
    }

    pub fn labeled_classes(&self) -> usize {
        self.head_l.out_dim()
    }

    pub fn unlabeled_classes(&self) -> usize {
        self.head_u.out_dim()
    }

    pub fn layers(&self) -> &[Linear<F>] {
        &self.layers
    }

    pub fn head_l(&self) -> &Linear<F> {
        &self.head_l
    }

    pub fn head_u(&self) -> &Linear<F> {
        &self.head_u
    }

    pub fn frozen_prefix(&self) -> usize {
        self.frozen_prefix
    }

    /// Replaces encoder layer `i`; invalidates outstanding tapes.
    pub fn set_layer(&mut self, i: usize, layer: Linear<F>) -> Result<()> {
        contract!(i < self.layers.len(), "layer {i} out of range");
        let old = &self.layers[i];
        contract!(
            old.in_dim() == layer.in_dim() && old.out_dim() == layer.out_dim(),
            "layer {i} shape mismatch"
        );
        self.layers[i] = layer;
        self.version += 1;
        Ok(())
    }

    /// Encoder output only.
    pub fn embed(&self, x: &[F]) -> Result<Vec<F>> {
        contract!(x.len() == self.spec.input_dim, "input has length {}, expected {}", x.len(), self.spec.input_dim);
        let last = self.layers.len() - 1;
        let mut h = x.to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(&h);
            if i < last {
                relu_in_place(&mut h);
            }
        }
        Ok(h)
    }

    /// Softmax outputs of the unlabeled head for an embedding.
    pub fn unlabeled_probs(&self, z: &[F]) -> Result<Vec<F>> {
        softmax(&self.head_u.forward(z))
    }

    pub fn forward(&self, x: &[F]) -> Result<Forward<F>> {
        contract!(x.len() == self.spec.input_dim, "input has length {}, expected {}", x.len(), self.spec.input_dim);
        let last = self.layers.len() - 1;
        let mut layer_inputs = Vec::with_capacity(self.layers.len());
        let mut h = x.to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut out = layer.forward(&h);
            if i < last {
                relu_in_place(&mut out);
            }
            layer_inputs.push(std::mem::replace(&mut h, out));
        }
        let z = h;
        let p_l = softmax(&self.head_l.forward(&z))?;
        let p_u = softmax(&self.head_u.forward(&z))?;
        let tape = Tape { version: self.version, layer_inputs, z: z.clone(), p_l: p_l.clone(), p_u: p_u.clone() };
        Ok(Forward { z, p_l, p_u, tape })
    }

    /// Adds the chain-rule contribution of `up` to every trainable gradient buffer.
    pub fn backward(&mut self, tape: &Tape<F>, up: &Upstream<F>) -> Result<()> {
        contract!(tape.version == self.version, "stale tape: parameters changed since the forward pass");
        contract!(
            up.d_z.len() == self.spec.embed_dim
                && up.d_p_l.len() == self.labeled_classes()
                && up.d_logits_l.len() == self.labeled_classes()
                && up.d_p_u.len() == self.unlabeled_classes()
                && up.d_logits_u.len() == self.unlabeled_classes(),
            "upstream gradient shapes do not match the model"
        );

        let mut g_l = softmax_vjp(&tape.p_l, &up.d_p_l);
        add_assign(&mut g_l, &up.d_logits_l);
        let mut g_u = softmax_vjp(&tape.p_u, &up.d_p_u);
        add_assign(&mut g_u, &up.d_logits_u);

        let mut g = up.d_z.clone();
        add_assign(&mut g, &self.head_l.backward(&tape.z, &g_l, true));
        add_assign(&mut g, &self.head_u.backward(&tape.z, &g_u, true));

        for i in (self.frozen_prefix..self.layers.len()).rev() {
            let input = &tape.layer_inputs[i];
            let g_in = self.layers[i].backward(input, &g, true);
            if i == 0 || i == self.frozen_prefix {
                break;
            }
            // `input` is the rectified output of layer i - 1.
            g = g_in.into_iter().zip(input).map(|(d, &a)| if a > F::zero() { d } else { F::zero() }).collect();
        }
        Ok(())
    }

    /// Masks the first `n_layers` encoder layers from updates. At least the
    /// last encoder layer stays trainable.
    pub fn freeze_prefix(&mut self, n_layers: usize) -> Result<()> {
        contract!(
            n_layers < self.layers.len(),
            "can freeze at most {} of {} encoder layers, got {n_layers}",
            self.layers.len() - 1,
            self.layers.len()
        );
        self.frozen_prefix = n_layers;
        Ok(())
    }

    pub fn is_layer_frozen(&self, i: usize) -> bool {
        i < self.frozen_prefix
    }

    pub fn to_checkpoint(&self) -> Checkpoint<F> {
        Checkpoint {
            encoder: self.spec.clone(),
            labeled_classes: self.labeled_classes(),
            unlabeled_classes: self.unlabeled_classes(),
            seed: self.seed,
            frozen_prefix: self.frozen_prefix,
            layers: self.layers.iter().map(LayerParams::from_linear).collect(),
            head_l: LayerParams::from_linear(&self.head_l),
            head_u: LayerParams::from_linear(&self.head_u),
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint<F>) -> Result<Self> {
        ck.encoder.validate()?;
        let dims = ck.encoder.layer_dims();
        contract!(ck.layers.len() == dims.len(), "checkpoint has {} layers, spec needs {}", ck.layers.len(), dims.len());
        let mut layers = Vec::with_capacity(dims.len());
        for (lp, (o, i)) in ck.layers.iter().zip(dims) {
            contract!(lp.rows == o && lp.cols == i, "checkpoint layer shape {}x{} != {o}x{i}", lp.rows, lp.cols);
            layers.push(lp.to_linear()?);
        }
        let head_l = ck.head_l.to_linear()?;
        let head_u = ck.head_u.to_linear()?;
        contract!(
            head_l.in_dim() == ck.encoder.embed_dim
                && head_u.in_dim() == ck.encoder.embed_dim
                && head_l.out_dim() == ck.labeled_classes
                && head_u.out_dim() == ck.unlabeled_classes,
            "checkpoint head shapes do not match"
        );
        let mut ms = Self {
            spec: ck.encoder.clone(),
            layers,
            head_l,
            head_u,
            frozen_prefix: 0,
            seed: ck.seed,
            version: 0,
        };
        ms.freeze_prefix(ck.frozen_prefix)?;
        Ok(ms)
    }
}

impl<F: Scalar + Serialize + DeserializeOwned> ModelState<F> {
    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        let file = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer(file, &self.to_checkpoint())?;
        Ok(())
    }

    pub fn load_checkpoint(path: &Path) -> Result<Self> {
        let file = std::io::BufReader::new(std::fs::File::open(path)?);
        let ck: Checkpoint<F> = serde_json::from_reader(file)?;
        Self::from_checkpoint(&ck)
    }
}

impl<F: Scalar> Parameters<F> for ModelState<F> {
    /// Encoder layers in order, then `head_l`, then `head_u`. Borrowing the
    /// tensors mutably invalidates outstanding tapes.
    fn param_tensors(&mut self) -> Vec<ParamTensor<'_, F>> {
        self.version += 1;
        let frozen = self.frozen_prefix;
        let mut out = Vec::with_capacity(2 * self.layers.len() + 4);
        for (i, layer) in self.layers.iter_mut().enumerate() {
            for mut t in layer.param_tensors() {
                t.trainable = i >= frozen;
                out.push(t);
            }
        }
        out.extend(self.head_l.param_tensors());
        out.extend(self.head_u.param_tensors());
        out
    }
}

/// Serialized form of one affine layer (row-major weights).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerParams<F> {
    pub rows: usize,
    pub cols: usize,
    pub weight: Vec<F>,
    pub bias: Vec<F>,
}

impl<F: Scalar> LayerParams<F> {
    fn from_linear(l: &Linear<F>) -> Self {
        Self { rows: l.out_dim(), cols: l.in_dim(), weight: l.weight.as_slice().to_vec(), bias: l.bias.clone() }
    }

    fn to_linear(&self) -> Result<Linear<F>> {
        Linear::from_parts(Matrix::from_vec(self.rows, self.cols, self.weight.clone())?, self.bias.clone())
    }
}

/// JSON checkpoint: architecture, seed and every parameter array.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint<F> {
    pub encoder: EncoderSpec,
    pub labeled_classes: usize,
    pub unlabeled_classes: usize,
    pub seed: u64,
    pub frozen_prefix: usize,
    pub layers: Vec<LayerParams<F>>,
    pub head_l: LayerParams<F>,
    pub head_u: LayerParams<F>,
}

/// Optimizer hyperparameters with a step-decay schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SgdConfig {
    pub lr: f64,
    pub momentum: f64,
    /// Epochs at which the learning rate is multiplied by `decay`.
    #[serde(default)]
    pub milestones: Vec<usize>,
    #[serde(default = "default_decay")]
    pub decay: f64,
}

fn default_decay() -> f64 {
    0.1
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self { lr: 0.1, momentum: 0.9, milestones: Vec::new(), decay: 0.1 }
    }
}

/// SGD with heavy-ball momentum: `v ← m·v + g`, `p ← p − lr·v`.
#[derive(Debug, Clone)]
pub struct OptimizerState<F> {
    base_lr: F,
    lr: F,
    momentum: F,
    milestones: Vec<usize>,
    decay: F,
    velocities: Vec<Vec<F>>,
}

impl<F: Scalar> OptimizerState<F> {
    pub fn new(cfg: &SgdConfig) -> Result<Self> {
        contract!(cfg.lr > 0.0 && cfg.lr.is_finite(), "learning rate must be positive");
        contract!((0.0..1.0).contains(&cfg.momentum), "momentum must lie in [0, 1)");
        contract!(cfg.decay > 0.0, "decay factor must be positive");
        Ok(Self {
            base_lr: F::lit(cfg.lr),
            lr: F::lit(cfg.lr),
            momentum: F::lit(cfg.momentum),
            milestones: cfg.milestones.clone(),
            decay: F::lit(cfg.decay),
            velocities: Vec::new(),
        })
    }

    pub fn learning_rate(&self) -> F {
        self.lr
    }

    /// Applies every milestone `≤ epoch`.
    pub fn set_epoch(&mut self, epoch: usize) {
        let passed = self.milestones.iter().filter(|&&m| m <= epoch).count();
        self.lr = self.base_lr * self.decay.powi(passed as i32);
    }

    /// Updates trainable tensors and clears every gradient buffer.
    pub fn sgd_step<P: Parameters<F> + ?Sized>(&mut self, params: &mut P) -> Result<()> {
        let tensors = params.param_tensors();
        if self.velocities.is_empty() {
            self.velocities = tensors.iter().map(|t| vec![F::zero(); t.values.len()]).collect();
        }
        contract!(
            self.velocities.len() == tensors.len()
                && self.velocities.iter().zip(&tensors).all(|(v, t)| v.len() == t.values.len()),
            "optimizer velocities do not match parameter shapes"
        );
        for (t, v) in tensors.into_iter().zip(&mut self.velocities) {
            if t.trainable {
                for ((p, g), vel) in t.values.iter_mut().zip(t.grads.iter()).zip(v.iter_mut()) {
                    *vel = self.momentum * *vel + *g;
                    *p -= self.lr * *vel;
                }
            }
            t.grads.fill(F::zero());
        }
        Ok(())
    }
}

fn relu_in_place<F: Scalar>(v: &mut [F]) {
    for x in v {
        if *x < F::zero() {
            *x = F::zero();
        }
    }
}

fn add_assign<F: Scalar>(a: &mut [F], b: &[F]) {
    for (x, &y) in a.iter_mut().zip(b) {
        *x += y;
    }
}
