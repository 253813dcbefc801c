//! The PRISM network.
//!
//! An MLP encoder produces penultimate features `h`, a linear projection
//! head lifts them to `M * K` dimensions, blockwise softmax turns each
//! `K`-block into one pseudo-label probability vector, and the learnable
//! correction matrices `B_m` recombine the blocks (weighted by the mixture
//! `d`) into the class posterior estimate.

use crate::error::{Error, Result};
use crate::numerics::{
    blockwise_softmax, column_stochastic_from_logits, softmax_unchecked, Matrix, ProbVector,
};
use crate::rng::SplitMix64;

/// Diagonal logit used to initialize the correction matrices near identity.
/// Softmax can never produce an exact identity matrix, so "identity
/// initialization" means a strongly diagonal column-stochastic matrix.
pub const IDENTITY_LOGIT: f64 = 4.0;

/// Network dimensions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelDims {
    /// Input feature dimension `D`.
    pub input: usize,
    /// Hidden layer widths of the encoder.
    pub hidden: Vec<usize>,
    /// Penultimate feature dimension `L`.
    pub penultimate: usize,
    /// Number of pseudo labels `M`.
    pub pseudo_labels: usize,
    /// Number of classes `K`.
    pub classes: usize,
}

impl ModelDims {
    pub fn projected(&self) -> usize {
        self.pseudo_labels * self.classes
    }
}

/// Initialization variants for the correction matrices and mixture weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InitVariant {
    /// `B_m` near identity, `d` uniform, both learnable. The default.
    #[default]
    IdentityBUniformD,
    /// `B_m` near identity, `d` randomly initialized, both learnable.
    IdentityBLearnableD,
    /// Random `B_m` logits, random `d`, both learnable.
    RandomBLearnableD,
    /// `B_m` near identity, `d` frozen at uniform.
    IdentityBFixedD,
    /// `B_m` near identity, `d` produced per sample by a linear head on the
    /// penultimate features.
    LinearD,
}

impl InitVariant {
    pub fn as_str(&self) -> &'static str {
        match self {
            InitVariant::IdentityBUniformD => "identity_B_uniform_d",
            InitVariant::IdentityBLearnableD => "identity_B_learnable_d",
            InitVariant::RandomBLearnableD => "random_B_learnable_d",
            InitVariant::IdentityBFixedD => "identity_B_fixed_d",
            InitVariant::LinearD => "linear_d",
        }
    }

    #[allow(clippy::should_implement_trait)]
    pub fn from_str(s: &str) -> Option<Self> {
        match s {
            "identity_B_uniform_d" => Some(InitVariant::IdentityBUniformD),
            "identity_B_learnable_d" => Some(InitVariant::IdentityBLearnableD),
            "random_B_learnable_d" => Some(InitVariant::RandomBLearnableD),
            "identity_B_fixed_d" => Some(InitVariant::IdentityBFixedD),
            "linear_d" => Some(InitVariant::LinearD),
            _ => None,
        }
    }

    /// Numeric code used in checkpoints.
    pub fn code(&self) -> u8 {
        match self {
            InitVariant::IdentityBUniformD => 0,
            InitVariant::IdentityBLearnableD => 1,
            InitVariant::RandomBLearnableD => 2,
            InitVariant::IdentityBFixedD => 3,
            InitVariant::LinearD => 4,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(InitVariant::IdentityBUniformD),
            1 => Some(InitVariant::IdentityBLearnableD),
            2 => Some(InitVariant::RandomBLearnableD),
            3 => Some(InitVariant::IdentityBFixedD),
            4 => Some(InitVariant::LinearD),
            _ => None,
        }
    }
}

/// One affine layer `y = W x + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Affine {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl Affine {
    /// Weight entries uniform in `(-1/sqrt(fan_in), 1/sqrt(fan_in))`, zero bias.
    fn init(out_dim: usize, in_dim: usize, rng: &mut SplitMix64) -> Self {
        let bound = 1.0 / (in_dim as f64).sqrt();
        let mut weight = Matrix::zeros(out_dim, in_dim);
        for i in 0..out_dim {
            for j in 0..in_dim {
                weight[(i, j)] = rng.uniform(-bound, bound);
            }
        }
        Self {
            weight,
            bias: vec![0.0; out_dim],
        }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut y = self.weight.matvec(x);
        for (yi, b) in y.iter_mut().zip(&self.bias) {
            *yi += b;
        }
        y
    }

    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }
}

/// Output of a full forward pass.
#[derive(Debug, Clone)]
pub struct ForwardOutput {
    /// Penultimate features `h(x)`, length `L`.
    pub h: Vec<f64>,
    /// Concatenated pseudo-label probability blocks, length `M * K`.
    pub p: Vec<f64>,
    /// Class posterior estimate, on the `K`-simplex.
    pub f_hat: ProbVector,
}

/// The PRISM model: encoder, projection head, correction-matrix logits, and
/// mixture logits.
#[derive(Debug, Clone, PartialEq)]
pub struct PrismModel {
    dims: ModelDims,
    /// Encoder layers `D -> hidden... -> L`; ReLU after every layer except
    /// the last (the penultimate features are linear).
    pub encoder: Vec<Affine>,
    /// Projection head `L -> M * K`.
    pub head: Affine,
    /// Unconstrained logits; `B_m` = column softmax of `confusion_logits[m]`.
    pub confusion_logits: Vec<Matrix>,
    /// Unconstrained logits; `d` = softmax of `mixture_logits`.
    pub mixture_logits: Vec<f64>,
    /// Per-sample mixture head (`linear_d` variant only).
    pub d_head: Option<Affine>,
    /// Whether the mixture logits receive gradient updates.
    pub d_trainable: bool,
    variant: InitVariant,
}

impl PrismModel {
    /// Builds and initializes a model from a seeded generator.
    pub fn new(dims: ModelDims, variant: InitVariant, seed: u64) -> Self {
        let mut rng = SplitMix64::new(seed);
        let mut encoder = Vec::with_capacity(dims.hidden.len() + 1);
        let mut in_dim = dims.input;
        for &out_dim in &dims.hidden {
            encoder.push(Affine::init(out_dim, in_dim, &mut rng));
            in_dim = out_dim;
        }
        encoder.push(Affine::init(dims.penultimate, in_dim, &mut rng));
        let head = Affine::init(dims.projected(), dims.penultimate, &mut rng);

        let k = dims.classes;
        let confusion_logits = (0..dims.pseudo_labels)
            .map(|_| {
                let mut theta = Matrix::zeros(k, k);
                match variant {
                    InitVariant::RandomBLearnableD => {
                        for i in 0..k {
                            for j in 0..k {
                                theta[(i, j)] = rng.uniform(-1.0, 1.0);
                            }
                        }
                    }
                    _ => {
                        for i in 0..k {
                            theta[(i, i)] = IDENTITY_LOGIT;
                        }
                    }
                }
                theta
            })
            .collect();

        let m = dims.pseudo_labels;
        let mixture_logits = match variant {
            InitVariant::IdentityBLearnableD | InitVariant::RandomBLearnableD => {
                (0..m).map(|_| rng.uniform(-1.0, 1.0)).collect()
            }
            _ => vec![0.0; m],
        };
        let d_head = match variant {
            InitVariant::LinearD => Some(Affine::init(m, dims.penultimate, &mut rng)),
            _ => None,
        };
        let d_trainable = !matches!(variant, InitVariant::IdentityBFixedD | InitVariant::LinearD);

        Self {
            dims,
            encoder,
            head,
            confusion_logits,
            mixture_logits,
            d_head,
            d_trainable,
            variant,
        }
    }

    /// Reassembles a model from its parts (checkpoint loading).
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        dims: ModelDims,
        encoder: Vec<Affine>,
        head: Affine,
        confusion_logits: Vec<Matrix>,
        mixture_logits: Vec<f64>,
        d_head: Option<Affine>,
        d_trainable: bool,
        variant: InitVariant,
    ) -> Self {
        Self {
            dims,
            encoder,
            head,
            confusion_logits,
            mixture_logits,
            d_head,
            d_trainable,
            variant,
        }
    }

    pub fn dims(&self) -> &ModelDims {
        &self.dims
    }

    pub fn variant(&self) -> InitVariant {
        self.variant
    }

    /// Penultimate features: affine layers with ReLU between them, final
    /// layer linear.
    pub fn encode(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dims.input {
            return Err(Error::Dimension {
                label: "encoder input",
                expected: self.dims.input,
                got: x.len(),
            });
        }
        let last = self.encoder.len() - 1;
        let mut activ = x.to_vec();
        for (idx, layer) in self.encoder.iter().enumerate() {
            activ = layer.forward(&activ);
            if idx != last {
                for a in activ.iter_mut() {
                    if *a < 0.0 {
                        *a = 0.0;
                    }
                }
            }
        }
        Ok(activ)
    }

    /// Projection head `z(h)`, a single affine map to `M * K` dimensions.
    pub fn project(&self, h: &[f64]) -> Result<Vec<f64>> {
        if h.len() != self.dims.penultimate {
            return Err(Error::Dimension {
                label: "projection input",
                expected: self.dims.penultimate,
                got: h.len(),
            });
        }
        Ok(self.head.forward(h))
    }

    /// Blockwise softmax over the projected representation.
    pub fn pseudo_label_probs(&self, tilde_h: &[f64]) -> Result<Vec<f64>> {
        blockwise_softmax(tilde_h, self.dims.pseudo_labels, self.dims.classes)
    }

    /// Current column-stochastic correction matrices.
    pub fn confusion_matrices(&self) -> Result<Vec<Matrix>> {
        self.confusion_logits
            .iter()
            .map(column_stochastic_from_logits)
            .collect()
    }

    /// Current mixture weights. For the `linear_d` variant the weights are a
    /// function of the penultimate features, so `h` must be supplied.
    pub fn mixture_weights(&self, h: Option<&[f64]>) -> Result<Vec<f64>> {
        match (&self.d_head, h) {
            (Some(d_head), Some(h)) => softmax_unchecked(&d_head.forward(h)),
            (Some(_), None) => Err(Error::DegenerateInput(
                "linear_d mixture weights need penultimate features",
            )),
            (None, _) => softmax_unchecked(&self.mixture_logits),
        }
    }

    /// Full forward pass.
    pub fn forward(&self, x: &[f64]) -> Result<ForwardOutput> {
        let h = self.encode(x)?;
        let p = self.pseudo_label_probs(&self.project(&h)?)?;
        let b = self.confusion_matrices()?;
        let d = self.mixture_weights(Some(&h))?;
        let f_hat = recombine(&b, &d, &p)?;
        Ok(ForwardOutput { h, p, f_hat })
    }

    /// Argmax class prediction, ties broken by the lowest class index.
    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        let out = self.forward(x)?;
        Ok(argmax(out.f_hat.as_slice()))
    }

    /// Named, flattened views of every parameter group.
    pub fn param_groups(&self) -> Vec<(String, &[f64])> {
        let mut groups = Vec::new();
        for (i, layer) in self.encoder.iter().enumerate() {
            groups.push((format!("encoder.{i}.w"), layer.weight.as_slice()));
            groups.push((format!("encoder.{i}.b"), layer.bias.as_slice()));
        }
        groups.push(("head.w".to_string(), self.head.weight.as_slice()));
        groups.push(("head.b".to_string(), self.head.bias.as_slice()));
        for (m, theta) in self.confusion_logits.iter().enumerate() {
            groups.push((format!("confusion.{m}"), theta.as_slice()));
        }
        groups.push(("mixture".to_string(), self.mixture_logits.as_slice()));
        if let Some(d_head) = &self.d_head {
            groups.push(("dhead.w".to_string(), d_head.weight.as_slice()));
            groups.push(("dhead.b".to_string(), d_head.bias.as_slice()));
        }
        groups
    }

    /// Mutable counterpart of [`param_groups`](Self::param_groups); group
    /// order is identical.
    pub fn param_groups_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut groups: Vec<(String, &mut [f64])> = Vec::new();
        for (i, layer) in self.encoder.iter_mut().enumerate() {
            groups.push((format!("encoder.{i}.w"), layer.weight.as_mut_slice()));
            groups.push((format!("encoder.{i}.b"), layer.bias.as_mut_slice()));
        }
        groups.push(("head.w".to_string(), self.head.weight.as_mut_slice()));
        groups.push(("head.b".to_string(), self.head.bias.as_mut_slice()));
        for (m, theta) in self.confusion_logits.iter_mut().enumerate() {
            groups.push((format!("confusion.{m}"), theta.as_mut_slice()));
        }
        groups.push(("mixture".to_string(), self.mixture_logits.as_mut_slice()));
        if let Some(d_head) = &mut self.d_head {
            groups.push(("dhead.w".to_string(), d_head.weight.as_mut_slice()));
            groups.push(("dhead.b".to_string(), d_head.bias.as_mut_slice()));
        }
        groups
    }
}

/// Recombines pseudo-label blocks into a class posterior:
/// `f_hat = sum_m d_m B_m p_m`.
///
/// This is also the raw-matrix path: passing the exact inverses of the
/// generative confusion matrices (which may have negative entries, so they
/// are not expressible through the softmax parameterization) together with
/// blocks `p_m = A_m f` recovers `f` for any mixture on the simplex.
pub fn recombine(b_list: &[Matrix], d: &[f64], p: &[f64]) -> Result<ProbVector> {
    if b_list.is_empty() {
        return Err(Error::EmptyInput("recombination matrices"));
    }
    let m = b_list.len();
    let k = b_list[0].rows();
    if d.len() != m {
        return Err(Error::Dimension {
            label: "mixture weights",
            expected: m,
            got: d.len(),
        });
    }
    if p.len() != m * k {
        return Err(Error::Dimension {
            label: "stacked pseudo-label vector",
            expected: m * k,
            got: p.len(),
        });
    }
    let mut f_hat = vec![0.0; k];
    for (idx, b) in b_list.iter().enumerate() {
        if b.rows() != k || b.cols() != k {
            return Err(Error::Dimension {
                label: "recombination matrix",
                expected: k,
                got: b.rows(),
            });
        }
        let block = &p[idx * k..(idx + 1) * k];
        let bp = b.matvec(block);
        for (f, v) in f_hat.iter_mut().zip(&bp) {
            *f += d[idx] * v;
        }
    }
    ProbVector::new(f_hat)
}

/// Index of the largest entry, ties broken by the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}
