//! The CRATE architecture and its ablation variants.
//!
//! Tokens are stored as d × (N+1) matrices: column 0 is the class token,
//! columns 1..=N are patch tokens in row-major grid order.

pub mod attention;
pub mod embed;
pub mod ista;
pub mod layer;
pub mod mlp;
pub mod norm;

use ndarray::{Array1, Array2, Array3, ArrayViewD, ArrayViewMutD, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::config::{MlpVariant, ModelConfig};
use crate::error::{Error, Result};

pub use attention::{mhsa_forward, mssa_forward, softmax_rows, AttentionBlock, Projections};
pub use embed::{embed, patchify, PatchEmbedding};
pub use ista::ista_forward;
pub use layer::{crate_layer_forward, FeedForward, LayerParams, LayerTrace};
pub use mlp::{gelu, mlp_forward, MlpParams};
pub use norm::{layer_norm, LayerNormParams, LN_EPS};

/// d × (N+1) token representation; column 0 is the class token.
pub type TokenMatrix = Array2<f64>;

/// Standard deviation of the class token and positional encoding at init.
pub const EMBED_INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, PartialEq)]
pub struct CrateModel {
    pub config: ModelConfig,
    pub embedding: PatchEmbedding,
    pub layers: Vec<LayerParams>,
    /// Classifier W_head, C_cls × d, applied to the final class token.
    pub head: Array2<f64>,
}

/// Every intermediate representation of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// Z^1 … Z^{L+1}.
    pub inputs: Vec<TokenMatrix>,
    /// Per-layer normalized inputs, Z^{ℓ+1/2} and attention matrices.
    pub layers: Vec<LayerTrace>,
}

impl ForwardTrace {
    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    /// Trace of layer `l` (1-based).
    pub fn layer(&self, l: usize) -> Result<&LayerTrace> {
        if l == 0 || l > self.layers.len() {
            return Err(Error::config(format!("layer {l} out of range 1..={}", self.layers.len())));
        }
        Ok(&self.layers[l - 1])
    }
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    /// Z^{L+1}.
    pub tokens: TokenMatrix,
    pub logits: Array1<f64>,
    pub trace: Option<ForwardTrace>,
}

/// Parameter families, used for weight-decay policy and gradient reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamGroup {
    PatchProjection,
    ClassToken,
    Position,
    Subspace,
    QueryKeyValue,
    OutProjection,
    LayerNorm,
    Dictionary,
    Mlp,
    Head,
}

impl ParamGroup {
    pub fn name(self) -> &'static str {
        match self {
            ParamGroup::PatchProjection => "patch_projection",
            ParamGroup::ClassToken => "class_token",
            ParamGroup::Position => "position",
            ParamGroup::Subspace => "subspace",
            ParamGroup::QueryKeyValue => "query_key_value",
            ParamGroup::OutProjection => "out_projection",
            ParamGroup::LayerNorm => "layer_norm",
            ParamGroup::Dictionary => "dictionary",
            ParamGroup::Mlp => "mlp",
            ParamGroup::Head => "head",
        }
    }

    /// LayerNorm parameters, the class token and positional encodings are
    /// not decayed.
    pub fn decays(self) -> bool {
        !matches!(self, ParamGroup::LayerNorm | ParamGroup::ClassToken | ParamGroup::Position)
    }
}

pub struct Param<'a> {
    pub name: String,
    pub group: ParamGroup,
    pub values: ArrayViewD<'a, f64>,
}

pub struct ParamMut<'a> {
    pub name: String,
    pub group: ParamGroup,
    pub values: ArrayViewMutD<'a, f64>,
}

macro_rules! collect_params {
    ($model:expr, $view:ident, $ty:ident $(, $m:tt)?) => {{
        let model = $model;
        let mut out = Vec::new();
        let mut push = |name: String, group: ParamGroup, values| out.push($ty { name, group, values });
        push("embed.projection".into(), ParamGroup::PatchProjection, model.embedding.projection.$view().into_dyn());
        push("embed.class_token".into(), ParamGroup::ClassToken, model.embedding.class_token.$view().into_dyn());
        push("embed.pos".into(), ParamGroup::Position, model.embedding.pos.$view().into_dyn());
        for (l, layer) in (& $($m)? model.layers).into_iter().enumerate() {
            let pre = format!("layers.{l}");
            push(format!("{pre}.ln1.gamma"), ParamGroup::LayerNorm, layer.ln1.gamma.$view().into_dyn());
            push(format!("{pre}.ln1.beta"), ParamGroup::LayerNorm, layer.ln1.beta.$view().into_dyn());
            match & $($m)? layer.attn.proj {
                Projections::Subspace { u } => push(format!("{pre}.attn.u"), ParamGroup::Subspace, u.$view().into_dyn()),
                Projections::Standard { w_q, w_k, w_v } => {
                    push(format!("{pre}.attn.w_q"), ParamGroup::QueryKeyValue, w_q.$view().into_dyn());
                    push(format!("{pre}.attn.w_k"), ParamGroup::QueryKeyValue, w_k.$view().into_dyn());
                    push(format!("{pre}.attn.w_v"), ParamGroup::QueryKeyValue, w_v.$view().into_dyn());
                }
            }
            push(format!("{pre}.attn.w_out"), ParamGroup::OutProjection, layer.attn.w_out.$view().into_dyn());
            push(format!("{pre}.attn.b_out"), ParamGroup::OutProjection, layer.attn.b_out.$view().into_dyn());
            push(format!("{pre}.ln2.gamma"), ParamGroup::LayerNorm, layer.ln2.gamma.$view().into_dyn());
            push(format!("{pre}.ln2.beta"), ParamGroup::LayerNorm, layer.ln2.beta.$view().into_dyn());
            match & $($m)? layer.ff {
                FeedForward::Ista { dict } => push(format!("{pre}.ista.dict"), ParamGroup::Dictionary, dict.$view().into_dyn()),
                FeedForward::Mlp(p) => {
                    push(format!("{pre}.mlp.w1"), ParamGroup::Mlp, p.w1.$view().into_dyn());
                    push(format!("{pre}.mlp.b1"), ParamGroup::Mlp, p.b1.$view().into_dyn());
                    push(format!("{pre}.mlp.w2"), ParamGroup::Mlp, p.w2.$view().into_dyn());
                    push(format!("{pre}.mlp.b2"), ParamGroup::Mlp, p.b2.$view().into_dyn());
                }
            }
        }
        push("head".into(), ParamGroup::Head, model.head.$view().into_dyn());
        out
    }};
}

fn uniform_fill<R: Rng>(a: &mut [f64], bound: f64, rng: &mut R) {
    for v in a {
        *v = rng.random_range(-bound..bound);
    }
}

impl CrateModel {
    /// All-zero parameters with the layout implied by `config`; also used as
    /// the gradient buffer.
    pub fn zeros(config: &ModelConfig) -> Self {
        CrateModel {
            config: config.clone(),
            embedding: PatchEmbedding::zeros(config),
            layers: (0..config.num_layers).map(|_| LayerParams::zeros(config)).collect(),
            head: Array2::zeros((config.num_classes, config.model_dim)),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(&self.config)
    }

    /// Seeded initialization.
    ///
    /// Linear maps (patch projection, attention projections, output
    /// projection, MLP, head) use uniform(±1/√fan_in) with matching bias
    /// bounds; the ISTA dictionary uses Kaiming-uniform(±√(6/d)); the class
    /// token and positional encodings are N(0, 0.02²); LayerNorm starts at
    /// γ=1, β=0.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut model = Self::zeros(config);
        let d = config.model_dim;
        let inner = config.num_heads * config.head_dim;
        let lin = |fan_in: usize| 1.0 / (fan_in as f64).sqrt();
        let normal = Normal::new(0.0, EMBED_INIT_STD).expect("valid std");

        uniform_fill(model.embedding.projection.as_slice_mut().unwrap(), lin(config.patch_dim()), &mut rng);
        model.embedding.class_token.iter_mut().for_each(|v| *v = normal.sample(&mut rng));
        model.embedding.pos.iter_mut().for_each(|v| *v = normal.sample(&mut rng));

        for layer in &mut model.layers {
            layer.ln1 = LayerNormParams::identity(d);
            layer.ln2 = LayerNormParams::identity(d);
            match &mut layer.attn.proj {
                Projections::Subspace { u } => uniform_fill(u.as_slice_mut().unwrap(), lin(d), &mut rng),
                Projections::Standard { w_q, w_k, w_v } => {
                    for w in [w_q, w_k, w_v] {
                        uniform_fill(w.as_slice_mut().unwrap(), lin(d), &mut rng);
                    }
                }
            }
            uniform_fill(layer.attn.w_out.as_slice_mut().unwrap(), lin(inner), &mut rng);
            uniform_fill(layer.attn.b_out.as_slice_mut().unwrap(), lin(inner), &mut rng);
            match &mut layer.ff {
                FeedForward::Ista { dict } => uniform_fill(dict.as_slice_mut().unwrap(), (6.0 / d as f64).sqrt(), &mut rng),
                FeedForward::Mlp(p) => {
                    let hidden = config.mlp_hidden;
                    uniform_fill(p.w1.as_slice_mut().unwrap(), lin(d), &mut rng);
                    uniform_fill(p.b1.as_slice_mut().unwrap(), lin(d), &mut rng);
                    uniform_fill(p.w2.as_slice_mut().unwrap(), lin(hidden), &mut rng);
                    uniform_fill(p.b2.as_slice_mut().unwrap(), lin(hidden), &mut rng);
                }
            }
        }
        uniform_fill(model.head.as_slice_mut().unwrap(), lin(d), &mut rng);
        Ok(model)
    }

    /// Named views of every parameter tensor in a fixed order.
    pub fn params(&self) -> Vec<Param<'_>> {
        collect_params!(self, view, Param)
    }

    pub fn params_mut(&mut self) -> Vec<ParamMut<'_>> {
        collect_params!(self, view_mut, ParamMut, mut)
    }

    pub fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.values.len()).sum()
    }

    /// self += scale · other (same layout).
    pub fn add_scaled(&mut self, other: &CrateModel, scale: f64) {
        for (mut a, b) in self.params_mut().into_iter().zip(other.params()) {
            Zip::from(&mut a.values).and(&b.values).for_each(|x, &y| *x += scale * y);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for mut p in self.params_mut() {
            p.values.mapv_inplace(|x| x * factor);
        }
    }

    /// Name of the first parameter group holding a non-finite value.
    pub fn first_non_finite(&self) -> Option<String> {
        self.params()
            .into_iter()
            .find(|p| p.values.iter().any(|v| !v.is_finite()))
            .map(|p| format!("{} ({})", p.name, p.group.name()))
    }

    pub fn logits(&self, tokens: &TokenMatrix) -> Array1<f64> {
        self.head.dot(&tokens.column(0))
    }

    pub fn forward_image(&self, image: &Array3<f64>, want_trace: bool) -> Result<ForwardOutput> {
        let patches = patchify(image, &self.config)?;
        self.forward_patches(&patches, want_trace)
    }

    pub fn forward_patches(&self, patches: &Array2<f64>, want_trace: bool) -> Result<ForwardOutput> {
        if patches.dim() != (self.config.patch_dim(), self.config.num_patches()) {
            return Err(Error::config(format!(
                "patch matrix is {:?}, model expects {:?}",
                patches.dim(),
                (self.config.patch_dim(), self.config.num_patches())
            )));
        }
        let z1 = embed(patches, &self.embedding)?;
        self.forward_tokens(&z1, want_trace)
    }

    /// Runs the L layers on an already embedded Z^1.
    pub fn forward_tokens(&self, z1: &TokenMatrix, want_trace: bool) -> Result<ForwardOutput> {
        if z1.nrows() != self.config.model_dim {
            return Err(Error::config(format!("tokens have {} rows, model_dim is {}", z1.nrows(), self.config.model_dim)));
        }
        let mut inputs = Vec::new();
        let mut layers = Vec::new();
        let mut z = z1.clone();
        for layer in &self.layers {
            let (next, trace) = crate_layer_forward(&z, layer, &self.config)?;
            if want_trace {
                inputs.push(std::mem::replace(&mut z, next));
                layers.push(trace);
            } else {
                z = next;
            }
        }
        let logits = self.logits(&z);
        let trace = want_trace.then(|| {
            inputs.push(z.clone());
            ForwardTrace { inputs, layers }
        });
        Ok(ForwardOutput { tokens: z, logits, trace })
    }

    pub(crate) fn forward_cached(&self, patches: &Array2<f64>) -> Result<ModelCache> {
        let z1 = embed(patches, &self.embedding)?;
        let mut layers = Vec::with_capacity(self.layers.len());
        let mut z = z1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (next, cache) = layer::layer_cached(&z, layer, &self.config)?;
            inputs.push(std::mem::replace(&mut z, next));
            layers.push(cache);
        }
        let logits = self.logits(&z);
        Ok(ModelCache { patches: patches.clone(), layers, tokens: z, logits })
    }

    /// Accumulates dL/dθ into `grad` given dL/dlogits.
    pub(crate) fn backward(&self, cache: &ModelCache, dlogits: &Array1<f64>, grad: &mut CrateModel) {
        let cls = cache.tokens.column(0);
        for (mut row, &dl) in grad.head.rows_mut().into_iter().zip(dlogits.iter()) {
            row.scaled_add(dl, &cls);
        }
        let mut dz = Array2::zeros(cache.tokens.dim());
        dz.column_mut(0).assign(&self.head.t().dot(dlogits));
        for ((layer, lc), gl) in self.layers.iter().zip(&cache.layers).zip(grad.layers.iter_mut()).rev() {
            dz = layer::layer_backward(&dz, layer, lc, &self.config, gl);
        }
        embed::embed_backward(&dz, &cache.patches, &mut grad.embedding);
    }

    pub fn has_ista(&self) -> bool {
        self.config.mlp == MlpVariant::Ista
    }
}

pub(crate) struct ModelCache {
    patches: Array2<f64>,
    layers: Vec<layer::LayerCache>,
    tokens: TokenMatrix,
    pub logits: Array1<f64>,
}
