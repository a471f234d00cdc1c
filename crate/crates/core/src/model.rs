//! Encoder trunk, contrastive projection head, variational posterior heads,
//! and decoder, together with initialization and checkpointing.
//!
//! All building blocks are plain linear layers with ReLU between them and a
//! linear final layer. The trunk output feeds three consumers: the
//! projection head (contrastive branch), the mu/logvar heads (variational
//! branch), and, at evaluation time, the linear probe.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::autodiff::{matmul, AutodiffError, Tape, Tensor, ValueId};
use crate::rng::{stream_rng, Stream};

use rand::Rng;

const CHECKPOINT_MAGIC: &[u8; 8] = b"TSSLCKP1";

/// Bound applied to the raw log-variance head output before it is used;
/// keeps `exp` in a safe range.
pub const LOGVAR_CLAMP: f64 = 10.0;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid dims: {0}")]
    InvalidDims(String),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),
}

/// One affine layer: `y = x @ weights + bias`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearParams {
    /// Shape `[in_dim, out_dim]`.
    pub weights: Tensor,
    /// Shape `[out_dim]`.
    pub bias: Tensor,
}

impl LinearParams {
    pub fn new(weights: Tensor, bias: Tensor) -> Result<Self, ModelError> {
        if weights.shape().len() != 2 || bias.shape().len() != 1 || weights.shape()[1] != bias.shape()[0] {
            return Err(ModelError::InvalidDims(format!(
                "linear layer needs weights [in,out] and bias [out], got {:?} and {:?}",
                weights.shape(),
                bias.shape()
            )));
        }
        Ok(LinearParams { weights, bias })
    }

    pub fn in_dim(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn out_dim(&self) -> usize {
        self.weights.shape()[1]
    }

    /// Square identity layer, useful in tests.
    pub fn identity(n: usize) -> Self {
        let mut w = vec![0.0; n * n];
        for i in 0..n {
            w[i * n + i] = 1.0;
        }
        LinearParams {
            weights: Tensor::with_grad(&[n, n], w).expect("finite"),
            bias: Tensor::zeros_with_grad(&[n]),
        }
    }

    /// Tape-free forward pass on a row batch.
    fn forward_raw(&self, x: &Tensor) -> Tensor {
        let (rows, cols) = (x.n_rows(), x.n_cols());
        let out_dim = self.out_dim();
        let mut values = matmul(x.values(), self.weights.values(), rows, cols, out_dim);
        for r in 0..rows {
            for (v, b) in values[r * out_dim..(r + 1) * out_dim].iter_mut().zip(self.bias.values()) {
                *v += b;
            }
        }
        Tensor::new(&[rows, out_dim], values).expect("finite forward")
    }
}

/// Architecture description shared by every component.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelDims {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub latent_dim: usize,
    pub projection_dim: usize,
}

impl Default for ModelDims {
    fn default() -> Self {
        ModelDims {
            input_dim: 16,
            hidden_dims: vec![128, 64],
            latent_dim: 16,
            projection_dim: 32,
        }
    }
}

impl ModelDims {
    pub fn validate(&self) -> Result<(), ModelError> {
        let ok = self.input_dim >= 1
            && self.latent_dim >= 1
            && self.projection_dim >= 1
            && self.hidden_dims.iter().all(|&d| d >= 1);
        if ok {
            Ok(())
        } else {
            Err(ModelError::InvalidDims(format!("{self:?}")))
        }
    }

    /// Width of the trunk output (the representation the probe consumes).
    pub fn trunk_out(&self) -> usize {
        self.hidden_dims.last().copied().unwrap_or(self.input_dim)
    }
}

/// Tape handles for one registered layer.
#[derive(Debug, Clone, Copy)]
pub struct LinearVars {
    pub weights: ValueId,
    pub bias: ValueId,
}

/// Tape handles for the parts of the bundle participating in one step.
#[derive(Debug, Clone)]
pub struct BundleVars {
    pub trunk: Vec<LinearVars>,
    pub projection: Option<Vec<LinearVars>>,
    pub mu_head: Option<LinearVars>,
    pub logvar_head: Option<LinearVars>,
    pub decoder: Option<Vec<LinearVars>>,
}

/// Which branches of the model take part in a forward/backward pass.
#[derive(Debug, Clone, Copy)]
pub struct ModelParts {
    pub contrastive: bool,
    pub variational: bool,
}

impl ModelParts {
    pub fn all() -> Self {
        ModelParts { contrastive: true, variational: true }
    }
}

/// Every trainable parameter of the pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    pub trunk: Vec<LinearParams>,
    pub projection: Vec<LinearParams>,
    pub mu_head: LinearParams,
    pub logvar_head: LinearParams,
    pub decoder: Vec<LinearParams>,
    pub dims: ModelDims,
}

/// Glorot-uniform weights from the seeded init stream, zero biases.
/// The same `(dims, seed)` always yields a bit-identical bundle.
pub fn init_model(dims: &ModelDims, seed: u64) -> Result<ModelBundle, ModelError> {
    dims.validate()?;
    let mut rng = stream_rng(seed, Stream::Init);
    let mut layer = |fan_in: usize, fan_out: usize| -> LinearParams {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let values: Vec<f64> = (0..fan_in * fan_out)
            .map(|_| (2.0 * rng.random::<f64>() - 1.0) * bound)
            .collect();
        LinearParams {
            weights: Tensor::with_grad(&[fan_in, fan_out], values).expect("finite init"),
            bias: Tensor::zeros_with_grad(&[fan_out]),
        }
    };

    let mut trunk = Vec::new();
    let mut prev = dims.input_dim;
    for &h in &dims.hidden_dims {
        trunk.push(layer(prev, h));
        prev = h;
    }
    let trunk_out = dims.trunk_out();
    let projection = vec![
        layer(trunk_out, dims.projection_dim),
        layer(dims.projection_dim, dims.projection_dim),
    ];
    let mu_head = layer(trunk_out, dims.latent_dim);
    let logvar_head = layer(trunk_out, dims.latent_dim);
    let mut decoder = Vec::new();
    let mut prev = dims.latent_dim;
    for &h in dims.hidden_dims.iter().rev() {
        decoder.push(layer(prev, h));
        prev = h;
    }
    decoder.push(layer(prev, dims.input_dim));

    Ok(ModelBundle { trunk, projection, mu_head, logvar_head, decoder, dims: dims.clone() })
}

impl ModelBundle {
    /// Canonical `(name, tensor)` listing of every parameter. The position
    /// in this list is the parameter's stable slot index, used to key
    /// optimizer state and the checkpoint layout.
    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        fn push_stack<'a>(prefix: &str, layers: &'a [LinearParams], out: &mut Vec<(String, &'a Tensor)>) {
            for (i, l) in layers.iter().enumerate() {
                out.push((format!("{prefix}.{i}.weight"), &l.weights));
                out.push((format!("{prefix}.{i}.bias"), &l.bias));
            }
        }
        let mut out: Vec<(String, &Tensor)> = Vec::new();
        push_stack("trunk", &self.trunk, &mut out);
        push_stack("projection", &self.projection, &mut out);
        out.push(("mu_head.weight".into(), &self.mu_head.weights));
        out.push(("mu_head.bias".into(), &self.mu_head.bias));
        out.push(("logvar_head.weight".into(), &self.logvar_head.weights));
        out.push(("logvar_head.bias".into(), &self.logvar_head.bias));
        push_stack("decoder", &self.decoder, &mut out);
        out
    }

    /// Mutable parameter slots for the participating branches, with their
    /// stable slot indices. Trunk always participates.
    pub fn param_slots_mut(&mut self, parts: ModelParts) -> Vec<(usize, &mut Tensor)> {
        let trunk_n = self.trunk.len() * 2;
        let proj_n = self.projection.len() * 2;
        let mut out: Vec<(usize, &mut Tensor)> = Vec::new();

        let mut slot = 0;
        for l in &mut self.trunk {
            out.push((slot, &mut l.weights));
            out.push((slot + 1, &mut l.bias));
            slot += 2;
        }
        debug_assert_eq!(slot, trunk_n);
        if parts.contrastive {
            for l in &mut self.projection {
                out.push((slot, &mut l.weights));
                out.push((slot + 1, &mut l.bias));
                slot += 2;
            }
        } else {
            slot += proj_n;
        }
        if parts.variational {
            out.push((slot, &mut self.mu_head.weights));
            out.push((slot + 1, &mut self.mu_head.bias));
            out.push((slot + 2, &mut self.logvar_head.weights));
            out.push((slot + 3, &mut self.logvar_head.bias));
            slot += 4;
            for l in &mut self.decoder {
                out.push((slot, &mut l.weights));
                out.push((slot + 1, &mut l.bias));
                slot += 2;
            }
        }
        out
    }

    /// Record the participating parameters as tape leaves.
    pub fn register(&self, tape: &mut Tape, parts: ModelParts) -> BundleVars {
        let reg_stack = |tape: &mut Tape, layers: &[LinearParams]| -> Vec<LinearVars> {
            layers
                .iter()
                .map(|l| LinearVars { weights: tape.leaf(&l.weights), bias: tape.leaf(&l.bias) })
                .collect()
        };
        let trunk = reg_stack(tape, &self.trunk);
        let projection = parts.contrastive.then(|| reg_stack(tape, &self.projection));
        let (mu_head, logvar_head, decoder) = if parts.variational {
            (
                Some(LinearVars {
                    weights: tape.leaf(&self.mu_head.weights),
                    bias: tape.leaf(&self.mu_head.bias),
                }),
                Some(LinearVars {
                    weights: tape.leaf(&self.logvar_head.weights),
                    bias: tape.leaf(&self.logvar_head.bias),
                }),
                Some(reg_stack(tape, &self.decoder)),
            )
        } else {
            (None, None, None)
        };
        BundleVars { trunk, projection, mu_head, logvar_head, decoder }
    }

    /// Pull gradients off the tape into the owned parameter tensors.
    /// Registered parameters the loss did not reach get zero gradients.
    pub fn harvest_grads(&mut self, tape: &Tape, vars: &BundleVars) {
        let parts = ModelParts {
            contrastive: vars.projection.is_some(),
            variational: vars.decoder.is_some(),
        };
        let ids = collect_ids(vars);
        let mut slots = self.param_slots_mut(parts);
        debug_assert_eq!(ids.len(), slots.len());
        for ((_, tensor), id) in slots.iter_mut().zip(ids) {
            let grad = tape
                .grad(id)
                .map(|g| g.to_vec())
                .unwrap_or_else(|| vec![0.0; tensor.numel()]);
            tensor.set_grad(grad);
        }
    }

    /// Trunk forward with no tape: the frozen-feature path.
    pub fn encode_raw(&self, x: &Tensor) -> Result<Tensor, ModelError> {
        if x.n_cols() != self.dims.input_dim {
            return Err(ModelError::Autodiff(AutodiffError::ShapeMismatch(format!(
                "encode expects width {}, got {:?}",
                self.dims.input_dim,
                x.shape()
            ))));
        }
        let mut h = x.clone();
        for (i, layer) in self.trunk.iter().enumerate() {
            h = layer.forward_raw(&h);
            if i + 1 < self.trunk.len() {
                for v in h.values_mut() {
                    *v = v.max(0.0);
                }
            }
        }
        Ok(h)
    }

    // ── checkpointing ───────────────────────────────────────────────────

    /// Write every parameter, bit-exact, with a dims header.
    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(CHECKPOINT_MAGIC)?;
        write_u64(&mut w, self.dims.input_dim as u64)?;
        write_u64(&mut w, self.dims.hidden_dims.len() as u64)?;
        for &h in &self.dims.hidden_dims {
            write_u64(&mut w, h as u64)?;
        }
        write_u64(&mut w, self.dims.latent_dim as u64)?;
        write_u64(&mut w, self.dims.projection_dim as u64)?;

        let params = self.named_params();
        write_u64(&mut w, params.len() as u64)?;
        for (name, tensor) in params {
            let bytes = name.as_bytes();
            write_u64(&mut w, bytes.len() as u64)?;
            w.write_all(bytes)?;
            write_u64(&mut w, tensor.shape().len() as u64)?;
            for &d in tensor.shape() {
                write_u64(&mut w, d as u64)?;
            }
            for &v in tensor.values() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Load a checkpoint written by [`ModelBundle::save`].
    pub fn load(path: &Path) -> Result<ModelBundle, ModelError> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(ModelError::CorruptCheckpoint("bad magic".into()));
        }
        let input_dim = read_u64(&mut r)? as usize;
        let n_hidden = read_u64(&mut r)? as usize;
        if n_hidden > 1024 {
            return Err(ModelError::CorruptCheckpoint("implausible hidden count".into()));
        }
        let mut hidden_dims = Vec::with_capacity(n_hidden);
        for _ in 0..n_hidden {
            hidden_dims.push(read_u64(&mut r)? as usize);
        }
        let latent_dim = read_u64(&mut r)? as usize;
        let projection_dim = read_u64(&mut r)? as usize;
        let dims = ModelDims { input_dim, hidden_dims, latent_dim, projection_dim };

        // Build the structure, then overwrite every tensor from the file.
        let mut bundle = init_model(&dims, 0)?;
        let expected: Vec<String> = bundle.named_params().iter().map(|(n, _)| n.clone()).collect();
        let n_params = read_u64(&mut r)? as usize;
        if n_params != expected.len() {
            return Err(ModelError::CorruptCheckpoint(format!(
                "expected {} params, file has {}",
                expected.len(),
                n_params
            )));
        }
        let all_parts = ModelParts::all();
        let mut slots = bundle.param_slots_mut(all_parts);
        for (i, expected_name) in expected.iter().enumerate() {
            let name_len = read_u64(&mut r)? as usize;
            if name_len > 4096 {
                return Err(ModelError::CorruptCheckpoint("implausible name length".into()));
            }
            let mut name_bytes = vec![0u8; name_len];
            r.read_exact(&mut name_bytes)?;
            let name = String::from_utf8(name_bytes)
                .map_err(|_| ModelError::CorruptCheckpoint("non-utf8 name".into()))?;
            if &name != expected_name {
                return Err(ModelError::CorruptCheckpoint(format!(
                    "param {i}: expected {expected_name}, found {name}"
                )));
            }
            let rank = read_u64(&mut r)? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(read_u64(&mut r)? as usize);
            }
            let tensor = &mut slots[i].1;
            if shape != tensor.shape() {
                return Err(ModelError::CorruptCheckpoint(format!(
                    "param {name}: shape {:?} does not match dims-implied {:?}",
                    shape,
                    tensor.shape()
                )));
            }
            let mut buf = [0u8; 8];
            for v in tensor.values_mut() {
                r.read_exact(&mut buf)?;
                *v = f64::from_le_bytes(buf);
            }
        }
        Ok(bundle)
    }
}

fn collect_ids(vars: &BundleVars) -> Vec<ValueId> {
    let mut ids = Vec::new();
    let push_stack = |layers: &[LinearVars], ids: &mut Vec<ValueId>| {
        for l in layers {
            ids.push(l.weights);
            ids.push(l.bias);
        }
    };
    push_stack(&vars.trunk, &mut ids);
    if let Some(proj) = &vars.projection {
        push_stack(proj, &mut ids);
    }
    if let (Some(mu), Some(lv), Some(dec)) = (&vars.mu_head, &vars.logvar_head, &vars.decoder) {
        ids.push(mu.weights);
        ids.push(mu.bias);
        ids.push(lv.weights);
        ids.push(lv.bias);
        push_stack(dec, &mut ids);
    }
    ids
}

fn write_u64<W: Write>(w: &mut W, v: u64) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64, ModelError> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

// ── tape forward passes ─────────────────────────────────────────────────

fn linear(tape: &mut Tape, layer: &LinearVars, x: ValueId) -> Result<ValueId, ModelError> {
    let mm = tape.matmul(x, layer.weights)?;
    Ok(tape.add(mm, layer.bias)?)
}

fn mlp(tape: &mut Tape, layers: &[LinearVars], x: ValueId) -> Result<ValueId, ModelError> {
    let mut h = x;
    for (i, layer) in layers.iter().enumerate() {
        h = linear(tape, layer, h)?;
        if i + 1 < layers.len() {
            h = tape.relu(h)?;
        }
    }
    Ok(h)
}

/// Trunk forward pass: ReLU between layers, linear output.
pub fn encode(tape: &mut Tape, vars: &BundleVars, x: ValueId) -> Result<ValueId, ModelError> {
    mlp(tape, &vars.trunk, x)
}

/// Contrastive projection head on the trunk output.
pub fn project(tape: &mut Tape, vars: &BundleVars, h: ValueId) -> Result<ValueId, ModelError> {
    let layers = vars
        .projection
        .as_ref()
        .expect("projection head was not registered on this tape");
    mlp(tape, layers, h)
}

/// Variational heads on the trunk output. The raw log-variance is clamped
/// to `[-LOGVAR_CLAMP, LOGVAR_CLAMP]` before use.
pub fn vae_encode(
    tape: &mut Tape,
    vars: &BundleVars,
    h: ValueId,
) -> Result<(ValueId, ValueId), ModelError> {
    let mu_vars = vars.mu_head.as_ref().expect("mu head was not registered on this tape");
    let lv_vars = vars.logvar_head.as_ref().expect("logvar head was not registered on this tape");
    let mu = linear(tape, mu_vars, h)?;
    let raw = linear(tape, lv_vars, h)?;
    let logvar = tape.clamp(raw, -LOGVAR_CLAMP, LOGVAR_CLAMP)?;
    Ok((mu, logvar))
}

/// `z = mu + exp(0.5 * logvar) ⊙ noise`. Gradients reach mu and logvar;
/// the noise must be a constant leaf.
pub fn reparameterize(
    tape: &mut Tape,
    mu: ValueId,
    logvar: ValueId,
    noise: ValueId,
) -> Result<ValueId, ModelError> {
    if tape.shape(mu) != tape.shape(logvar) || tape.shape(mu) != tape.shape(noise) {
        return Err(ModelError::Autodiff(AutodiffError::ShapeMismatch(format!(
            "reparameterize shapes differ: mu {:?}, logvar {:?}, noise {:?}",
            tape.shape(mu),
            tape.shape(logvar),
            tape.shape(noise)
        ))));
    }
    let half = tape.mul_scalar(logvar, 0.5)?;
    let sigma = tape.exp(half)?;
    let scaled = tape.mul(sigma, noise)?;
    Ok(tape.add(mu, scaled)?)
}

/// Decoder forward pass: ReLU between layers, linear reconstruction.
pub fn decode(tape: &mut Tape, vars: &BundleVars, z: ValueId) -> Result<ValueId, ModelError> {
    let layers = vars.decoder.as_ref().expect("decoder was not registered on this tape");
    mlp(tape, layers, z)
}
