//! Attention-based MIL aggregators: the gated-attention model and a minimal
//! multi-head self-attention (MSA) model with a class token. Both share a
//! projection head (affine + rectifier) and a single-logit sigmoid classifier.

use std::io::Write as _;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::tensor::{Mat, ParameterSet, Tape, Tensor, TensorError};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("bag must contain at least one instance")]
    EmptyBag,
    #[error("attention layer {0} out of range (model has {1} layers)")]
    LayerOutOfRange(usize, usize),
    #[error("input has {0} columns, model expects {1}")]
    InputDimMismatch(usize, usize),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("checkpoint {path}: {reason}")]
    BadCheckpoint { path: String, reason: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, ModelError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Gated,
    Msa,
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ModelKind::Gated => write!(f, "gated"),
            ModelKind::Msa => write!(f, "msa"),
        }
    }
}

/// Which MSA layer supplies the mining attention.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerChoice {
    First,
    Last,
    Index(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub d_in: usize,
    pub d: usize,
    pub d_h: usize,
    pub heads: usize,
    pub layers: usize,
    pub attn_layer: LayerChoice,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            kind: ModelKind::Gated,
            d_in: 64,
            d: 32,
            d_h: 32,
            heads: 2,
            layers: 2,
            attn_layer: LayerChoice::First,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerTag {
    Gated,
    MsaLayer(usize),
}

/// Teacher attention used for mining: one row per head, each row a
/// distribution over the N instances (class token excluded).
#[derive(Debug, Clone)]
pub struct AttentionScores {
    pub values: Mat,
    pub layer_tag: LayerTag,
}

impl AttentionScores {
    /// Head-averaged attention per instance.
    pub fn head_mean(&self) -> Vec<f64> {
        let h = self.values.rows as f64;
        (0..self.values.cols)
            .map(|i| (0..self.values.rows).map(|r| self.values.get(r, i)).sum::<f64>() / h)
            .collect()
    }
}

/// Raw per-head attention matrices of one MSA layer, (N+1)x(N+1) each.
#[derive(Debug, Clone)]
pub struct LayerAttention {
    pub heads: Vec<Mat>,
}

pub struct ModelOutput {
    pub logit: Tensor,
    pub probability: Tensor,
    pub bag_embedding: Tensor,
    pub attention: AttentionScores,
    /// Per-layer raw attention; empty for the gated model.
    pub layer_attention: Vec<LayerAttention>,
}

fn uniform_tensor(rows: usize, cols: usize, fan_in: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let data: Vec<f64> = (0..rows * cols).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor::param(rows, cols, data)
}

pub struct GatedAttentionModel {
    pub params: ParameterSet,
    pub cfg: ModelConfig,
}

impl GatedAttentionModel {
    /// Parameter draw order is fixed so identical streams give identical
    /// models.
    pub fn new(cfg: ModelConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        let mut params = ParameterSet::new();
        params.insert("proj.weight", uniform_tensor(cfg.d_in, cfg.d, cfg.d_in, rng))?;
        params.insert("proj.bias", uniform_tensor(1, cfg.d, cfg.d_in, rng))?;
        params.insert("attn.gate_v", uniform_tensor(cfg.d, cfg.d_h, cfg.d, rng))?;
        params.insert("attn.gate_u", uniform_tensor(cfg.d, cfg.d_h, cfg.d, rng))?;
        params.insert("attn.score", uniform_tensor(cfg.d_h, 1, cfg.d_h, rng))?;
        params.insert("cls.weight", uniform_tensor(cfg.d, 1, cfg.d, rng))?;
        params.insert("cls.bias", uniform_tensor(1, 1, cfg.d, rng))?;
        Ok(GatedAttentionModel { params, cfg })
    }

    pub fn forward(&self, tape: &Tape, bag: &Mat) -> Result<ModelOutput> {
        if bag.rows == 0 {
            return Err(ModelError::EmptyBag);
        }
        if bag.cols != self.cfg.d_in {
            return Err(ModelError::InputDimMismatch(bag.cols, self.cfg.d_in));
        }
        let x = Tensor::from_mat(bag);
        let z = project(tape, &self.params, &x)?;
        let a = gated_attention_scores(tape, &z, &self.params)?;
        let f = attention_pool(tape, &z, &a)?;
        let (logit, probability) = classify(tape, &f, &self.params)?;
        let attention = AttentionScores {
            values: a.value(),
            layer_tag: LayerTag::Gated,
        };
        Ok(ModelOutput {
            logit,
            probability,
            bag_embedding: f,
            attention,
            layer_attention: Vec::new(),
        })
    }
}

/// Shared projection head: rectified affine map D_in -> D.
fn project(tape: &Tape, params: &ParameterSet, x: &Tensor) -> Result<Tensor> {
    let w = params.get("proj.weight").unwrap();
    let b = params.get("proj.bias").unwrap();
    let lin = tape.add_row(&tape.matmul(x, w)?, b)?;
    Ok(tape.relu(&lin))
}

/// Gated attention over post-projection features: softmax over instances of
/// w^T (tanh(V z_i) * sigmoid(U z_i)). Returns a 1xN distribution.
pub fn gated_attention_scores(tape: &Tape, z: &Tensor, params: &ParameterSet) -> Result<Tensor> {
    if z.rows() == 0 {
        return Err(ModelError::EmptyBag);
    }
    let v = params.get("attn.gate_v").unwrap();
    let u = params.get("attn.gate_u").unwrap();
    let w = params.get("attn.score").unwrap();
    let gate = tape.mul(&tape.tanh(&tape.matmul(z, v)?), &tape.sigmoid(&tape.matmul(z, u)?))?;
    let logits = tape.matmul(&gate, w)?; // N x 1
    let row = tape.transpose(&logits); // 1 x N
    Ok(tape.row_softmax(&row, 1.0)?)
}

/// Bag embedding F = sum_i a_i z_i for a 1xN attention row.
pub fn attention_pool(tape: &Tape, z: &Tensor, a: &Tensor) -> Result<Tensor> {
    if a.cols() != z.rows() {
        return Err(ModelError::Tensor(TensorError::ShapeMismatch(format!(
            "attention_pool: {} weights for {} instances",
            a.cols(),
            z.rows()
        ))));
    }
    Ok(tape.matmul(a, z)?)
}

/// Classifier head: logit = F . w + b, probability = sigmoid(logit).
pub fn classify(tape: &Tape, f: &Tensor, params: &ParameterSet) -> Result<(Tensor, Tensor)> {
    let w = params.get("cls.weight").unwrap();
    let b = params.get("cls.bias").unwrap();
    let logit = tape.add(&tape.matmul(f, w)?, b)?;
    let probability = tape.sigmoid(&logit);
    Ok((logit, probability))
}

pub struct MsaModel {
    pub params: ParameterSet,
    pub cfg: ModelConfig,
}

impl MsaModel {
    pub fn new(cfg: ModelConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        assert!(cfg.d % cfg.heads == 0, "d must be divisible by heads");
        assert!(cfg.layers >= 1, "at least one MSA layer");
        let dh = cfg.d / cfg.heads;
        let mut params = ParameterSet::new();
        params.insert("proj.weight", uniform_tensor(cfg.d_in, cfg.d, cfg.d_in, rng))?;
        params.insert("proj.bias", uniform_tensor(1, cfg.d, cfg.d_in, rng))?;
        params.insert("class_token", Tensor::param(1, cfg.d, vec![0.0; cfg.d]))?;
        for l in 0..cfg.layers {
            for h in 0..cfg.heads {
                for proj in ["query", "key", "value"] {
                    params.insert(
                        &format!("layer{}.head{}.{}", l, h, proj),
                        uniform_tensor(cfg.d, dh, cfg.d, rng),
                    )?;
                }
            }
            params.insert(&format!("layer{}.out", l), uniform_tensor(cfg.d, cfg.d, cfg.d, rng))?;
        }
        params.insert("cls.weight", uniform_tensor(cfg.d, 1, cfg.d, rng))?;
        params.insert("cls.bias", uniform_tensor(1, 1, cfg.d, rng))?;
        Ok(MsaModel { params, cfg })
    }

    /// Class token prepended, then L layers of multi-head scaled dot-product
    /// attention with residual connections; F is the final class-token row.
    pub fn forward(&self, tape: &Tape, bag: &Mat) -> Result<ModelOutput> {
        if bag.rows == 0 {
            return Err(ModelError::EmptyBag);
        }
        if bag.cols != self.cfg.d_in {
            return Err(ModelError::InputDimMismatch(bag.cols, self.cfg.d_in));
        }
        let x = Tensor::from_mat(bag);
        let z = project(tape, &self.params, &x)?;
        let ct = self.params.get("class_token").unwrap();
        let mut seq = tape.concat_rows(&[ct.clone(), z])?;
        let dh = self.cfg.d / self.cfg.heads;
        let scale = 1.0 / (dh as f64).sqrt();

        let mut layer_attention = Vec::with_capacity(self.cfg.layers);
        for l in 0..self.cfg.layers {
            let mut heads_out = Vec::with_capacity(self.cfg.heads);
            let mut head_attn = Vec::with_capacity(self.cfg.heads);
            for h in 0..self.cfg.heads {
                let wq = self.params.get(&format!("layer{}.head{}.query", l, h)).unwrap();
                let wk = self.params.get(&format!("layer{}.head{}.key", l, h)).unwrap();
                let wv = self.params.get(&format!("layer{}.head{}.value", l, h)).unwrap();
                let q = tape.matmul(&seq, wq)?;
                let k = tape.matmul(&seq, wk)?;
                let v = tape.matmul(&seq, wv)?;
                let scores = tape.scale(&tape.matmul(&q, &tape.transpose(&k))?, scale);
                let a = tape.row_softmax(&scores, 1.0)?;
                head_attn.push(a.value());
                heads_out.push(tape.matmul(&a, &v)?);
            }
            layer_attention.push(LayerAttention { heads: head_attn });
            let concat = tape.concat_cols(&heads_out)?;
            let wo = self.params.get(&format!("layer{}.out", l)).unwrap();
            let mixed = tape.matmul(&concat, wo)?;
            seq = tape.add(&seq, &mixed)?;
        }

        let f = tape.slice_rows(&seq, 0, 1)?;
        let (logit, probability) = classify(tape, &f, &self.params)?;
        let attention =
            class_token_attention(&layer_attention, self.cfg.attn_layer, self.cfg.layers)?;
        Ok(ModelOutput {
            logit,
            probability,
            bag_embedding: f,
            attention,
            layer_attention,
        })
    }
}

fn resolve_layer(choice: LayerChoice, layers: usize) -> Result<usize> {
    let idx = match choice {
        LayerChoice::First => 0,
        LayerChoice::Last => layers - 1,
        LayerChoice::Index(i) => i,
    };
    if idx >= layers {
        return Err(ModelError::LayerOutOfRange(idx, layers));
    }
    Ok(idx)
}

/// Class-token query row of the chosen layer, one row per head, class-token
/// column dropped and each row renormalized to sum 1.
fn class_token_attention(
    layer_attention: &[LayerAttention],
    choice: LayerChoice,
    layers: usize,
) -> Result<AttentionScores> {
    let idx = resolve_layer(choice, layers)?;
    let layer = &layer_attention[idx];
    let n = layer.heads[0].cols - 1;
    let mut rows = Vec::with_capacity(layer.heads.len());
    for head in &layer.heads {
        let cls_row = head.row(0);
        let body = &cls_row[1..];
        let sum: f64 = body.iter().sum();
        rows.push(body.iter().map(|v| v / sum).collect::<Vec<f64>>());
    }
    let _ = n;
    Ok(AttentionScores {
        values: Mat::from_rows(&rows),
        layer_tag: LayerTag::MsaLayer(idx),
    })
}

/// Mining attention from a full-bag forward: the gated attention vector
/// verbatim, or the class-token attention of the chosen MSA layer.
pub fn extract_teacher_attention(
    output: &ModelOutput,
    layer_choice: LayerChoice,
) -> Result<AttentionScores> {
    if output.layer_attention.is_empty() {
        return Ok(output.attention.clone());
    }
    class_token_attention(&output.layer_attention, layer_choice, output.layer_attention.len())
}

/// Either MIL aggregator behind one interface.
pub enum MilModel {
    Gated(GatedAttentionModel),
    Msa(MsaModel),
}

impl MilModel {
    pub fn new(cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        match cfg.kind {
            ModelKind::Gated => Ok(MilModel::Gated(GatedAttentionModel::new(*cfg, rng)?)),
            ModelKind::Msa => Ok(MilModel::Msa(MsaModel::new(*cfg, rng)?)),
        }
    }

    pub fn forward(&self, tape: &Tape, bag: &Mat) -> Result<ModelOutput> {
        match self {
            MilModel::Gated(m) => m.forward(tape, bag),
            MilModel::Msa(m) => m.forward(tape, bag),
        }
    }

    pub fn params(&self) -> &ParameterSet {
        match self {
            MilModel::Gated(m) => &m.params,
            MilModel::Msa(m) => &m.params,
        }
    }

    pub fn cfg(&self) -> &ModelConfig {
        match self {
            MilModel::Gated(m) => &m.cfg,
            MilModel::Msa(m) => &m.cfg,
        }
    }

    /// Replace the whole parameter set; names and shapes must match.
    pub fn set_params(&mut self, new: ParameterSet) {
        let params = match self {
            MilModel::Gated(m) => &mut m.params,
            MilModel::Msa(m) => &mut m.params,
        };
        params
            .compatible_with(&new)
            .expect("replacement parameters must match the model architecture");
        *params = new;
    }
}

/// Write a parameter checkpoint: one line per parameter with name, shape and
/// shortest round-trip decimal values.
pub fn save_params(path: &Path, params: &ParameterSet) -> Result<()> {
    let mut out = String::new();
    for (name, t) in params.iter() {
        let (rows, cols) = t.shape();
        out.push_str(name);
        out.push_str(&format!(" {} {}", rows, cols));
        for v in t.data_clone() {
            out.push_str(&format!(" {}", v));
        }
        out.push('\n');
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(out.as_bytes())?;
    Ok(())
}

/// Read a checkpoint back into a detached ParameterSet.
pub fn load_params(path: &Path) -> Result<ParameterSet> {
    let bad = |reason: String| ModelError::BadCheckpoint {
        path: path.display().to_string(),
        reason,
    };
    let text = std::fs::read_to_string(path)?;
    let mut params = ParameterSet::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut tokens = line.split_whitespace();
        let name = tokens
            .next()
            .ok_or_else(|| bad(format!("line {}: missing name", lineno + 1)))?;
        let rows: usize = tokens
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| bad(format!("line {}: bad row count", lineno + 1)))?;
        let cols: usize = tokens
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| bad(format!("line {}: bad column count", lineno + 1)))?;
        let values: Vec<f64> = tokens
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| bad(format!("line {}: {}", lineno + 1, e)))?;
        if values.len() != rows * cols {
            return Err(bad(format!(
                "line {}: expected {} values, found {}",
                lineno + 1,
                rows * cols,
                values.len()
            )));
        }
        params
            .insert(name, Tensor::constant(rows, cols, values))
            .map_err(|e| bad(e.to_string()))?;
    }
    Ok(params)
}
