use std::collections::HashMap;

use smae_tensor::{Element, Graph, Tensor, Var};

use super::{ModelConfig, ModelParams, LN_EPS};
use crate::error::{Error, Result};
use crate::imaging::PatchGrid;
use crate::selection::SelectionPlan;

/// Model arrays registered on one graph.
#[derive(Debug)]
pub struct Bound {
    order: Vec<Var>,
    by_name: HashMap<String, Var>,
    pos: Var,
}

impl Bound {
    /// Registers every array; trainable arrays receive gradients.
    pub fn new<T: Element>(g: &mut Graph<T>, params: &ModelParams<T>, trainable: bool) -> Self {
        let mut order = Vec::with_capacity(params.tensors().len());
        let mut by_name = HashMap::new();
        for (name, t) in params.names().iter().zip(params.tensors()) {
            let v = if trainable { g.param(t.clone()) } else { g.constant(t.clone()) };
            order.push(v);
            by_name.insert(name.clone(), v);
        }
        let pos = g.constant(params.pos_embed().clone());
        Self { order, by_name, pos }
    }

    pub fn var(&self, name: &str) -> Var {
        *self
            .by_name
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    pub fn vars(&self) -> &[Var] {
        &self.order
    }

    /// Gradients in layout order, after `backward`.
    pub fn take_grads<T: Element>(&self, g: &mut Graph<T>) -> Vec<Vec<T>> {
        self.order
            .iter()
            .map(|&v| g.take_grad(v).unwrap_or_default())
            .collect()
    }
}

fn linear<T: Element>(g: &mut Graph<T>, b: &Bound, prefix: &str, x: Var) -> Result<Var> {
    let y = g.matmul(x, b.var(&format!("{prefix}.weight")))?;
    Ok(g.add(y, b.var(&format!("{prefix}.bias")))?)
}

fn norm<T: Element>(g: &mut Graph<T>, b: &Bound, prefix: &str, x: Var) -> Result<Var> {
    let gamma = b.var(&format!("{prefix}.gamma"));
    let beta = b.var(&format!("{prefix}.beta"));
    Ok(g.layer_norm(x, gamma, beta, T::of(LN_EPS))?)
}

fn mlp<T: Element>(g: &mut Graph<T>, b: &Bound, prefix: &str, x: Var) -> Result<Var> {
    let h = linear(g, b, &format!("{prefix}.fc1"), x)?;
    let h = g.gelu(h)?;
    linear(g, b, &format!("{prefix}.fc2"), h)
}

/// Multi-head scaled dot-product attention. `q` is `n×d`, `k`/`v` are
/// `m×d` column blocks starting at `k_off`/`v_off` of their sources.
#[allow(clippy::too_many_arguments)]
fn attend<T: Element>(
    g: &mut Graph<T>,
    cfg: &ModelConfig,
    q_src: Var,
    q_off: usize,
    kv_src: Var,
    k_off: usize,
    v_off: usize,
) -> Result<Var> {
    let dh = cfg.head_dim();
    let scale = T::of(1.0 / (dh as f64).sqrt());
    let mut heads = Vec::with_capacity(cfg.heads);
    for h in 0..cfg.heads {
        let q = g.slice_cols(q_src, q_off + h * dh, q_off + (h + 1) * dh)?;
        let k = g.slice_cols(kv_src, k_off + h * dh, k_off + (h + 1) * dh)?;
        let v = g.slice_cols(kv_src, v_off + h * dh, v_off + (h + 1) * dh)?;
        let kt = g.transpose(k)?;
        let s = g.matmul(q, kt)?;
        let s = g.scale(s, scale)?;
        let a = g.softmax(s)?;
        heads.push(g.matmul(a, v)?);
    }
    if heads.len() == 1 {
        Ok(heads[0])
    } else {
        Ok(g.concat_cols(&heads)?)
    }
}

fn values_tensor<T: Element>(rows: usize, cols: usize, values: impl Iterator<Item = f32>) -> Result<Tensor<T>> {
    Ok(Tensor::new(vec![rows, cols], values.map(|v| T::of(v as f64)).collect())?)
}

/// Linear projection of every patch plus its positional embedding, `N×d`.
pub fn embed_all<T: Element>(g: &mut Graph<T>, b: &Bound, cfg: &ModelConfig, grid: &PatchGrid) -> Result<Var> {
    if grid.num_patches() != cfg.num_patches() || grid.patch_dim() != cfg.patch_dim() {
        return Err(Error::Contract(format!(
            "patch grid {}x{} does not match model {}x{}",
            grid.num_patches(),
            grid.patch_dim(),
            cfg.num_patches(),
            cfg.patch_dim()
        )));
    }
    let x = g.constant(values_tensor(grid.num_patches(), grid.patch_dim(), grid.values().iter().copied())?);
    let y = linear(g, b, "patch_embed", x)?;
    Ok(g.add(y, b.pos)?)
}

/// Pre-norm transformer over the visible rows only, with a final norm.
pub fn encode<T: Element>(g: &mut Graph<T>, b: &Bound, cfg: &ModelConfig, rows: Var) -> Result<Var> {
    if g.value(rows).shape().first().copied().unwrap_or(0) == 0 {
        return Err(Error::Contract("encoder needs at least one visible token".into()));
    }
    let d = cfg.d;
    let mut x = rows;
    for blk in 0..cfg.encoder_depth {
        let p = format!("enc.{blk}");
        let h = norm(g, b, &format!("{p}.ln1"), x)?;
        let qkv = linear(g, b, &format!("{p}.attn.qkv"), h)?;
        let a = attend(g, cfg, qkv, 0, qkv, d, 2 * d)?;
        let a = linear(g, b, &format!("{p}.attn.proj"), a)?;
        x = g.add(x, a)?;
        let h = norm(g, b, &format!("{p}.ln2"), x)?;
        let h = mlp(g, b, &format!("{p}.mlp"), h)?;
        x = g.add(x, h)?;
    }
    norm(g, b, "enc_norm", x)
}

/// Cross-attention decoder: one query per target (mask token plus position)
/// attending to the encoded latents. Returns `|targets|×p²C` predictions.
pub fn decode<T: Element>(
    g: &mut Graph<T>,
    b: &Bound,
    cfg: &ModelConfig,
    latent: Var,
    targets: &[usize],
) -> Result<Var> {
    if targets.is_empty() {
        return Err(Error::Contract(
            "decoder needs at least one reconstruction target (r > 0)".into(),
        ));
    }
    let d = cfg.d;
    let pos = g.gather_rows(b.pos, targets)?;
    let mut x = g.add(pos, b.var("mask_token"))?;
    for blk in 0..cfg.decoder_depth {
        let p = format!("dec.{blk}");
        let hq = norm(g, b, &format!("{p}.ln_q"), x)?;
        let hkv = norm(g, b, &format!("{p}.ln_kv"), latent)?;
        let q = linear(g, b, &format!("{p}.attn.q"), hq)?;
        let kv = linear(g, b, &format!("{p}.attn.kv"), hkv)?;
        let a = attend(g, cfg, q, 0, kv, 0, d)?;
        let a = linear(g, b, &format!("{p}.attn.proj"), a)?;
        x = g.add(x, a)?;
        let h = norm(g, b, &format!("{p}.ln2"), x)?;
        let h = mlp(g, b, &format!("{p}.mlp"), h)?;
        x = g.add(x, h)?;
    }
    let x = norm(g, b, "dec_norm", x)?;
    linear(g, b, "head", x)
}

/// Pixel targets for `targets`, standardized per patch when `norm_pix`
/// (unbiased variance, `eps = 1e-6`).
pub fn target_rows(grid: &PatchGrid, targets: &[usize], norm_pix: bool) -> Vec<f64> {
    let pd = grid.patch_dim();
    let mut out = Vec::with_capacity(targets.len() * pd);
    for &t in targets {
        let patch: Vec<f64> = grid.patch(t).iter().map(|&v| v as f64).collect();
        if norm_pix {
            let mean = patch.iter().sum::<f64>() / pd as f64;
            let var = if pd > 1 {
                patch.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (pd - 1) as f64
            } else {
                0.0
            };
            let inv = 1.0 / (var + 1e-6).sqrt();
            out.extend(patch.iter().map(|v| (v - mean) * inv));
        } else {
            out.extend(patch);
        }
    }
    out
}

/// Mean squared error over the target patches and pixel dimensions.
pub fn reconstruction_loss<T: Element>(
    g: &mut Graph<T>,
    pred: Var,
    grid: &PatchGrid,
    targets: &[usize],
    norm_pix: bool,
) -> Result<Var> {
    let shape = g.value(pred).shape().to_vec();
    if shape != [targets.len(), grid.patch_dim()] {
        return Err(Error::Contract(format!(
            "prediction shape {shape:?} does not match {} targets of {} values",
            targets.len(),
            grid.patch_dim()
        )));
    }
    let t = target_rows(grid, targets, norm_pix);
    let target = g.constant(Tensor::new(shape, t.into_iter().map(T::of).collect())?);
    let diff = g.sub(pred, target)?;
    let sq = g.mul(diff, diff)?;
    Ok(g.mean(sq)?)
}

#[derive(Debug, Clone)]
pub struct SampleOutput<T> {
    pub loss: T,
    /// Per-array gradients in layout order; empty when not requested.
    pub grads: Vec<Vec<T>>,
    pub plan: SelectionPlan,
    /// Forward matmul FLOPs, including the patch embedding.
    pub flops: u64,
}

/// One sample end to end: embed, plan on the embedding rows, encode the
/// selected rows, decode the targets, and score the reconstruction.
///
/// `planner` sees the `N×d` embedding values (as `f64`) and `d`.
pub fn forward_sample<T: Element>(
    params: &ModelParams<T>,
    grid: &PatchGrid,
    planner: impl FnOnce(&[f64], usize) -> Result<SelectionPlan>,
    want_grads: bool,
) -> Result<SampleOutput<T>> {
    let cfg = params.config();
    let mut g = Graph::new();
    let b = Bound::new(&mut g, params, want_grads);
    let emb = embed_all(&mut g, &b, cfg, grid)?;
    let emb_values: Vec<f64> = g.value(emb).data().iter().map(|v| v.as_f64()).collect();
    let plan = planner(&emb_values, cfg.d)?;
    let visible = g.gather_rows(emb, &plan.encode_set)?;
    let latent = encode(&mut g, &b, cfg, visible)?;
    let pred = decode(&mut g, &b, cfg, latent, &plan.reconstruction_targets)?;
    let loss = reconstruction_loss(&mut g, pred, grid, &plan.reconstruction_targets, cfg.norm_pix)?;
    let flops = g.matmul_flops();
    let loss_value = g.value(loss).item()?;
    let grads = if want_grads {
        g.backward(loss)?;
        b.take_grads(&mut g)
    } else {
        Vec::new()
    };
    Ok(SampleOutput {
        loss: loss_value,
        grads,
        plan,
        flops,
    })
}
