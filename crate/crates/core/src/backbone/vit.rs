use crate::autodiff::{concat, Var};
use crate::error::{Error, Result};

/// Query, key and value projections `[d×d]`; heads are contiguous column
/// blocks of width `d / num_heads`.
#[derive(Clone, Copy, Debug)]
pub struct AttentionHeads<'t> {
    pub query: Var<'t>,
    pub key: Var<'t>,
    pub value: Var<'t>,
}

#[derive(Clone, Debug)]
pub struct ViTParams<'t> {
    /// `[patch_dim × d]`
    pub embed: Var<'t>,
    /// `[N × d]`
    pub pos: Var<'t>,
    pub blocks: Vec<AttentionHeads<'t>>,
    pub num_heads: usize,
}

#[derive(Clone, Debug)]
pub struct MsaOutput<'t> {
    /// Concatenated head outputs `[N × d]`.
    pub output: Var<'t>,
    /// Per-head attention matrices `[N × N]`.
    pub attention: Vec<Var<'t>>,
}

/// Flattens non-overlapping `patch × patch` tiles (row-major patch order)
/// and projects them: `E = P · W_E + E_pos`.
pub fn patch_embed<'t>(x: Var<'t>, patch: usize, embed: Var<'t>, pos: Var<'t>) -> Result<Var<'t>> {
    let patches = x.patchify(patch)?;
    let (n, pd) = (patches.shape()[0], patches.shape()[1]);
    if embed.shape().len() != 2 || embed.shape()[0] != pd {
        return Err(Error::dim(format!("embedding matrix {:?} does not take patch dim {pd}", embed.shape())));
    }
    if pos.shape() != [n, embed.shape()[1]] {
        return Err(Error::dim(format!(
            "positional table {:?} does not match {n} patches of width {}",
            pos.shape(),
            embed.shape()[1]
        )));
    }
    patches.matmul(embed)?.add(pos)
}

/// Scaled dot-product attention per head, heads concatenated.
pub fn multi_head_self_attention<'t>(e: Var<'t>, heads: &AttentionHeads<'t>, num_heads: usize) -> Result<MsaOutput<'t>> {
    let shape = e.shape();
    if shape.len() != 2 {
        return Err(Error::dim(format!("expected [N×d] tokens, got {shape:?}")));
    }
    let d = shape[1];
    if num_heads == 0 || !d.is_multiple_of(num_heads) {
        return Err(Error::contract(format!("width {d} not divisible into {num_heads} heads")));
    }
    for w in [heads.query, heads.key, heads.value] {
        if w.shape() != [d, d] {
            return Err(Error::contract(format!("projection {:?} does not match width {d}", w.shape())));
        }
    }
    let dk = d / num_heads;
    let q = e.matmul(heads.query)?;
    let k = e.matmul(heads.key)?;
    let v = e.matmul(heads.value)?;
    let scale = 1.0 / (dk as f64).sqrt();
    let mut outputs = Vec::with_capacity(num_heads);
    let mut attention = Vec::with_capacity(num_heads);
    for h in 0..num_heads {
        let qh = q.slice(1, h * dk, dk)?;
        let kh = k.slice(1, h * dk, dk)?;
        let vh = v.slice(1, h * dk, dk)?;
        let a = qh.matmul(kh.transpose()?)?.scale(scale)?.softmax(1)?;
        outputs.push(a.matmul(vh)?);
        attention.push(a);
    }
    Ok(MsaOutput { output: concat(&outputs, 1)?, attention })
}

/// Pre-norm residual blocks `E ← E + MSA(LN(E))`.
pub fn vit_encoder<'t>(e: Var<'t>, blocks: &[AttentionHeads<'t>], num_heads: usize) -> Result<Var<'t>> {
    let mut h = e;
    for block in blocks {
        let attended = multi_head_self_attention(h.layer_norm(1e-5)?, block, num_heads)?;
        h = h.add(attended.output)?;
    }
    Ok(h)
}
