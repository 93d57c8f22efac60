use crate::error::{Error, Result};
use crate::numeric::{Graph, Var};

/// Graph handles for one self-attention layer.
///
/// `query` and `key` are `[C/r, C, 1, 1]`, `value` is `[C, C, 1, 1]` and
/// `gain` holds a single scalar.
#[derive(Clone, Copy, Debug)]
pub struct AttentionVars {
    pub query: Var,
    pub key: Var,
    pub value: Var,
    pub gain: Var,
}

#[derive(Debug)]
pub struct AttentionOutput {
    pub output: Var,
    /// `[B, N, N]`; row `j` is the distribution over positions attended to by position `j`.
    pub weights: Var,
}

/// Self-attention over the spatial positions of `x: [B, C, H, W]`.
///
/// Position `j` attends to position `i` with weight
/// `softmax_i(key_j · query_i)`, gathers `value` features with those weights,
/// and the result is added back as `x + gain · out`.
pub fn self_attention(g: &mut Graph, x: Var, vars: AttentionVars) -> Result<AttentionOutput> {
    let [b, c, h, w] = g.value(x).dims4("self_attention")?;
    let reduced = g.shape(vars.query)[0];
    if c < 8 || g.shape(vars.key)[0] != reduced || g.shape(vars.value)[0] != c {
        return Err(Error::Config(format!(
            "self-attention over {c} channels with projections {:?}, {:?}, {:?}",
            g.shape(vars.query),
            g.shape(vars.key),
            g.shape(vars.value)
        )));
    }
    let n = h * w;
    let q = g.conv2d(x, vars.query, None, 1, 0)?;
    let k = g.conv2d(x, vars.key, None, 1, 0)?;
    let v = g.conv2d(x, vars.value, None, 1, 0)?;
    let q = g.reshape(q, &[b, reduced, n])?;
    let k = g.reshape(k, &[b, reduced, n])?;
    let v = g.reshape(v, &[b, c, n])?;
    let scores = g.matmul(k, q, true, false)?;
    let weights = g.softmax(scores)?;
    let gathered = g.matmul(v, weights, false, true)?;
    let gathered = g.reshape(gathered, &[b, c, h, w])?;
    let scaled = g.scale_by(gathered, vars.gain)?;
    let output = g.add(x, scaled)?;
    Ok(AttentionOutput { output, weights })
}
