//! Gated visuo-semantic fusion, prototypes, and word-embedding refinement.

use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::{Graph, ParamId, ParamSet, Tensor, Var};

/// Gate weights: `W_v`, `W_c` (`d_z x d_x`) and `W_z` (`d_x x 2 d_z`), with
/// optional biases.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GateParams {
    pub w_v: ParamId,
    pub b_v: Option<ParamId>,
    pub w_c: ParamId,
    pub b_c: Option<ParamId>,
    pub w_z: ParamId,
    pub b_z: Option<ParamId>,
}

impl GateParams {
    pub fn register(
        ps: &mut ParamSet,
        d_x: usize,
        d_z: usize,
        bias: bool,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let w_v = ps.insert_glorot("gate.w_v", d_z, d_x, rng)?;
        let w_c = ps.insert_glorot("gate.w_c", d_z, d_x, rng)?;
        let w_z = ps.insert_glorot("gate.w_z", d_x, 2 * d_z, rng)?;
        let (b_v, b_c, b_z) = if bias {
            (
                Some(ps.insert_zeros("gate.b_v", &[1, d_z])?),
                Some(ps.insert_zeros("gate.b_c", &[1, d_z])?),
                Some(ps.insert_zeros("gate.b_z", &[1, d_x])?),
            )
        } else {
            (None, None, None)
        };
        Ok(GateParams {
            w_v,
            b_v,
            w_c,
            b_c,
            w_z,
            b_z,
        })
    }

    /// Row-wise fusion of `fx` and `gc` (both `n x d_x`). Returns the fused
    /// rows and the gate `z`.
    pub fn forward(&self, g: &mut Graph<'_>, fx: Var, gc: Var) -> Result<(Var, Var)> {
        let d_x = g.params().value(self.w_v).cols();
        if g.value(fx).cols() != d_x || g.value(fx).shape() != g.value(gc).shape() {
            return Err(Error::dim(
                "gated_fuse",
                g.value(fx).shape(),
                g.value(gc).shape(),
            ));
        }
        let h_v = g.linear(fx, self.w_v, self.b_v)?;
        let h_v = g.tanh(h_v);
        let h_c = g.linear(gc, self.w_c, self.b_c)?;
        let h_c = g.tanh(h_c);
        let h = g.concat_cols(h_v, h_c)?;
        let z = g.linear(h, self.w_z, self.b_z)?;
        let z = g.sigmoid(z);
        let one_minus_z = g.one_minus(z);
        let visual = g.mul(z, fx)?;
        let context = g.mul(one_minus_z, gc)?;
        let fused = g.add(visual, context)?;
        Ok((fused, z))
    }
}

/// Result of fusing one visual embedding with one projected context.
#[derive(Clone, Debug, PartialEq)]
pub struct FusionTrace {
    pub fused: Vec<f64>,
    pub gate: Vec<f64>,
    pub visual: Vec<f64>,
    pub context: Vec<f64>,
}

impl FusionTrace {
    /// Whether every fused coordinate lies between the two inputs.
    pub fn within_box(&self) -> bool {
        self.fused
            .iter()
            .zip(self.visual.iter().zip(&self.context))
            .all(|(&o, (&f, &c))| f.min(c) <= o && o <= f.max(c))
    }
}

pub fn gated_fuse(fx: &[f64], gc: &[f64], ps: &ParamSet, gate: &GateParams) -> Result<FusionTrace> {
    let mut g = Graph::new(ps);
    let f = g.constant(Tensor::row(fx.to_vec()));
    let c = g.constant(Tensor::row(gc.to_vec()));
    let (fused, z) = gate.forward(&mut g, f, c)?;
    Ok(FusionTrace {
        fused: g.value(fused).data().to_vec(),
        gate: g.value(z).data().to_vec(),
        visual: fx.to_vec(),
        context: gc.to_vec(),
    })
}

/// Mean of the given embeddings.
pub fn class_prototype<V: AsRef<[f64]>>(embeddings: &[V]) -> Result<Vec<f64>> {
    let first = embeddings
        .first()
        .ok_or_else(|| Error::Domain("prototype of an empty support set".into()))?;
    let d = first.as_ref().len();
    let mut out = vec![0.0; d];
    for e in embeddings {
        let e = e.as_ref();
        if e.len() != d {
            return Err(Error::dim("class_prototype", &[d], &[e.len()]));
        }
        for (o, v) in out.iter_mut().zip(e) {
            *o += v;
        }
    }
    let inv = 1.0 / embeddings.len() as f64;
    out.iter_mut().for_each(|o| *o *= inv);
    Ok(out)
}

/// Mean of the gated fusions of each `(f(x), g(c))` pair.
pub fn context_aware_prototype<V: AsRef<[f64]>>(
    support: &[(V, V)],
    ps: &ParamSet,
    gate: &GateParams,
) -> Result<Vec<f64>> {
    if support.is_empty() {
        return Err(Error::Domain("prototype of an empty support set".into()));
    }
    let fused = support
        .iter()
        .map(|(f, c)| gated_fuse(f.as_ref(), c.as_ref(), ps, gate).map(|t| t.fused))
        .collect::<Result<Vec<_>>>()?;
    class_prototype(&fused)
}

/// Refinement network on the class word: a shared `tanh` hidden layer with a
/// linear head producing the transformed word and a sigmoid head producing
/// the scalar mixing coefficient.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RefineParams {
    pub w_h: ParamId,
    pub b_h: ParamId,
    pub w_o: ParamId,
    pub b_o: ParamId,
    pub w_l: ParamId,
    pub b_l: ParamId,
}

impl RefineParams {
    pub fn register(
        ps: &mut ParamSet,
        d_w: usize,
        d_h: usize,
        d_x: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        Ok(RefineParams {
            w_h: ps.insert_glorot("refine.w_h", d_h, d_w, rng)?,
            b_h: ps.insert_zeros("refine.b_h", &[1, d_h])?,
            w_o: ps.insert_glorot("refine.w_o", d_x, d_h, rng)?,
            b_o: ps.insert_zeros("refine.b_o", &[1, d_x])?,
            w_l: ps.insert_glorot("refine.w_l", 1, d_h, rng)?,
            b_l: ps.insert_zeros("refine.b_l", &[1, 1])?,
        })
    }

    /// Refines each prototype row with its class word. `words` is `M x d_w`,
    /// `protos` is `M x d_x`. Returns the refined prototypes, `λ` (`M x 1`) and `ŵ`.
    pub fn forward(&self, g: &mut Graph<'_>, words: Var, protos: Var) -> Result<(Var, Var, Var)> {
        let h = g.linear(words, self.w_h, Some(self.b_h))?;
        let h = g.tanh(h);
        let w_hat = g.linear(h, self.w_o, Some(self.b_o))?;
        if g.value(w_hat).shape() != g.value(protos).shape() {
            return Err(Error::dim(
                "refine_with_word",
                g.value(protos).shape(),
                g.value(w_hat).shape(),
            ));
        }
        let lambda = g.linear(h, self.w_l, Some(self.b_l))?;
        let lambda = g.sigmoid(lambda);
        let one_minus = g.one_minus(lambda);
        let keep = g.mul_col(protos, lambda)?;
        let word_part = g.mul_col(w_hat, one_minus)?;
        let refined = g.add(keep, word_part)?;
        Ok((refined, lambda, w_hat))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Refinement {
    pub prototype: Vec<f64>,
    pub word_projection: Vec<f64>,
    pub lambda: f64,
}

pub fn refine_with_word(
    proto: &[f64],
    word: &[f64],
    ps: &ParamSet,
    refine: &RefineParams,
) -> Result<Refinement> {
    let mut g = Graph::new(ps);
    let p = g.constant(Tensor::row(proto.to_vec()));
    let w = g.constant(Tensor::row(word.to_vec()));
    let (refined, lambda, w_hat) = refine.forward(&mut g, w, p)?;
    Ok(Refinement {
        prototype: g.value(refined).data().to_vec(),
        word_projection: g.value(w_hat).data().to_vec(),
        lambda: g.value(lambda).item()?,
    })
}
