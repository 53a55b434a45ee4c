//! Layers built from tape primitives: affine maps, the gated recurrent
//! cell and scaled dot-product attention.

use super::params::{BoundParams, ParamId, ParamStore};
use super::rng::Rng;
use super::tape::{Tape, Var};
use crate::error::{Error, Result};

/// `x W + b` with `W: [in, out]`; works on vectors and on `[T, in]` rows.
#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn register(store: &mut ParamStore, name: &str, input: usize, output: usize, rng: &mut Rng) -> Result<Self> {
        Ok(Self {
            w: store.add_uniform(format!("{name}.w"), &[input, output], input, rng)?,
            b: store.add_uniform(format!("{name}.b"), &[output], input, rng)?,
        })
    }

    pub fn apply(&self, t: &Tape, p: &BoundParams, x: Var) -> Result<Var> {
        t.add(t.matmul(x, p[self.w])?, p[self.b])
    }
}

/// Same-length dilated convolution layer, weight `[K, in, out]`.
#[derive(Debug, Clone, Copy)]
pub struct Conv1d {
    pub w: ParamId,
    pub b: ParamId,
    pub dilation: usize,
}

impl Conv1d {
    pub fn register(
        store: &mut ParamStore,
        name: &str,
        kernel: usize,
        input: usize,
        output: usize,
        dilation: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        let fan_in = kernel * input;
        Ok(Self {
            w: store.add_uniform(format!("{name}.w"), &[kernel, input, output], fan_in, rng)?,
            b: store.add_uniform(format!("{name}.b"), &[output], fan_in, rng)?,
            dilation,
        })
    }

    pub fn apply(&self, t: &Tape, p: &BoundParams, x: Var) -> Result<Var> {
        t.conv1d_dilated(x, p[self.w], p[self.b], self.dilation)
    }
}

/// Gated recurrent unit with stacked gate weights in (reset, update,
/// candidate) order: `w_x: [in, 3H]`, `w_h: [H, 3H]`.
#[derive(Debug, Clone, Copy)]
pub struct GruParams {
    pub w_x: ParamId,
    pub w_h: ParamId,
    pub b_x: ParamId,
    pub b_h: ParamId,
    pub input: usize,
    pub hidden: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct GruVars {
    pub w_x: Var,
    pub w_h: Var,
    pub b_x: Var,
    pub b_h: Var,
    pub hidden: usize,
}

impl GruParams {
    pub fn register(store: &mut ParamStore, name: &str, input: usize, hidden: usize, rng: &mut Rng) -> Result<Self> {
        let g = 3 * hidden;
        Ok(Self {
            w_x: store.add_uniform(format!("{name}.w_x"), &[input, g], hidden, rng)?,
            w_h: store.add_uniform(format!("{name}.w_h"), &[hidden, g], hidden, rng)?,
            b_x: store.add_uniform(format!("{name}.b_x"), &[g], hidden, rng)?,
            b_h: store.add_uniform(format!("{name}.b_h"), &[g], hidden, rng)?,
            input,
            hidden,
        })
    }

    pub fn vars(&self, p: &BoundParams) -> GruVars {
        GruVars {
            w_x: p[self.w_x],
            w_h: p[self.w_h],
            b_x: p[self.b_x],
            b_h: p[self.b_h],
            hidden: self.hidden,
        }
    }
}

/// One GRU update:
/// `r = s(W_r x + U_r h)`, `z = s(W_z x + U_z h)`,
/// `n = tanh(W_n x + r * (U_n h))`, `h' = n + z * (h - n)` (biases
/// included in each affine term).
pub fn gru_cell(t: &Tape, x: Var, s_prev: Var, p: &GruVars) -> Result<Var> {
    let x_proj = t.add(t.matmul(x, p.w_x)?, p.b_x)?;
    gru_step(t, x_proj, s_prev, p)
}

/// [`gru_cell`] with the input projection `x W_x + b_x` precomputed.
pub fn gru_step(t: &Tape, x_proj: Var, s_prev: Var, p: &GruVars) -> Result<Var> {
    let h = p.hidden;
    if t.shape(s_prev) != [h] || t.shape(x_proj) != [3 * h] {
        return Err(Error::Shape(format!(
            "gru state {:?} / projected input {:?} for hidden {h}",
            t.shape(s_prev),
            t.shape(x_proj)
        )));
    }
    let h_proj = t.add(t.matmul(s_prev, p.w_h)?, p.b_h)?;
    let rz = t.sigmoid(t.add(t.slice(x_proj, 0, 0, 2 * h)?, t.slice(h_proj, 0, 0, 2 * h)?)?)?;
    let r = t.slice(rz, 0, 0, h)?;
    let z = t.slice(rz, 0, h, 2 * h)?;
    let gated = t.mul(r, t.slice(h_proj, 0, 2 * h, 3 * h)?)?;
    let n = t.tanh(t.add(t.slice(x_proj, 0, 2 * h, 3 * h)?, gated)?)?;
    t.add(n, t.mul(z, t.sub(s_prev, n)?)?)
}

/// Scaled dot-product attention of one query over `T` key/value rows.
/// Returns the context vector and the length-`T` weights.
pub fn attention(t: &Tape, query: Var, keys: Var, values: Var) -> Result<(Var, Var)> {
    let (qs, ks, vs) = (t.shape(query), t.shape(keys), t.shape(values));
    match (qs.as_slice(), ks.as_slice(), vs.as_slice()) {
        ([d], [tk, dk], [tv, _]) if d == dk && tk == tv => {
            let scores = t.scale(t.matmul(keys, query)?, 1.0 / (*d as f64).sqrt())?;
            let weights = t.softmax(scores, 0)?;
            let context = t.matmul(weights, values)?;
            Ok((context, weights))
        }
        _ => Err(Error::Shape(format!(
            "attention query {qs:?}, keys {ks:?}, values {vs:?}"
        ))),
    }
}

/// Splits query, key and value columns into `heads` equal groups, attends
/// per group and concatenates the contexts. Weights are averaged over heads.
pub fn multi_head_attention(t: &Tape, query: Var, keys: Var, values: Var, heads: usize) -> Result<(Var, Var)> {
    if heads <= 1 {
        return attention(t, query, keys, values);
    }
    let d = t.shape(query)[0];
    let dv = t.shape(values).get(1).copied().unwrap_or(0);
    if d % heads != 0 || dv % heads != 0 {
        return Err(Error::Shape(format!("{heads} heads do not divide dims {d}/{dv}")));
    }
    let (hq, hv) = (d / heads, dv / heads);
    let mut contexts = Vec::with_capacity(heads);
    let mut weights = Vec::with_capacity(heads);
    for i in 0..heads {
        let q = t.slice(query, 0, i * hq, (i + 1) * hq)?;
        let k = t.slice(keys, 1, i * hq, (i + 1) * hq)?;
        let v = t.slice(values, 1, i * hv, (i + 1) * hv)?;
        let (c, w) = attention(t, q, k, v)?;
        contexts.push(c);
        weights.push(w);
    }
    let mut avg = weights[0];
    for w in &weights[1..] {
        avg = t.add(avg, *w)?;
    }
    Ok((t.concat(&contexts, 0)?, t.scale(avg, 1.0 / heads as f64)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::gradcheck::{check_gradients, GradCheck};
    use crate::numerics::{rng, Tensor};
    use rand_distr::{Distribution, StandardNormal};

    fn randn(shape: &[usize], seed: u64) -> Tensor {
        let mut r = rng::seeded(seed);
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| StandardNormal.sample(&mut r)).collect()).unwrap()
    }

    fn gru_from(_t: &Tape, v: &[Var], hidden: usize) -> GruVars {
        GruVars { w_x: v[2], w_h: v[3], b_x: v[4], b_h: v[5], hidden }
    }

    #[test]
    fn gru_zero_everything_gives_zero_state() {
        let t = Tape::new();
        let z = |s: &[usize]| t.constant(Tensor::zeros(s)).unwrap();
        let p = GruVars { w_x: z(&[3, 12]), w_h: z(&[4, 12]), b_x: z(&[12]), b_h: z(&[12]), hidden: 4 };
        let out = gru_cell(&t, z(&[3]), z(&[4]), &p).unwrap();
        assert_eq!(t.value(out).data(), &[0.0; 4]);
    }

    #[test]
    fn gru_is_deterministic() {
        let run = || {
            let t = Tape::new();
            let ins: Vec<Var> = [&[3][..], &[4], &[3, 12], &[4, 12], &[12], &[12]]
                .iter()
                .enumerate()
                .map(|(i, s)| t.constant(randn(s, i as u64)).unwrap())
                .collect();
            let out = gru_cell(&t, ins[0], ins[1], &gru_from(&t, &ins, 4)).unwrap();
            t.value(out).data().to_vec()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn gru_gradients() {
        let inputs = vec![
            randn(&[3], 1),
            randn(&[4], 2),
            randn(&[3, 12], 3),
            randn(&[4, 12], 4),
            randn(&[12], 5),
            randn(&[12], 6),
        ];
        let f = |t: &Tape, v: &[Var]| {
            let p = gru_from(t, v, 4);
            let s1 = gru_cell(t, v[0], v[1], &p)?;
            let s2 = gru_cell(t, v[0], s1, &p)?;
            t.sum(t.mul(s2, s2)?)
        };
        let r = check_gradients(&inputs, &f, &GradCheck::default()).unwrap();
        assert!(r.passed(), "{r:?}");
    }

    #[test]
    fn attention_single_frame_and_equal_keys() {
        let t = Tape::new();
        let q = t.constant(randn(&[3], 1)).unwrap();
        let k = t.constant(randn(&[1, 3], 2)).unwrap();
        let v = t.constant(randn(&[1, 2], 3)).unwrap();
        let (c, w) = attention(&t, q, k, v).unwrap();
        assert_eq!(t.value(w).data(), &[1.0]);
        assert_eq!(t.value(c).data(), t.value(v).data());

        let row = randn(&[3], 4).into_data();
        let keys = t.constant(Tensor::matrix(4, 3, row.repeat(4)).unwrap()).unwrap();
        let vals = t.constant(randn(&[4, 2], 5)).unwrap();
        let (_, w) = attention(&t, q, keys, vals).unwrap();
        assert!(t.value(w).data().iter().all(|x| (x - 0.25).abs() < 1e-15));
        assert!(attention(&t, q, vals, vals).is_err());
    }

    #[test]
    fn attention_gradients() {
        let inputs = vec![randn(&[4], 10), randn(&[5, 4], 11), randn(&[5, 3], 12), randn(&[3], 13)];
        let f = |t: &Tape, v: &[Var]| {
            let (c, w) = attention(t, v[0], v[1], v[2])?;
            let a = t.sum(t.mul(c, v[3])?)?;
            let b = t.sum(t.mul(w, w)?)?;
            t.add(a, b)
        };
        let r = check_gradients(&inputs, &f, &GradCheck::default()).unwrap();
        assert!(r.passed(), "{r:?}");
        let f2 = |t: &Tape, v: &[Var]| {
            let vals = t.slice(v[1], 1, 0, 4)?;
            let (c, w) = multi_head_attention(t, v[0], v[1], vals, 2)?;
            t.add(t.sum(t.tanh(c)?)?, t.sum(t.mul(w, w)?)?)
        };
        let r = check_gradients(&inputs, &f2, &GradCheck::default()).unwrap();
        assert!(r.passed(), "{r:?}");
    }
}
