use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, shape_err, Result};
use crate::graph::AttentionCall;
use crate::{Graph, Real, Tensor, Var};

/// Forward products of scaled dot-product attention.
pub struct AttentionOutput<T> {
    /// `[B, T, C]` mixed values.
    pub output: Vec<T>,
    /// `[B, heads, T, S]` attention weights before dropout.
    pub weights: Vec<T>,
}

fn dims3(s: &[usize], what: &str) -> Result<[usize; 3]> {
    match *s {
        [b, t, c] => Ok([b, t, c]),
        _ => Err(shape_err!("{} must be [B,T,C], got {:?}", what, s)),
    }
}

/// Multi-head scaled dot-product attention on already projected inputs.
/// `keep` is an optional `[B, heads, T, S]` dropout mask whose entries are
/// either 0 or the inverse keep probability.
pub fn attention_forward<T: Real>(
    q: &[T],
    k: &[T],
    v: &[T],
    [b, t, s, c]: [usize; 4],
    heads: usize,
    keep: Option<&[T]>,
) -> AttentionOutput<T> {
    let d = c / heads;
    let scale = T::one() / T::lit(d as f64).sqrt();
    let mut weights = vec![T::zero(); b * heads * t * s];
    let mut output = vec![T::zero(); b * t * c];
    let mut mixed = vec![T::zero(); t * s];
    for bi in 0..b {
        for hd in 0..heads {
            let qb = &q[bi * t * c + hd * d..];
            let kb = &k[bi * s * c + hd * d..];
            let vb = &v[bi * s * c + hd * d..];
            let wb = &mut weights[(bi * heads + hd) * t * s..][..t * s];
            // scores (t x s) = Q_h (t x d) K_h^T (d x s)
            T::gemm(t, d, s, scale, qb, c, 1, kb, 1, c, T::zero(), wb, s, 1);
            for row in wb.chunks_mut(s) {
                let m = row.iter().fold(T::neg_infinity(), |a, &x| a.max(x));
                let mut z = T::zero();
                for x in row.iter_mut() {
                    *x = (*x - m).exp();
                    z += *x;
                }
                row.iter_mut().for_each(|x| *x /= z);
            }
            let p: &[T] = match keep {
                Some(mask) => {
                    let mb = &mask[(bi * heads + hd) * t * s..][..t * s];
                    mixed.iter_mut().zip(wb.iter().zip(mb)).for_each(|(o, (&w, &m))| *o = w * m);
                    &mixed
                }
                None => wb,
            };
            let ob = &mut output[bi * t * c + hd * d..];
            T::gemm(t, s, d, T::one(), p, s, 1, vb, c, 1, T::zero(), ob, c, 1);
        }
    }
    AttentionOutput { output, weights }
}

impl<T: Real> Graph<T> {
    /// `y = x W^T + b` over the last axis; `w` is `[Cout, Cin]`.
    pub fn linear(&self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let xs = self.shape(x);
        let ws = self.shape(w);
        let [cout, cin] = *ws.as_slice() else {
            return Err(shape_err!("linear weight must be [Cout,Cin], got {:?}", ws));
        };
        if xs.last() != Some(&cin) {
            return Err(shape_err!("linear: input {:?} does not end in {}", xs, cin));
        }
        if let Some(b) = b {
            if self.shape(b) != [cout] {
                return Err(shape_err!("linear bias must be [{}]", cout));
            }
        }
        let (xv, wv) = (self.value(x), self.value(w));
        let rows = xv.numel() / cin;
        let mut out = vec![T::zero(); rows * cout];
        if let Some(b) = b {
            let bv = self.value(b);
            for row in out.chunks_mut(cout) {
                row.copy_from_slice(bv.data());
            }
        }
        T::gemm(rows, cin, cout, T::one(), xv.data(), cin, 1, wv.data(), 1, cin, T::one(), &mut out, cout, 1);
        let mut shape = xs.clone();
        *shape.last_mut().unwrap() = cout;
        let mut parents = vec![x, w];
        parents.extend(b);
        Ok(self.push(Tensor::from_parts(shape, out), &parents, move |g, need| {
            let dx = need[0].then(|| {
                let mut dx = vec![T::zero(); rows * cin];
                T::gemm(rows, cout, cin, T::one(), g, cout, 1, wv.data(), cin, 1, T::zero(), &mut dx, cin, 1);
                dx
            });
            let dw = need[1].then(|| {
                let mut dw = vec![T::zero(); cout * cin];
                T::gemm(cout, rows, cin, T::one(), g, 1, cout, xv.data(), cin, 1, T::zero(), &mut dw, cin, 1);
                dw
            });
            let mut res = vec![dx, dw];
            if need.len() > 2 {
                let mut db = vec![T::zero(); cout];
                for row in g.chunks(cout) {
                    db.iter_mut().zip(row).for_each(|(d, &r)| *d += r);
                }
                res.push(Some(db));
            }
            res
        }))
    }

    /// Multi-head scaled dot-product attention over projected `[B,T,C]`
    /// queries and `[B,S,C]` keys/values. Each call is recorded in the
    /// graph's attention log.
    pub fn attention(
        &self,
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        keep_mask: Option<Tensor<T>>,
    ) -> Result<Var> {
        let [b, t, c] = dims3(&self.shape(q), "query")?;
        let [bk, s, ck] = dims3(&self.shape(k), "key")?;
        if self.shape(v) != [bk, s, ck] || bk != b || ck != c {
            return Err(shape_err!(
                "attention: query {:?}, key {:?}, value {:?} disagree",
                self.shape(q),
                self.shape(k),
                self.shape(v)
            ));
        }
        if heads == 0 || c % heads != 0 {
            return Err(invalid!("{} channels are not divisible into {} heads", c, heads));
        }
        if let Some(m) = &keep_mask {
            if m.shape() != [b, heads, t, s] {
                return Err(shape_err!("dropout mask must be [{b},{heads},{t},{s}]"));
            }
        }
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let fwd = attention_forward(
            qv.data(),
            kv.data(),
            vv.data(),
            [b, t, s, c],
            heads,
            keep_mask.as_ref().map(|m| m.data()),
        );
        self.log_attention(AttentionCall {
            batch: b,
            heads,
            query_tokens: t,
            key_tokens: s,
            channels: c,
            macs: 2 * (b * t * s * c) as u64,
        });
        let weights = fwd.weights;
        let y = Tensor::from_parts(vec![b, t, c], fwd.output);
        Ok(self.push(y, &[q, k, v], move |g, need| {
            let d = c / heads;
            let scale = T::one() / T::lit(d as f64).sqrt();
            let mut dq = vec![T::zero(); b * t * c];
            let mut dk = vec![T::zero(); b * s * c];
            let mut dv = vec![T::zero(); b * s * c];
            let mut dp = vec![T::zero(); t * s];
            let mut pm = vec![T::zero(); t * s];
            for bi in 0..b {
                for hd in 0..heads {
                    let off = (bi * heads + hd) * t * s;
                    let p = &weights[off..off + t * s];
                    let mask = keep_mask.as_ref().map(|m| &m.data()[off..off + t * s]);
                    let pmix: &[T] = match mask {
                        Some(m) => {
                            pm.iter_mut().zip(p.iter().zip(m)).for_each(|(o, (&w, &m))| *o = w * m);
                            &pm
                        }
                        None => p,
                    };
                    let gb = &g[bi * t * c + hd * d..];
                    let qb = &qv.data()[bi * t * c + hd * d..];
                    let kb = &kv.data()[bi * s * c + hd * d..];
                    let vb = &vv.data()[bi * s * c + hd * d..];
                    // dV_h (s x d) += P'^T (s x t) dO_h (t x d)
                    T::gemm(s, t, d, T::one(), pmix, 1, s, gb, c, 1, T::one(), &mut dv[bi * s * c + hd * d..], c, 1);
                    // dP' (t x s) = dO_h (t x d) V_h^T (d x s)
                    T::gemm(t, d, s, T::one(), gb, c, 1, vb, 1, c, T::zero(), &mut dp, s, 1);
                    if let Some(m) = mask {
                        dp.iter_mut().zip(m).for_each(|(x, &m)| *x *= m);
                    }
                    for (drow, prow) in dp.chunks_mut(s).zip(p.chunks(s)) {
                        let dot: T = drow.iter().zip(prow).map(|(&a, &b)| a * b).sum();
                        drow.iter_mut().zip(prow).for_each(|(x, &p)| *x = p * (*x - dot));
                    }
                    // dQ_h = dS K_h * scale ; dK_h = dS^T Q_h * scale
                    T::gemm(t, s, d, scale, &dp, s, 1, kb, c, 1, T::one(), &mut dq[bi * t * c + hd * d..], c, 1);
                    T::gemm(s, t, d, scale, &dp, 1, s, qb, c, 1, T::one(), &mut dk[bi * s * c + hd * d..], c, 1);
                }
            }
            vec![need[0].then_some(dq), need[1].then_some(dk), need[2].then_some(dv)]
        }))
    }
}
