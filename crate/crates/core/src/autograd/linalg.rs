//! Matrix products.

use super::graph::Var;
use crate::tensor::{gemm, Float, Tensor};

impl<'g, T: Float> Var<'g, T> {
    /// Batched product of `(b, m, k)` and `(b, k, n)` operands. With `ta` the
    /// left operand is stored `(b, k, m)`; with `tb` the right one is `(b, n, k)`.
    pub fn bmm(self, other: Var<'g, T>, ta: bool, tb: bool) -> Var<'g, T> {
        let (a, b) = (self.value(), other.value());
        let (&[ba, a1, a2], &[bb, b1, b2]) = (a.shape(), b.shape()) else {
            panic!("bmm expects rank-3 operands, got {:?} and {:?}", a.shape(), b.shape());
        };
        assert_eq!(ba, bb, "bmm batch mismatch");
        let (m, k) = if ta { (a2, a1) } else { (a1, a2) };
        let (kb, n) = if tb { (b2, b1) } else { (b1, b2) };
        assert_eq!(k, kb, "bmm inner dimension mismatch");
        let batch = ba;
        let mut out = vec![T::zero(); batch * m * n];
        for i in 0..batch {
            gemm(
                m,
                k,
                n,
                &a.data()[i * m * k..(i + 1) * m * k],
                ta,
                &b.data()[i * k * n..(i + 1) * k * n],
                tb,
                T::zero(),
                &mut out[i * m * n..(i + 1) * m * n],
            );
        }
        self.graph.op(
            Tensor::new(vec![batch, m, n], out),
            &[self, other],
            move |g, need| {
                let gd = g.data();
                let ga = need[0].then(|| {
                    let mut d = vec![T::zero(); batch * m * k];
                    for i in 0..batch {
                        let gi = &gd[i * m * n..(i + 1) * m * n];
                        let bi = &b.data()[i * k * n..(i + 1) * k * n];
                        let di = &mut d[i * m * k..(i + 1) * m * k];
                        if ta {
                            // (k, m) = B (k, n) · G^T (n, m)
                            gemm(k, n, m, bi, tb, gi, true, T::zero(), di);
                        } else {
                            // (m, k) = G (m, n) · B^T (n, k)
                            gemm(m, n, k, gi, false, bi, !tb, T::zero(), di);
                        }
                    }
                    Tensor::new(a.shape().to_vec(), d)
                });
                let gb = need[1].then(|| {
                    let mut d = vec![T::zero(); batch * k * n];
                    for i in 0..batch {
                        let gi = &gd[i * m * n..(i + 1) * m * n];
                        let ai = &a.data()[i * m * k..(i + 1) * m * k];
                        let di = &mut d[i * k * n..(i + 1) * k * n];
                        if tb {
                            // (n, k) = G^T (n, m) · A (m, k)
                            gemm(n, m, k, gi, true, ai, ta, T::zero(), di);
                        } else {
                            // (k, n) = A^T (k, m) · G (m, n)
                            gemm(k, m, n, ai, !ta, gi, false, T::zero(), di);
                        }
                    }
                    Tensor::new(b.shape().to_vec(), d)
                });
                vec![ga, gb]
            },
        )
    }

    /// Applies `x · w (+ bias)` over the last axis of `x`.
    pub fn linear(self, w: Var<'g, T>, bias: Option<Var<'g, T>>) -> Var<'g, T> {
        let (x, wv) = (self.value(), w.value());
        let &[kw, n] = wv.shape() else {
            panic!("linear weight must be (in, out), got {:?}", wv.shape());
        };
        let xs = x.shape().to_vec();
        let k = *xs.last().expect("linear on a scalar");
        assert_eq!(k, kw, "linear: input features {k} vs weight {kw}");
        let rows = x.len() / k;
        let mut out = vec![T::zero(); rows * n];
        gemm(rows, k, n, x.data(), false, wv.data(), false, T::zero(), &mut out);
        let mut oshape = xs.clone();
        *oshape.last_mut().unwrap() = n;
        let y = self.graph.op(Tensor::new(oshape, out), &[self, w], move |g, need| {
            let gx = need[0].then(|| {
                let mut d = vec![T::zero(); rows * k];
                gemm(rows, n, k, g.data(), false, wv.data(), true, T::zero(), &mut d);
                Tensor::new(xs.clone(), d)
            });
            let gw = need[1].then(|| {
                let mut d = vec![T::zero(); k * n];
                gemm(k, rows, n, x.data(), true, g.data(), false, T::zero(), &mut d);
                Tensor::new(vec![k, n], d)
            });
            vec![gx, gw]
        });
        match bias {
            Some(b) => y.add_broadcast(b),
            None => y,
        }
    }
}
