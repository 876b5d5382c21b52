//! Reshapes, axis permutations, slicing and concatenation.

use std::rc::Rc;

use super::graph::Var;
use crate::tensor::{Float, Tensor};

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Copies `src` (shape `shape`) into axis order `perm`.
pub(crate) fn permute_data<T: Float>(src: &[T], shape: &[usize], perm: &[usize]) -> (Vec<usize>, Vec<T>) {
    let nd = shape.len();
    assert_eq!(perm.len(), nd);
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let in_strides = strides(shape);
    // stride in the source for each output axis
    let src_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let total = src.len();
    let mut out = Vec::with_capacity(total);
    if total == 0 {
        return (out_shape, out);
    }
    // Copy contiguous runs when the innermost axis stays innermost.
    let run = if perm[nd - 1] == nd - 1 { shape[nd - 1] } else { 1 };
    let outer_nd = if run > 1 { nd - 1 } else { nd };
    let mut idx = vec![0usize; outer_nd];
    let mut offset = 0usize;
    loop {
        out.extend_from_slice(&src[offset..offset + run]);
        // odometer increment over the outer output axes
        let mut ax = outer_nd;
        loop {
            if ax == 0 {
                return (out_shape, out);
            }
            ax -= 1;
            idx[ax] += 1;
            offset += src_strides[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            offset -= src_strides[ax] * idx[ax];
            idx[ax] = 0;
        }
    }
}

impl<'g, T: Float> Var<'g, T> {
    pub fn reshape(self, shape: impl Into<Vec<usize>>) -> Var<'g, T> {
        let shape = shape.into();
        let x = self.value();
        let old = x.shape().to_vec();
        let v = (*x).clone().reshaped(shape);
        self.graph
            .op(v, &[self], move |g, _| vec![Some(g.clone().reshaped(old.clone()))])
    }

    pub fn permute(self, perm: &[usize]) -> Var<'g, T> {
        let x = self.value();
        let (shape, data) = permute_data(x.data(), x.shape(), perm);
        let mut inverse = vec![0; perm.len()];
        for (i, &p) in perm.iter().enumerate() {
            inverse[p] = i;
        }
        self.graph.op(Tensor::new(shape, data), &[self], move |g, _| {
            let (s, d) = permute_data(g.data(), g.shape(), &inverse);
            vec![Some(Tensor::new(s, d))]
        })
    }

    /// Slice `[start, start + len)` along `axis`.
    pub fn narrow(self, axis: usize, start: usize, len: usize) -> Var<'g, T> {
        let x = self.value();
        let shape = x.shape().to_vec();
        assert!(start + len <= shape[axis], "narrow out of range");
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let n = shape[axis];
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * n + start) * inner;
            out.extend_from_slice(&x.data()[base..base + len * inner]);
        }
        let mut oshape = shape.clone();
        oshape[axis] = len;
        self.graph.op(Tensor::new(oshape, out), &[self], move |g, _| {
            let mut full = Tensor::zeros(shape.clone());
            let fd = full.data_mut();
            for o in 0..outer {
                let base = (o * n + start) * inner;
                fd[base..base + len * inner]
                    .copy_from_slice(&g.data()[o * len * inner..(o + 1) * len * inner]);
            }
            vec![Some(full)]
        })
    }

    /// Concatenates along the last axis; leading dimensions must agree.
    pub fn concat_last(self, other: Var<'g, T>) -> Var<'g, T> {
        let (a, b) = (self.value(), other.value());
        let (sa, sb) = (a.shape(), b.shape());
        assert_eq!(sa[..sa.len() - 1], sb[..sb.len() - 1], "concat_last: leading dims");
        let ca = *sa.last().unwrap();
        let cb = *sb.last().unwrap();
        let rows = a.len() / ca;
        let mut out = Vec::with_capacity(a.len() + b.len());
        for r in 0..rows {
            out.extend_from_slice(&a.data()[r * ca..(r + 1) * ca]);
            out.extend_from_slice(&b.data()[r * cb..(r + 1) * cb]);
        }
        let mut shape = sa.to_vec();
        *shape.last_mut().unwrap() = ca + cb;
        let (shape_a, shape_b) = (sa.to_vec(), sb.to_vec());
        self.graph.op(Tensor::new(shape, out), &[self, other], move |g, need| {
            let c = ca + cb;
            let split = |off: usize, w: usize, s: &[usize]| {
                let mut d = Vec::with_capacity(rows * w);
                for r in 0..rows {
                    d.extend_from_slice(&g.data()[r * c + off..r * c + off + w]);
                }
                Tensor::new(s.to_vec(), d)
            };
            vec![
                need[0].then(|| split(0, ca, &shape_a)),
                need[1].then(|| split(ca, cb, &shape_b)),
            ]
        })
    }

    /// Gathers elements by flat index into a 1-d tensor.
    pub fn index_select_flat(self, indices: Rc<Vec<usize>>) -> Var<'g, T> {
        let x = self.value();
        let out: Vec<T> = indices.iter().map(|&i| x.data()[i]).collect();
        let shape = x.shape().to_vec();
        self.graph
            .op(Tensor::new(vec![indices.len()], out), &[self], move |g, _| {
                let mut full = Tensor::zeros(shape.clone());
                let fd = full.data_mut();
                for (&i, &v) in indices.iter().zip(g.data()) {
                    fd[i] += v;
                }
                vec![Some(full)]
            })
    }

    /// Zero-pads the two spatial axes of a `(b, h, w, c)` tensor.
    pub fn pad_spatial(self, top: usize, bottom: usize, left: usize, right: usize) -> Var<'g, T> {
        let x = self.value();
        let &[b, h, w, c] = x.shape() else {
            panic!("pad_spatial expects (b, h, w, c), got {:?}", x.shape());
        };
        if top + bottom + left + right == 0 {
            return self;
        }
        let (oh, ow) = (h + top + bottom, w + left + right);
        let mut out = vec![T::zero(); b * oh * ow * c];
        for n in 0..b {
            for y in 0..h {
                let src = ((n * h + y) * w) * c;
                let dst = ((n * oh + y + top) * ow + left) * c;
                out[dst..dst + w * c].copy_from_slice(&x.data()[src..src + w * c]);
            }
        }
        self.graph
            .op(Tensor::new(vec![b, oh, ow, c], out), &[self], move |g, _| {
                let mut d = Vec::with_capacity(b * h * w * c);
                for n in 0..b {
                    for y in 0..h {
                        let src = ((n * oh + y + top) * ow + left) * c;
                        d.extend_from_slice(&g.data()[src..src + w * c]);
                    }
                }
                vec![Some(Tensor::new(vec![b, h, w, c], d))]
            })
    }
}
