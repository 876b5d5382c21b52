//! Pointwise arithmetic, broadcasting over trailing dimensions, and reductions.

use super::graph::Var;
use crate::tensor::{Float, Tensor};

fn zip_map<T: Float>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    assert_eq!(a.shape(), b.shape(), "elementwise shape mismatch");
    Tensor::new(
        a.shape().to_vec(),
        a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect(),
    )
}

fn is_suffix(long: &[usize], short: &[usize]) -> bool {
    short.len() <= long.len() && long[long.len() - short.len()..] == *short
}

/// Sums `g` (shaped like the long operand) down to the broadcast operand's length.
fn fold_to<T: Float>(g: &[T], short_shape: &[usize]) -> Tensor<T> {
    let n: usize = short_shape.iter().product();
    let mut out = vec![T::zero(); n];
    for chunk in g.chunks_exact(n) {
        for (o, &v) in out.iter_mut().zip(chunk) {
            *o += v;
        }
    }
    Tensor::new(short_shape.to_vec(), out)
}

impl<'g, T: Float> Var<'g, T> {
    fn unary(
        self,
        value: Tensor<T>,
        backward: impl Fn(&Tensor<T>) -> Tensor<T> + 'static,
    ) -> Var<'g, T> {
        self.graph
            .op(value, &[self], move |g, _| vec![Some(backward(g))])
    }

    pub fn add(self, other: Var<'g, T>) -> Var<'g, T> {
        let v = zip_map(&self.value(), &other.value(), |a, b| a + b);
        self.graph.op(v, &[self, other], |g, _| {
            vec![Some(g.clone()), Some(g.clone())]
        })
    }

    pub fn sub(self, other: Var<'g, T>) -> Var<'g, T> {
        let v = zip_map(&self.value(), &other.value(), |a, b| a - b);
        self.graph.op(v, &[self, other], |g, need| {
            vec![Some(g.clone()), need[1].then(|| g.map(|x| -x))]
        })
    }

    pub fn mul(self, other: Var<'g, T>) -> Var<'g, T> {
        let (a, b) = (self.value(), other.value());
        let v = zip_map(&a, &b, |x, y| x * y);
        self.graph.op(v, &[self, other], move |g, need| {
            vec![
                need[0].then(|| zip_map(g, &b, |g, y| g * y)),
                need[1].then(|| zip_map(g, &a, |g, x| g * x)),
            ]
        })
    }

    pub fn div(self, other: Var<'g, T>) -> Var<'g, T> {
        let (a, b) = (self.value(), other.value());
        let v = zip_map(&a, &b, |x, y| x / y);
        self.graph.op(v, &[self, other], move |g, need| {
            vec![
                need[0].then(|| zip_map(g, &b, |g, y| g / y)),
                need[1].then(|| {
                    let gb = zip_map(g, &a, |g, x| g * x);
                    zip_map(&gb, &b, |gx, y| -gx / (y * y))
                }),
            ]
        })
    }

    /// `self + other` where `other`'s shape is a suffix of `self`'s.
    pub fn add_broadcast(self, other: Var<'g, T>) -> Var<'g, T> {
        let (a, b) = (self.value(), other.value());
        assert!(
            is_suffix(a.shape(), b.shape()),
            "add_broadcast: {:?} is not a suffix of {:?}",
            b.shape(),
            a.shape()
        );
        let n = b.len().max(1);
        let mut v = (*a).clone();
        for chunk in v.data_mut().chunks_exact_mut(n) {
            for (x, &y) in chunk.iter_mut().zip(b.data()) {
                *x += y;
            }
        }
        let bshape = b.shape().to_vec();
        self.graph.op(v, &[self, other], move |g, need| {
            vec![
                need[0].then(|| g.clone()),
                need[1].then(|| fold_to(g.data(), &bshape)),
            ]
        })
    }

    /// `self * other` where `other`'s shape is a suffix of `self`'s.
    pub fn mul_broadcast(self, other: Var<'g, T>) -> Var<'g, T> {
        let (a, b) = (self.value(), other.value());
        assert!(is_suffix(a.shape(), b.shape()), "mul_broadcast shape");
        let n = b.len().max(1);
        let mut v = (*a).clone();
        for chunk in v.data_mut().chunks_exact_mut(n) {
            for (x, &y) in chunk.iter_mut().zip(b.data()) {
                *x *= y;
            }
        }
        self.graph.op(v, &[self, other], move |g, need| {
            let ga = need[0].then(|| {
                let mut ga = g.clone();
                for chunk in ga.data_mut().chunks_exact_mut(n) {
                    for (x, &y) in chunk.iter_mut().zip(b.data()) {
                        *x *= y;
                    }
                }
                ga
            });
            let gb = need[1].then(|| {
                let prod: Vec<T> = g.data().iter().zip(a.data()).map(|(&g, &x)| g * x).collect();
                fold_to(&prod, b.shape())
            });
            vec![ga, gb]
        })
    }

    /// `a * self + b`.
    pub fn affine(self, a: f64, b: f64) -> Var<'g, T> {
        let (ta, tb) = (T::of(a), T::of(b));
        let v = self.value().map(|x| ta * x + tb);
        self.unary(v, move |g| g.map(|g| g * ta))
    }

    pub fn scale(self, a: f64) -> Var<'g, T> {
        self.affine(a, 0.0)
    }

    pub fn neg(self) -> Var<'g, T> {
        self.affine(-1.0, 0.0)
    }

    pub fn relu(self) -> Var<'g, T> {
        let x = self.value();
        let v = x.map(|v| v.max(T::zero()));
        self.unary(v, move |g| {
            zip_map(g, &x, |g, x| if x > T::zero() { g } else { T::zero() })
        })
    }

    pub fn leaky_relu(self, slope: f64) -> Var<'g, T> {
        let s = T::of(slope);
        let x = self.value();
        let v = x.map(|v| if v > T::zero() { v } else { s * v });
        self.unary(v, move |g| {
            zip_map(g, &x, |g, x| if x > T::zero() { g } else { s * g })
        })
    }

    pub fn exp(self) -> Var<'g, T> {
        let v = self.value().map(|x| x.exp());
        let y = v.clone();
        self.unary(v, move |g| zip_map(g, &y, |g, y| g * y))
    }

    pub fn ln(self) -> Var<'g, T> {
        let x = self.value();
        let v = x.map(|x| x.ln());
        self.unary(v, move |g| zip_map(g, &x, |g, x| g / x))
    }

    pub fn sqr(self) -> Var<'g, T> {
        let x = self.value();
        let v = x.map(|x| x * x);
        let two = T::of(2.0);
        self.unary(v, move |g| zip_map(g, &x, |g, x| two * g * x))
    }

    /// `sqrt(max(x, 0))`, with zero gradient where the argument is not positive.
    pub fn sqrt_clamped(self) -> Var<'g, T> {
        let v = self.value().map(|x| x.max(T::zero()).sqrt());
        let y = v.clone();
        let half = T::of(0.5);
        self.unary(v, move |g| {
            zip_map(g, &y, |g, y| if y > T::zero() { half * g / y } else { T::zero() })
        })
    }

    pub fn abs(self) -> Var<'g, T> {
        let x = self.value();
        let v = x.map(|x| x.abs());
        self.unary(v, move |g| {
            zip_map(g, &x, |g, x| {
                if x > T::zero() {
                    g
                } else if x < T::zero() {
                    -g
                } else {
                    T::zero()
                }
            })
        })
    }

    pub fn sum_all(self) -> Var<'g, T> {
        let x = self.value();
        let shape = x.shape().to_vec();
        let s: T = x.data().iter().copied().sum();
        self.unary(Tensor::scalar(s), move |g| Tensor::full(shape.clone(), g.item()))
    }

    pub fn mean_all(self) -> Var<'g, T> {
        let n = self.value().len();
        self.sum_all().scale(1.0 / n as f64)
    }

    /// Sums out the last axis.
    pub fn sum_last(self) -> Var<'g, T> {
        let x = self.value();
        let shape = x.shape().to_vec();
        let c = *shape.last().expect("sum_last on a scalar");
        let out: Vec<T> = x.data().chunks_exact(c).map(|r| r.iter().copied().sum()).collect();
        let oshape = shape[..shape.len() - 1].to_vec();
        self.unary(Tensor::new(oshape, out), move |g| {
            let mut d = Vec::with_capacity(g.len() * c);
            for &v in g.data() {
                d.extend(std::iter::repeat_n(v, c));
            }
            Tensor::new(shape.clone(), d)
        })
    }
}

#[cfg(test)]
mod tests {
    use crate::autograd::Graph;
    use crate::tensor::Tensor;

    #[test]
    fn product_rule_through_shared_input() {
        let g = Graph::<f64>::new();
        let x = g.param(Tensor::new(vec![2], vec![3.0, -2.0]));
        let y = x.mul(x).add(x).sum_all(); // sum(x^2 + x)
        let grads = g.backward(y);
        assert_eq!(grads.get(x).unwrap().data(), &[7.0, -3.0]);
    }

    #[test]
    fn broadcast_gradients_fold() {
        let g = Graph::<f64>::new();
        let x = g.param(Tensor::new(vec![2, 3], vec![1., 2., 3., 4., 5., 6.]));
        let r = g.param(Tensor::new(vec![3], vec![10., 20., 30.]));
        let y = x.mul_broadcast(r).add_broadcast(r).sum_all();
        let grads = g.backward(y);
        assert_eq!(grads.get(x).unwrap().data(), &[10., 20., 30., 10., 20., 30.]);
        assert_eq!(grads.get(r).unwrap().data(), &[1. + 4. + 2., 2. + 5. + 2., 3. + 6. + 2.]);
    }

    #[test]
    fn constants_get_no_gradient() {
        let g = Graph::<f64>::new();
        let x = g.param(Tensor::new(vec![1], vec![2.0]));
        let c = g.constant(Tensor::new(vec![1], vec![5.0]));
        let y = x.mul(c).sum_all();
        let grads = g.backward(y);
        assert!(grads.get(c).is_none());
        assert_eq!(grads.get(x).unwrap().data(), &[5.0]);
    }
}
