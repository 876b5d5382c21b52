use crate::error::{Error, Result};
use crate::networks::{NamedTensor, ParamStore};
use crate::tensor::Tensor;

pub const FLAG_OPT_M: u8 = 4;
pub const FLAG_OPT_V: u8 = 8;

/// Adam with decoupled weight decay:
/// `p -= lr * (wd * p + m_hat / (sqrt(v_hat) + eps))`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Completed updates.
    pub t: u64,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl AdamW {
    pub fn new(store: &ParamStore, weight_decay: f64) -> Self {
        let zeros = || -> Vec<Vec<f32>> {
            store
                .entries()
                .iter()
                .map(|e| if e.trainable { vec![0.0; e.tensor.len()] } else { Vec::new() })
                .collect()
        };
        AdamW {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            t: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    /// One update. `grads[i]` belongs to store entry `i`; `None` entries are
    /// skipped. With `clip`, gradients are scaled so their global L2 norm is
    /// at most the clip value. Returns the pre-clip gradient norm.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[Option<Tensor<f32>>], lr: f64, clip: Option<f64>) -> f64 {
        assert_eq!(grads.len(), store.len(), "one gradient slot per parameter");
        let norm = grads
            .iter()
            .flatten()
            .flat_map(|g| g.data())
            .map(|&x| (x as f64) * (x as f64))
            .sum::<f64>()
            .sqrt();
        let scale = match clip {
            Some(c) if norm > c => c / norm,
            _ => 1.0,
        };
        self.t += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let bc1 = 1.0 - b1.powi(self.t as i32);
        let bc2 = 1.0 - b2.powi(self.t as i32);
        let decay = (1.0 - lr * self.weight_decay) as f32;
        let step = (lr / bc1) as f32;
        let bc2_sqrt = bc2.sqrt() as f32;
        let (b1, b2, eps, scale) = (b1 as f32, b2 as f32, self.eps as f32, scale as f32);
        for (i, g) in grads.iter().enumerate() {
            let Some(g) = g else { continue };
            let e = store.entry_mut(i);
            assert!(e.trainable, "gradient for frozen parameter {}", e.name);
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (((p, &g), m), v) in e.tensor.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                let g = g * scale;
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *p = *p * decay - step * *m / (v.sqrt() / bc2_sqrt + eps);
            }
        }
        norm
    }

    /// Moment buffers as checkpoint tensors named `opt.m.<param>` / `opt.v.<param>`.
    pub fn to_tensors(&self, store: &ParamStore) -> Vec<NamedTensor> {
        let mut out = Vec::new();
        for (i, e) in store.entries().iter().enumerate().filter(|(_, e)| e.trainable) {
            for (prefix, flag, buf) in [("opt.m", FLAG_OPT_M, &self.m[i]), ("opt.v", FLAG_OPT_V, &self.v[i])] {
                out.push(NamedTensor {
                    name: format!("{prefix}.{}", e.name),
                    flags: flag,
                    tensor: Tensor::new(e.tensor.shape().to_vec(), buf.clone()),
                });
            }
        }
        out
    }

    pub fn from_tensors(store: &ParamStore, tensors: &[NamedTensor], weight_decay: f64, t: u64) -> Result<Self> {
        let mut opt = AdamW::new(store, weight_decay);
        opt.t = t;
        for (i, e) in store.entries().iter().enumerate().filter(|(_, e)| e.trainable) {
            for (prefix, flag) in [("opt.m", FLAG_OPT_M), ("opt.v", FLAG_OPT_V)] {
                let name = format!("{prefix}.{}", e.name);
                let t = tensors
                    .iter()
                    .find(|t| t.flags == flag && t.name == name)
                    .ok_or_else(|| Error::Config(format!("checkpoint lacks optimizer state `{name}`")))?;
                if t.tensor.shape() != e.tensor.shape() {
                    return Err(Error::Config(format!("optimizer state `{name}` has the wrong shape")));
                }
                let slot = if flag == FLAG_OPT_M { &mut opt.m[i] } else { &mut opt.v[i] };
                *slot = t.tensor.data().to_vec();
            }
        }
        Ok(opt)
    }
}
