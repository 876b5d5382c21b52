use std::cell::RefCell;
use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};

use super::config::NetworkConfig;
use crate::autograd::{BatchMoments, Graph, Var};
use crate::tensor::{Float, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub tensor: Tensor<f32>,
    /// `false` for running statistics, which are updated outside the optimizer.
    pub trainable: bool,
}

/// Named parameter grids in declaration order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor<f32>, trainable: bool) {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter {name}");
        self.index.insert(name.clone(), self.entries.len());
        self.entries.push(ParamEntry {
            name,
            tensor,
            trainable,
        });
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn entry_mut(&mut self, i: usize) -> &mut ParamEntry {
        &mut self.entries[i]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<f32>> {
        self.index_of(name).map(|i| &self.entries[i].tensor)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<f32>> {
        self.index_of(name).map(|i| &mut self.entries[i].tensor)
    }

    pub fn trainable_count(&self) -> usize {
        self.entries.iter().filter(|e| e.trainable).map(|e| e.tensor.len()).sum()
    }

    /// SHA-256 over names, shapes and values, hex encoded.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for e in &self.entries {
            h.update(e.name.as_bytes());
            for &d in e.tensor.shape() {
                h.update((d as u64).to_le_bytes());
            }
            for &v in e.tensor.data() {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    pub fn is_finite(&self) -> bool {
        self.entries.iter().all(|e| e.tensor.is_finite())
    }

    /// Folds batch moments into running statistics:
    /// `running = (1 - momentum) * running + momentum * batch`.
    pub fn apply_norm_updates(&mut self, updates: &[NormUpdate], momentum: f32) {
        for u in updates {
            for (slot, fresh) in [(u.mean_index, &u.moments.mean), (u.var_index, &u.moments.var)] {
                let t = &mut self.entries[slot].tensor;
                for (r, &b) in t.data_mut().iter_mut().zip(fresh) {
                    *r = (1.0 - momentum) * *r + momentum * b as f32;
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Init {
    /// Normal with std `sqrt(2 / fan_in)`.
    He(usize),
    /// Normal with std `sqrt(2 / (fan_in + fan_out))`.
    Xavier(usize, usize),
    Normal(f64),
    Zeros,
    Ones,
}

struct Spec {
    name: String,
    shape: Vec<usize>,
    init: Init,
    trainable: bool,
}

fn norm_specs(out: &mut Vec<Spec>, prefix: &str, c: usize, running: bool) {
    out.push(Spec {
        name: format!("{prefix}.gamma"),
        shape: vec![c],
        init: Init::Ones,
        trainable: true,
    });
    out.push(Spec {
        name: format!("{prefix}.beta"),
        shape: vec![c],
        init: Init::Zeros,
        trainable: true,
    });
    if running {
        out.push(Spec {
            name: format!("{prefix}.mean"),
            shape: vec![c],
            init: Init::Zeros,
            trainable: false,
        });
        out.push(Spec {
            name: format!("{prefix}.var"),
            shape: vec![c],
            init: Init::Ones,
            trainable: false,
        });
    }
}

fn linear_specs(out: &mut Vec<Spec>, prefix: &str, fan_in: usize, fan_out: usize, relu_after: bool) {
    out.push(Spec {
        name: format!("{prefix}.w"),
        shape: vec![fan_in, fan_out],
        init: if relu_after {
            Init::He(fan_in)
        } else {
            Init::Xavier(fan_in, fan_out)
        },
        trainable: true,
    });
    out.push(Spec {
        name: format!("{prefix}.b"),
        shape: vec![fan_out],
        init: Init::Zeros,
        trainable: true,
    });
}

fn conv_block_specs(out: &mut Vec<Spec>, prefix: &str, cin: usize, cout: usize) {
    out.push(Spec {
        name: format!("{prefix}.conv.w"),
        shape: vec![9 * cin, cout],
        init: Init::He(9 * cin),
        trainable: true,
    });
    norm_specs(out, &format!("{prefix}.bn"), cout, true);
}

fn specs(cfg: &NetworkConfig) -> Vec<Spec> {
    let mut s = Vec::new();
    let n = cfg.encoder_blocks.len();
    let mut cin = cfg.in_channels;
    // channel count entering each encoder block; these are the decoder skips
    let mut block_inputs = Vec::with_capacity(n);
    for (i, b) in cfg.encoder_blocks.iter().enumerate() {
        block_inputs.push(cin);
        conv_block_specs(&mut s, &format!("enc.{i}"), cin, b.channels);
        cin = b.channels;
    }
    for (i, &c) in cfg.decoder_channels.iter().enumerate() {
        let skip = block_inputs[n - 1 - i];
        conv_block_specs(&mut s, &format!("dec.{i}"), cin + skip, c);
        cin = c;
    }
    let (p, e) = (cfg.patch_size, cfg.embed_dim);
    linear_specs(&mut s, "head.patch", p * p * cin, e, false);
    s.push(Spec {
        name: "head.pos".into(),
        shape: vec![cfg.pos_grid, cfg.pos_grid, e],
        init: Init::Normal(0.1),
        trainable: true,
    });
    for l in 0..cfg.transformer_layers {
        let t = format!("head.tf.{l}");
        linear_specs(&mut s, &format!("{t}.qkv"), e, 3 * e, false);
        linear_specs(&mut s, &format!("{t}.proj"), e, e, false);
        norm_specs(&mut s, &format!("{t}.ln1"), e, false);
        linear_specs(&mut s, &format!("{t}.ff1"), e, cfg.ffn_dim, true);
        linear_specs(&mut s, &format!("{t}.ff2"), cfg.ffn_dim, e, false);
        norm_specs(&mut s, &format!("{t}.ln2"), e, false);
    }
    linear_specs(&mut s, "head.mlp1", e, cfg.head_hidden, true);
    linear_specs(&mut s, "head.mlp2", cfg.head_hidden, cfg.head_hidden, true);
    linear_specs(&mut s, "head.mlp3", cfg.head_hidden, cfg.n_bins, false);
    s.push(Spec {
        name: "head.conv3.w".into(),
        shape: vec![9 * cin, e],
        init: Init::Xavier(9 * cin, e),
        trainable: true,
    });
    s.push(Spec {
        name: "head.conv3.b".into(),
        shape: vec![e],
        init: Init::Zeros,
        trainable: true,
    });
    linear_specs(&mut s, "head.out", cfg.range_kernels, cfg.n_bins, false);
    s
}

/// Fresh parameters for `cfg`, deterministic in `seed`.
pub fn init_params(cfg: &NetworkConfig, seed: u64) -> ParamStore {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    for spec in specs(cfg) {
        let n: usize = spec.shape.iter().product();
        let normal = |std: f64, rng: &mut ChaCha8Rng| -> Vec<f32> {
            let d = Normal::new(0.0, std).expect("positive std");
            (0..n).map(|_| d.sample(rng) as f32).collect()
        };
        let data = match spec.init {
            Init::He(fan_in) => normal((2.0 / fan_in as f64).sqrt(), &mut rng),
            Init::Xavier(a, b) => normal((2.0 / (a + b) as f64).sqrt(), &mut rng),
            Init::Normal(std) => normal(std, &mut rng),
            Init::Zeros => vec![0.0; n],
            Init::Ones => vec![1.0; n],
        };
        store.push(spec.name, Tensor::new(spec.shape, data), spec.trainable);
    }
    store
}

/// Batch moments of one normalization layer, waiting to enter the running statistics.
#[derive(Debug, Clone)]
pub struct NormUpdate {
    pub mean_index: usize,
    pub var_index: usize,
    pub moments: BatchMoments<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics; parameters receive gradients.
    Train,
    /// Running statistics; parameters receive gradients (used for fine-grained checks).
    EvalWithGrad,
    /// Running statistics; everything constant.
    Eval,
}

/// A parameter store placed on a graph. Every forward pass through one
/// `Bound` reads the same leaf variables, which is how the HR and LR branches
/// share weights.
pub struct Bound<'g, 's, T: Float> {
    graph: &'g Graph<T>,
    store: &'s ParamStore,
    vars: Vec<Var<'g, T>>,
    mode: Mode,
    norm_updates: RefCell<Vec<NormUpdate>>,
}

impl<'g, 's, T: Float> Bound<'g, 's, T> {
    pub fn new(graph: &'g Graph<T>, store: &'s ParamStore, mode: Mode) -> Self {
        let grads = mode != Mode::Eval;
        let vars = store
            .entries()
            .iter()
            .map(|e| graph.leaf(e.tensor.cast(), grads && e.trainable))
            .collect();
        Bound {
            graph,
            store,
            vars,
            mode,
            norm_updates: RefCell::new(Vec::new()),
        }
    }

    pub fn graph(&self) -> &'g Graph<T> {
        self.graph
    }

    pub fn store(&self) -> &'s ParamStore {
        self.store
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn var(&self, name: &str) -> Var<'g, T> {
        let i = self
            .store
            .index_of(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"));
        self.vars[i]
    }

    /// Leaf variables in store order.
    pub fn vars(&self) -> &[Var<'g, T>] {
        &self.vars
    }

    pub(crate) fn record_norm(&self, prefix: &str, moments: BatchMoments<T>) {
        let idx = |s: &str| self.store.index_of(&format!("{prefix}.{s}")).expect("running stats");
        self.norm_updates.borrow_mut().push(NormUpdate {
            mean_index: idx("mean"),
            var_index: idx("var"),
            moments: BatchMoments {
                mean: moments.mean.iter().map(|v| v.f64()).collect(),
                var: moments.var.iter().map(|v| v.f64()).collect(),
            },
        });
    }

    pub fn take_norm_updates(&self) -> Vec<NormUpdate> {
        std::mem::take(&mut self.norm_updates.borrow_mut())
    }
}
