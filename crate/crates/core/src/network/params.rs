use std::cell::RefCell;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use srunet_tensor::{BatchStats, Gradients, Scalar, Tensor, Var};

use crate::error::{Error, Result};
use crate::seed::{self, Rng};

/// Index of an entry in a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamKind {
    /// Updated by the optimizer.
    Trainable,
    /// Running statistics; updated from batch statistics, never by gradients.
    Buffer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry<T: Scalar> {
    pub name: String,
    pub kind: ParamKind,
    pub value: Tensor<T>,
}

/// Ordered, named tensors of one model copy.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<T: Scalar> {
    entries: Vec<ParamEntry<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[ParamEntry<T>] {
        &self.entries
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn trainable_ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.ids().filter(|&id| self.entries[id.0].kind == ParamKind::Trainable)
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.entries[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.entries[id.0].value
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry<T> {
        &self.entries[id.0]
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    /// Total number of scalars in trainable entries.
    pub fn num_trainable(&self) -> usize {
        self.trainable_ids().map(|id| self.get(id).numel()).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|e| ParamEntry {
                    name: e.name.clone(),
                    kind: e.kind,
                    value: e.value.cast(),
                })
                .collect(),
        }
    }

    /// Errors unless `other` has the same names, kinds and shapes in order.
    pub fn check_congruent(&self, other: &ParamStore<T>) -> Result<()> {
        if self.len() != other.len() {
            return Err(Error::Shape(format!("{} vs {} entries", self.len(), other.len())));
        }
        for (a, b) in self.entries.iter().zip(&other.entries) {
            if a.name != b.name || a.kind != b.kind || a.value.shape() != b.value.shape() {
                return Err(Error::Shape(format!(
                    "entry {} {:?} vs {} {:?}",
                    a.name,
                    a.value.shape(),
                    b.name,
                    b.value.shape()
                )));
            }
        }
        Ok(())
    }

    /// Blends running statistics toward the batch statistics:
    /// `running = (1 - momentum)·running + momentum·batch`.
    pub fn apply_bn_updates(&mut self, updates: &[BnUpdate<T>], momentum: T) {
        let keep = T::one() - momentum;
        for u in updates {
            for (id, batch) in [(u.mean, &u.stats.mean), (u.var, &u.stats.var_unbiased)] {
                for (r, &b) in self.get_mut(id).data_mut().iter_mut().zip(batch) {
                    *r = keep * *r + momentum * b;
                }
            }
        }
    }

    /// Replaces values by name. Every entry of `self` must be matched.
    pub fn load_named(&mut self, mut lookup: impl FnMut(&str) -> Option<Tensor<T>>) -> Result<()> {
        for e in &mut self.entries {
            let t = lookup(&e.name).ok_or_else(|| Error::Checkpoint(format!("missing tensor {}", e.name)))?;
            if t.shape() != e.value.shape() {
                return Err(Error::Checkpoint(format!(
                    "tensor {} has shape {:?}, model expects {:?}",
                    e.name,
                    t.shape(),
                    e.value.shape()
                )));
            }
            e.value = t;
        }
        Ok(())
    }
}

/// Allocates and initializes parameters while a network is being built.
pub struct ParamBuilder<T: Scalar> {
    store: ParamStore<T>,
    rng: Rng,
    prefix: Vec<String>,
}

impl<T: Scalar> ParamBuilder<T> {
    pub fn new(seed: u64) -> Self {
        Self {
            store: ParamStore { entries: Vec::new() },
            rng: seed::rng(seed::derive(&[seed, 0x1417])),
            prefix: Vec::new(),
        }
    }

    /// Runs `f` with `name` appended to the parameter-name prefix.
    pub fn scope<R>(&mut self, name: &str, f: impl FnOnce(&mut Self) -> R) -> R {
        self.prefix.push(name.to_string());
        let out = f(self);
        self.prefix.pop();
        out
    }

    fn full_name(&self, name: &str) -> String {
        let mut s = self.prefix.join(".");
        if !s.is_empty() {
            s.push('.');
        }
        s.push_str(name);
        s
    }

    pub fn add(&mut self, name: &str, kind: ParamKind, value: Tensor<T>) -> ParamId {
        let name = self.full_name(name);
        debug_assert!(self.store.id_of(&name).is_none(), "duplicate parameter {name}");
        self.store.entries.push(ParamEntry { name, kind, value });
        ParamId(self.store.entries.len() - 1)
    }

    /// He-normal weights with fan-in `shape[1..]`.
    pub fn kaiming(&mut self, name: &str, shape: &[usize]) -> ParamId {
        let fan_in: usize = shape[1..].iter().product();
        let std = (2.0 / fan_in.max(1) as f64).sqrt();
        let dist = Normal::new(0.0, std).expect("std > 0");
        let rng = &mut self.rng;
        let t = Tensor::from_fn(shape, |_| T::lit(dist.sample(rng)));
        self.add(name, ParamKind::Trainable, t)
    }

    pub fn constant(&mut self, name: &str, shape: &[usize], value: f64, kind: ParamKind) -> ParamId {
        self.add(name, kind, Tensor::full(shape, T::lit(value)))
    }

    pub fn finish(self) -> ParamStore<T> {
        self.store
    }
}

/// Running-statistics update recorded by a training-mode batch norm.
#[derive(Debug, Clone)]
pub struct BnUpdate<T: Scalar> {
    pub mean: ParamId,
    pub var: ParamId,
    pub stats: BatchStats<T>,
}

/// Forward-pass context: which weights, which mode.
pub struct Ctx<'a, T: Scalar> {
    store: &'a ParamStore<T>,
    /// Batch norms use batch statistics and record running updates.
    pub train: bool,
    /// Trainable parameters become differentiable leaves.
    pub track: bool,
    vars: RefCell<Vec<Option<Var<T>>>>,
    bn: RefCell<Vec<BnUpdate<T>>>,
}

impl<'a, T: Scalar> Ctx<'a, T> {
    pub fn new(store: &'a ParamStore<T>, train: bool, track: bool) -> Self {
        Self {
            store,
            train,
            track,
            vars: RefCell::new(vec![None; store.len()]),
            bn: RefCell::new(Vec::new()),
        }
    }

    /// Eval mode without gradients.
    pub fn eval(store: &'a ParamStore<T>) -> Self {
        Self::new(store, false, false)
    }

    /// Training mode with gradients.
    pub fn train(store: &'a ParamStore<T>) -> Self {
        Self::new(store, true, true)
    }

    pub fn store(&self) -> &ParamStore<T> {
        self.store
    }

    /// The graph handle of a parameter, created once per context.
    pub fn param(&self, id: ParamId) -> Var<T> {
        let mut vars = self.vars.borrow_mut();
        vars[id.0]
            .get_or_insert_with(|| {
                let e = self.store.entry(id);
                if self.track && e.kind == ParamKind::Trainable {
                    Var::leaf(e.value.clone())
                } else {
                    Var::constant(e.value.clone())
                }
            })
            .clone()
    }

    pub(crate) fn record_bn(&self, update: BnUpdate<T>) {
        self.bn.borrow_mut().push(update);
    }

    pub fn take_bn_updates(&self) -> Vec<BnUpdate<T>> {
        std::mem::take(&mut self.bn.borrow_mut())
    }

    /// Gradients of trainable parameters touched by this forward, indexed
    /// like the store. Untouched parameters get `None`.
    pub fn param_grads(&self, grads: &Gradients<T>) -> Vec<Option<Tensor<T>>> {
        self.vars
            .borrow()
            .iter()
            .map(|v| v.as_ref().and_then(|v| grads.get(v).cloned()))
            .collect()
    }
}
