//! Executors: the same block code runs on plain tensors for inference or on
//! a [`Tape`] for training and gradient analysis.

use std::collections::HashMap;

use crate::autograd::{ParamId, ParamStore, Tape, Var};
use crate::error::Result;
use crate::nn::layers::{BatchNorm, Conv};
use crate::ops::batchnorm::{self, BatchStats, BnMode, BN_EPS};
use crate::ops::{conv, elementwise, pool, resize};
use crate::reparam::{execute_merged, merge_parallel_convs, MergedConvPlan};
use crate::tensor::Tensor;

/// Operations a block needs from its execution context.
pub trait Exec {
    type V: Clone;

    fn store(&self) -> &ParamStore;
    fn dims(&self, x: &Self::V) -> (usize, usize, usize, usize);
    fn conv(&mut self, x: &Self::V, c: &Conv) -> Result<Self::V>;

    /// Parallel convolutions; `inputs[i]` feeds `convs[i]`.
    fn conv_bank(&mut self, inputs: &[&Self::V], convs: &[&Conv]) -> Result<Vec<Self::V>> {
        inputs.iter().zip(convs).map(|(x, c)| self.conv(x, c)).collect()
    }

    fn batchnorm(&mut self, x: &Self::V, bn: &BatchNorm) -> Result<Self::V>;
    fn relu(&mut self, x: &Self::V) -> Self::V;
    fn sigmoid(&mut self, x: &Self::V) -> Self::V;
    fn add(&mut self, a: &Self::V, b: &Self::V) -> Result<Self::V>;
    fn concat(&mut self, parts: &[&Self::V]) -> Result<Self::V>;
    fn slice_channels(&mut self, x: &Self::V, start: usize, len: usize) -> Result<Self::V>;
    fn maxpool2(&mut self, x: &Self::V) -> Result<Self::V>;
    fn resize(&mut self, x: &Self::V, h: usize, w: usize) -> Result<Self::V>;
}

/// Plain forward pass with batchnorm in eval mode.
///
/// With `merge_banks` set, every [`Exec::conv_bank`] call runs as a single
/// merged convolution; plans are built on first use and cached.
pub struct InferExec<'a> {
    store: &'a ParamStore,
    merge_banks: bool,
    plans: HashMap<Vec<ParamId>, MergedConvPlan>,
}

impl<'a> InferExec<'a> {
    pub fn new(store: &'a ParamStore) -> Self {
        InferExec {
            store,
            merge_banks: false,
            plans: HashMap::new(),
        }
    }

    pub fn merged(store: &'a ParamStore) -> Self {
        InferExec {
            merge_banks: true,
            ..Self::new(store)
        }
    }

    pub fn merges_banks(&self) -> bool {
        self.merge_banks
    }

    fn plan_for(&mut self, convs: &[&Conv]) -> Result<&MergedConvPlan> {
        let key: Vec<ParamId> = convs.iter().map(|c| c.weight).collect();
        if !self.plans.contains_key(&key) {
            let store = self.store;
            let branches: Vec<_> = convs
                .iter()
                .map(|c| (c.spec, store.value(c.weight), c.bias.map(|b| store.value(b))))
                .collect();
            let plan = merge_parallel_convs(&branches)?;
            self.plans.insert(key.clone(), plan);
        }
        Ok(&self.plans[&key])
    }
}

impl Exec for InferExec<'_> {
    type V = Tensor;

    fn store(&self) -> &ParamStore {
        self.store
    }

    fn dims(&self, x: &Tensor) -> (usize, usize, usize, usize) {
        x.dims()
    }

    fn conv(&mut self, x: &Tensor, c: &Conv) -> Result<Tensor> {
        conv::conv2d(
            x,
            self.store.value(c.weight),
            c.bias.map(|b| self.store.value(b)),
            &c.spec,
        )
    }

    fn conv_bank(&mut self, inputs: &[&Tensor], convs: &[&Conv]) -> Result<Vec<Tensor>> {
        if !self.merge_banks || convs.len() < 2 {
            return inputs.iter().zip(convs).map(|(x, c)| self.conv(x, c)).collect();
        }
        let plan = self.plan_for(convs)?;
        execute_merged(plan, inputs).map(|(out, _)| out)
    }

    fn batchnorm(&mut self, x: &Tensor, bn: &BatchNorm) -> Result<Tensor> {
        let s = self.store;
        let mut mean = s.value(bn.running_mean).clone();
        let mut var = s.value(bn.running_var).clone();
        batchnorm::batchnorm(
            x,
            s.value(bn.gamma),
            s.value(bn.beta),
            &mut mean,
            &mut var,
            BN_EPS,
            BnMode::Eval,
        )
    }

    fn relu(&mut self, x: &Tensor) -> Tensor {
        elementwise::relu(x)
    }

    fn sigmoid(&mut self, x: &Tensor) -> Tensor {
        elementwise::sigmoid(x)
    }

    fn add(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        elementwise::add(a, b)
    }

    fn concat(&mut self, parts: &[&Tensor]) -> Result<Tensor> {
        elementwise::concat_channels(parts)
    }

    fn slice_channels(&mut self, x: &Tensor, start: usize, len: usize) -> Result<Tensor> {
        elementwise::slice_channels(x, start, len)
    }

    fn maxpool2(&mut self, x: &Tensor) -> Result<Tensor> {
        pool::maxpool2d(x, 2, 2)
    }

    fn resize(&mut self, x: &Tensor, h: usize, w: usize) -> Result<Tensor> {
        resize::bilinear_resize(x, h, w)
    }
}

/// Records the forward pass on a tape. In training mode batchnorm uses
/// batch statistics, which are collected for [`TapeExec::commit_running_stats`].
pub struct TapeExec<'a> {
    pub tape: Tape,
    store: &'a ParamStore,
    mode: BnMode,
    stats: Vec<(BatchNorm, BatchStats)>,
}

impl<'a> TapeExec<'a> {
    pub fn new(store: &'a ParamStore, mode: BnMode) -> Self {
        TapeExec {
            tape: Tape::new(),
            store,
            mode,
            stats: Vec::new(),
        }
    }

    pub fn mode(&self) -> BnMode {
        self.mode
    }

    /// Batch statistics observed so far, one entry per training-mode batchnorm call.
    pub fn batch_stats(&self) -> &[(BatchNorm, BatchStats)] {
        &self.stats
    }

    /// Folds the recorded batch statistics into the running estimates.
    pub fn commit_running_stats(stats: &[(BatchNorm, BatchStats)], store: &mut ParamStore) {
        for (bn, st) in stats {
            let mut mean = store.value(bn.running_mean).clone();
            let mut var = store.value(bn.running_var).clone();
            batchnorm::update_running(&mut mean, &mut var, st, bn.channels);
            store.get_mut(bn.running_mean).value = mean;
            store.get_mut(bn.running_var).value = var;
        }
    }

    pub fn into_parts(self) -> (Tape, Vec<(BatchNorm, BatchStats)>) {
        (self.tape, self.stats)
    }
}

impl Exec for TapeExec<'_> {
    type V = Var;

    fn store(&self) -> &ParamStore {
        self.store
    }

    fn dims(&self, x: &Var) -> (usize, usize, usize, usize) {
        self.tape.value(*x).dims()
    }

    fn conv(&mut self, x: &Var, c: &Conv) -> Result<Var> {
        let w = self.tape.param(self.store, c.weight);
        let b = c.bias.map(|b| self.tape.param(self.store, b));
        self.tape.conv2d(*x, w, b, &c.spec)
    }

    fn batchnorm(&mut self, x: &Var, bn: &BatchNorm) -> Result<Var> {
        let gamma = self.tape.param(self.store, bn.gamma);
        let beta = self.tape.param(self.store, bn.beta);
        match self.mode {
            BnMode::Train => {
                let (y, st) = self.tape.batchnorm_train(*x, gamma, beta, BN_EPS)?;
                self.stats.push((*bn, st));
                Ok(y)
            }
            BnMode::Eval => self.tape.batchnorm_eval(
                *x,
                gamma,
                beta,
                self.store.value(bn.running_mean),
                self.store.value(bn.running_var),
                BN_EPS,
            ),
        }
    }

    fn relu(&mut self, x: &Var) -> Var {
        self.tape.relu(*x)
    }

    fn sigmoid(&mut self, x: &Var) -> Var {
        self.tape.sigmoid(*x)
    }

    fn add(&mut self, a: &Var, b: &Var) -> Result<Var> {
        self.tape.add(*a, *b)
    }

    fn concat(&mut self, parts: &[&Var]) -> Result<Var> {
        let vars: Vec<Var> = parts.iter().map(|&&v| v).collect();
        self.tape.concat(&vars)
    }

    fn slice_channels(&mut self, x: &Var, start: usize, len: usize) -> Result<Var> {
        self.tape.slice_channels(*x, start, len)
    }

    fn maxpool2(&mut self, x: &Var) -> Result<Var> {
        self.tape.maxpool2d(*x, 2, 2)
    }

    fn resize(&mut self, x: &Var, h: usize, w: usize) -> Result<Var> {
        self.tape.resize(*x, h, w)
    }
}
