//! Incremental interpreter for the hierarchical step semantics.
//!
//! The active configuration is a chain of steps, one per level, from a root
//! step down to a leaf. At the first sample the machine enters the first root
//! step and its first-child chain. At every later sample each level is
//! visited top-down:
//!
//! * a step selected by `when` is re-selected from its sibling group;
//! * otherwise its transitions are tried in declaration order and the first
//!   true one re-enters the target (itself included).
//!
//! Whatever changes at a level replaces that level and everything below it
//! with a freshly entered chain, and lower levels are not visited in that
//! sample. Conditions see the elapsed time `et` of the step that owns them;
//! `when` conditions see the elapsed time of the parent. A `when` group in
//! which no condition holds leaves its level empty until one does.

use super::ast::{Block, EvalContext};

/// Signals, previous-sample signals and parameter values at one sample.
#[derive(Debug, Clone, Copy)]
pub struct Sample<'a> {
    pub t: f64,
    pub signals: &'a [f64],
    pub prev: &'a [f64],
    pub params: &'a [f64],
}

impl<'a> Sample<'a> {
    pub fn context(&self, et: f64) -> EvalContext<'a> {
        EvalContext {
            signals: self.signals,
            prev: self.prev,
            params: self.params,
            t: self.t,
            et,
        }
    }
}

#[derive(Debug, Clone)]
pub struct StepMachine<'b> {
    block: &'b Block,
    chain: Vec<usize>,
    entered: Vec<f64>,
    /// Time the block itself started; `et` of the synthetic root.
    start: f64,
    started: bool,
}

impl<'b> StepMachine<'b> {
    pub fn new(block: &'b Block) -> Self {
        Self {
            block,
            chain: Vec::with_capacity(block.depth()),
            entered: Vec::with_capacity(block.depth()),
            start: 0.0,
            started: false,
        }
    }

    pub fn block(&self) -> &'b Block {
        self.block
    }

    /// Active steps from root level to leaf.
    pub fn active(&self) -> &[usize] {
        &self.chain
    }

    pub fn active_names(&self) -> Vec<String> {
        self.block.names(&self.chain)
    }

    /// Elapsed time of the active step at `level` at time `t`.
    pub fn elapsed(&self, level: usize, t: f64) -> f64 {
        t - self.entered[level]
    }

    /// Advances to the given sample; the first call enters the initial
    /// configuration without evaluating transitions.
    pub fn update(&mut self, sample: &Sample) {
        if !self.started {
            self.started = true;
            self.start = sample.t;
            self.enter_below(Block::ROOT, sample);
            return;
        }
        for level in 0..=self.chain.len() {
            if level == self.chain.len() {
                // A `when` group where no sibling matched leaves the chain
                // open below its parent; retry the selection.
                let parent = if level == 0 {
                    Block::ROOT
                } else {
                    self.chain[level - 1]
                };
                if self.block.step(parent).uses_when(&self.block.steps) {
                    let parent_et = self.parent_elapsed(level, sample.t);
                    if let Some(next) = self.select_when(parent, sample, parent_et) {
                        self.enter(next, sample);
                    }
                }
                return;
            }
            let step = self.block.step(self.chain[level]);
            let parent = step.parent.expect("active steps have parents");
            if self.block.step(parent).uses_when(&self.block.steps) {
                let parent_et = self.parent_elapsed(level, sample.t);
                let selected = self.select_when(parent, sample, parent_et);
                if selected != Some(self.chain[level]) {
                    self.chain.truncate(level);
                    self.entered.truncate(level);
                    if let Some(next) = selected {
                        self.enter(next, sample);
                    }
                    return;
                }
                continue;
            }
            let ctx = sample.context(sample.t - self.entered[level]);
            if let Some(tr) = step.transitions.iter().find(|tr| tr.condition.eval_bool(&ctx)) {
                self.chain.truncate(level);
                self.entered.truncate(level);
                self.enter(tr.target, sample);
                return;
            }
        }
    }

    fn parent_elapsed(&self, level: usize, t: f64) -> f64 {
        if level == 0 {
            t - self.start
        } else {
            t - self.entered[level - 1]
        }
    }

    fn select_when(&self, parent: usize, sample: &Sample, parent_et: f64) -> Option<usize> {
        let ctx = sample.context(parent_et);
        self.block.step(parent).children.iter().copied().find(|&c| {
            self.block
                .step(c)
                .when
                .as_ref()
                .is_none_or(|cond| cond.eval_bool(&ctx))
        })
    }

    fn enter(&mut self, step: usize, sample: &Sample) {
        self.chain.push(step);
        self.entered.push(sample.t);
        self.enter_below(step, sample);
    }

    fn enter_below(&mut self, step: usize, sample: &Sample) {
        let node = self.block.step(step);
        let Some(&first) = node.children.first() else {
            return;
        };
        let child = if node.uses_when(&self.block.steps) {
            // The parent was either just entered or is the block itself.
            let et = if step == Block::ROOT {
                sample.t - self.start
            } else {
                0.0
            };
            match self.select_when(step, sample, et) {
                Some(c) => c,
                None => return,
            }
        } else {
            first
        };
        self.enter(child, sample);
    }

    /// Evaluates the active assignments top-down into `out`; deeper steps
    /// and later statements override earlier ones.
    pub fn assign(&self, sample: &Sample, out: &mut [f64]) {
        for (level, &step) in self.chain.iter().enumerate() {
            let ctx = sample.context(sample.t - self.entered[level]);
            for action in &self.block.step(step).actions {
                out[action.target] = action.value.eval_num(&ctx);
            }
        }
    }
}
