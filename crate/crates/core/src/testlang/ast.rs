//! Resolved syntax tree of a test block.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockKind {
    Sequence,
    Assessment,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArithOp {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CmpOp {
    Le,
    Lt,
    Ge,
    Gt,
    Eq,
    Ne,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Abs,
    Min,
    Max,
    Sin,
    Cos,
}

impl Func {
    pub fn from_name(name: &str) -> Option<(Func, usize)> {
        Some(match name {
            "abs" => (Func::Abs, 1),
            "min" => (Func::Min, 2),
            "max" => (Func::Max, 2),
            "sin" => (Func::Sin, 1),
            "cos" => (Func::Cos, 1),
            _ => return None,
        })
    }
}

/// Expression over observed signals, parameters, global time `t` and the
/// owning step's elapsed time `et`. Signal and parameter references are
/// indices into the block's tables.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Bool(bool),
    Signal(usize),
    /// Value of a signal at the previous sample (the current value at the first).
    Prev(usize),
    Param(usize),
    Time,
    Elapsed,
    Neg(Box<Expr>),
    Arith(ArithOp, Box<Expr>, Box<Expr>),
    Call(Func, Vec<Expr>),
    Cmp(CmpOp, Box<Expr>, Box<Expr>),
    And(Box<Expr>, Box<Expr>),
    Or(Box<Expr>, Box<Expr>),
    Not(Box<Expr>),
}

/// Values an expression is evaluated against.
#[derive(Debug, Clone, Copy)]
pub struct EvalContext<'a> {
    pub signals: &'a [f64],
    pub prev: &'a [f64],
    pub params: &'a [f64],
    pub t: f64,
    pub et: f64,
}

impl Expr {
    pub fn is_boolean(&self) -> bool {
        matches!(
            self,
            Expr::Bool(_) | Expr::Cmp(..) | Expr::And(..) | Expr::Or(..) | Expr::Not(_)
        )
    }

    pub fn eval_num(&self, ctx: &EvalContext) -> f64 {
        match self {
            Expr::Num(v) => *v,
            Expr::Signal(i) => ctx.signals[*i],
            Expr::Prev(i) => ctx.prev[*i],
            Expr::Param(i) => ctx.params[*i],
            Expr::Time => ctx.t,
            Expr::Elapsed => ctx.et,
            Expr::Neg(e) => -e.eval_num(ctx),
            Expr::Arith(op, a, b) => {
                let (a, b) = (a.eval_num(ctx), b.eval_num(ctx));
                match op {
                    ArithOp::Add => a + b,
                    ArithOp::Sub => a - b,
                    ArithOp::Mul => a * b,
                    ArithOp::Div => a / b,
                }
            }
            Expr::Call(f, args) => match f {
                Func::Abs => args[0].eval_num(ctx).abs(),
                Func::Min => args[0].eval_num(ctx).min(args[1].eval_num(ctx)),
                Func::Max => args[0].eval_num(ctx).max(args[1].eval_num(ctx)),
                Func::Sin => args[0].eval_num(ctx).sin(),
                Func::Cos => args[0].eval_num(ctx).cos(),
            },
            Expr::Bool(_) | Expr::Cmp(..) | Expr::And(..) | Expr::Or(..) | Expr::Not(_) => {
                unreachable!("boolean expression in numeric position")
            }
        }
    }

    pub fn eval_bool(&self, ctx: &EvalContext) -> bool {
        match self {
            Expr::Bool(b) => *b,
            Expr::Cmp(op, a, b) => {
                let (a, b) = (a.eval_num(ctx), b.eval_num(ctx));
                match op {
                    CmpOp::Le => a <= b,
                    CmpOp::Lt => a < b,
                    CmpOp::Ge => a >= b,
                    CmpOp::Gt => a > b,
                    CmpOp::Eq => a == b,
                    CmpOp::Ne => a != b,
                }
            }
            Expr::And(a, b) => a.eval_bool(ctx) && b.eval_bool(ctx),
            Expr::Or(a, b) => a.eval_bool(ctx) || b.eval_bool(ctx),
            Expr::Not(e) => !e.eval_bool(ctx),
            _ => unreachable!("numeric expression in boolean position"),
        }
    }

    /// Replaces every parameter reference with `values[index]`.
    pub fn substitute_params(&self, values: &[f64]) -> Expr {
        let sub = |e: &Expr| Box::new(e.substitute_params(values));
        match self {
            Expr::Param(i) => Expr::Num(values[*i]),
            Expr::Neg(e) => Expr::Neg(sub(e)),
            Expr::Not(e) => Expr::Not(sub(e)),
            Expr::Arith(op, a, b) => Expr::Arith(*op, sub(a), sub(b)),
            Expr::Cmp(op, a, b) => Expr::Cmp(*op, sub(a), sub(b)),
            Expr::And(a, b) => Expr::And(sub(a), sub(b)),
            Expr::Or(a, b) => Expr::Or(sub(a), sub(b)),
            Expr::Call(f, args) => Expr::Call(*f, args.iter().map(|a| a.substitute_params(values)).collect()),
            other => other.clone(),
        }
    }

    pub fn references_params(&self) -> bool {
        match self {
            Expr::Param(_) => true,
            Expr::Neg(e) | Expr::Not(e) => e.references_params(),
            Expr::Arith(_, a, b) | Expr::Cmp(_, a, b) | Expr::And(a, b) | Expr::Or(a, b) => {
                a.references_params() || b.references_params()
            }
            Expr::Call(_, args) => args.iter().any(Expr::references_params),
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Assign {
    /// Index into the block's output signals.
    pub target: usize,
    pub value: Expr,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Verify {
    pub expr: Expr,
    /// Positive factor applied to the robustness of `expr`.
    pub scale: f64,
    pub line: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub condition: Expr,
    /// Step index of a sibling of the source step.
    pub target: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepNode {
    pub name: String,
    pub parent: Option<usize>,
    pub children: Vec<usize>,
    /// Selection condition when the parent uses `when` decomposition.
    pub when: Option<Expr>,
    pub transitions: Vec<Transition>,
    pub actions: Vec<Assign>,
    pub verifies: Vec<Verify>,
}

impl StepNode {
    /// Children are selected by `when` conditions rather than transitions.
    pub fn uses_when(&self, steps: &[StepNode]) -> bool {
        self.children.first().is_some_and(|&c| steps[c].when.is_some())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchParameter {
    pub name: String,
    pub min: f64,
    pub max: f64,
}

impl SearchParameter {
    pub fn contains(&self, value: f64) -> bool {
        value.is_finite() && value >= self.min && value <= self.max
    }

    pub fn range(&self) -> f64 {
        self.max - self.min
    }

    /// Name without the `Hecate_` prefix.
    pub fn short_name(&self) -> &str {
        self.name.strip_prefix(super::PARAM_PREFIX).unwrap_or(&self.name)
    }
}

/// A parsed test sequence or test assessment.
///
/// `steps[0]` is a synthetic container whose children are the root steps.
#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub kind: BlockKind,
    pub name: String,
    /// Scenario length in seconds, when the block declares one.
    pub duration: Option<f64>,
    pub params: Vec<SearchParameter>,
    /// Signals the block assigns (sequences only).
    pub outputs: Vec<String>,
    /// Signals the block reads.
    pub observed: Vec<String>,
    pub steps: Vec<StepNode>,
}

impl Block {
    pub const ROOT: usize = 0;

    pub fn roots(&self) -> &[usize] {
        &self.steps[Self::ROOT].children
    }

    pub fn step(&self, index: usize) -> &StepNode {
        &self.steps[index]
    }

    pub fn find_step(&self, name: &str) -> Option<usize> {
        self.steps
            .iter()
            .skip(1)
            .position(|s| s.name == name)
            .map(|i| i + 1)
    }

    /// Step names along a chain of step indices.
    pub fn names(&self, chain: &[usize]) -> Vec<String> {
        chain.iter().map(|&i| self.steps[i].name.clone()).collect()
    }

    pub fn observed_index(&self, name: &str) -> Option<usize> {
        self.observed.iter().position(|s| s == name)
    }

    pub fn output_index(&self, name: &str) -> Option<usize> {
        self.outputs.iter().position(|s| s == name)
    }

    /// True when no expression in the block refers to a search parameter.
    pub fn is_parameter_free(&self) -> bool {
        self.steps.iter().all(|s| {
            s.when.as_ref().is_none_or(|e| !e.references_params())
                && s.transitions.iter().all(|t| !t.condition.references_params())
                && s.actions.iter().all(|a| !a.value.references_params())
                && s.verifies.iter().all(|v| !v.expr.references_params())
        })
    }

    /// Depth of the deepest step (root steps have depth 1).
    pub fn depth(&self) -> usize {
        fn go(block: &Block, i: usize) -> usize {
            block.steps[i]
                .children
                .iter()
                .map(|&c| 1 + go(block, c))
                .max()
                .unwrap_or(0)
        }
        go(self, Self::ROOT)
    }
}
