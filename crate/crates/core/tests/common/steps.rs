//! Random block generator and a from-scratch reference interpreter for the
//! step semantics.

use drivefalsify_core::testlang::machine::{Sample, StepMachine};
use drivefalsify_core::testlang::{parse_block, Block, BlockKind, EvalContext};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const DT: f64 = 0.1;

fn atom(rng: &mut dyn RngCore) -> String {
    match rng.random_range(0..6) {
        0 => format!("x > {}", rng.random_range(-2..12)),
        1 => format!("x <= {}", rng.random_range(-2..12)),
        2 => format!("et >= {:.1}", rng.random_range(0..30) as f64 * DT),
        3 => format!("t >= {:.1}", rng.random_range(0..60) as f64 * DT),
        4 => "x != prev(x)".to_string(),
        _ => format!("x == {}", rng.random_range(0..10)),
    }
}

pub fn condition(rng: &mut dyn RngCore) -> String {
    match rng.random_range(0..5) {
        0 => format!("{} && {}", atom(rng), atom(rng)),
        1 => format!("{} || {}", atom(rng), atom(rng)),
        2 => format!("!({})", atom(rng)),
        _ => atom(rng),
    }
}

fn verify_expr(rng: &mut dyn RngCore) -> String {
    let term = |rng: &mut dyn RngCore| -> String {
        match rng.random_range(0..5) {
            0 => "x".to_string(),
            1 => "z".to_string(),
            2 => "abs(x - z)".to_string(),
            3 => "max(x, z) - et".to_string(),
            _ => "x * 0.5 + t".to_string(),
        }
    };
    let cmp = |rng: &mut dyn RngCore| -> String {
        let op = ["<=", "<", ">=", ">", "==", "!="][rng.random_range(0..6)];
        format!("{} {op} {}", term(rng), rng.random_range(-3..12))
    };
    match rng.random_range(0..6) {
        0 => format!("{} && {}", cmp(rng), cmp(rng)),
        1 => format!("{} || !({})", cmp(rng), cmp(rng)),
        2 => format!("!({} && {})", cmp(rng), cmp(rng)),
        3 => "true".to_string(),
        _ => cmp(rng),
    }
}

struct Node {
    parent: Option<usize>,
    depth: usize,
}

/// A random block with at most three levels and five steps, written in the
/// block language so the parser is exercised as well. Sequences observe `x`
/// and assign `y`; assessments read `x` and `z`.
pub fn random_block(rng: &mut dyn RngCore, kind: BlockKind) -> String {
    let n = rng.random_range(1..=5);
    let mut nodes: Vec<Node> = Vec::with_capacity(n);
    for i in 0..n {
        let candidates: Vec<usize> = (0..i).filter(|&p| nodes[p].depth < 3).collect();
        let parent = if i == 0 || candidates.is_empty() || rng.random_bool(0.4) {
            None
        } else {
            Some(candidates[rng.random_range(0..candidates.len())])
        };
        let depth = parent.map_or(1, |p| nodes[p].depth + 1);
        nodes.push(Node { parent, depth });
    }
    let children: Vec<Vec<usize>> = std::iter::once(None)
        .chain((0..n).map(Some))
        .map(|p| (0..n).filter(|&i| nodes[i].parent == p).collect())
        .collect();

    fn render(
        out: &mut String,
        group: &[usize],
        children: &[Vec<usize>],
        kind: BlockKind,
        rng: &mut dyn RngCore,
        indent: usize,
    ) {
        let uses_when = rng.random_bool(0.35);
        let default_last = rng.random_bool(0.5);
        let pad = " ".repeat(indent);
        for (k, &s) in group.iter().enumerate() {
            let last = k + 1 == group.len();
            out.push_str(&format!("{pad}step S{s}"));
            if uses_when && !(last && default_last) {
                out.push_str(&format!(" when ({})", condition(rng)));
            }
            out.push_str(" {\n");
            match kind {
                BlockKind::Sequence => {
                    let value = match rng.random_range(0..3) {
                        0 => format!("{}", 10 * (s + 1)),
                        1 => format!("{} + et", 10 * (s + 1)),
                        _ => format!("{} + x * t", 10 * (s + 1)),
                    };
                    out.push_str(&format!("{pad}    y = {value};\n"));
                }
                BlockKind::Assessment => {
                    for _ in 0..rng.random_range(1..=2) {
                        if rng.random_bool(0.3) {
                            out.push_str(&format!("{pad}    verify({}, 2.5);\n", verify_expr(rng)));
                        } else {
                            out.push_str(&format!("{pad}    verify({});\n", verify_expr(rng)));
                        }
                    }
                }
            }
            render(out, &children[s + 1], children, kind, rng, indent + 4);
            out.push_str(&format!("{pad}}}"));
            if !uses_when {
                for _ in 0..rng.random_range(0..=2) {
                    let target = group[rng.random_range(0..group.len())];
                    out.push_str(&format!(" until ({}) -> S{target}", condition(rng)));
                }
            }
            out.push('\n');
        }
    }

    let mut src = match kind {
        BlockKind::Sequence => String::from("sequence \"random\" {\n    observe { x }\n    signals { y }\n"),
        BlockKind::Assessment => String::from("assessment \"random\" {\n    signals { x, z }\n"),
    };
    render(&mut src, &children[0], &children, kind, rng, 4);
    src.push_str("}\n");
    src
}

pub type Config = Vec<(usize, f64)>;

/// Re-derives the active configuration by replaying every sample from the
/// start, written as a recursion over the hierarchy.
pub struct Reference<'b> {
    pub block: &'b Block,
}

impl Reference<'_> {
    fn when_group(&self, parent: usize) -> bool {
        self.block
            .step(parent)
            .children
            .iter()
            .any(|&c| self.block.step(c).when.is_some())
    }

    fn select(&self, parent: usize, ctx: &EvalContext) -> Option<usize> {
        self.block
            .step(parent)
            .children
            .iter()
            .copied()
            .find(|&c| self.block.step(c).when.as_ref().is_none_or(|w| w.eval_bool(ctx)))
    }

    pub fn ctx<'a>(&self, s: &Sample<'a>, et: f64) -> EvalContext<'a> {
        EvalContext {
            signals: s.signals,
            prev: s.prev,
            params: &[],
            t: s.t,
            et,
        }
    }

    fn enter(&self, parent: usize, parent_et: f64, s: &Sample) -> Config {
        let kids = &self.block.step(parent).children;
        if kids.is_empty() {
            return Vec::new();
        }
        let pick = if self.when_group(parent) {
            self.select(parent, &self.ctx(s, parent_et))
        } else {
            Some(kids[0])
        };
        match pick {
            None => Vec::new(),
            Some(c) => {
                let mut chain = vec![(c, s.t)];
                chain.extend(self.enter(c, 0.0, s));
                chain
            }
        }
    }

    fn advance(&self, parent: usize, parent_et: f64, current: &[(usize, f64)], s: &Sample) -> Config {
        if self.when_group(parent) {
            let selected = self.select(parent, &self.ctx(s, parent_et));
            return match current.first() {
                Some(&(step, entered)) if Some(step) == selected => {
                    let mut chain = vec![(step, entered)];
                    chain.extend(self.advance(step, s.t - entered, &current[1..], s));
                    chain
                }
                _ => match selected {
                    Some(c) => {
                        let mut chain = vec![(c, s.t)];
                        chain.extend(self.enter(c, 0.0, s));
                        chain
                    }
                    None => Vec::new(),
                },
            };
        }
        let Some(&(step, entered)) = current.first() else {
            return Vec::new();
        };
        let ctx = self.ctx(s, s.t - entered);
        let fired = self
            .block
            .step(step)
            .transitions
            .iter()
            .find(|tr| tr.condition.eval_bool(&ctx));
        match fired {
            Some(tr) => {
                let mut chain = vec![(tr.target, s.t)];
                chain.extend(self.enter(tr.target, 0.0, s));
                chain
            }
            None => {
                let mut chain = vec![(step, entered)];
                chain.extend(self.advance(step, s.t - entered, &current[1..], s));
                chain
            }
        }
    }

    pub fn initial(&self, first: &Sample) -> Config {
        self.enter(Block::ROOT, 0.0, first)
    }

    /// Configuration at sample `s`, given the one at the previous sample.
    pub fn next(&self, config: &Config, start: f64, s: &Sample) -> Config {
        self.advance(Block::ROOT, s.t - start, config, s)
    }

    /// Configuration at the last of `samples`, replayed from the first.
    pub fn replay(&self, samples: &[Sample]) -> Config {
        let start = samples[0].t;
        let mut config = self.initial(&samples[0]);
        for s in &samples[1..] {
            config = self.next(&config, start, s);
        }
        config
    }

    pub fn output(&self, config: &Config, s: &Sample) -> f64 {
        let mut y = f64::NAN;
        for &(step, entered) in config {
            for action in &self.block.step(step).actions {
                y = action.value.eval_num(&self.ctx(s, s.t - entered));
            }
        }
        y
    }
}

pub struct StepCheck {
    /// First failure per mismatching block.
    pub mismatches: Vec<String>,
    pub configuration_changes: usize,
}

/// Runs the incremental machine and the replaying reference side by side on
/// `blocks` random sequences of 60 samples each.
pub fn check_step_semantics(blocks: usize, seed: u64) -> StepCheck {
    const SAMPLES: usize = 60;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut check = StepCheck {
        mismatches: Vec::new(),
        configuration_changes: 0,
    };
    for b in 0..blocks {
        let src = random_block(&mut rng, BlockKind::Sequence);
        let block = parse_block(&src).unwrap_or_else(|e| panic!("block {b}: {e}\n{src}"));
        assert!(block.depth() <= 3 && block.steps.len() <= 6);

        let xs: Vec<[f64; 1]> = (0..SAMPLES).map(|_| [rng.random_range(-2..12) as f64]).collect();
        let prevs: Vec<[f64; 1]> = (0..SAMPLES).map(|k| xs[k.saturating_sub(1)]).collect();
        let samples: Vec<Sample> = (0..SAMPLES)
            .map(|k| Sample {
                t: k as f64 * DT,
                signals: &xs[k],
                prev: &prevs[k],
                params: &[],
            })
            .collect();

        let reference = Reference { block: &block };
        let mut machine = StepMachine::new(&block);
        let mut last: Vec<usize> = Vec::new();
        for k in 0..SAMPLES {
            machine.update(&samples[k]);
            let mut out = [f64::NAN];
            machine.assign(&samples[k], &mut out);

            let expected = reference.replay(&samples[..=k]);
            let expected_steps: Vec<usize> = expected.iter().map(|&(s, _)| s).collect();
            let expected_y = reference.output(&expected, &samples[k]);
            if machine.active() != expected_steps.as_slice() || out[0].to_bits() != expected_y.to_bits() {
                check.mismatches.push(format!(
                    "block {b}, sample {k}: {:?} y={} vs {:?} y={}\n{src}",
                    machine.active_names(),
                    out[0],
                    block.names(&expected_steps),
                    expected_y
                ));
                break;
            }
            if machine.active() != last.as_slice() {
                check.configuration_changes += 1;
            }
            last = machine.active().to_vec();
        }
    }
    check
}
