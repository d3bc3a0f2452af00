//! Independent evaluator for assessments: the reference step interpreter
//! plus a direct recursive robustness function, and generators for traces
//! and expressions.

use std::time::{Duration, Instant};

use drivefalsify_core::monitor::{requirement_assessments, requirement_result, robustness, trace_fitness};
use drivefalsify_core::testlang::ast::CmpOp;
use drivefalsify_core::testlang::machine::Sample;
use drivefalsify_core::testlang::{parse_block, Block, BlockKind, EvalContext, Expr};
use drivefalsify_core::Trace;
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::steps::{random_block, Reference};

/// Robustness by structural recursion, with negation as arithmetic negation.
pub fn oracle_rob(e: &Expr, ctx: &EvalContext) -> f64 {
    match e {
        Expr::Bool(true) => f64::INFINITY,
        Expr::Bool(false) => f64::NEG_INFINITY,
        Expr::Not(inner) => -oracle_rob(inner, ctx),
        Expr::And(a, b) => oracle_rob(a, ctx).min(oracle_rob(b, ctx)),
        Expr::Or(a, b) => oracle_rob(a, ctx).max(oracle_rob(b, ctx)),
        Expr::Cmp(op, a, b) => {
            let (p, q) = (a.eval_num(ctx), b.eval_num(ctx));
            match op {
                CmpOp::Le | CmpOp::Lt => q - p,
                CmpOp::Ge | CmpOp::Gt => p - q,
                CmpOp::Eq => -(p - q).abs(),
                CmpOp::Ne => (p - q).abs(),
            }
        }
        _ => unreachable!(),
    }
}

/// Truth with every strict comparison widened to include its boundary, after
/// pushing negation down to the atoms.
pub fn inclusive(e: &Expr, negated: bool, ctx: &EvalContext) -> bool {
    match e {
        Expr::Bool(b) => *b != negated,
        Expr::Not(inner) => inclusive(inner, !negated, ctx),
        Expr::And(a, b) if !negated => inclusive(a, false, ctx) && inclusive(b, false, ctx),
        Expr::And(a, b) => inclusive(a, true, ctx) || inclusive(b, true, ctx),
        Expr::Or(a, b) if !negated => inclusive(a, false, ctx) || inclusive(b, false, ctx),
        Expr::Or(a, b) => inclusive(a, true, ctx) && inclusive(b, true, ctx),
        Expr::Cmp(op, a, b) => {
            let (p, q) = (a.eval_num(ctx), b.eval_num(ctx));
            let upper = matches!(op, CmpOp::Le | CmpOp::Lt);
            let lower = matches!(op, CmpOp::Ge | CmpOp::Gt);
            match (op, negated) {
                _ if upper && !negated || lower && negated => p <= q,
                _ if lower && !negated || upper && negated => p >= q,
                (CmpOp::Eq, false) | (CmpOp::Ne, true) => p == q,
                _ => true,
            }
        }
        _ => unreachable!(),
    }
}

pub struct Expected {
    pub min: f64,
    pub min_time: Option<f64>,
    pub first_violation: Option<f64>,
}

pub fn brute_force(block: &Block, trace: &Trace) -> Expected {
    let columns: Vec<&[f64]> = block.observed.iter().map(|n| trace.get(n).unwrap()).collect();
    let rows: Vec<Vec<f64>> = (0..trace.len())
        .map(|k| columns.iter().map(|c| c[k]).collect())
        .collect();
    let reference = Reference { block };
    let mut out = Expected {
        min: f64::INFINITY,
        min_time: None,
        first_violation: None,
    };
    let mut config = Vec::new();
    for k in 0..trace.len() {
        let s = Sample {
            t: trace.time(k),
            signals: &rows[k],
            prev: &rows[k.saturating_sub(1)],
            params: &[],
        };
        config = if k == 0 {
            reference.initial(&s)
        } else {
            reference.next(&config, 0.0, &s)
        };
        let mut worst = f64::INFINITY;
        for &(step, entered) in &config {
            let ctx = reference.ctx(&s, s.t - entered);
            for v in &block.step(step).verifies {
                worst = worst.min(oracle_rob(&v.expr, &ctx) * v.scale);
            }
        }
        if worst < out.min {
            out.min = worst;
            out.min_time = Some(s.t);
        }
        if worst < 0.0 && out.first_violation.is_none() {
            out.first_violation = Some(s.t);
        }
    }
    out
}

/// Piecewise-constant signal: holds a value for a while, then jumps to one
/// of `grid` or to a uniform draw in `range`.
fn signal(rng: &mut ChaCha8Rng, len: usize, grid: &[f64], range: (f64, f64), hold: f64) -> Vec<f64> {
    let pick = |rng: &mut ChaCha8Rng| {
        if rng.random_bool(0.6) {
            grid[rng.random_range(0..grid.len())]
        } else {
            rng.random_range(range.0..range.1)
        }
    };
    let mut v = pick(rng);
    (0..len)
        .map(|_| {
            if rng.random_bool(hold) {
                v = pick(rng);
            }
            v
        })
        .collect()
}

pub fn shipped_trace(rng: &mut ChaCha8Rng, len: usize) -> Trace {
    let mut trace = Trace::new(0.01, len).unwrap();
    let pedal = [0.0, 0.0, 0.0, 5.0, 5.000001, 20.0];
    let desired = signal(rng, len, &[80.0, 100.0, 120.0], (60.0, 130.0), 0.0005);
    let offsets = signal(rng, len, &[-3.0, 3.0, 0.0, 2.9, -3.1], (-6.0, 6.0), 0.01);
    let velocity = desired.iter().zip(&offsets).map(|(d, o)| d + o).collect();
    for (name, values) in [
        ("desired_velocity", desired),
        ("velocity", velocity),
        ("driver_throttle", signal(rng, len, &pedal, (0.0, 10.0), 0.002)),
        ("driver_brake", signal(rng, len, &pedal, (0.0, 10.0), 0.002)),
        (
            "accel_long",
            signal(rng, len, &[5.0, -3.5, 0.0, 5.5, -4.0], (-6.0, 7.0), 0.05),
        ),
        (
            "jerk_long",
            signal(rng, len, &[10.0, -10.0, 0.0, 12.0], (-15.0, 15.0), 0.05),
        ),
        (
            "pitch_accel",
            signal(rng, len, &[3.0, -3.0, 0.0, 3.5], (-4.0, 4.0), 0.05),
        ),
    ] {
        trace.insert(name, values).unwrap();
    }
    trace
}

pub fn random_trace(rng: &mut ChaCha8Rng, len: usize) -> Trace {
    let grid: Vec<f64> = (-3..12).map(f64::from).collect();
    let mut trace = Trace::new(0.1, len).unwrap();
    let x = signal(rng, len, &grid, (-3.0, 12.0), 0.3);
    let z = signal(rng, len, &grid, (-3.0, 12.0), 0.3);
    trace.insert("x", x).unwrap();
    trace.insert("z", z).unwrap();
    trace
}

pub struct MonitorCheck {
    pub mismatches: Vec<String>,
    pub violating_traces: usize,
    pub elapsed: Duration,
}

/// Compares the online monitor with [`brute_force`] on `cases` random traces
/// of up to 10^4 samples, mixing the shipped requirements with random
/// assessments.
pub fn check_monitor(cases: usize, seed: u64) -> MonitorCheck {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shipped = requirement_assessments();
    let mut check = MonitorCheck {
        mismatches: Vec::new(),
        violating_traces: 0,
        elapsed: Duration::ZERO,
    };
    for case in 0..cases {
        let len = if rng.random_bool(0.05) {
            rng.random_range(5_000..=10_000)
        } else {
            rng.random_range(1..=2_000)
        };
        let (owned, trace);
        let block = if rng.random_bool(0.4) {
            trace = shipped_trace(&mut rng, len);
            &shipped[rng.random_range(0..shipped.len())]
        } else {
            let src = random_block(&mut rng, BlockKind::Assessment);
            owned = parse_block(&src).unwrap_or_else(|e| panic!("case {case}: {e}\n{src}"));
            trace = random_trace(&mut rng, len);
            &owned
        };
        let got = requirement_result(block, &trace).unwrap();
        let want = brute_force(block, &trace);
        // `==` rather than bit equality: negating a zero margin flips its sign.
        if got.min_robustness != want.min
            || got.min_time != want.min_time
            || got.first_violation_time != want.first_violation
        {
            check.mismatches.push(format!(
                "case {case} ({}): min {} at {:?} vs {} at {:?}",
                block.name, got.min_robustness, got.min_time, want.min, want.min_time
            ));
        }
        if want.min < 0.0 {
            check.violating_traces += 1;
        }
    }
    check.elapsed = started.elapsed();
    check
}

pub fn num_leaf() -> impl Strategy<Value = String> {
    prop_oneof![
        Just("x".to_string()),
        Just("z".to_string()),
        Just("prev(x)".to_string()),
        Just("t".to_string()),
        Just("et".to_string()),
        (-5i32..=5).prop_map(|v| v.to_string()),
        (-50i32..=50).prop_map(|v| format!("{:.1}", f64::from(v) / 10.0)),
    ]
}

pub fn num_expr() -> impl Strategy<Value = String> {
    num_leaf().prop_recursive(3, 12, 2, |inner| {
        prop_oneof![
            (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("({a} + {b})")),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("({a} - {b})")),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("({a} * {b})")),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("min({a}, {b})")),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("max({a}, {b})")),
            inner.clone().prop_map(|a| format!("abs({a})")),
            inner.prop_map(|a| format!("-({a})")),
        ]
    })
}

pub fn bool_expr() -> impl Strategy<Value = String> {
    let op = prop::sample::select(vec!["<", "<=", ">", ">=", "==", "!="]);
    let atom = prop_oneof![
        8 => (num_expr(), op, num_expr()).prop_map(|(a, op, b)| format!("{a} {op} {b}")),
        1 => Just("true".to_string()),
        1 => Just("false".to_string()),
    ];
    atom.prop_recursive(3, 10, 2, |inner| {
        prop_oneof![
            (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("({a} && {b})")),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("({a} || {b})")),
            inner.prop_map(|a| format!("!({a})")),
        ]
    })
}

pub fn value() -> impl Strategy<Value = f64> {
    prop_oneof![(-5i32..=5).prop_map(f64::from), -10.0f64..10.0]
}

pub fn verified_expr(src: &str) -> Expr {
    let text = format!("assessment \"p\" {{\n signals {{ x, z }}\n step S {{ verify({src}); }}\n}}\n");
    let block = parse_block(&text).unwrap_or_else(|e| panic!("{e}\n{text}"));
    block.step(block.roots()[0]).verifies[0].expr.clone()
}

pub type Point = (f64, f64, f64, f64, f64);

/// Checks one expression at one point: the sign of its robustness against
/// the boundary-inclusive truth, strict signs against plain truth, and the
/// value against [`oracle_rob`].
pub fn check_sign(src: &str, expr: &Expr, (x, z, px, t, et): Point) -> Result<(), String> {
    let signals = [x, z];
    let prev = [px, z];
    let ctx = EvalContext {
        signals: &signals,
        prev: &prev,
        params: &[],
        t,
        et,
    };
    let r = robustness(expr, &ctx).value();
    let at = format!("{src} at x={x} z={z} prev(x)={px} t={t} et={et}: robustness {r}");
    if (r >= 0.0) != inclusive(expr, false, &ctx) {
        return Err(format!("sign disagrees with truth, {at}"));
    }
    if (r > 0.0 && !expr.eval_bool(&ctx)) || (r < 0.0 && expr.eval_bool(&ctx)) {
        return Err(format!("strict sign disagrees with truth, {at}"));
    }
    if r != oracle_rob(expr, &ctx) {
        return Err(format!(
            "value differs from oracle {}, {at}",
            oracle_rob(expr, &ctx)
        ));
    }
    Ok(())
}

pub const POINTS_PER_EXPR: usize = 100;

/// `cases` random expressions, each checked at [`POINTS_PER_EXPR`] points.
pub fn check_sign_soundness(cases: u32) -> Result<usize, String> {
    let mut runner = TestRunner::new(Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    });
    let strategy = (
        bool_expr(),
        prop::collection::vec((value(), value(), value(), value(), value()), POINTS_PER_EXPR),
    );
    runner
        .run(&strategy, |(src, points)| {
            let expr = verified_expr(&src);
            for p in points {
                check_sign(&src, &expr, p).map_err(TestCaseError::fail)?;
            }
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    Ok(cases as usize * POINTS_PER_EXPR)
}

pub fn constant_trace(dt: f64, seconds: f64, signals: &[(&str, f64)]) -> Trace {
    let len = Trace::samples_for(seconds, dt);
    let mut trace = Trace::new(dt, len).unwrap();
    for &(name, v) in signals {
        trace.insert(name, vec![v; len]).unwrap();
    }
    trace
}

pub fn shipped(id: &str) -> &'static Block {
    requirement_assessments().iter().find(|b| b.name == id).unwrap()
}

pub fn cc_trace(signal: &str, v: f64) -> Trace {
    constant_trace(
        0.01,
        5.0,
        &[(signal, v), ("driver_throttle", 0.0), ("driver_brake", 0.0)],
    )
}

pub fn f1_trace(desired: f64, velocity: f64) -> Trace {
    constant_trace(
        0.01,
        40.0,
        &[
            ("desired_velocity", desired),
            ("velocity", velocity),
            ("driver_throttle", 0.0),
            ("driver_brake", 0.0),
        ],
    )
}

/// Fitness of constant traces sitting exactly on each requirement threshold.
pub fn boundary_fitnesses() -> Vec<(String, f64)> {
    let mut out = Vec::new();
    for (id, signal, v) in [
        ("D1", "accel_long", 5.0),
        ("D1", "accel_long", -3.5),
        ("D2", "jerk_long", 10.0),
        ("D2", "jerk_long", -10.0),
        ("D3", "pitch_accel", 3.0),
        ("D3", "pitch_accel", -3.0),
    ] {
        let f = trace_fitness(shipped(id), &cc_trace(signal, v)).unwrap().fitness;
        out.push((format!("{id} {signal}={v}"), f));
    }
    for velocity in [97.0, 103.0] {
        let f = trace_fitness(shipped("F1"), &f1_trace(100.0, velocity))
            .unwrap()
            .fitness;
        out.push((format!("F1 velocity={velocity} desired=100"), f));
    }
    out
}
