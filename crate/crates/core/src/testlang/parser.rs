//! Recursive-descent parser for test blocks.
//!
//! ```text
//! block    := ("sequence" | "assessment") STRING "{" header* step+ "}"
//! header   := "duration" NUM ";"
//!           | "params" "{" (IDENT "in" "[" const "," const "]" ";")+ "}"
//!           | "signals" "{" IDENT ("," IDENT)* "}"
//!           | "observe" "{" IDENT ("," IDENT)* "}"
//! step     := "step" IDENT ["when" "(" expr ")"] "{" (assign | verify | step)+ "}"
//!             ("until" "(" expr ")" "->" IDENT)*
//! assign   := IDENT "=" expr ";"
//! verify   := "verify" "(" expr ["," NUM] ")" ";"
//! ```

use super::ast::*;
use super::lexer::{tokenize, Tok, Token};
use super::{ParseError, ParseErrorKind, PARAM_PREFIX};

const RESERVED: [&str; 15] = [
    "sequence",
    "assessment",
    "duration",
    "params",
    "signals",
    "observe",
    "step",
    "when",
    "until",
    "verify",
    "in",
    "t",
    "et",
    "true",
    "false",
];

pub fn parse_block(text: &str) -> Result<Block, ParseError> {
    let tokens = tokenize(text)?;
    let mut parser = Parser {
        tokens,
        pos: 0,
        kind: BlockKind::Sequence,
        params: Vec::new(),
        outputs: Vec::new(),
        observed: Vec::new(),
        steps: Vec::new(),
        pending: Vec::new(),
    };
    parser.block()
}

struct PendingTarget {
    step: usize,
    transition: usize,
    name: String,
    line: usize,
    col: usize,
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
    kind: BlockKind,
    params: Vec<SearchParameter>,
    outputs: Vec<String>,
    observed: Vec<String>,
    steps: Vec<StepNode>,
    pending: Vec<PendingTarget>,
}

impl Parser {
    fn peek(&self) -> &Token {
        &self.tokens[self.pos]
    }

    fn next(&mut self) -> Token {
        let token = self.tokens[self.pos].clone();
        if self.pos + 1 < self.tokens.len() {
            self.pos += 1;
        }
        token
    }

    fn error_here(&self, kind: ParseErrorKind) -> ParseError {
        let token = self.peek();
        ParseError {
            line: token.line,
            col: token.col,
            kind,
        }
    }

    fn syntax<T>(&self, expected: &str) -> Result<T, ParseError> {
        let found = match &self.peek().tok {
            Tok::Ident(s) => format!("`{s}`"),
            Tok::Num(n) => format!("number {n}"),
            Tok::Str(s) => format!("string \"{s}\""),
            Tok::Sym(s) => format!("`{s}`"),
            Tok::Eof => "end of input".to_string(),
        };
        Err(self.error_here(ParseErrorKind::Syntax(format!(
            "expected {expected}, found {found}"
        ))))
    }

    fn at_sym(&self, sym: &str) -> bool {
        matches!(&self.peek().tok, Tok::Sym(s) if *s == sym)
    }

    fn at_keyword(&self, word: &str) -> bool {
        matches!(&self.peek().tok, Tok::Ident(s) if s == word)
    }

    fn expect_sym(&mut self, sym: &str) -> Result<(), ParseError> {
        if self.at_sym(sym) {
            self.next();
            Ok(())
        } else {
            self.syntax(&format!("`{sym}`"))
        }
    }

    fn expect_keyword(&mut self, word: &str) -> Result<(), ParseError> {
        if self.at_keyword(word) {
            self.next();
            Ok(())
        } else {
            self.syntax(&format!("`{word}`"))
        }
    }

    fn ident(&mut self) -> Result<(String, usize, usize), ParseError> {
        let token = self.peek().clone();
        match token.tok {
            Tok::Ident(name) if !RESERVED.contains(&name.as_str()) => {
                self.next();
                Ok((name, token.line, token.col))
            }
            _ => self.syntax("identifier"),
        }
    }

    fn number(&mut self) -> Result<f64, ParseError> {
        let negative = if self.at_sym("-") {
            self.next();
            true
        } else {
            false
        };
        match self.peek().tok {
            Tok::Num(v) => {
                self.next();
                Ok(if negative { -v } else { v })
            }
            _ => self.syntax("number"),
        }
    }

    fn block(&mut self) -> Result<Block, ParseError> {
        self.kind = if self.at_keyword("sequence") {
            BlockKind::Sequence
        } else if self.at_keyword("assessment") {
            BlockKind::Assessment
        } else {
            return self.syntax("`sequence` or `assessment`");
        };
        self.next();
        let name = match self.peek().tok.clone() {
            Tok::Str(s) => {
                self.next();
                s
            }
            _ => return self.syntax("block name string"),
        };
        self.expect_sym("{")?;

        let mut duration = None;
        loop {
            if self.at_keyword("duration") {
                self.next();
                let value = self.number()?;
                if !(value.is_finite() && value > 0.0) {
                    return Err(self.error_here(ParseErrorKind::Syntax("duration must be positive".into())));
                }
                duration = Some(value);
                self.expect_sym(";")?;
            } else if self.at_keyword("params") {
                self.next();
                self.params_section()?;
            } else if self.at_keyword("signals") {
                self.next();
                let names = self.name_list()?;
                match self.kind {
                    BlockKind::Sequence => self.outputs.extend(names),
                    BlockKind::Assessment => self.observed.extend(names),
                }
            } else if self.at_keyword("observe") {
                if self.kind == BlockKind::Assessment {
                    return Err(self.error_here(ParseErrorKind::Syntax(
                        "`observe` is only valid in sequences; list monitored signals under `signals`".into(),
                    )));
                }
                self.next();
                let names = self.name_list()?;
                self.observed.extend(names);
            } else {
                break;
            }
        }

        self.steps.push(StepNode {
            name: String::from("<root>"),
            parent: None,
            children: Vec::new(),
            when: None,
            transitions: Vec::new(),
            actions: Vec::new(),
            verifies: Vec::new(),
        });
        while self.at_keyword("step") {
            self.step(Block::ROOT)?;
        }
        if self.steps.len() == 1 {
            return self.syntax("at least one `step`");
        }
        self.expect_sym("}")?;
        if self.peek().tok != Tok::Eof {
            return self.syntax("end of input");
        }

        self.resolve_targets()?;
        self.check_when_groups()?;
        let block = Block {
            kind: self.kind,
            name,
            duration,
            params: std::mem::take(&mut self.params),
            outputs: std::mem::take(&mut self.outputs),
            observed: std::mem::take(&mut self.observed),
            steps: std::mem::take(&mut self.steps),
        };
        if block.kind == BlockKind::Sequence {
            check_coverage(&block)?;
        }
        Ok(block)
    }

    fn params_section(&mut self) -> Result<(), ParseError> {
        self.expect_sym("{")?;
        loop {
            let (name, line, col) = self.ident()?;
            if !name.starts_with(PARAM_PREFIX) {
                return Err(ParseError {
                    line,
                    col,
                    kind: ParseErrorKind::InvalidParameter(format!(
                        "search parameter `{name}` must start with `{PARAM_PREFIX}`"
                    )),
                });
            }
            if self.params.iter().any(|p| p.name == name) {
                return Err(ParseError {
                    line,
                    col,
                    kind: ParseErrorKind::InvalidParameter(format!("`{name}` declared twice")),
                });
            }
            self.expect_keyword("in")?;
            self.expect_sym("[")?;
            let min = self.constant()?;
            self.expect_sym(",")?;
            let max = self.constant()?;
            self.expect_sym("]")?;
            self.expect_sym(";")?;
            if !(min.is_finite() && max.is_finite() && min <= max) {
                return Err(ParseError {
                    line,
                    col,
                    kind: ParseErrorKind::InvalidParameter(format!(
                        "`{name}` has an empty range [{min}, {max}]"
                    )),
                });
            }
            self.params.push(SearchParameter { name, min, max });
            if self.at_sym("}") {
                self.next();
                return Ok(());
            }
        }
    }

    fn constant(&mut self) -> Result<f64, ParseError> {
        let expr = self.additive()?;
        fn is_const(e: &Expr) -> bool {
            match e {
                Expr::Num(_) => true,
                Expr::Neg(a) => is_const(a),
                Expr::Arith(_, a, b) => is_const(a) && is_const(b),
                Expr::Call(_, args) => args.iter().all(is_const),
                _ => false,
            }
        }
        if !is_const(&expr) {
            return Err(self.error_here(ParseErrorKind::Syntax("parameter bounds must be constant".into())));
        }
        Ok(expr.eval_num(&EvalContext {
            signals: &[],
            prev: &[],
            params: &[],
            t: 0.0,
            et: 0.0,
        }))
    }

    fn name_list(&mut self) -> Result<Vec<String>, ParseError> {
        self.expect_sym("{")?;
        let mut names = Vec::new();
        loop {
            let (name, line, col) = self.ident()?;
            if name.starts_with(PARAM_PREFIX) {
                return Err(ParseError {
                    line,
                    col,
                    kind: ParseErrorKind::Syntax(format!("`{name}` uses the search-parameter prefix")),
                });
            }
            if self.outputs.contains(&name) || self.observed.contains(&name) || names.contains(&name) {
                return Err(ParseError {
                    line,
                    col,
                    kind: ParseErrorKind::Syntax(format!("signal `{name}` declared twice")),
                });
            }
            names.push(name);
            if self.at_sym(",") {
                self.next();
                if self.at_sym("}") {
                    break;
                }
            } else {
                break;
            }
        }
        self.expect_sym("}")?;
        Ok(names)
    }

    fn step(&mut self, parent: usize) -> Result<(), ParseError> {
        self.expect_keyword("step")?;
        let (name, line, col) = self.ident()?;
        if self.steps[parent]
            .children
            .iter()
            .any(|&c| self.steps[c].name == name)
        {
            return Err(ParseError {
                line,
                col,
                kind: ParseErrorKind::DuplicateStep(name),
            });
        }
        let index = self.steps.len();
        self.steps.push(StepNode {
            name: name.clone(),
            parent: Some(parent),
            children: Vec::new(),
            when: None,
            transitions: Vec::new(),
            actions: Vec::new(),
            verifies: Vec::new(),
        });
        self.steps[parent].children.push(index);

        if self.at_keyword("when") {
            self.next();
            self.expect_sym("(")?;
            let cond = self.boolean()?;
            self.expect_sym(")")?;
            self.steps[index].when = Some(cond);
        }

        self.expect_sym("{")?;
        let mut statements = 0;
        while !self.at_sym("}") {
            statements += 1;
            if self.at_keyword("step") {
                self.step(index)?;
            } else if self.at_keyword("verify") {
                if self.kind == BlockKind::Sequence {
                    return Err(self.error_here(ParseErrorKind::Syntax(
                        "`verify` is only allowed in assessments".into(),
                    )));
                }
                let verify_line = self.peek().line;
                self.next();
                self.expect_sym("(")?;
                let expr = self.boolean()?;
                let scale = if self.at_sym(",") {
                    self.next();
                    let scale = self.number()?;
                    if !(scale.is_finite() && scale > 0.0) {
                        return Err(
                            self.error_here(ParseErrorKind::Syntax("verify scale must be positive".into()))
                        );
                    }
                    scale
                } else {
                    1.0
                };
                self.expect_sym(")")?;
                self.expect_sym(";")?;
                self.steps[index].verifies.push(Verify {
                    expr,
                    scale,
                    line: verify_line,
                });
            } else if matches!(self.peek().tok, Tok::Ident(_)) {
                let (target, tline, tcol) = self.ident()?;
                if self.kind == BlockKind::Assessment {
                    return Err(ParseError {
                        line: tline,
                        col: tcol,
                        kind: ParseErrorKind::Syntax("assignments are only allowed in sequences".into()),
                    });
                }
                let target = self.outputs.iter().position(|s| *s == target).ok_or(ParseError {
                    line: tline,
                    col: tcol,
                    kind: ParseErrorKind::UndeclaredSignal(target),
                })?;
                self.expect_sym("=")?;
                let value = self.numeric()?;
                self.expect_sym(";")?;
                self.steps[index].actions.push(Assign { target, value });
            } else {
                return self.syntax("`step`, `verify`, assignment or `}`");
            }
        }
        self.next();
        if statements == 0 {
            return Err(ParseError {
                line,
                col,
                kind: ParseErrorKind::EmptyStep(name),
            });
        }

        while self.at_keyword("until") {
            self.next();
            self.expect_sym("(")?;
            let condition = self.boolean()?;
            self.expect_sym(")")?;
            self.expect_sym("->")?;
            let (target, tline, tcol) = self.ident()?;
            let transition = self.steps[index].transitions.len();
            self.steps[index].transitions.push(Transition {
                condition,
                target: usize::MAX,
            });
            self.pending.push(PendingTarget {
                step: index,
                transition,
                name: target,
                line: tline,
                col: tcol,
            });
        }
        Ok(())
    }

    fn resolve_targets(&mut self) -> Result<(), ParseError> {
        for pending in std::mem::take(&mut self.pending) {
            let parent = self.steps[pending.step].parent.expect("steps have parents");
            let target = self.steps[parent]
                .children
                .iter()
                .copied()
                .find(|&c| self.steps[c].name == pending.name)
                .ok_or_else(|| ParseError {
                    line: pending.line,
                    col: pending.col,
                    kind: ParseErrorKind::UnknownTarget {
                        step: self.steps[pending.step].name.clone(),
                        target: pending.name.clone(),
                    },
                })?;
            self.steps[pending.step].transitions[pending.transition].target = target;
        }
        Ok(())
    }

    fn check_when_groups(&self) -> Result<(), ParseError> {
        for node in &self.steps {
            let children = &node.children;
            let Some(&first) = children.first() else {
                continue;
            };
            let grouped = self.steps[first].when.is_some();
            for (i, &c) in children.iter().enumerate() {
                let child = &self.steps[c];
                let last = i + 1 == children.len();
                let ok = if grouped {
                    (child.when.is_some() || last) && child.transitions.is_empty()
                } else {
                    child.when.is_none()
                };
                if !ok {
                    return Err(ParseError {
                        line: 0,
                        col: 0,
                        kind: ParseErrorKind::Syntax(format!(
                            "step `{}`: `when` steps must form a group of siblings without \
                             transitions (only the last sibling may omit `when`)",
                            child.name
                        )),
                    });
                }
            }
        }
        Ok(())
    }

    fn boolean(&mut self) -> Result<Expr, ParseError> {
        let expr = self.or_expr()?;
        if !expr.is_boolean() {
            return Err(self.error_here(ParseErrorKind::TypeMismatch(
                "expected a boolean condition".into(),
            )));
        }
        Ok(expr)
    }

    fn numeric(&mut self) -> Result<Expr, ParseError> {
        let expr = self.or_expr()?;
        if expr.is_boolean() {
            return Err(self.error_here(ParseErrorKind::TypeMismatch(
                "expected a numeric expression".into(),
            )));
        }
        Ok(expr)
    }

    fn type_error<T>(&self, msg: &str) -> Result<T, ParseError> {
        Err(self.error_here(ParseErrorKind::TypeMismatch(msg.to_string())))
    }

    fn or_expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.and_expr()?;
        while self.at_sym("||") {
            self.next();
            let rhs = self.and_expr()?;
            if !lhs.is_boolean() || !rhs.is_boolean() {
                return self.type_error("`||` needs boolean operands");
            }
            lhs = Expr::Or(Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn and_expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.not_expr()?;
        while self.at_sym("&&") {
            self.next();
            let rhs = self.not_expr()?;
            if !lhs.is_boolean() || !rhs.is_boolean() {
                return self.type_error("`&&` needs boolean operands");
            }
            lhs = Expr::And(Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn not_expr(&mut self) -> Result<Expr, ParseError> {
        if self.at_sym("!") {
            self.next();
            let inner = self.not_expr()?;
            if !inner.is_boolean() {
                return self.type_error("`!` needs a boolean operand");
            }
            return Ok(Expr::Not(Box::new(inner)));
        }
        self.comparison()
    }

    fn comparison(&mut self) -> Result<Expr, ParseError> {
        let lhs = self.additive()?;
        let op = match &self.peek().tok {
            Tok::Sym("<=") => CmpOp::Le,
            Tok::Sym("<") => CmpOp::Lt,
            Tok::Sym(">=") => CmpOp::Ge,
            Tok::Sym(">") => CmpOp::Gt,
            Tok::Sym("==") => CmpOp::Eq,
            Tok::Sym("!=") => CmpOp::Ne,
            _ => return Ok(lhs),
        };
        self.next();
        let rhs = self.additive()?;
        if lhs.is_boolean() || rhs.is_boolean() {
            return self.type_error("comparisons need numeric operands");
        }
        Ok(Expr::Cmp(op, Box::new(lhs), Box::new(rhs)))
    }

    fn additive(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.multiplicative()?;
        loop {
            let op = match &self.peek().tok {
                Tok::Sym("+") => ArithOp::Add,
                Tok::Sym("-") => ArithOp::Sub,
                _ => return Ok(lhs),
            };
            self.next();
            let rhs = self.multiplicative()?;
            if lhs.is_boolean() || rhs.is_boolean() {
                return self.type_error("arithmetic needs numeric operands");
            }
            lhs = Expr::Arith(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn multiplicative(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match &self.peek().tok {
                Tok::Sym("*") => ArithOp::Mul,
                Tok::Sym("/") => ArithOp::Div,
                _ => return Ok(lhs),
            };
            self.next();
            let rhs = self.unary()?;
            if lhs.is_boolean() || rhs.is_boolean() {
                return self.type_error("arithmetic needs numeric operands");
            }
            lhs = Expr::Arith(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if self.at_sym("-") {
            self.next();
            let inner = self.unary()?;
            if inner.is_boolean() {
                return self.type_error("cannot negate a boolean");
            }
            return Ok(match inner {
                Expr::Num(v) => Expr::Num(-v),
                other => Expr::Neg(Box::new(other)),
            });
        }
        self.primary()
    }

    fn primary(&mut self) -> Result<Expr, ParseError> {
        let token = self.peek().clone();
        match token.tok {
            Tok::Num(v) => {
                self.next();
                Ok(Expr::Num(v))
            }
            Tok::Sym("(") => {
                self.next();
                let inner = self.or_expr()?;
                self.expect_sym(")")?;
                Ok(inner)
            }
            Tok::Ident(name) => {
                self.next();
                match name.as_str() {
                    "true" => return Ok(Expr::Bool(true)),
                    "false" => return Ok(Expr::Bool(false)),
                    "t" => return Ok(Expr::Time),
                    "et" => return Ok(Expr::Elapsed),
                    "pi" => return Ok(Expr::Num(std::f64::consts::PI)),
                    _ => {}
                }
                if self.at_sym("(") {
                    return self.call(name, token.line, token.col);
                }
                self.reference(name, token.line, token.col)
            }
            _ => self.syntax("expression"),
        }
    }

    fn reference(&self, name: String, line: usize, col: usize) -> Result<Expr, ParseError> {
        if name.starts_with(PARAM_PREFIX) {
            return self
                .params
                .iter()
                .position(|p| p.name == name)
                .map(Expr::Param)
                .ok_or(ParseError {
                    line,
                    col,
                    kind: ParseErrorKind::UndeclaredParameter(name),
                });
        }
        self.observed
            .iter()
            .position(|s| *s == name)
            .map(Expr::Signal)
            .ok_or(ParseError {
                line,
                col,
                kind: ParseErrorKind::UndeclaredSignal(name),
            })
    }

    fn call(&mut self, name: String, line: usize, col: usize) -> Result<Expr, ParseError> {
        self.expect_sym("(")?;
        if name == "prev" {
            let (signal, sline, scol) = self.ident()?;
            self.expect_sym(")")?;
            return match self.reference(signal, sline, scol)? {
                Expr::Signal(i) => Ok(Expr::Prev(i)),
                _ => Err(ParseError {
                    line: sline,
                    col: scol,
                    kind: ParseErrorKind::TypeMismatch("`prev` takes a signal".into()),
                }),
            };
        }
        let (func, arity) = Func::from_name(&name).ok_or(ParseError {
            line,
            col,
            kind: ParseErrorKind::Syntax(format!("unknown function `{name}`")),
        })?;
        let mut args = Vec::new();
        if !self.at_sym(")") {
            loop {
                let arg = self.numeric()?;
                args.push(arg);
                if self.at_sym(",") {
                    self.next();
                } else {
                    break;
                }
            }
        }
        self.expect_sym(")")?;
        if args.len() != arity {
            return Err(ParseError {
                line,
                col,
                kind: ParseErrorKind::Syntax(format!(
                    "`{name}` takes {arity} argument(s), got {}",
                    args.len()
                )),
            });
        }
        Ok(Expr::Call(func, args))
    }
}

/// Every configuration a sequence can be in must assign every output.
fn check_coverage(block: &Block) -> Result<(), ParseError> {
    fn go(block: &Block, index: usize, assigned: &mut Vec<bool>) -> Result<(), ParseError> {
        let node = &block.steps[index];
        let saved = assigned.clone();
        for action in &node.actions {
            assigned[action.target] = true;
        }
        let chain_may_end = node.children.is_empty()
            || (node.uses_when(&block.steps)
                && node
                    .children
                    .last()
                    .is_some_and(|&c| block.steps[c].when.is_some()));
        if chain_may_end && index != Block::ROOT {
            if let Some(missing) = assigned.iter().position(|a| !a) {
                return Err(ParseError {
                    line: 0,
                    col: 0,
                    kind: ParseErrorKind::UnassignedSignal {
                        signal: block.outputs[missing].clone(),
                        step: node.name.clone(),
                    },
                });
            }
        }
        for &child in &node.children {
            go(block, child, assigned)?;
        }
        *assigned = saved;
        Ok(())
    }
    let mut assigned = vec![false; block.outputs.len()];
    go(block, Block::ROOT, &mut assigned)
}
