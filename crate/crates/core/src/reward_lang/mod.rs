//! A small expression language for reward programs, and the three-stage
//! gate (syntax, sandboxed execution, safety bounds) every program must pass
//! before it can shape a training reward.
//!
//! Grammar, lowest precedence first:
//!
//! ```text
//! expr    := term (('+' | '-') term)*
//! term    := unary (('*' | '/') unary)*
//! unary   := ('-' | '+') unary | primary
//! primary := number | feature | func '(' expr (',' expr)* ')' | '(' expr ')'
//! func    := abs | tanh | min | max | clip
//! feature := queue | wait | pressure | outflow | inflow | occupancy
//!          | phase_elapsed | throughput
//! ```

mod ast;
mod eval;
mod parser;
mod validate;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use ast::{BinOp, Expr, Feature, Func};
pub use eval::{eval_budgeted, BudgetExceeded, FeatureMap, FeatureSampler, RecordedSampler, SyntheticSampler, SYNTHETIC_RANGES};
pub use validate::{gate, validate, OutputSummary, Stage, ValidatedProgram, ValidationConfig, ValidationReport};

pub const MAX_SOURCE_LEN: usize = 4096;
pub const MAX_NODES: usize = 128;
pub const MAX_DEPTH: usize = 16;

#[derive(Clone, Debug, Error, PartialEq)]
pub enum ParseError {
    #[error("empty program")]
    Empty,
    #[error("program is {len} characters, limit is {MAX_SOURCE_LEN}")]
    TooLong { len: usize },
    #[error("invalid character {ch:?} at {pos}")]
    InvalidCharacter { ch: char, pos: usize },
    #[error("malformed number '{text}' at {pos}")]
    InvalidNumber { text: String, pos: usize },
    #[error("unknown identifier '{name}' at {pos}")]
    UnknownIdentifier { name: String, pos: usize },
    #[error("unknown function '{name}' at {pos}")]
    UnknownFunction { name: String, pos: usize },
    #[error("expected {expected}, found {found} at {pos}")]
    Unexpected { found: String, expected: &'static str, pos: usize },
    #[error("expected {expected}, found end of input")]
    UnexpectedEnd { expected: &'static str },
    #[error("{func} does not take {got} arguments (at {pos})")]
    Arity { func: &'static str, got: usize, pos: usize },
    #[error("expression exceeds {limit} nodes")]
    TooManyNodes { limit: usize },
    #[error("expression depth {depth} exceeds {MAX_DEPTH}")]
    TooDeep { depth: usize },
}

/// A parsed reward expression together with its source text.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardProgram {
    pub source: String,
    pub ast: Expr,
    pub node_count: usize,
    pub depth: usize,
}

pub fn parse(source: &str) -> Result<RewardProgram, ParseError> {
    let ast = parser::parse_expr(source)?;
    Ok(RewardProgram { source: source.to_string(), node_count: ast.node_count(), depth: ast.depth(), ast })
}

/// Evaluates the program. Never panics; invalid arithmetic yields a non-finite value.
pub fn evaluate(program: &RewardProgram, features: &FeatureMap) -> f64 {
    eval::eval_expr(&program.ast, features)
}

/// Canonical, fully parenthesized source text.
pub fn print(program: &RewardProgram) -> String {
    program.ast.to_string()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn fm(queue: f64, outflow: f64) -> FeatureMap {
        FeatureMap { queue, outflow, ..Default::default() }
    }

    #[test]
    fn weighted_penalty_parses() {
        let p = parse("-(0.6*queue + 0.4*wait)/50").unwrap();
        // Div, Neg, Add, two Muls, four leaves, and the literal 50.
        assert_eq!(p.node_count, 10);
        assert_eq!(p.depth, 5);
        let v = evaluate(&p, &FeatureMap { queue: 10.0, wait: 20.0, ..Default::default() });
        let oracle = -(0.6 * 10.0 + 0.4 * 20.0) / 50.0;
        assert_eq!(v, oracle);
    }

    #[test]
    fn power_operator_is_rejected() {
        let e = parse("queue ** 2").unwrap_err();
        assert!(matches!(e, ParseError::Unexpected { pos: 7, .. }), "{e}");
    }

    #[test]
    fn injection_is_rejected() {
        assert_eq!(parse("import os").unwrap_err(), ParseError::UnknownIdentifier { name: "import".into(), pos: 0 });
        assert!(matches!(parse("__import__('os')"), Err(ParseError::InvalidCharacter { ch: '\'', .. })));
        assert!(matches!(parse("exec(queue)"), Err(ParseError::UnknownFunction { .. })));
    }

    #[test]
    fn distinct_errors() {
        assert_eq!(parse(""), Err(ParseError::Empty));
        assert_eq!(parse(&"1".repeat(5000)), Err(ParseError::TooLong { len: 5000 }));
        assert!(matches!(parse("queue +"), Err(ParseError::UnexpectedEnd { .. })));
        assert!(matches!(parse("clip(queue, 1)"), Err(ParseError::Arity { func: "clip", got: 2, .. })));
        assert!(matches!(parse("min(queue)"), Err(ParseError::Arity { func: "min", got: 1, .. })));
        assert!(matches!(parse("(queue"), Err(ParseError::UnexpectedEnd { .. })));
        assert!(matches!(parse("queue)"), Err(ParseError::Unexpected { .. })));
        assert!(matches!(parse("1.2.3"), Err(ParseError::InvalidNumber { .. })));
        let wide = vec!["queue"; 70].join(" + ");
        assert_eq!(parse(&wide), Err(ParseError::TooManyNodes { limit: MAX_NODES }));
        let long_chain = vec!["queue"; 20].join(" + ");
        assert!(matches!(parse(&long_chain), Err(ParseError::TooDeep { .. })));
    }

    #[test]
    fn constant_program() {
        let p = parse("0").unwrap();
        assert_eq!(evaluate(&p, &fm(7.0, 3.0)), 0.0);
    }

    #[test]
    fn clip_example() {
        let p = parse("clip(outflow - 0.1*queue, -1, 1)").unwrap();
        let raw = 2.0 - 0.1 * 5.0;
        assert_eq!(raw, 1.5);
        assert_eq!(evaluate(&p, &fm(5.0, 2.0)), 1.0);
    }

    #[test]
    fn division_by_zero_is_non_finite() {
        let p = parse("queue/0").unwrap();
        assert!(!evaluate(&p, &fm(3.0, 0.0)).is_finite());
        assert!(!evaluate(&p, &fm(0.0, 0.0)).is_finite());
    }

    #[test]
    fn n_ary_min_max() {
        let p = parse("max(queue, outflow, 4) - min(1, queue, 2)").unwrap();
        assert_eq!(evaluate(&p, &fm(5.0, 2.0)), 5.0 - 1.0);
    }

    fn leaf() -> impl Strategy<Value = Expr> {
        prop_oneof![
            (0.0f64..100.0).prop_map(|v| Expr::Num((v * 1000.0).round() / 1000.0)),
            (0usize..8).prop_map(|i| Expr::Feature(Feature::ALL[i])),
        ]
    }

    fn expr() -> impl Strategy<Value = Expr> {
        leaf().prop_recursive(5, 40, 3, |inner| {
            prop_oneof![
                inner.clone().prop_map(|e| Expr::Neg(Box::new(e))),
                (0usize..4, inner.clone(), inner.clone()).prop_map(|(op, l, r)| {
                    let op = [BinOp::Add, BinOp::Sub, BinOp::Mul, BinOp::Div][op];
                    Expr::Binary(op, Box::new(l), Box::new(r))
                }),
                inner.clone().prop_map(|e| Expr::Call(Func::Abs, vec![e])),
                inner.clone().prop_map(|e| Expr::Call(Func::Tanh, vec![e])),
                prop::collection::vec(inner.clone(), 2..4).prop_map(|a| Expr::Call(Func::Min, a)),
                prop::collection::vec(inner.clone(), 2..4).prop_map(|a| Expr::Call(Func::Max, a)),
                (inner.clone(), inner.clone(), inner).prop_map(|(a, b, c)| Expr::Call(Func::Clip, vec![a, b, c])),
            ]
        })
    }

    fn features() -> impl Strategy<Value = FeatureMap> {
        prop::array::uniform8(-1e6f64..1e6).prop_map(|v| {
            let mut m = FeatureMap::default();
            for (f, x) in Feature::ALL.iter().zip(v) {
                m.set(*f, x);
            }
            m
        })
    }

    proptest! {
        #[test]
        fn print_then_parse_is_identity(e in expr()) {
            prop_assume!(e.node_count() <= MAX_NODES && e.depth() <= MAX_DEPTH);
            let printed = e.to_string();
            let back = parse(&printed).unwrap();
            prop_assert_eq!(back.ast, e);
        }

        #[test]
        fn evaluation_is_total_and_pure(e in expr(), f in features()) {
            let p = RewardProgram { source: String::new(), node_count: e.node_count(), depth: e.depth(), ast: e };
            let a = evaluate(&p, &f);
            let b = evaluate(&p, &f);
            prop_assert!(a.to_bits() == b.to_bits() || (a.is_nan() && b.is_nan()));
        }

        #[test]
        fn arbitrary_text_never_panics(s in "[ -~]{0,200}") {
            let _ = parse(&s);
        }
    }
}
