use std::fmt;

use serde::{Deserialize, Serialize};

/// Agent-local traffic quantities a reward program may read.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feature {
    Queue,
    Wait,
    Pressure,
    Outflow,
    Inflow,
    Occupancy,
    PhaseElapsed,
    Throughput,
}

impl Feature {
    pub const ALL: [Feature; 8] = [
        Feature::Queue,
        Feature::Wait,
        Feature::Pressure,
        Feature::Outflow,
        Feature::Inflow,
        Feature::Occupancy,
        Feature::PhaseElapsed,
        Feature::Throughput,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Feature::Queue => "queue",
            Feature::Wait => "wait",
            Feature::Pressure => "pressure",
            Feature::Outflow => "outflow",
            Feature::Inflow => "inflow",
            Feature::Occupancy => "occupancy",
            Feature::PhaseElapsed => "phase_elapsed",
            Feature::Throughput => "throughput",
        }
    }

    pub fn from_name(name: &str) -> Option<Feature> {
        Self::ALL.into_iter().find(|f| f.name() == name)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Func {
    Abs,
    Tanh,
    Min,
    Max,
    Clip,
}

impl Func {
    pub const ALL: [Func; 5] = [Func::Abs, Func::Tanh, Func::Min, Func::Max, Func::Clip];

    pub fn name(self) -> &'static str {
        match self {
            Func::Abs => "abs",
            Func::Tanh => "tanh",
            Func::Min => "min",
            Func::Max => "max",
            Func::Clip => "clip",
        }
    }

    pub fn from_name(name: &str) -> Option<Func> {
        Self::ALL.into_iter().find(|f| f.name() == name)
    }

    /// Accepted argument counts (min, max).
    pub fn arity(self) -> (usize, usize) {
        match self {
            Func::Abs | Func::Tanh => (1, 1),
            Func::Min | Func::Max => (2, usize::MAX),
            Func::Clip => (3, 3),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl BinOp {
    pub fn symbol(self) -> char {
        match self {
            BinOp::Add => '+',
            BinOp::Sub => '-',
            BinOp::Mul => '*',
            BinOp::Div => '/',
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Expr {
    Num(f64),
    Feature(Feature),
    Neg(Box<Expr>),
    Binary(BinOp, Box<Expr>, Box<Expr>),
    Call(Func, Vec<Expr>),
}

impl Expr {
    pub fn node_count(&self) -> usize {
        match self {
            Expr::Num(_) | Expr::Feature(_) => 1,
            Expr::Neg(e) => 1 + e.node_count(),
            Expr::Binary(_, l, r) => 1 + l.node_count() + r.node_count(),
            Expr::Call(_, args) => 1 + args.iter().map(Expr::node_count).sum::<usize>(),
        }
    }

    /// Leaves have depth 1.
    pub fn depth(&self) -> usize {
        match self {
            Expr::Num(_) | Expr::Feature(_) => 1,
            Expr::Neg(e) => 1 + e.depth(),
            Expr::Binary(_, l, r) => 1 + l.depth().max(r.depth()),
            Expr::Call(_, args) => 1 + args.iter().map(Expr::depth).max().unwrap_or(0),
        }
    }
}

/// Fully parenthesized form that re-parses to the same tree.
impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(v) => write!(f, "{v}"),
            Expr::Feature(x) => f.write_str(x.name()),
            Expr::Neg(e) => write!(f, "(-{e})"),
            Expr::Binary(op, l, r) => write!(f, "({l} {} {r})", op.symbol()),
            Expr::Call(func, args) => {
                write!(f, "{}(", func.name())?;
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{a}")?;
                }
                f.write_str(")")
            }
        }
    }
}
