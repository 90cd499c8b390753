//! Scalar reverse-mode differentiation.
//!
//! A [`Tape`] records every operation applied to [`Var`] handles. A backward
//! sweep over the tape yields gradients of any recorded output with respect
//! to any recorded input.
//!
//! One level of nesting is supported through [`Dual`], a forward-mode number
//! whose value and tangents are themselves [`Var`]s. Evaluating an expression
//! on `Dual<Var, N>` records the tangent arithmetic on the tape, so a
//! gradient taken with respect to `z` (the tangents) can itself be
//! differentiated with respect to parameters in the outer reverse sweep.
//! This is what the Langevin and Hamiltonian proposals need: their drift
//! contains `grad_z log gamma(z; phi)`.
//!
//! All model code is written against the [`Real`] trait and runs unchanged on
//! plain `f64`, on `Var`, and on `Dual<f64 | Var, N>`.

use std::cell::{Cell, RefCell};
use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};
use std::sync::atomic::{AtomicU64, Ordering};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AdError {
    #[error("{op}: input {value} is outside the domain")]
    Domain { op: &'static str, value: f64 },
    #[error("{op} produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("operands belong to different tapes")]
    TapeMismatch,
    #[error("nested differentiation is limited to one level")]
    NestingOverflow,
    #[error("{op} takes {expected} operand(s), got {got}")]
    Arity {
        op: &'static str,
        expected: usize,
        got: usize,
    },
}

/// Operation kinds that can be recorded on a tape.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Op {
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Exp,
    Log,
    /// `x^y` with both operands differentiable.
    Pow,
    /// `x^p` for a constant exponent.
    Powf(f64),
    Tanh,
    /// Leaky rectifier with a constant (non-differentiated) slope.
    LeakyRelu(f64),
    Sqrt,
    Min,
    Max,
    /// `log(exp(x) + exp(y))`, the binary step of a log-sum-exp fold.
    LogAddExp,
    /// `log(1 - exp(x))` for `x < 0`.
    Log1mExp,
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Mul => "mul",
            Op::Div => "div",
            Op::Neg => "neg",
            Op::Exp => "exp",
            Op::Log => "log",
            Op::Pow => "pow",
            Op::Powf(_) => "powf",
            Op::Tanh => "tanh",
            Op::LeakyRelu(_) => "leaky_relu",
            Op::Sqrt => "sqrt",
            Op::Min => "min",
            Op::Max => "max",
            Op::LogAddExp => "logaddexp",
            Op::Log1mExp => "log1mexp",
        }
    }

    fn arity(&self) -> usize {
        match self {
            Op::Add | Op::Sub | Op::Mul | Op::Div | Op::Pow | Op::Min | Op::Max | Op::LogAddExp => 2,
            _ => 1,
        }
    }
}

/// Forward value and local partials of `op` at `x` (and `y` for binary ops).
fn eval_op(op: Op, x: f64, y: f64) -> Result<(f64, [f64; 2]), AdError> {
    let domain = |value| Err(AdError::Domain { op: op.name(), value });
    Ok(match op {
        Op::Add => (x + y, [1.0, 1.0]),
        Op::Sub => (x - y, [1.0, -1.0]),
        Op::Mul => (x * y, [y, x]),
        Op::Div => (x / y, [1.0 / y, -x / (y * y)]),
        Op::Neg => (-x, [-1.0, 0.0]),
        Op::Exp => {
            let e = x.exp();
            (e, [e, 0.0])
        }
        Op::Log => {
            if x <= 0.0 {
                return domain(x);
            }
            (x.ln(), [1.0 / x, 0.0])
        }
        Op::Pow => {
            if x <= 0.0 {
                return domain(x);
            }
            let v = x.powf(y);
            (v, [y * x.powf(y - 1.0), v * x.ln()])
        }
        Op::Powf(p) => (x.powf(p), [p * x.powf(p - 1.0), 0.0]),
        Op::Tanh => {
            let t = x.tanh();
            (t, [1.0 - t * t, 0.0])
        }
        Op::LeakyRelu(slope) => {
            if x > 0.0 {
                (x, [1.0, 0.0])
            } else {
                (slope * x, [slope, 0.0])
            }
        }
        Op::Sqrt => {
            if x <= 0.0 {
                return domain(x);
            }
            let s = x.sqrt();
            (s, [0.5 / s, 0.0])
        }
        // Ties follow the first operand.
        Op::Min => {
            if x <= y {
                (x, [1.0, 0.0])
            } else {
                (y, [0.0, 1.0])
            }
        }
        Op::Max => {
            if x >= y {
                (x, [1.0, 0.0])
            } else {
                (y, [0.0, 1.0])
            }
        }
        Op::LogAddExp => {
            let v = log_add_exp(x, y);
            (v, [(x - v).exp(), (y - v).exp()])
        }
        Op::Log1mExp => {
            if x >= 0.0 {
                return domain(x);
            }
            let v = log1m_exp(x);
            (v, [-(x - v).exp(), 0.0])
        }
    })
}

pub(crate) fn log_add_exp(x: f64, y: f64) -> f64 {
    let m = x.max(y);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + (-(x - y).abs()).exp().ln_1p()
}

pub(crate) fn log1m_exp(x: f64) -> f64 {
    if x > -std::f64::consts::LN_2 {
        (-x.exp_m1()).ln()
    } else {
        (-x.exp()).ln_1p()
    }
}

const NO_PARENT: u32 = u32::MAX;

#[derive(Debug, Clone, Copy)]
struct Node {
    parents: [u32; 2],
    partials: [f64; 2],
}

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Append-only record of scalar operations.
///
/// A tape is meant to live for one trajectory (or one expression) and be
/// cleared or dropped afterwards. It is `Send` but not `Sync`.
pub struct Tape {
    id: u64,
    nodes: RefCell<Vec<Node>>,
    error: RefCell<Option<AdError>>,
    depth: Cell<u8>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl fmt::Debug for Tape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape")
            .field("id", &self.id)
            .field("len", &self.len())
            .field("error", &self.error.borrow())
            .finish()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: RefCell::new(Vec::new()),
            error: RefCell::new(None),
            depth: Cell::new(0),
        }
    }

    pub fn with_capacity(capacity: usize) -> Self {
        let tape = Self::new();
        tape.nodes.borrow_mut().reserve(capacity);
        tape
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Current nesting depth (0 outside [`Tape::nested_gradient`], 1 inside).
    pub fn depth(&self) -> u8 {
        self.depth.get()
    }

    /// First error raised by an operator-overloaded operation, if any.
    pub fn error(&self) -> Option<AdError> {
        self.error.borrow().clone()
    }

    /// Drops all nodes and any recorded error. Requires that no `Var` from
    /// this tape is still alive.
    pub fn clear(&mut self) {
        self.nodes.get_mut().clear();
        *self.error.get_mut() = None;
        self.depth.set(0);
    }

    /// A new independent input.
    pub fn var(&self, value: f64) -> Var<'_> {
        if !value.is_finite() {
            self.poison(AdError::NonFinite { op: "input" });
        }
        let idx = self.push(Node {
            parents: [NO_PARENT; 2],
            partials: [0.0; 2],
        });
        Var {
            tape: Some(self),
            idx,
            val: value,
        }
    }

    pub fn vars(&self, values: &[f64]) -> Vec<Var<'_>> {
        values.iter().map(|&v| self.var(v)).collect()
    }

    /// Records `op` applied to `operands`, checking domain, finiteness and
    /// tape membership.
    pub fn record<'t>(&'t self, op: Op, operands: &[Var<'t>]) -> Result<Var<'t>, AdError> {
        if operands.len() != op.arity() {
            return Err(AdError::Arity {
                op: op.name(),
                expected: op.arity(),
                got: operands.len(),
            });
        }
        for v in operands {
            if let Some(t) = v.tape {
                if t.id != self.id {
                    return Err(AdError::TapeMismatch);
                }
            }
        }
        let x = operands[0];
        let y = operands.get(1).copied().unwrap_or(Var::constant(0.0));
        let (value, partials) = eval_op(op, x.val, y.val)?;
        if !value.is_finite() {
            return Err(AdError::NonFinite { op: op.name() });
        }
        let idx = self.push(Node {
            parents: [x.node(), if op.arity() == 2 { y.node() } else { NO_PARENT }],
            partials,
        });
        Ok(Var {
            tape: Some(self),
            idx,
            val: value,
        })
    }

    /// A node with a caller-supplied value and local partial. Used to splice
    /// externally computed functions into a graph.
    pub fn custom_unary<'t>(&'t self, x: Var<'t>, value: f64, partial: f64) -> Var<'t> {
        let idx = self.push(Node {
            parents: [x.node(), NO_PARENT],
            partials: [partial, 0.0],
        });
        Var {
            tape: Some(self),
            idx,
            val: value,
        }
    }

    /// `d output / d input` for every input. Inputs with no path to the
    /// output, and constants, get 0.
    pub fn gradient(&self, output: Var<'_>, inputs: &[Var<'_>]) -> Result<Vec<f64>, AdError> {
        if let Some(e) = self.error() {
            return Err(e);
        }
        let Some(out_tape) = output.tape else {
            return Ok(vec![0.0; inputs.len()]);
        };
        if out_tape.id != self.id || inputs.iter().any(|v| v.tape.is_some_and(|t| t.id != self.id)) {
            return Err(AdError::TapeMismatch);
        }
        let adjoints = self.adjoints(output.idx);
        Ok(inputs
            .iter()
            .map(|v| match v.tape {
                Some(_) if (v.idx as usize) < adjoints.len() => adjoints[v.idx as usize],
                _ => 0.0,
            })
            .collect())
    }

    /// Backward sweep from `root`; returns the adjoint of every node up to it.
    fn adjoints(&self, root: u32) -> Vec<f64> {
        let nodes = self.nodes.borrow();
        let mut adj = vec![0.0; root as usize + 1];
        adj[root as usize] = 1.0;
        for i in (0..=root as usize).rev() {
            let a = adj[i];
            if a == 0.0 {
                continue;
            }
            let node = &nodes[i];
            for (p, d) in node.parents.iter().zip(node.partials) {
                if *p != NO_PARENT {
                    adj[*p as usize] += a * d;
                }
            }
        }
        adj
    }

    /// Mixed second derivatives `d/d phi_j (d f / d z_i)`.
    ///
    /// `f` receives `z` as forward-mode duals seeded with the unit tangents
    /// and returns a dual whose tangent holds `grad_z f`. Row `i` of the
    /// result is the gradient of that tangent's `i`-th component with
    /// respect to `phi`. Calling this again from inside `f` fails with
    /// [`AdError::NestingOverflow`].
    pub fn nested_gradient<'t, F, const N: usize>(
        &'t self,
        z: [f64; N],
        phi: &[Var<'t>],
        f: F,
    ) -> Result<Vec<Vec<f64>>, AdError>
    where
        F: FnOnce(&'t Tape, [Dual<Var<'t>, N>; N]) -> Result<Dual<Var<'t>, N>, AdError>,
    {
        if self.depth.get() > 0 {
            return Err(AdError::NestingOverflow);
        }
        self.depth.set(1);
        let seeded = Dual::seed(z.map(Var::constant));
        let out = f(self, seeded);
        self.depth.set(0);
        let out = out?;
        out.d.iter().map(|di| self.gradient(*di, phi)).collect()
    }

    fn push(&self, node: Node) -> u32 {
        let mut nodes = self.nodes.borrow_mut();
        let idx = nodes.len();
        assert!(idx < NO_PARENT as usize, "tape exceeded u32 node capacity");
        nodes.push(node);
        idx as u32
    }

    fn poison(&self, err: AdError) {
        let mut slot = self.error.borrow_mut();
        if slot.is_none() {
            *slot = Some(err);
        }
    }
}

/// Handle to a recorded scalar. Constants carry no tape.
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: Option<&'t Tape>,
    idx: u32,
    val: f64,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.tape {
            Some(t) => write!(f, "Var({} @ t{}#{})", self.val, t.id, self.idx),
            None => write!(f, "Var({} const)", self.val),
        }
    }
}

impl<'t> Var<'t> {
    pub fn constant(value: f64) -> Self {
        Var {
            tape: None,
            idx: NO_PARENT,
            val: value,
        }
    }

    pub fn value(&self) -> f64 {
        self.val
    }

    pub fn is_constant(&self) -> bool {
        self.tape.is_none()
    }

    pub fn tape(&self) -> Option<&'t Tape> {
        self.tape
    }

    fn node(&self) -> u32 {
        if self.tape.is_some() {
            self.idx
        } else {
            NO_PARENT
        }
    }

    /// Unchecked recording used by the operator overloads: errors poison the
    /// tape instead of being returned.
    fn apply(op: Op, x: Var<'t>, y: Var<'t>) -> Var<'t> {
        let tape = match (x.tape, y.tape) {
            (None, None) => None,
            (Some(a), Some(b)) => {
                if a.id != b.id {
                    a.poison(AdError::TapeMismatch);
                }
                Some(a)
            }
            (a, b) => a.or(b),
        };
        let (value, partials) = match eval_op(op, x.val, y.val) {
            Ok(r) => r,
            Err(e) => {
                if let Some(t) = tape {
                    t.poison(e);
                }
                (f64::NAN, [f64::NAN; 2])
            }
        };
        let Some(tape) = tape else {
            return Var::constant(value);
        };
        if !value.is_finite() {
            tape.poison(AdError::NonFinite { op: op.name() });
        }
        let idx = tape.push(Node {
            parents: [x.node(), if op.arity() == 2 { y.node() } else { NO_PARENT }],
            partials,
        });
        Var {
            tape: Some(tape),
            idx,
            val: value,
        }
    }

    fn unary(op: Op, x: Var<'t>) -> Var<'t> {
        Self::apply(op, x, Var::constant(0.0))
    }

    fn is_const_eq(&self, c: f64) -> bool {
        self.tape.is_none() && self.val == c
    }
}

impl<'t> Add for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: Var<'t>) -> Var<'t> {
        if rhs.is_const_eq(0.0) && !self.is_constant() {
            return self;
        }
        if self.is_const_eq(0.0) && !rhs.is_constant() {
            return rhs;
        }
        Var::apply(Op::Add, self, rhs)
    }
}

impl<'t> Sub for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: Var<'t>) -> Var<'t> {
        if rhs.is_const_eq(0.0) && !self.is_constant() {
            return self;
        }
        Var::apply(Op::Sub, self, rhs)
    }
}

impl<'t> Mul for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: Var<'t>) -> Var<'t> {
        if self.is_const_eq(0.0) || rhs.is_const_eq(0.0) {
            return Var::constant(0.0);
        }
        if rhs.is_const_eq(1.0) {
            return self;
        }
        if self.is_const_eq(1.0) {
            return rhs;
        }
        Var::apply(Op::Mul, self, rhs)
    }
}

impl<'t> Div for Var<'t> {
    type Output = Var<'t>;
    fn div(self, rhs: Var<'t>) -> Var<'t> {
        if rhs.is_const_eq(1.0) {
            return self;
        }
        Var::apply(Op::Div, self, rhs)
    }
}

impl<'t> Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Var<'t> {
        Var::unary(Op::Neg, self)
    }
}

macro_rules! scalar_rhs {
    ($ty:ty, $($tr:ident $f:ident),*) => {$(
        impl<'t> $tr<f64> for $ty {
            type Output = $ty;
            fn $f(self, rhs: f64) -> $ty {
                self.$f(<$ty>::constant(rhs))
            }
        }
    )*};
}
scalar_rhs!(Var<'t>, Add add, Sub sub, Mul mul, Div div);

/// Scalar arithmetic shared by `f64`, [`Var`] and [`Dual`].
pub trait Real:
    Copy
    + fmt::Debug
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
{
    fn cst(x: f64) -> Self;
    fn value(&self) -> f64;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sqrt(self) -> Self;
    fn tanh(self) -> Self;
    fn powf(self, p: f64) -> Self;
    fn leaky_relu(self, slope: f64) -> Self;
    /// Ties pick `self`.
    fn min(self, other: Self) -> Self;
    /// Ties pick `self`.
    fn max(self, other: Self) -> Self;
    fn log_add_exp(self, other: Self) -> Self;
    /// `log(1 - exp(self))`, for `self < 0`.
    fn ln_1m_exp(self) -> Self;

    fn square(self) -> Self {
        self * self
    }

    /// `log(1 / (1 + exp(-self)))`.
    fn ln_sigmoid(self) -> Self {
        -(Self::cst(0.0).log_add_exp(-self))
    }
}

/// Scalars that may carry forward-mode tangents. `Dual` itself is not a
/// base, which caps nesting at one level.
pub trait BaseReal: Real {}

impl Real for f64 {
    fn cst(x: f64) -> Self {
        x
    }
    fn value(&self) -> f64 {
        *self
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn ln(self) -> Self {
        f64::ln(self)
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    fn tanh(self) -> Self {
        f64::tanh(self)
    }
    fn powf(self, p: f64) -> Self {
        f64::powf(self, p)
    }
    fn leaky_relu(self, slope: f64) -> Self {
        if self > 0.0 {
            self
        } else {
            slope * self
        }
    }
    fn min(self, other: Self) -> Self {
        if self <= other {
            self
        } else {
            other
        }
    }
    fn max(self, other: Self) -> Self {
        if self >= other {
            self
        } else {
            other
        }
    }
    fn log_add_exp(self, other: Self) -> Self {
        log_add_exp(self, other)
    }
    fn ln_1m_exp(self) -> Self {
        log1m_exp(self)
    }
}

impl BaseReal for f64 {}

impl Real for Var<'_> {
    fn cst(x: f64) -> Self {
        Var::constant(x)
    }
    fn value(&self) -> f64 {
        self.val
    }
    fn exp(self) -> Self {
        Var::unary(Op::Exp, self)
    }
    fn ln(self) -> Self {
        Var::unary(Op::Log, self)
    }
    fn sqrt(self) -> Self {
        Var::unary(Op::Sqrt, self)
    }
    fn tanh(self) -> Self {
        Var::unary(Op::Tanh, self)
    }
    fn powf(self, p: f64) -> Self {
        Var::unary(Op::Powf(p), self)
    }
    fn leaky_relu(self, slope: f64) -> Self {
        Var::unary(Op::LeakyRelu(slope), self)
    }
    fn min(self, other: Self) -> Self {
        Var::apply(Op::Min, self, other)
    }
    fn max(self, other: Self) -> Self {
        Var::apply(Op::Max, self, other)
    }
    fn log_add_exp(self, other: Self) -> Self {
        Var::apply(Op::LogAddExp, self, other)
    }
    fn ln_1m_exp(self) -> Self {
        Var::unary(Op::Log1mExp, self)
    }
}

impl BaseReal for Var<'_> {}

impl<'t> Var<'t> {
    /// `self^other` with both operands differentiable.
    pub fn pow(self, other: Var<'t>) -> Var<'t> {
        Var::apply(Op::Pow, self, other)
    }
}

/// Forward-mode number with `N` tangent directions.
#[derive(Clone, Copy, Debug)]
pub struct Dual<T, const N: usize> {
    pub v: T,
    pub d: [T; N],
}

impl<T: BaseReal, const N: usize> Dual<T, N> {
    pub fn constant(v: T) -> Self {
        Dual {
            v,
            d: [T::cst(0.0); N],
        }
    }

    /// Seeds `x[i]` with the `i`-th unit tangent.
    pub fn seed(x: [T; N]) -> [Self; N] {
        let mut out = x.map(Self::constant);
        for (i, o) in out.iter_mut().enumerate() {
            o.d[i] = T::cst(1.0);
        }
        out
    }

    fn chain(self, v: T, dv: T) -> Self {
        Dual { v, d: self.d.map(|d| d * dv) }
    }
}

impl<T: BaseReal, const N: usize> Add for Dual<T, N> {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        let mut d = self.d;
        for (a, b) in d.iter_mut().zip(rhs.d) {
            *a = *a + b;
        }
        Dual { v: self.v + rhs.v, d }
    }
}

impl<T: BaseReal, const N: usize> Sub for Dual<T, N> {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        let mut d = self.d;
        for (a, b) in d.iter_mut().zip(rhs.d) {
            *a = *a - b;
        }
        Dual { v: self.v - rhs.v, d }
    }
}

impl<T: BaseReal, const N: usize> Mul for Dual<T, N> {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        let mut d = self.d;
        for (a, b) in d.iter_mut().zip(rhs.d) {
            *a = *a * rhs.v + self.v * b;
        }
        Dual { v: self.v * rhs.v, d }
    }
}

impl<T: BaseReal, const N: usize> Div for Dual<T, N> {
    type Output = Self;
    fn div(self, rhs: Self) -> Self {
        let q = self.v / rhs.v;
        let mut d = self.d;
        for (a, b) in d.iter_mut().zip(rhs.d) {
            *a = (*a - q * b) / rhs.v;
        }
        Dual { v: q, d }
    }
}

impl<T: BaseReal, const N: usize> Neg for Dual<T, N> {
    type Output = Self;
    fn neg(self) -> Self {
        Dual {
            v: -self.v,
            d: self.d.map(|d| -d),
        }
    }
}

impl<T: BaseReal, const N: usize> Add<f64> for Dual<T, N> {
    type Output = Self;
    fn add(self, rhs: f64) -> Self {
        Dual { v: self.v + rhs, d: self.d }
    }
}

impl<T: BaseReal, const N: usize> Sub<f64> for Dual<T, N> {
    type Output = Self;
    fn sub(self, rhs: f64) -> Self {
        Dual { v: self.v - rhs, d: self.d }
    }
}

impl<T: BaseReal, const N: usize> Mul<f64> for Dual<T, N> {
    type Output = Self;
    fn mul(self, rhs: f64) -> Self {
        Dual {
            v: self.v * rhs,
            d: self.d.map(|d| d * rhs),
        }
    }
}

impl<T: BaseReal, const N: usize> Div<f64> for Dual<T, N> {
    type Output = Self;
    fn div(self, rhs: f64) -> Self {
        Dual {
            v: self.v / rhs,
            d: self.d.map(|d| d / rhs),
        }
    }
}

impl<T: BaseReal, const N: usize> Real for Dual<T, N> {
    fn cst(x: f64) -> Self {
        Self::constant(T::cst(x))
    }
    fn value(&self) -> f64 {
        self.v.value()
    }
    fn exp(self) -> Self {
        let e = self.v.exp();
        self.chain(e, e)
    }
    fn ln(self) -> Self {
        let r = T::cst(1.0) / self.v;
        self.chain(self.v.ln(), r)
    }
    fn sqrt(self) -> Self {
        let s = self.v.sqrt();
        self.chain(s, T::cst(0.5) / s)
    }
    fn tanh(self) -> Self {
        let t = self.v.tanh();
        self.chain(t, T::cst(1.0) - t * t)
    }
    fn powf(self, p: f64) -> Self {
        let dv = self.v.powf(p - 1.0) * p;
        self.chain(self.v.powf(p), dv)
    }
    fn leaky_relu(self, slope: f64) -> Self {
        if self.v.value() > 0.0 {
            self
        } else {
            self * slope
        }
    }
    fn min(self, other: Self) -> Self {
        if self.v.value() <= other.v.value() {
            self
        } else {
            other
        }
    }
    fn max(self, other: Self) -> Self {
        if self.v.value() >= other.v.value() {
            self
        } else {
            other
        }
    }
    fn log_add_exp(self, other: Self) -> Self {
        let v = self.v.log_add_exp(other.v);
        let wa = (self.v - v).exp();
        let wb = (other.v - v).exp();
        let mut d = self.d;
        for (a, b) in d.iter_mut().zip(other.d) {
            *a = *a * wa + b * wb;
        }
        Dual { v, d }
    }
    fn ln_1m_exp(self) -> Self {
        let v = self.v.ln_1m_exp();
        let dv = -((self.v - v).exp());
        self.chain(v, dv)
    }
}

/// Outcome of [`check_gradient`].
#[derive(Debug, Clone)]
pub struct GradCheck {
    pub passed: bool,
    pub max_rel_error: f64,
    /// Component with the largest error.
    pub worst_index: usize,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
}

/// Compares reverse-mode gradients of `f` at `point` against central
/// differences with the given `step`.
///
/// The per-component error is `|a - n| / max(|a|, |n|, 1e-3)`; below the
/// 1e-3 floor this degrades to an absolute error.
pub fn check_gradient<F>(f: F, point: &[f64], step: f64, tol: f64) -> Result<GradCheck, AdError>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Var<'t>,
{
    assert!(step > 0.0, "finite-difference step must be positive");
    let analytic = {
        let tape = Tape::new();
        let xs = tape.vars(point);
        let out = f(&tape, &xs);
        tape.gradient(out, &xs)?
    };
    let eval = |x: &[f64]| -> Result<f64, AdError> {
        let tape = Tape::new();
        let xs = tape.vars(x);
        let out = f(&tape, &xs);
        match tape.error() {
            Some(e) => Err(e),
            None => Ok(out.value()),
        }
    };
    let mut numeric = Vec::with_capacity(point.len());
    let mut x = point.to_vec();
    for i in 0..point.len() {
        x[i] = point[i] + step;
        let fp = eval(&x)?;
        x[i] = point[i] - step;
        let fm = eval(&x)?;
        x[i] = point[i];
        numeric.push((fp - fm) / (2.0 * step));
    }
    let mut max_rel_error = 0.0;
    let mut worst_index = 0;
    for (i, (a, n)) in analytic.iter().zip(&numeric).enumerate() {
        let err = (a - n).abs() / a.abs().max(n.abs()).max(1e-3);
        if err > max_rel_error || err.is_nan() {
            max_rel_error = err;
            worst_index = i;
        }
    }
    Ok(GradCheck {
        passed: max_rel_error <= tol,
        max_rel_error,
        worst_index,
        analytic,
        numeric,
    })
}
