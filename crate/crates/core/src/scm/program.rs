//! Structural equations compiled to flat instruction lists.
//!
//! Every endogenous equation is lowered once, at build time, into a vector of
//! [`Op`]s in post order. Register `k` holds the value of op `k`; operands
//! always point to earlier registers. Variables are read from a global slot
//! array through a caller supplied loader, so the same program serves plain
//! evaluation, partial evaluation, and every differentiation mode.

use std::collections::HashMap;

use crate::autodiff::{Dual, Real};
use crate::expr::{Comparison, Expression};

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Op {
    Const(f64),
    Load(usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    PowC(usize, f64),
    Pow(usize, usize),
    Neg(usize),
    Exp(usize),
    Log(usize),
    Sqrt(usize),
    Sigmoid(usize),
    Ind(Comparison, usize),
}

impl Op {
    fn operands(&self) -> [Option<usize>; 2] {
        use Op::*;
        match *self {
            Const(_) | Load(_) => [None, None],
            Add(a, b) | Sub(a, b) | Mul(a, b) | Div(a, b) | Pow(a, b) => [Some(a), Some(b)],
            PowC(a, _) | Neg(a) | Exp(a) | Log(a) | Sqrt(a) | Sigmoid(a) | Ind(_, a) => {
                [Some(a), None]
            }
        }
    }
}

/// Evaluation hit a non-finite intermediate (log of a negative, division by zero, overflow).
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct NonFinite;

/// Why an equation could not be solved for its noise.
#[derive(Debug, Clone, PartialEq)]
pub(crate) enum InvertFailure {
    NotInvertible(String),
    NoRoot,
    Domain,
}

/// Step on the path from the root register down to the noise leaf.
#[derive(Debug, Clone, Copy, PartialEq)]
struct PathStep {
    reg: usize,
    /// Operand position (0 or 1) that continues toward the noise.
    child: u8,
}

#[derive(Debug, Clone)]
pub(crate) struct Program {
    ops: Vec<Op>,
    noise_slot: Option<usize>,
    path: Vec<PathStep>,
}

enum Analytic<T> {
    Done(T, T),
    Fallback,
}

impl Program {
    /// Lowers `expr`; `slot_of` maps variable names to global slots and
    /// `noise_slot` is the slot of the equation's own noise, if any.
    pub(crate) fn compile(
        expr: &Expression,
        slot_of: &HashMap<String, usize>,
        noise_slot: Option<usize>,
    ) -> Program {
        let mut ops = Vec::new();
        lower(expr, slot_of, &mut ops);
        let mut path = Vec::new();
        if let Some(ns) = noise_slot {
            let mut reg = ops.len() - 1;
            loop {
                if ops[reg] == Op::Load(ns) {
                    break;
                }
                let [a, b] = ops[reg].operands();
                let child = if a.is_some_and(|a| reaches(&ops, a, ns)) {
                    0
                } else if b.is_some_and(|b| reaches(&ops, b, ns)) {
                    1
                } else {
                    unreachable!("noise slot is referenced by the equation");
                };
                path.push(PathStep { reg, child });
                reg = if child == 0 { a.unwrap() } else { b.unwrap() };
            }
        }
        Program {
            ops,
            noise_slot,
            path,
        }
    }

    #[cfg(test)]
    pub(crate) fn len(&self) -> usize {
        self.ops.len()
    }

    /// Runs the program, leaving every intermediate in `regs`.
    #[inline]
    pub(crate) fn run<T: Real>(
        &self,
        load: impl Fn(usize) -> T,
        regs: &mut Vec<T>,
    ) -> Result<T, NonFinite> {
        use Op::*;
        regs.clear();
        for op in &self.ops {
            let v = match *op {
                Const(c) => T::cst(c),
                Load(s) => load(s),
                Add(a, b) => regs[a] + regs[b],
                Sub(a, b) => regs[a] - regs[b],
                Mul(a, b) => regs[a] * regs[b],
                Div(a, b) => checked(regs[a] / regs[b])?,
                PowC(a, p) => checked(regs[a].powc(p))?,
                Pow(a, b) => checked(regs[a].powr(regs[b]))?,
                Neg(a) => -regs[a],
                Exp(a) => checked(regs[a].exp())?,
                Log(a) => checked(regs[a].ln())?,
                Sqrt(a) => checked(regs[a].sqrt())?,
                Sigmoid(a) => regs[a].sigmoid(),
                Ind(cmp, a) => T::cst(if cmp.holds(regs[a].value()) { 1.0 } else { 0.0 }),
            };
            regs.push(v);
        }
        let out = *regs.last().expect("programs are never empty");
        checked(out)
    }

    /// Solves `f(parents, u) = target` for the equation's noise `u`.
    ///
    /// Returns `(u*, ∂f/∂u at u*)`, both in `T` so that derivatives of the
    /// solution with respect to the parents and the target propagate.
    pub(crate) fn invert<T: Real>(
        &self,
        load: impl Fn(usize) -> T + Copy,
        target: T,
        regs: &mut Vec<T>,
    ) -> Result<(T, T), InvertFailure> {
        let ns = self
            .noise_slot
            .ok_or_else(|| InvertFailure::NotInvertible("equation has no noise term".into()))?;
        // Operands off the noise path do not depend on the noise, so one pass
        // with a placeholder noise value fills them in.
        let placeholder = |s: usize| if s == ns { T::cst(0.0) } else { load(s) };
        let analytic = match self.run(placeholder, regs) {
            Ok(_) => self.solve_path(target, regs)?,
            // A placeholder of 0 can itself leave the domain (e.g. log(u)).
            Err(NonFinite) => Analytic::Fallback,
        };
        match analytic {
            Analytic::Done(u, jac) => Ok((u, jac)),
            Analytic::Fallback => self.invert_numeric(load, ns, target),
        }
    }

    fn solve_path<T: Real>(&self, target: T, regs: &[T]) -> Result<Analytic<T>, InvertFailure> {
        use Op::*;
        let one = T::cst(1.0);
        let mut t = target;
        let mut jac = one;
        for step in &self.path {
            let op = &self.ops[step.reg];
            let [a, b] = op.operands();
            let sib = |i: Option<usize>| regs[i.unwrap()];
            let (child, local) = match (*op, step.child) {
                (Add(..), 0) => (t - sib(b), one),
                (Add(..), _) => (t - sib(a), one),
                (Sub(..), 0) => (t + sib(b), one),
                (Sub(..), _) => (sib(a) - t, -one),
                (Mul(..), c) => {
                    let k = if c == 0 { sib(b) } else { sib(a) };
                    if k.value() == 0.0 {
                        return Err(InvertFailure::NotInvertible(
                            "noise is multiplied by zero".into(),
                        ));
                    }
                    (t / k, k)
                }
                (Div(..), 0) => {
                    let k = sib(b);
                    (t * k, k.recip())
                }
                (Div(..), _) => {
                    let n = sib(a);
                    if n.value() == 0.0 {
                        return Err(InvertFailure::NotInvertible(
                            "noise divides a zero numerator".into(),
                        ));
                    }
                    if t.value() == 0.0 {
                        return Err(InvertFailure::NoRoot);
                    }
                    let c = n / t;
                    (c, -(n / (c * c)))
                }
                (Neg(_), _) => (-t, -one),
                (Exp(_), _) => {
                    if t.value() <= 0.0 {
                        return Err(InvertFailure::NoRoot);
                    }
                    (t.ln(), t)
                }
                (Log(_), _) => {
                    let c = t.exp();
                    (c, c.recip())
                }
                (Sqrt(_), _) => {
                    if t.value() < 0.0 {
                        return Err(InvertFailure::NoRoot);
                    }
                    if t.value() == 0.0 {
                        return Err(InvertFailure::Domain);
                    }
                    (t * t, t.scale(2.0).recip())
                }
                (Sigmoid(_), _) => {
                    let v = t.value();
                    if !(v > 0.0 && v < 1.0) {
                        return Err(InvertFailure::NoRoot);
                    }
                    ((t / (one - t)).ln(), t * (one - t))
                }
                (PowC(_, p), _) => {
                    let odd = p.fract() == 0.0 && (p as i64) % 2 != 0;
                    let even = p.fract() == 0.0 && !odd;
                    if p == 0.0 {
                        return Err(InvertFailure::NotInvertible(
                            "noise raised to the power zero".into(),
                        ));
                    }
                    if even {
                        return Ok(Analytic::Fallback);
                    }
                    let c = if t.value() >= 0.0 {
                        t.powc(1.0 / p)
                    } else if odd {
                        -((-t).powc(1.0 / p))
                    } else {
                        return Err(InvertFailure::NoRoot);
                    };
                    if c.value() == 0.0 && p < 1.0 {
                        return Err(InvertFailure::Domain);
                    }
                    (c, c.powc(p - 1.0).scale(p))
                }
                (Pow(..), 1) => {
                    let base = sib(a);
                    let lb = base.value();
                    if lb <= 0.0 || lb == 1.0 {
                        return Ok(Analytic::Fallback);
                    }
                    if t.value() <= 0.0 {
                        return Err(InvertFailure::NoRoot);
                    }
                    (t.ln() / base.ln(), t * base.ln())
                }
                (Pow(..), _) | (Ind(..), _) => return Ok(Analytic::Fallback),
                (Const(_), _) | (Load(_), _) => unreachable!("leaves are not path steps"),
            };
            if !child.is_finite() || !local.is_finite() {
                return Err(InvertFailure::Domain);
            }
            jac = jac * local;
            t = child;
        }
        Ok(Analytic::Done(t, jac))
    }

    /// Safeguarded Newton-bisection in `f64`, then a few Newton steps in `T`
    /// to carry derivatives of the root.
    fn invert_numeric<T: Real>(
        &self,
        load: impl Fn(usize) -> T + Copy,
        ns: usize,
        target: T,
    ) -> Result<(T, T), InvertFailure> {
        let tv = target.value();
        let mut regs_f: Vec<Dual<f64>> = Vec::with_capacity(self.ops.len());
        // residual and derivative in f64
        let mut g = |u: f64| -> Option<(f64, f64)> {
            let r = self
                .run(
                    |s| {
                        if s == ns {
                            Dual::variable(u)
                        } else {
                            Dual::constant(load(s).value())
                        }
                    },
                    &mut regs_f,
                )
                .ok()?;
            Some((r.re - tv, r.eps))
        };

        // bracket expansion from 0, checking both half-intervals
        let g0 = g(0.0).map(|v| v.0);
        let mut r: f64 = 1.0;
        let (mut lo, mut hi);
        loop {
            let gl = g(-r).map(|v| v.0);
            let gh = g(r).map(|v| v.0);
            if let (Some(gl), Some(gh)) = (gl, gh) {
                let mid = g0.unwrap_or(f64::NAN);
                let crosses = gl.signum() != gh.signum()
                    || (mid.is_finite() && mid.signum() != gh.signum());
                if gl == 0.0 || gh == 0.0 || mid == 0.0 || crosses {
                    lo = -r;
                    hi = r;
                    break;
                }
            }
            r *= 2.0;
            if r > 1e6 {
                return Err(InvertFailure::NoRoot);
            }
        }

        // monotonicity probes over the whole symmetric bracket
        let mut sign = 0.0;
        for k in 0..32 {
            let u = lo + (hi - lo) * (k as f64 + 0.5) / 32.0;
            let Some((_, d)) = g(u) else {
                return Err(InvertFailure::Domain);
            };
            if d == 0.0 || (sign != 0.0 && d.signum() != sign) {
                return Err(InvertFailure::NotInvertible(
                    "derivative in the noise changes sign or vanishes".into(),
                ));
            }
            sign = d.signum();
        }
        if let Some(m) = g0 {
            if m == 0.0 {
                return self.lift(load, ns, target, 0.0);
            }
        }
        for edge in [lo, hi] {
            if g(edge).map(|v| v.0) == Some(0.0) {
                return self.lift(load, ns, target, edge);
            }
        }
        // shrink to the half that holds the sign change
        if let Some(m) = g0 {
            let gh = g(hi).ok_or(InvertFailure::Domain)?.0;
            if m.signum() != gh.signum() {
                lo = 0.0;
            } else {
                hi = 0.0;
            }
        }

        let glo = g(lo).ok_or(InvertFailure::Domain)?.0;
        let mut u = 0.5 * (lo + hi);
        for _ in 0..200 {
            let (gu, du) = g(u).ok_or(InvertFailure::Domain)?;
            if gu.abs() <= 1e-12 * tv.abs().max(1.0) {
                break;
            }
            if gu.signum() == glo.signum() {
                lo = u;
            } else {
                hi = u;
            }
            let newton = u - gu / du;
            let next = if du != 0.0 && newton > lo.min(hi) && newton < lo.max(hi) {
                newton
            } else {
                0.5 * (lo + hi)
            };
            if (next - u).abs() <= 1e-12 * u.abs().max(1.0) {
                u = next;
                break;
            }
            u = next;
        }
        let (gu, _) = g(u).ok_or(InvertFailure::Domain)?;
        if gu.abs() > 1e-10 {
            return Err(InvertFailure::NoRoot);
        }
        self.lift(load, ns, target, u)
    }

    fn lift<T: Real>(
        &self,
        load: impl Fn(usize) -> T + Copy,
        ns: usize,
        target: T,
        u0: f64,
    ) -> Result<(T, T), InvertFailure> {
        let mut regs: Vec<Dual<T>> = Vec::with_capacity(self.ops.len());
        let mut u = T::cst(u0);
        let mut jac = T::cst(0.0);
        // Each step doubles the number of correct derivative orders.
        for _ in 0..4 {
            let r = self
                .run(
                    |s| {
                        if s == ns {
                            Dual::variable(u)
                        } else {
                            Dual::constant(load(s))
                        }
                    },
                    &mut regs,
                )
                .map_err(|_| InvertFailure::Domain)?;
            jac = r.eps;
            u = u - (r.re - target) / jac;
        }
        Ok((u, jac))
    }
}

#[inline]
fn checked<T: Real>(v: T) -> Result<T, NonFinite> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(NonFinite)
    }
}

fn reaches(ops: &[Op], reg: usize, slot: usize) -> bool {
    if ops[reg] == Op::Load(slot) {
        return true;
    }
    ops[reg]
        .operands()
        .iter()
        .flatten()
        .any(|&c| reaches(ops, c, slot))
}

fn fold(op: &Op, ops: &[Op]) -> Option<f64> {
    let c = |i: usize| match ops[i] {
        Op::Const(v) => Some(v),
        _ => None,
    };
    let v = match *op {
        Op::Const(_) | Op::Load(_) => return None,
        Op::Add(a, b) => c(a)? + c(b)?,
        Op::Sub(a, b) => c(a)? - c(b)?,
        Op::Mul(a, b) => c(a)? * c(b)?,
        Op::Div(a, b) => c(a)? / c(b)?,
        Op::Pow(a, b) => c(a)?.powf(c(b)?),
        Op::PowC(a, p) => c(a)?.powc(p),
        Op::Neg(a) => -c(a)?,
        Op::Exp(a) => c(a)?.exp(),
        Op::Log(a) => c(a)?.ln(),
        Op::Sqrt(a) => c(a)?.sqrt(),
        Op::Sigmoid(a) => c(a)?.sigmoid(),
        Op::Ind(cmp, a) => f64::from(u8::from(cmp.holds(c(a)?))),
    };
    // leave invalid constants in place so the error surfaces at evaluation
    v.is_finite().then_some(v)
}

/// Appends the post-order lowering of `e` and returns its register.
fn lower(e: &Expression, slot_of: &HashMap<String, usize>, ops: &mut Vec<Op>) -> usize {
    use Expression as E;
    let op = match e {
        E::Constant(c) => Op::Const(*c),
        E::Var(v) => Op::Load(slot_of[v.as_str()]),
        E::Add(a, b) => Op::Add(lower(a, slot_of, ops), lower(b, slot_of, ops)),
        E::Sub(a, b) => Op::Sub(lower(a, slot_of, ops), lower(b, slot_of, ops)),
        E::Mul(a, b) => Op::Mul(lower(a, slot_of, ops), lower(b, slot_of, ops)),
        E::Div(a, b) => Op::Div(lower(a, slot_of, ops), lower(b, slot_of, ops)),
        E::Pow(a, b) => match **b {
            E::Constant(p) => Op::PowC(lower(a, slot_of, ops), p),
            _ => {
                let a = lower(a, slot_of, ops);
                let b = lower(b, slot_of, ops);
                match ops[b] {
                    Op::Const(p) => {
                        ops.pop();
                        Op::PowC(a, p)
                    }
                    _ => Op::Pow(a, b),
                }
            }
        },
        E::Neg(a) => Op::Neg(lower(a, slot_of, ops)),
        E::Exp(a) => Op::Exp(lower(a, slot_of, ops)),
        E::Log(a) => Op::Log(lower(a, slot_of, ops)),
        E::Sqrt(a) => Op::Sqrt(lower(a, slot_of, ops)),
        E::Sigmoid(a) => Op::Sigmoid(lower(a, slot_of, ops)),
        E::Indicator(cmp, a) => Op::Ind(*cmp, lower(a, slot_of, ops)),
    };
    // Fold operations whose operands are all constants (e.g. `log(100)`).
    // Constant operands are always the most recent registers.
    if let Some(v) = fold(&op, ops) {
        let n = op.operands().iter().flatten().count();
        ops.truncate(ops.len() - n);
        ops.push(Op::Const(v));
    } else {
        ops.push(op);
    }
    ops.len() - 1
}
