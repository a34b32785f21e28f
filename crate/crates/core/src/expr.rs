//! Scalar structural expressions.
//!
//! An [`Expression`] is a small differentiable AST over named variables. It is
//! the body of a structural equation `V := f(Pa(V), U_V)`. On disk expressions
//! use a prefix-notation JSON array, e.g.
//! `["add", ["mul", ["const", 0.005], ["var", "A"]], ["const", 4.60517]]`.

use std::collections::BTreeSet;
use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::{json, Value};

use crate::autodiff::Real;

/// Name of an endogenous or exogenous variable.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct VariableId(pub String);

impl VariableId {
    pub fn new(name: impl Into<String>) -> Self {
        VariableId(name.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for VariableId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for VariableId {
    fn from(s: &str) -> Self {
        VariableId(s.to_string())
    }
}

impl From<String> for VariableId {
    fn from(s: String) -> Self {
        VariableId(s)
    }
}

impl std::borrow::Borrow<str> for VariableId {
    fn borrow(&self) -> &str {
        &self.0
    }
}

/// Comparison carried by an indicator node. `InRange(lo, hi)` means `lo <= v < hi`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Comparison {
    Ge(f64),
    Lt(f64),
    InRange(f64, f64),
}

impl Comparison {
    #[inline]
    pub fn holds(&self, v: f64) -> bool {
        match *self {
            Comparison::Ge(t) => v >= t,
            Comparison::Lt(t) => v < t,
            Comparison::InRange(lo, hi) => v >= lo && v < hi,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expression {
    Constant(f64),
    Var(VariableId),
    Add(Box<Expression>, Box<Expression>),
    Sub(Box<Expression>, Box<Expression>),
    Mul(Box<Expression>, Box<Expression>),
    Div(Box<Expression>, Box<Expression>),
    Pow(Box<Expression>, Box<Expression>),
    Neg(Box<Expression>),
    Exp(Box<Expression>),
    Log(Box<Expression>),
    Sqrt(Box<Expression>),
    Sigmoid(Box<Expression>),
    /// 1 when the comparison holds for the argument, else 0. Derivative 0.
    Indicator(Comparison, Box<Expression>),
}

impl Expression {
    pub fn constant(c: f64) -> Self {
        Expression::Constant(c)
    }

    pub fn var(name: impl Into<String>) -> Self {
        Expression::Var(VariableId(name.into()))
    }

    pub fn exp(self) -> Self {
        Expression::Exp(Box::new(self))
    }

    pub fn ln(self) -> Self {
        Expression::Log(Box::new(self))
    }

    pub fn sqrt(self) -> Self {
        Expression::Sqrt(Box::new(self))
    }

    pub fn sigmoid(self) -> Self {
        Expression::Sigmoid(Box::new(self))
    }

    pub fn pow(self, exponent: Expression) -> Self {
        Expression::Pow(Box::new(self), Box::new(exponent))
    }

    pub fn powf(self, exponent: f64) -> Self {
        self.pow(Expression::Constant(exponent))
    }

    pub fn ge(self, threshold: f64) -> Self {
        Expression::Indicator(Comparison::Ge(threshold), Box::new(self))
    }

    pub fn lt(self, threshold: f64) -> Self {
        Expression::Indicator(Comparison::Lt(threshold), Box::new(self))
    }

    pub fn in_range(self, lo: f64, hi: f64) -> Self {
        Expression::Indicator(Comparison::InRange(lo, hi), Box::new(self))
    }

    /// Immediate children, left to right.
    pub fn children(&self) -> Vec<&Expression> {
        use Expression::*;
        match self {
            Constant(_) | Var(_) => vec![],
            Add(a, b) | Sub(a, b) | Mul(a, b) | Div(a, b) | Pow(a, b) => vec![a, b],
            Neg(a) | Exp(a) | Log(a) | Sqrt(a) | Sigmoid(a) | Indicator(_, a) => vec![a],
        }
    }

    /// Distinct variables referenced anywhere in the expression.
    pub fn variables(&self) -> BTreeSet<VariableId> {
        let mut out = BTreeSet::new();
        self.visit(&mut |e| {
            if let Expression::Var(v) = e {
                out.insert(v.clone());
            }
        });
        out
    }

    /// Number of `Var` leaves naming `name`.
    pub fn occurrences(&self, name: &str) -> usize {
        let mut n = 0;
        self.visit(&mut |e| {
            if let Expression::Var(v) = e {
                if v.as_str() == name {
                    n += 1;
                }
            }
        });
        n
    }

    fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a Expression)) {
        f(self);
        for c in self.children() {
            c.visit(f);
        }
    }

    /// Tree-walking evaluation. Variables are resolved through `lookup`;
    /// `None` from the lookup is reported as the missing name.
    pub fn eval<T: Real>(&self, lookup: &dyn Fn(&VariableId) -> Option<T>) -> Result<T, VariableId> {
        use Expression::*;
        Ok(match self {
            Constant(c) => T::cst(*c),
            Var(v) => lookup(v).ok_or_else(|| v.clone())?,
            Add(a, b) => a.eval(lookup)? + b.eval(lookup)?,
            Sub(a, b) => a.eval(lookup)? - b.eval(lookup)?,
            Mul(a, b) => a.eval(lookup)? * b.eval(lookup)?,
            Div(a, b) => a.eval(lookup)? / b.eval(lookup)?,
            Pow(a, b) => match **b {
                Constant(p) => a.eval(lookup)?.powc(p),
                _ => a.eval(lookup)?.powr(b.eval(lookup)?),
            },
            Neg(a) => -a.eval(lookup)?,
            Exp(a) => a.eval(lookup)?.exp(),
            Log(a) => a.eval(lookup)?.ln(),
            Sqrt(a) => a.eval(lookup)?.sqrt(),
            Sigmoid(a) => a.eval(lookup)?.sigmoid(),
            Indicator(cmp, a) => {
                let v = a.eval(lookup)?;
                T::cst(if cmp.holds(v.value()) { 1.0 } else { 0.0 })
            }
        })
    }

    pub fn to_json(&self) -> Value {
        use Expression::*;
        let bin = |op: &str, a: &Expression, b: &Expression| json!([op, a.to_json(), b.to_json()]);
        let un = |op: &str, a: &Expression| json!([op, a.to_json()]);
        match self {
            Constant(c) => json!(["const", c]),
            Var(v) => json!(["var", v.as_str()]),
            Add(a, b) => bin("add", a, b),
            Sub(a, b) => bin("sub", a, b),
            Mul(a, b) => bin("mul", a, b),
            Div(a, b) => bin("div", a, b),
            Pow(a, b) => bin("pow", a, b),
            Neg(a) => un("neg", a),
            Exp(a) => un("exp", a),
            Log(a) => un("log", a),
            Sqrt(a) => un("sqrt", a),
            Sigmoid(a) => un("sigmoid", a),
            Indicator(Comparison::Ge(t), a) => json!(["indicator", "ge", a.to_json(), t]),
            Indicator(Comparison::Lt(t), a) => json!(["indicator", "lt", a.to_json(), t]),
            Indicator(Comparison::InRange(lo, hi), a) => {
                json!(["indicator", "in_range", a.to_json(), lo, hi])
            }
        }
    }

    /// Parses the prefix-notation form. `add` and `mul` accept two or more
    /// operands and fold left.
    pub fn from_json(v: &Value) -> Result<Self, String> {
        let arr = v
            .as_array()
            .ok_or_else(|| format!("expected an expression array, got {v}"))?;
        let head = arr
            .first()
            .and_then(Value::as_str)
            .ok_or_else(|| format!("expression must start with an operator name: {v}"))?;
        let args = &arr[1..];
        let num = |i: usize| -> Result<f64, String> {
            args.get(i)
                .and_then(Value::as_f64)
                .ok_or_else(|| format!("`{head}` expects a number at position {}", i + 1))
        };
        let sub = |i: usize| -> Result<Box<Expression>, String> {
            args.get(i)
                .ok_or_else(|| format!("`{head}` is missing operand {}", i + 1))
                .and_then(|a| Expression::from_json(a).map(Box::new))
        };
        let arity = |n: usize| -> Result<(), String> {
            if args.len() == n {
                Ok(())
            } else {
                Err(format!("`{head}` takes {n} operand(s), got {}", args.len()))
            }
        };
        use Expression::*;
        Ok(match head {
            "const" => {
                arity(1)?;
                Constant(num(0)?)
            }
            "var" => {
                arity(1)?;
                let name = args[0].as_str().ok_or("`var` expects a name")?;
                Var(VariableId::new(name))
            }
            "add" | "mul" => {
                if args.len() < 2 {
                    return Err(format!("`{head}` takes at least 2 operands"));
                }
                let mut acc = *sub(0)?;
                for i in 1..args.len() {
                    let rhs = sub(i)?;
                    acc = if head == "add" {
                        Add(Box::new(acc), rhs)
                    } else {
                        Mul(Box::new(acc), rhs)
                    };
                }
                acc
            }
            "sub" | "div" | "pow" => {
                arity(2)?;
                let (a, b) = (sub(0)?, sub(1)?);
                match head {
                    "sub" => Sub(a, b),
                    "div" => Div(a, b),
                    _ => Pow(a, b),
                }
            }
            "neg" | "exp" | "log" | "sqrt" | "sigmoid" => {
                arity(1)?;
                let a = sub(0)?;
                match head {
                    "neg" => Neg(a),
                    "exp" => Exp(a),
                    "log" => Log(a),
                    "sqrt" => Sqrt(a),
                    _ => Sigmoid(a),
                }
            }
            "indicator" => {
                let cmp = args
                    .first()
                    .and_then(Value::as_str)
                    .ok_or("`indicator` expects a comparison name")?;
                let a = sub(1)?;
                let cmp = match cmp {
                    "ge" => {
                        arity(3)?;
                        Comparison::Ge(num(2)?)
                    }
                    "lt" => {
                        arity(3)?;
                        Comparison::Lt(num(2)?)
                    }
                    "in_range" => {
                        arity(4)?;
                        Comparison::InRange(num(2)?, num(3)?)
                    }
                    other => return Err(format!("unknown comparison `{other}`")),
                };
                Indicator(cmp, a)
            }
            other => return Err(format!("unknown operator `{other}`")),
        })
    }
}

impl Serialize for Expression {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.to_json().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Expression {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = Value::deserialize(d)?;
        Expression::from_json(&v).map_err(D::Error::custom)
    }
}

macro_rules! binary_op {
    ($tr:ident, $method:ident, $variant:ident) => {
        impl $tr for Expression {
            type Output = Expression;
            fn $method(self, rhs: Expression) -> Expression {
                Expression::$variant(Box::new(self), Box::new(rhs))
            }
        }
        impl $tr<f64> for Expression {
            type Output = Expression;
            fn $method(self, rhs: f64) -> Expression {
                Expression::$variant(Box::new(self), Box::new(Expression::Constant(rhs)))
            }
        }
        impl $tr<Expression> for f64 {
            type Output = Expression;
            fn $method(self, rhs: Expression) -> Expression {
                Expression::$variant(Box::new(Expression::Constant(self)), Box::new(rhs))
            }
        }
    };
}

binary_op!(Add, add, Add);
binary_op!(Sub, sub, Sub);
binary_op!(Mul, mul, Mul);
binary_op!(Div, div, Div);

impl Neg for Expression {
    type Output = Expression;
    fn neg(self) -> Expression {
        Expression::Neg(Box::new(self))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_prefix_notation() {
        let v: Value = serde_json::from_str(
            r#"["add",["mul",["const",0.005],["var","A"]],["const",4.60517]]"#,
        )
        .unwrap();
        let e = Expression::from_json(&v).unwrap();
        let got = e
            .eval::<f64>(&|name| (name.as_str() == "A").then_some(55.0))
            .unwrap();
        assert!((got - (0.275 + 4.60517)).abs() < 1e-12);
        assert_eq!(e.to_json(), v);
    }

    #[test]
    fn nary_add_folds_left() {
        let v = json!(["add", ["const", 1.0], ["const", 2.0], ["const", 3.0]]);
        let e = Expression::from_json(&v).unwrap();
        assert_eq!(e.eval::<f64>(&|_| None).unwrap(), 6.0);
    }

    #[test]
    fn rejects_malformed_input() {
        for bad in [
            json!(["frobnicate", ["const", 1.0]]),
            json!(["sub", ["const", 1.0]]),
            json!(["const", "x"]),
            json!(["indicator", "gt", ["var", "R"], 0.2]),
            json!(42),
        ] {
            assert!(Expression::from_json(&bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn indicator_semantics() {
        let r = || Expression::var("R");
        let env = |v: f64| move |_: &VariableId| Some(v);
        assert_eq!(r().in_range(0.05, 0.075).eval::<f64>(&env(0.05)).unwrap(), 1.0);
        assert_eq!(r().in_range(0.05, 0.075).eval::<f64>(&env(0.075)).unwrap(), 0.0);
        assert_eq!(r().ge(0.2).eval::<f64>(&env(0.2)).unwrap(), 1.0);
        assert_eq!(r().lt(0.2).eval::<f64>(&env(0.2)).unwrap(), 0.0);
    }

    #[test]
    fn counts_occurrences() {
        let e = Expression::var("X") * Expression::var("X") + Expression::var("U");
        assert_eq!(e.occurrences("X"), 2);
        assert_eq!(e.occurrences("U"), 1);
        assert_eq!(e.variables().len(), 2);
    }

    #[test]
    fn missing_variable_is_reported() {
        let e = Expression::var("Q").exp();
        assert_eq!(e.eval::<f64>(&|_| None).unwrap_err(), VariableId::new("Q"));
    }
}
