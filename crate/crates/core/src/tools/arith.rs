//! The thirteen arithmetic operators.
//!
//! Integer-valued operators on integral inputs are computed with
//! arbitrary-precision integers and reported exactly; everything else is
//! computed in `f64`.

use std::fmt;
use std::str::FromStr;

use num_bigint::BigInt;
use num_integer::Integer;
use num_traits::{One, ToPrimitive, Zero};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::call::{format_number, ToolResult};
use crate::vocab::{ArgSpec, ToolSpec};

/// Largest exponent / operand allowed on the exact integer paths, to keep
/// results printable.
const MAX_EXACT_EXPONENT: u64 = 4096;
const MAX_EXACT_N: u64 = 2000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArithOp {
    Add,
    Subtract,
    Multiply,
    Divide,
    Power,
    Sqrt,
    Log,
    Ln,
    Lcm,
    Gcd,
    Remainder,
    Choose,
    Permutate,
}

impl ArithOp {
    pub const ALL: [ArithOp; 13] = [
        ArithOp::Add,
        ArithOp::Subtract,
        ArithOp::Multiply,
        ArithOp::Divide,
        ArithOp::Power,
        ArithOp::Sqrt,
        ArithOp::Log,
        ArithOp::Ln,
        ArithOp::Lcm,
        ArithOp::Gcd,
        ArithOp::Remainder,
        ArithOp::Choose,
        ArithOp::Permutate,
    ];

    pub const BASIC: [ArithOp; 4] = [ArithOp::Add, ArithOp::Subtract, ArithOp::Multiply, ArithOp::Divide];

    pub fn name(self) -> &'static str {
        match self {
            ArithOp::Add => "add",
            ArithOp::Subtract => "subtract",
            ArithOp::Multiply => "multiply",
            ArithOp::Divide => "divide",
            ArithOp::Power => "power",
            ArithOp::Sqrt => "sqrt",
            ArithOp::Log => "log",
            ArithOp::Ln => "ln",
            ArithOp::Lcm => "lcm",
            ArithOp::Gcd => "gcd",
            ArithOp::Remainder => "remainder",
            ArithOp::Choose => "choose",
            ArithOp::Permutate => "permutate",
        }
    }

    pub fn arity(self) -> usize {
        match self {
            ArithOp::Sqrt | ArithOp::Log | ArithOp::Ln => 1,
            _ => 2,
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            ArithOp::Add => "a + b",
            ArithOp::Subtract => "a - b",
            ArithOp::Multiply => "a * b",
            ArithOp::Divide => "a / b",
            ArithOp::Power => "a raised to the power b",
            ArithOp::Sqrt => "square root of a",
            ArithOp::Log => "base-10 logarithm of a",
            ArithOp::Ln => "natural logarithm of a",
            ArithOp::Lcm => "least common multiple of a and b",
            ArithOp::Gcd => "greatest common divisor of a and b",
            ArithOp::Remainder => "remainder of a divided by b",
            ArithOp::Choose => "number of ways to choose k of n",
            ArithOp::Permutate => "number of ordered arrangements of k of n",
        }
    }

    /// A function-with-args tool spec with the operator's schema.
    pub fn spec(self) -> ToolSpec {
        let args = match self.arity() {
            1 => vec![ArgSpec::number("a")],
            _ => match self {
                ArithOp::Choose | ArithOp::Permutate => {
                    vec![ArgSpec::number("n"), ArgSpec::number("k")]
                }
                _ => vec![ArgSpec::number("a"), ArgSpec::number("b")],
            },
        };
        ToolSpec::function(self.name(), args, self.description())
    }

    /// Checks the operator's domain; the error names the broken rule.
    pub fn check_domain(self, args: &[f64]) -> Result<(), String> {
        if args.len() != self.arity() {
            return Err(format!("expects {} arguments, got {}", self.arity(), args.len()));
        }
        if let Some(x) = args.iter().find(|x| !x.is_finite()) {
            return Err(format!("argument {x} is not finite"));
        }
        let nonneg_int = |x: f64| x >= 0.0 && x.fract() == 0.0;
        match self {
            ArithOp::Divide | ArithOp::Remainder if args[1] == 0.0 => Err("division by zero".into()),
            ArithOp::Sqrt if args[0] < 0.0 => Err("square root of a negative number".into()),
            ArithOp::Log | ArithOp::Ln if args[0] <= 0.0 => Err("logarithm of a non-positive number".into()),
            ArithOp::Lcm | ArithOp::Gcd if !(nonneg_int(args[0]) && nonneg_int(args[1])) => {
                Err("arguments must be non-negative integers".into())
            }
            ArithOp::Choose | ArithOp::Permutate => {
                if !(nonneg_int(args[0]) && nonneg_int(args[1])) {
                    Err("arguments must be non-negative integers".into())
                } else if args[1] > args[0] {
                    Err("k must not exceed n".into())
                } else if args[0] > MAX_EXACT_N as f64 {
                    Err(format!("n above {MAX_EXACT_N}"))
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }

    pub fn apply(self, args: &[f64]) -> Result<ToolResult, String> {
        self.check_domain(args)?;
        let ints: Option<Vec<BigInt>> = args.iter().map(|&x| to_bigint(x)).collect();
        if let Some(ints) = ints.filter(|_| self.integer_valued(args)) {
            let r = self.apply_exact(&ints)?;
            let value = r.to_f64().unwrap_or(f64::INFINITY);
            return Ok(ToolResult::exact(r.to_string(), value));
        }
        let v = self.apply_float(args);
        if !v.is_finite() {
            return Err(format!("{} overflowed", self.name()));
        }
        Ok(ToolResult::number(v))
    }

    fn integer_valued(self, args: &[f64]) -> bool {
        match self {
            ArithOp::Add
            | ArithOp::Subtract
            | ArithOp::Multiply
            | ArithOp::Lcm
            | ArithOp::Gcd
            | ArithOp::Remainder
            | ArithOp::Choose
            | ArithOp::Permutate => true,
            ArithOp::Power => args[1] >= 0.0 && args[1] <= MAX_EXACT_EXPONENT as f64,
            ArithOp::Divide | ArithOp::Sqrt | ArithOp::Log | ArithOp::Ln => false,
        }
    }

    fn apply_exact(self, a: &[BigInt]) -> Result<BigInt, String> {
        Ok(match self {
            ArithOp::Add => &a[0] + &a[1],
            ArithOp::Subtract => &a[0] - &a[1],
            ArithOp::Multiply => &a[0] * &a[1],
            ArithOp::Power => {
                let e = a[1].to_u32().ok_or("exponent out of range")?;
                num_traits::pow(a[0].clone(), e as usize)
            }
            ArithOp::Lcm => {
                if a[0].is_zero() || a[1].is_zero() {
                    BigInt::zero()
                } else {
                    a[0].lcm(&a[1])
                }
            }
            ArithOp::Gcd => a[0].gcd(&a[1]),
            ArithOp::Remainder => &a[0] % &a[1],
            ArithOp::Choose => {
                let n = a[0].to_u64().ok_or("n out of range")?;
                let k = a[1].to_u64().ok_or("k out of range")?;
                let k = k.min(n - k);
                let mut r = BigInt::one();
                for i in 0..k {
                    r = r * BigInt::from(n - i) / BigInt::from(i + 1);
                }
                r
            }
            ArithOp::Permutate => {
                let n = a[0].to_u64().ok_or("n out of range")?;
                let k = a[1].to_u64().ok_or("k out of range")?;
                (n - k + 1..=n).fold(BigInt::one(), |acc, x| acc * BigInt::from(x))
            }
            _ => unreachable!("{} has no exact path", self.name()),
        })
    }

    fn apply_float(self, a: &[f64]) -> f64 {
        match self {
            ArithOp::Add => a[0] + a[1],
            ArithOp::Subtract => a[0] - a[1],
            ArithOp::Multiply => a[0] * a[1],
            ArithOp::Divide => a[0] / a[1],
            ArithOp::Power => a[0].powf(a[1]),
            ArithOp::Sqrt => a[0].sqrt(),
            ArithOp::Log => a[0].log10(),
            ArithOp::Ln => a[0].ln(),
            ArithOp::Remainder => a[0] % a[1],
            ArithOp::Lcm | ArithOp::Gcd | ArithOp::Choose | ArithOp::Permutate => {
                unreachable!("integer-only operator")
            }
        }
    }

    /// Draws operands from the operator's usual school-exercise range.
    pub fn sample_operands<R: Rng + ?Sized>(self, rng: &mut R) -> Vec<f64> {
        let int = |rng: &mut R, lo: i64, hi: i64| rng.random_range(lo..=hi) as f64;
        let dec = |rng: &mut R, lo: i64, hi: i64| rng.random_range(lo * 10..=hi * 10) as f64 / 10.0;
        match self {
            ArithOp::Add => vec![int(rng, 1, 999), int(rng, 1, 999)],
            ArithOp::Subtract => {
                let a = int(rng, 20, 999);
                vec![a, int(rng, 1, a as i64 - 1)]
            }
            ArithOp::Multiply => {
                if rng.random_bool(0.3) {
                    vec![int(rng, 2, 99), dec(rng, 1, 9)]
                } else {
                    vec![int(rng, 2, 99), int(rng, 2, 99)]
                }
            }
            ArithOp::Divide => {
                let b = int(rng, 2, 25);
                if rng.random_bool(0.6) {
                    vec![b * int(rng, 2, 60), b]
                } else {
                    vec![int(rng, 10, 999), b]
                }
            }
            ArithOp::Power => vec![int(rng, 2, 15), int(rng, 2, 4)],
            ArithOp::Sqrt => vec![int(rng, 2, 999)],
            ArithOp::Log => vec![int(rng, 2, 9999)],
            ArithOp::Ln => vec![int(rng, 2, 999)],
            ArithOp::Lcm => vec![int(rng, 2, 60), int(rng, 2, 60)],
            ArithOp::Gcd => vec![int(rng, 2, 300), int(rng, 2, 300)],
            ArithOp::Remainder => vec![int(rng, 10, 999), int(rng, 2, 30)],
            ArithOp::Choose => {
                let n = int(rng, 3, 20);
                vec![n, int(rng, 1, n as i64 - 1)]
            }
            ArithOp::Permutate => {
                let n = int(rng, 3, 12);
                vec![n, int(rng, 1, n as i64 - 1)]
            }
        }
    }
}

impl fmt::Display for ArithOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ArithOp {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        ArithOp::ALL
            .into_iter()
            .find(|op| op.name() == s)
            .ok_or_else(|| format!("unknown arithmetic operator `{s}`"))
    }
}

fn to_bigint(x: f64) -> Option<BigInt> {
    (x.fract() == 0.0 && x.abs() <= 9_007_199_254_740_992.0).then(|| BigInt::from(x as i64))
}

/// Formats operands the way they appear in question text.
pub fn format_operands(args: &[f64]) -> Vec<String> {
    args.iter().map(|&x| format_number(x)).collect()
}
