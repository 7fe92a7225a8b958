use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn check_unit(name: &str, v: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::DomainError(format!("{name} = {v} not in [0, 1]")));
    }
    Ok(())
}

/// Unchecked η; inputs are assumed to lie in [0, 1].
#[inline]
pub fn eta_raw(a: f64, b: f64) -> f64 {
    if b < a {
        1.0 - b / a
    } else if b > a {
        1.0 - (1.0 - b) / (1.0 - a)
    } else {
        0.0
    }
}

pub fn eta(a: f64, b: f64) -> Result<f64> {
    check_unit("a", a)?;
    check_unit("b", b)?;
    Ok(eta_raw(a, b))
}

pub fn eta_split(a: f64, b: f64) -> Result<(f64, f64)> {
    if !(a > 0.0 && a < 1.0) {
        return Err(Error::DomainError(format!("eta_split needs a in (0, 1), got {a}")));
    }
    Ok((1.0 - b / a, 1.0 - (1.0 - b) / (1.0 - a)))
}

/// τ_β(a, b) = β η(a, b) + (1 − β)(1 − b), with a and b diagonal entries.
pub fn tau(beta: f64, a: f64, b: f64) -> Result<f64> {
    check_unit("beta", beta)?;
    Ok(beta * eta(a, b)? + (1.0 - beta) * (1.0 - b))
}

pub fn eta_partial_a(a: f64, b: f64) -> Result<f64> {
    if !(a > 0.0 && a < 1.0) {
        return Err(Error::DomainError(format!("partial needs a in (0, 1), got {a}")));
    }
    Ok(if a > b {
        b / (a * a)
    } else if a < b {
        -(1.0 - b) / ((1.0 - a) * (1.0 - a))
    } else {
        0.0
    })
}

pub fn eta_partial_b(a: f64, b: f64) -> Result<f64> {
    if !(a > 0.0 && a < 1.0) {
        return Err(Error::DomainError(format!("partial needs a in (0, 1), got {a}")));
    }
    Ok(if a > b {
        -1.0 / a
    } else if a < b {
        1.0 / (1.0 - a)
    } else {
        0.0
    })
}

/// Partials (∂/∂a, ∂/∂b) of η₁ = 1 − b/a and η₂ = 1 − (1−b)/(1−a).
pub fn eta_split_partials(a: f64, b: f64) -> ((f64, f64), (f64, f64)) {
    let d1 = (b / (a * a), -1.0 / a);
    let d2 = (-(1.0 - b) / ((1.0 - a) * (1.0 - a)), 1.0 / (1.0 - a));
    (d1, d2)
}

/// x ↦ (a + b x, c + d x).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffinePair {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

impl AffinePair {
    pub fn new(a: f64, b: f64, c: f64, d: f64) -> Self {
        Self { a, b, c, d }
    }

    pub fn at(&self, x: f64) -> (f64, f64) {
        (self.a + self.b * x, self.c + self.d * x)
    }

    /// The x where both arguments coincide, if the slopes differ.
    pub fn crossing(&self) -> Option<f64> {
        if self.b == self.d {
            None
        } else {
            Some((self.c - self.a) / (self.b - self.d))
        }
    }
}

/// Position of x relative to the crossing (c − a)/(b − d).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    Left,
    Right,
    Equal,
}

fn crossing_slope_bound(a: f64, b: f64, c: f64, d: f64) -> f64 {
    if d == 0.0 {
        if c > 0.0 {
            b / c
        } else {
            0.0
        }
    } else if a / b > c / d {
        d * d / (b * c - a * d).abs()
    } else if a / b < c / d && b > d {
        let m = a + b * (c - a) / (b - d);
        (b * c - a * d).abs() / (m * m)
    } else {
        0.0
    }
}

/// Bound on |dψ/dx| for ψ(x) = τ_β(a + b x, c + d x) on one side of the
/// crossing. `Side::Equal` is the crossing point itself, where ψ has a kink;
/// it yields +∞ unless the slopes agree.
pub fn psi_deriv_bound(p: AffinePair, beta: f64, side: Side) -> Result<f64> {
    let AffinePair { a, b, c, d } = p;
    if !(b > 0.0 && d >= 0.0 && a <= 1.0 && c <= 1.0) || !(0.0..=1.0).contains(&beta) {
        return Err(Error::HypothesisViolation(format!(
            "need b > 0, d >= 0, a <= 1, c <= 1, beta in [0, 1]; got a={a}, b={b}, c={c}, d={d}, beta={beta}"
        )));
    }
    let eta_part = if d == b {
        if a != c {
            d / (a - c).abs()
        } else {
            0.0
        }
    } else {
        // First argument above the second: η = 1 − (c+dx)/(a+bx).
        let first_above = match side {
            Side::Left => d > b,
            Side::Right => d < b,
            Side::Equal => return Ok(f64::INFINITY),
        };
        if first_above {
            crossing_slope_bound(a, b, c, d)
        } else {
            crossing_slope_bound(1.0 - a - b, b, 1.0 - c - d, d)
        }
    };
    Ok(beta * eta_part + (1.0 - beta) * d)
}
