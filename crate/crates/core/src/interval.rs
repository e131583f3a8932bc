//! Closed interval arithmetic with outward rounding, and axis-aligned
//! boxes (interval vectors) over a state-control split.
//!
//! Every operation returns an interval guaranteed to contain the exact
//! real result set. Rigor is obtained portably: each computed bound is
//! nudged one representable step outward unless the operation is provably
//! exact (checked with error-free transforms), so no rounding-mode control
//! is needed. Transcendental bounds lean on libm being faithful to within
//! a couple of ulps and nudge two steps.

use crate::error::{Error, Result};

/// Closed interval `[lo, hi]`. `lo = +inf, hi = -inf` is the empty set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

pub const EMPTY: Interval = Interval {
    lo: f64::INFINITY,
    hi: f64::NEG_INFINITY,
};

pub const ENTIRE: Interval = Interval {
    lo: f64::NEG_INFINITY,
    hi: f64::INFINITY,
};

// ---------------------------------------------------------------------------
// directed rounding helpers
// ---------------------------------------------------------------------------

#[inline]
fn down(x: f64) -> f64 {
    x.next_down()
}

#[inline]
fn up(x: f64) -> f64 {
    x.next_up()
}

/// Two steps outward for libm-backed functions (faithful but not
/// correctly rounded).
#[inline]
fn down2(x: f64) -> f64 {
    x.next_down().next_down()
}

#[inline]
fn up2(x: f64) -> f64 {
    x.next_up().next_up()
}

/// TwoSum error term vanishes iff `a + b` rounded exactly.
#[inline]
fn add_exact(a: f64, b: f64, s: f64) -> bool {
    if !s.is_finite() {
        return false;
    }
    let bb = s - a;
    (a - (s - bb)) + (b - bb) == 0.0
}

#[inline]
fn add_lo(a: f64, b: f64) -> f64 {
    let s = a + b;
    if s.is_nan() || add_exact(a, b, s) {
        s
    } else {
        down(s)
    }
}

#[inline]
fn add_hi(a: f64, b: f64) -> f64 {
    let s = a + b;
    if s.is_nan() || add_exact(a, b, s) {
        s
    } else {
        up(s)
    }
}

/// FMA residual vanishes iff `a * b` rounded exactly. Subnormal products
/// are treated as inexact; their residual may itself be unrepresentable.
#[inline]
fn mul_exact(a: f64, b: f64, p: f64) -> bool {
    if a == 0.0 || b == 0.0 {
        return true;
    }
    if !p.is_normal() {
        return false;
    }
    a.mul_add(b, -p) == 0.0
}

/// Endpoint product with the interval convention `0 * inf = 0`.
#[inline]
fn mul_pt(a: f64, b: f64) -> f64 {
    if a == 0.0 || b == 0.0 {
        0.0
    } else {
        a * b
    }
}

#[inline]
fn mul_lo(a: f64, b: f64) -> f64 {
    let p = mul_pt(a, b);
    if mul_exact(a, b, p) {
        p
    } else {
        down(p)
    }
}

#[inline]
fn mul_hi(a: f64, b: f64) -> f64 {
    let p = mul_pt(a, b);
    if mul_exact(a, b, p) {
        p
    } else {
        up(p)
    }
}

#[inline]
fn div_exact(a: f64, b: f64, q: f64) -> bool {
    if a == 0.0 {
        return true;
    }
    if !q.is_normal() {
        return false;
    }
    q.mul_add(b, -a) == 0.0
}

#[inline]
fn div_lo(a: f64, b: f64) -> f64 {
    let q = a / b;
    if div_exact(a, b, q) {
        q
    } else {
        down(q)
    }
}

#[inline]
fn div_hi(a: f64, b: f64) -> f64 {
    let q = a / b;
    if div_exact(a, b, q) {
        q
    } else {
        up(q)
    }
}

impl Interval {
    /// `[lo, hi]` with `lo <= hi`; panics on NaN or inverted bounds.
    pub fn new(lo: f64, hi: f64) -> Self {
        assert!(!lo.is_nan() && !hi.is_nan(), "interval bounds must not be NaN");
        assert!(lo <= hi, "inverted interval bounds: [{lo}, {hi}]");
        Interval { lo, hi }
    }

    pub fn point(x: f64) -> Self {
        Self::new(x, x)
    }

    pub fn is_empty(&self) -> bool {
        self.lo > self.hi
    }

    pub fn width(&self) -> f64 {
        if self.is_empty() {
            0.0
        } else {
            self.hi - self.lo
        }
    }

    pub fn midpoint(&self) -> f64 {
        self.lo + (self.hi - self.lo) / 2.0
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }

    pub fn contains_interval(&self, other: &Interval) -> bool {
        other.is_empty() || (self.lo <= other.lo && other.hi <= self.hi)
    }

    pub fn intersect(&self, other: &Interval) -> Interval {
        let lo = self.lo.max(other.lo);
        let hi = self.hi.min(other.hi);
        if lo > hi {
            EMPTY
        } else {
            Interval { lo, hi }
        }
    }

    /// Closed intersection test: touching endpoints count.
    pub fn intersects(&self, other: &Interval) -> bool {
        !self.is_empty() && !other.is_empty() && self.lo <= other.hi && other.lo <= self.hi
    }

    pub fn hull(&self, other: &Interval) -> Interval {
        if self.is_empty() {
            return *other;
        }
        if other.is_empty() {
            return *self;
        }
        Interval::new(self.lo.min(other.lo), self.hi.max(other.hi))
    }

    pub fn add(&self, other: &Interval) -> Interval {
        debug_assert!(!self.is_empty() && !other.is_empty());
        Interval {
            lo: add_lo(self.lo, other.lo),
            hi: add_hi(self.hi, other.hi),
        }
    }

    pub fn sub(&self, other: &Interval) -> Interval {
        debug_assert!(!self.is_empty() && !other.is_empty());
        Interval {
            lo: add_lo(self.lo, -other.hi),
            hi: add_hi(self.hi, -other.lo),
        }
    }

    pub fn neg(&self) -> Interval {
        if self.is_empty() {
            return EMPTY;
        }
        Interval {
            lo: -self.hi,
            hi: -self.lo,
        }
    }

    pub fn mul(&self, other: &Interval) -> Interval {
        debug_assert!(!self.is_empty() && !other.is_empty());
        let (a, b, c, d) = (self.lo, self.hi, other.lo, other.hi);
        let los = [mul_lo(a, c), mul_lo(a, d), mul_lo(b, c), mul_lo(b, d)];
        let his = [mul_hi(a, c), mul_hi(a, d), mul_hi(b, c), mul_hi(b, d)];
        let lo = los.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = his.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        Interval { lo, hi }
    }

    /// Division; errors when the divisor straddles or touches zero.
    pub fn div(&self, other: &Interval) -> Result<Interval> {
        debug_assert!(!self.is_empty() && !other.is_empty());
        if other.contains(0.0) {
            return Err(Error::Domain(format!(
                "division by interval [{}, {}] containing zero",
                other.lo, other.hi
            )));
        }
        let (a, b, c, d) = (self.lo, self.hi, other.lo, other.hi);
        let los = [div_lo(a, c), div_lo(a, d), div_lo(b, c), div_lo(b, d)];
        let his = [div_hi(a, c), div_hi(a, d), div_hi(b, c), div_hi(b, d)];
        let lo = los.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = his.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        Ok(Interval { lo, hi })
    }

    pub fn abs(&self) -> Interval {
        debug_assert!(!self.is_empty());
        if self.lo >= 0.0 {
            *self
        } else if self.hi <= 0.0 {
            self.neg()
        } else {
            Interval {
                lo: 0.0,
                hi: (-self.lo).max(self.hi),
            }
        }
    }

    pub fn exp(&self) -> Interval {
        debug_assert!(!self.is_empty());
        let lo = if self.lo == 0.0 {
            1.0
        } else {
            down2(self.lo.exp()).max(0.0)
        };
        let hi = if self.hi == 0.0 { 1.0 } else { up2(self.hi.exp()) };
        Interval { lo, hi }
    }

    /// Square root; the lower bound is clamped to zero when the interval
    /// dips below the domain, `hi < 0` is an error.
    pub fn sqrt(&self) -> Result<Interval> {
        debug_assert!(!self.is_empty());
        if self.hi < 0.0 {
            return Err(Error::Domain(format!(
                "sqrt of negative interval [{}, {}]",
                self.lo, self.hi
            )));
        }
        let lo_in = self.lo.max(0.0);
        Ok(Interval {
            lo: sqrt_down(lo_in),
            hi: sqrt_up(self.hi),
        })
    }

    pub fn tanh(&self) -> Interval {
        debug_assert!(!self.is_empty());
        let lo = if self.lo == 0.0 {
            0.0
        } else {
            down2(self.lo.tanh()).max(-1.0)
        };
        let hi = if self.hi == 0.0 {
            0.0
        } else {
            up2(self.hi.tanh()).min(1.0)
        };
        Interval { lo, hi }
    }

    pub fn sin(&self) -> Interval {
        debug_assert!(!self.is_empty());
        let q = std::f64::consts::FRAC_PI_2;
        periodic_range(self, q, -q, |x| {
            if x == 0.0 {
                (0.0, 0.0)
            } else {
                let s = x.sin();
                (down2(s), up2(s))
            }
        })
    }

    pub fn cos(&self) -> Interval {
        debug_assert!(!self.is_empty());
        periodic_range(self, 0.0, std::f64::consts::PI, |x| {
            if x == 0.0 {
                (1.0, 1.0)
            } else {
                let c = x.cos();
                (down2(c), up2(c))
            }
        })
    }

    /// `self^k` for integer `k >= 0`, exact on monotone pieces up to
    /// per-multiplication rounding; even powers collapse a sign straddle
    /// to a zero lower bound.
    pub fn pow_int(&self, k: u32) -> Interval {
        debug_assert!(!self.is_empty());
        match k {
            0 => Interval::point(1.0),
            1 => *self,
            _ => {
                if k % 2 == 0 {
                    if self.lo >= 0.0 {
                        Interval::new(pow_down(self.lo, k), pow_up(self.hi, k))
                    } else if self.hi <= 0.0 {
                        Interval::new(pow_down(-self.hi, k), pow_up(-self.lo, k))
                    } else {
                        let m = (-self.lo).max(self.hi);
                        Interval::new(0.0, pow_up(m, k))
                    }
                } else {
                    Interval::new(pow_down_signed(self.lo, k), pow_up_signed(self.hi, k))
                }
            }
        }
    }
}

/// Range of a 2*pi-periodic function over `iv` from endpoint values plus
/// extrema detection. `max_at + 2*pi*k` are the maxima, `min_at + 2*pi*k`
/// the minima; output is clamped to [-1, 1]. Extremum containment is
/// tested with a small slack so a maximum a rounding error outside the
/// interval is still (soundly) included.
fn periodic_range(
    iv: &Interval,
    max_at: f64,
    min_at: f64,
    pt: impl Fn(f64) -> (f64, f64),
) -> Interval {
    const TWO_PI: f64 = std::f64::consts::TAU;
    if !iv.lo.is_finite() || !iv.hi.is_finite() || iv.width() >= TWO_PI {
        return Interval::new(-1.0, 1.0);
    }
    let (plo_d, plo_u) = pt(iv.lo);
    let (phi_d, phi_u) = pt(iv.hi);
    let mut lo = plo_d.min(phi_d);
    let mut hi = plo_u.max(phi_u);
    let slack = (iv.lo.abs() + iv.hi.abs() + 1.0) * 1e-12;
    if contains_translate(iv, max_at, TWO_PI, slack) {
        hi = 1.0;
    }
    if contains_translate(iv, min_at, TWO_PI, slack) {
        lo = -1.0;
    }
    Interval::new(lo.max(-1.0), hi.min(1.0))
}

/// Whether some `base + k*period` lies within `[iv.lo - slack, iv.hi + slack]`.
fn contains_translate(iv: &Interval, base: f64, period: f64, slack: f64) -> bool {
    let k_lo = ((iv.lo - base) / period).floor() as i64 - 1;
    let k_hi = ((iv.hi - base) / period).ceil() as i64 + 1;
    for k in k_lo..=k_hi {
        let v = base + (k as f64) * period;
        if v >= iv.lo - slack && v <= iv.hi + slack {
            return true;
        }
    }
    false
}

fn sqrt_down(x: f64) -> f64 {
    let r = x.sqrt();
    if x == 0.0 || (r.is_normal() && r.mul_add(r, -x) == 0.0) {
        r
    } else {
        down(r).max(0.0)
    }
}

fn sqrt_up(x: f64) -> f64 {
    let r = x.sqrt();
    if x == 0.0 || (r.is_normal() && r.mul_add(r, -x) == 0.0) {
        r
    } else {
        up(r)
    }
}

/// `t^k` rounded down, `t >= 0`, by repeated exactness-checked multiplication.
fn pow_down(t: f64, k: u32) -> f64 {
    debug_assert!(t >= 0.0);
    let mut acc = t;
    for _ in 1..k {
        acc = mul_lo(acc, t).max(0.0);
    }
    acc
}

fn pow_up(t: f64, k: u32) -> f64 {
    debug_assert!(t >= 0.0);
    let mut acc = t;
    for _ in 1..k {
        acc = mul_hi(acc, t);
    }
    acc
}

/// Odd-power endpoint rounded down, any sign.
fn pow_down_signed(t: f64, k: u32) -> f64 {
    if t >= 0.0 {
        pow_down(t, k)
    } else {
        -pow_up(-t, k)
    }
}

fn pow_up_signed(t: f64, k: u32) -> f64 {
    if t >= 0.0 {
        pow_up(t, k)
    } else {
        -pow_down(-t, k)
    }
}

impl std::ops::Add for Interval {
    type Output = Interval;
    fn add(self, rhs: Interval) -> Interval {
        Interval::add(&self, &rhs)
    }
}

impl std::ops::Sub for Interval {
    type Output = Interval;
    fn sub(self, rhs: Interval) -> Interval {
        Interval::sub(&self, &rhs)
    }
}

impl std::ops::Mul for Interval {
    type Output = Interval;
    fn mul(self, rhs: Interval) -> Interval {
        Interval::mul(&self, &rhs)
    }
}

impl std::ops::Neg for Interval {
    type Output = Interval;
    fn neg(self) -> Interval {
        Interval::neg(&self)
    }
}

impl std::fmt::Display for Interval {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.is_empty() {
            write!(f, "[empty]")
        } else {
            write!(f, "[{}, {}]", self.lo, self.hi)
        }
    }
}

// ---------------------------------------------------------------------------
// boxes
// ---------------------------------------------------------------------------

/// Axis-aligned box: `n_state` leading state intervals followed by
/// `m_ctrl` control intervals.
#[derive(Debug, Clone, PartialEq)]
pub struct IvBox {
    dims: Vec<Interval>,
    n_state: usize,
    m_ctrl: usize,
}

impl IvBox {
    pub fn new(dims: Vec<Interval>, n_state: usize, m_ctrl: usize) -> Self {
        assert_eq!(
            dims.len(),
            n_state + m_ctrl,
            "box dimension mismatch: {} dims for n={} m={}",
            dims.len(),
            n_state,
            m_ctrl
        );
        IvBox { dims, n_state, m_ctrl }
    }

    /// State-only box (no control dimensions).
    pub fn state(dims: Vec<Interval>) -> Self {
        let n = dims.len();
        IvBox::new(dims, n, 0)
    }

    pub fn from_bounds(lo: &[f64], hi: &[f64], n_state: usize, m_ctrl: usize) -> Self {
        assert_eq!(lo.len(), hi.len());
        let dims = lo
            .iter()
            .zip(hi)
            .map(|(&l, &h)| Interval::new(l, h))
            .collect();
        IvBox::new(dims, n_state, m_ctrl)
    }

    pub fn dims(&self) -> &[Interval] {
        &self.dims
    }

    pub fn dim(&self) -> usize {
        self.dims.len()
    }

    pub fn n_state(&self) -> usize {
        self.n_state
    }

    pub fn m_ctrl(&self) -> usize {
        self.m_ctrl
    }

    pub fn state_dims(&self) -> &[Interval] {
        &self.dims[..self.n_state]
    }

    pub fn ctrl_dims(&self) -> &[Interval] {
        &self.dims[self.n_state..]
    }

    /// Max extent over all dimensions (`d([z])`).
    pub fn width(&self) -> f64 {
        self.dims.iter().map(Interval::width).fold(0.0, f64::max)
    }

    pub fn midpoint(&self) -> Vec<f64> {
        self.dims.iter().map(Interval::midpoint).collect()
    }

    pub fn contains_point(&self, p: &[f64]) -> bool {
        debug_assert_eq!(p.len(), self.dim());
        self.dims.iter().zip(p).all(|(iv, &x)| iv.contains(x))
    }

    pub fn intersect(&self, other: &IvBox) -> Option<IvBox> {
        debug_assert_eq!(self.dim(), other.dim());
        let mut dims = Vec::with_capacity(self.dim());
        for (a, b) in self.dims.iter().zip(&other.dims) {
            let iv = a.intersect(b);
            if iv.is_empty() {
                return None;
            }
            dims.push(iv);
        }
        Some(IvBox::new(dims, self.n_state, self.m_ctrl))
    }

    pub fn subset_of(&self, other: &IvBox) -> bool {
        debug_assert_eq!(self.dim(), other.dim());
        self.dims
            .iter()
            .zip(&other.dims)
            .all(|(a, b)| b.contains_interval(a))
    }

    /// Positive-width overlap in every dimension.
    pub fn interior_overlaps(&self, other: &IvBox) -> bool {
        self.dims
            .iter()
            .zip(&other.dims)
            .all(|(a, b)| a.lo.max(b.lo) < a.hi.min(b.hi))
    }

    pub fn volume(&self) -> f64 {
        self.dims.iter().map(Interval::width).product()
    }

    /// Split at the midpoint of a widest dimension (lowest index wins a
    /// tie). Midpoints of bisection-bred dyadic boxes stay exact.
    pub fn bisect(&self) -> Result<(IvBox, IvBox)> {
        let w = self.width();
        if w <= 0.0 {
            return Err(Error::DegenerateBox);
        }
        let split = self
            .dims
            .iter()
            .position(|iv| iv.width() == w)
            .expect("widest dimension exists");
        let iv = self.dims[split];
        let mid = iv.midpoint();
        let mut left = self.clone();
        let mut right = self.clone();
        left.dims[split] = Interval::new(iv.lo, mid);
        right.dims[split] = Interval::new(mid, iv.hi);
        Ok((left, right))
    }

    /// Drop the trailing control dimensions.
    pub fn state_projection(&self) -> IvBox {
        IvBox::new(self.state_dims().to_vec(), self.n_state, 0)
    }

    pub fn lo(&self) -> Vec<f64> {
        self.dims.iter().map(|iv| iv.lo).collect()
    }

    pub fn hi(&self) -> Vec<f64> {
        self.dims.iter().map(|iv| iv.hi).collect()
    }
}

impl std::fmt::Display for IvBox {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for (i, iv) in self.dims.iter().enumerate() {
            if i > 0 {
                write!(f, "x")?;
            }
            write!(f, "{iv}")?;
        }
        Ok(())
    }
}
