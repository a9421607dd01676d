//! Double-double arithmetic: an unevaluated sum `hi + lo` of two `f64`s with
//! `|lo| <= ulp(hi) / 2`, giving about 106 bits of significand.
//!
//! Arithmetic, `sqrt`, `exp`, `ln`, `ln_1p`, `powi` and rounding are carried
//! out at full double-double precision. Trigonometric, hyperbolic and the
//! remaining logarithm/exponent variants fall back to `f64` on the leading
//! component; nothing on the training or loss path uses them.

use std::cmp::Ordering;
use std::fmt;
use std::iter::Sum;
use std::num::FpCategory;
use std::ops::{Add, AddAssign, Div, DivAssign, Mul, MulAssign, Neg, Rem, RemAssign, Sub, SubAssign};
use std::sync::OnceLock;

use num_traits::{Float, FloatConst, FromPrimitive, Num, NumCast, One, ToPrimitive, Zero};

use super::Scalar;

#[derive(Clone, Copy, Default)]
pub struct DoubleDouble {
    hi: f64,
    lo: f64,
}

#[inline]
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

#[inline]
fn quick_two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    (s, b - (s - a))
}

#[inline]
fn split(a: f64) -> (f64, f64) {
    const SPLITTER: f64 = 134_217_729.0; // 2^27 + 1
    const THRESHOLD: f64 = 6.696_928_794_914_17e299;
    if a.abs() > THRESHOLD {
        let a = a * 3.725_290_298_461_914e-9; // 2^-28
        let t = SPLITTER * a;
        let hi = t - (t - a);
        let lo = a - hi;
        (hi * 268_435_456.0, lo * 268_435_456.0)
    } else {
        let t = SPLITTER * a;
        let hi = t - (t - a);
        (hi, a - hi)
    }
}

#[inline]
fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    let (ah, al) = split(a);
    let (bh, bl) = split(b);
    (p, ((ah * bh - p) + ah * bl + al * bh) + al * bl)
}

impl DoubleDouble {
    /// The `f64` value `x`, with no low word.
    pub const fn exact(x: f64) -> Self {
        DoubleDouble { hi: x, lo: 0.0 }
    }

    pub const fn from_parts(hi: f64, lo: f64) -> Self {
        DoubleDouble { hi, lo }
    }

    pub const fn hi(self) -> f64 {
        self.hi
    }

    pub const fn lo(self) -> f64 {
        self.lo
    }

    #[inline]
    fn renorm(hi: f64, lo: f64) -> Self {
        if !hi.is_finite() {
            return DoubleDouble { hi, lo: 0.0 };
        }
        let (hi, lo) = quick_two_sum(hi, lo);
        DoubleDouble { hi, lo }
    }

    fn sqr(self) -> Self {
        let (p1, p2) = two_prod(self.hi, self.hi);
        let p2 = p2 + 2.0 * self.hi * self.lo + self.lo * self.lo;
        Self::renorm(p1, p2)
    }

    /// Multiplication by an exact power of two.
    fn scale2(self, k: f64) -> Self {
        DoubleDouble {
            hi: self.hi * k,
            lo: self.lo * k,
        }
    }

    fn ln2() -> Self {
        DoubleDouble::from_parts(std::f64::consts::LN_2, 2.319_046_813_846_299_6e-17)
    }

    /// `1/3!, 1/4!, ...`.
    fn inverse_factorials() -> &'static [DoubleDouble; 8] {
        static TABLE: OnceLock<[DoubleDouble; 8]> = OnceLock::new();
        TABLE.get_or_init(|| {
            let mut out = [DoubleDouble::default(); 8];
            let mut fact = DoubleDouble::exact(2.0);
            for (n, slot) in (3..).zip(out.iter_mut()) {
                fact *= DoubleDouble::exact(n as f64);
                *slot = DoubleDouble::one() / fact;
            }
            out
        })
    }

    fn exp_dd(self) -> Self {
        if self.hi <= -709.0 {
            return Self::zero();
        }
        if self.hi >= 709.8 {
            return Self::infinity();
        }
        if self.hi == 0.0 && self.lo == 0.0 {
            return Self::one();
        }
        const INV_K: f64 = 1.0 / 512.0;
        let m = (self.hi / Self::ln2().hi + 0.5).floor();
        let r = (self - Self::ln2() * Self::exact(m)).scale2(INV_K);
        let mut p = r.sqr();
        let mut s = r + p.scale2(0.5);
        p *= r;
        let facts = Self::inverse_factorials();
        let mut t = p * facts[0];
        let mut i = 0;
        loop {
            s += t;
            p *= r;
            i += 1;
            t = p * facts[i];
            if t.hi.abs() <= INV_K * f64::EPSILON * f64::EPSILON || i >= 6 {
                break;
            }
        }
        s += t;
        for _ in 0..9 {
            s = s.scale2(2.0) + s.sqr();
        }
        s += Self::one();
        let m = m as i32;
        // ldexp in two steps keeps the intermediate finite near the edges.
        let half = m / 2;
        s.scale2(2f64.powi(half)).scale2(2f64.powi(m - half))
    }

    fn ln_dd(self) -> Self {
        if self.hi <= 0.0 || self.hi.is_nan() {
            return if self.hi == 0.0 { Self::neg_infinity() } else { Self::nan() };
        }
        if self.hi.is_infinite() {
            return self;
        }
        if self.hi == 1.0 && self.lo == 0.0 {
            return Self::zero();
        }
        let x = Self::exact(self.hi.ln());
        x + self * (-x).exp_dd() - Self::one()
    }

    fn sqrt_dd(self) -> Self {
        if self.hi == 0.0 {
            return Self::zero();
        }
        if self.hi < 0.0 {
            return Self::nan();
        }
        if self.hi.is_infinite() {
            return self;
        }
        let x = 1.0 / self.hi.sqrt();
        let ax = self.hi * x;
        let (s, e) = two_sum(ax, (self - Self::exact(ax).sqr()).hi * (x * 0.5));
        Self::renorm(s, e)
    }

    fn map_hi(self, f: impl Fn(f64) -> f64) -> Self {
        Self::exact(f(self.hi))
    }
}

impl From<f64> for DoubleDouble {
    fn from(x: f64) -> Self {
        Self::exact(x)
    }
}

impl PartialEq for DoubleDouble {
    fn eq(&self, o: &Self) -> bool {
        self.hi == o.hi && self.lo == o.lo
    }
}

impl PartialOrd for DoubleDouble {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        match self.hi.partial_cmp(&o.hi)? {
            Ordering::Equal => self.lo.partial_cmp(&o.lo),
            other => Some(other),
        }
    }
}

impl fmt::Debug for DoubleDouble {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "DoubleDouble({:e}, {:e})", self.hi, self.lo)
    }
}

impl fmt::Display for DoubleDouble {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(&self.hi, f)
    }
}

impl fmt::LowerExp for DoubleDouble {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::LowerExp::fmt(&self.hi, f)
    }
}

impl Neg for DoubleDouble {
    type Output = Self;
    fn neg(self) -> Self {
        DoubleDouble {
            hi: -self.hi,
            lo: -self.lo,
        }
    }
}

impl Add for DoubleDouble {
    type Output = Self;
    #[inline]
    fn add(self, b: Self) -> Self {
        let (s1, s2) = two_sum(self.hi, b.hi);
        if !s1.is_finite() {
            return Self::exact(s1);
        }
        let (t1, t2) = two_sum(self.lo, b.lo);
        let (s1, s2) = quick_two_sum(s1, s2 + t1);
        let (hi, lo) = quick_two_sum(s1, s2 + t2);
        DoubleDouble { hi, lo }
    }
}

impl Sub for DoubleDouble {
    type Output = Self;
    #[inline]
    fn sub(self, b: Self) -> Self {
        self + (-b)
    }
}

impl Mul for DoubleDouble {
    type Output = Self;
    #[inline]
    fn mul(self, b: Self) -> Self {
        let (p1, p2) = two_prod(self.hi, b.hi);
        if !p1.is_finite() {
            return Self::exact(p1);
        }
        Self::renorm(p1, p2 + (self.hi * b.lo + self.lo * b.hi))
    }
}

impl Div for DoubleDouble {
    type Output = Self;
    fn div(self, b: Self) -> Self {
        let q1 = self.hi / b.hi;
        if !q1.is_finite() || b.hi.is_infinite() {
            return Self::exact(q1);
        }
        let r = self - b * Self::exact(q1);
        let q2 = r.hi / b.hi;
        let r = r - b * Self::exact(q2);
        let q3 = r.hi / b.hi;
        let (q1, q2) = quick_two_sum(q1, q2);
        DoubleDouble { hi: q1, lo: q2 } + Self::exact(q3)
    }
}

impl Rem for DoubleDouble {
    type Output = Self;
    fn rem(self, b: Self) -> Self {
        self - (self / b).trunc() * b
    }
}

macro_rules! assign_ops {
    ($($tr:ident $m:ident $op:tt),*) => {$(
        impl $tr for DoubleDouble {
            #[inline]
            fn $m(&mut self, b: Self) {
                *self = *self $op b;
            }
        }
    )*};
}
assign_ops!(AddAssign add_assign +, SubAssign sub_assign -, MulAssign mul_assign *, DivAssign div_assign /, RemAssign rem_assign %);

impl Sum for DoubleDouble {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(Self::zero(), Add::add)
    }
}

impl Zero for DoubleDouble {
    fn zero() -> Self {
        Self::exact(0.0)
    }

    fn is_zero(&self) -> bool {
        self.hi == 0.0
    }
}

impl One for DoubleDouble {
    fn one() -> Self {
        Self::exact(1.0)
    }
}

impl Num for DoubleDouble {
    type FromStrRadixErr = <f64 as Num>::FromStrRadixErr;

    fn from_str_radix(s: &str, radix: u32) -> Result<Self, Self::FromStrRadixErr> {
        f64::from_str_radix(s, radix).map(Self::exact)
    }
}

impl ToPrimitive for DoubleDouble {
    fn to_i64(&self) -> Option<i64> {
        self.trunc().hi.to_i64().map(|h| h + self.trunc().lo as i64)
    }

    fn to_u64(&self) -> Option<u64> {
        self.to_i64().and_then(|v| u64::try_from(v).ok())
    }

    fn to_f64(&self) -> Option<f64> {
        Some(self.hi + self.lo)
    }
}

impl FromPrimitive for DoubleDouble {
    fn from_i64(n: i64) -> Option<Self> {
        let hi = n as f64;
        Some(Self::renorm(hi, (n - hi as i64) as f64))
    }

    fn from_u64(n: u64) -> Option<Self> {
        let hi = n as f64;
        let lo = n as i128 - hi as i128;
        Some(Self::renorm(hi, lo as f64))
    }

    fn from_f64(n: f64) -> Option<Self> {
        Some(Self::exact(n))
    }
}

impl NumCast for DoubleDouble {
    fn from<T: ToPrimitive>(n: T) -> Option<Self> {
        n.to_f64().map(Self::exact)
    }
}

impl Float for DoubleDouble {
    fn nan() -> Self {
        Self::exact(f64::NAN)
    }
    fn infinity() -> Self {
        Self::exact(f64::INFINITY)
    }
    fn neg_infinity() -> Self {
        Self::exact(f64::NEG_INFINITY)
    }
    fn neg_zero() -> Self {
        Self::exact(-0.0)
    }
    fn min_value() -> Self {
        Self::exact(f64::MIN)
    }
    fn min_positive_value() -> Self {
        Self::exact(f64::MIN_POSITIVE)
    }
    fn epsilon() -> Self {
        Self::exact(4.930_380_657_631_324e-32)
    }
    fn max_value() -> Self {
        Self::exact(f64::MAX)
    }
    fn is_nan(self) -> bool {
        self.hi.is_nan()
    }
    fn is_infinite(self) -> bool {
        self.hi.is_infinite()
    }
    fn is_finite(self) -> bool {
        self.hi.is_finite()
    }
    fn is_normal(self) -> bool {
        self.hi.is_normal()
    }
    fn classify(self) -> FpCategory {
        self.hi.classify()
    }
    fn floor(self) -> Self {
        let hi = self.hi.floor();
        if hi == self.hi {
            Self::renorm(hi, self.lo.floor())
        } else {
            Self::exact(hi)
        }
    }
    fn ceil(self) -> Self {
        let hi = self.hi.ceil();
        if hi == self.hi {
            Self::renorm(hi, self.lo.ceil())
        } else {
            Self::exact(hi)
        }
    }
    fn round(self) -> Self {
        let r = (self + Self::exact(0.5)).floor();
        if self.hi < 0.0 && r - self == Self::exact(0.5) {
            // Halfway cases round away from zero.
            return r - Self::one();
        }
        r
    }
    fn trunc(self) -> Self {
        if self.hi >= 0.0 {
            self.floor()
        } else {
            self.ceil()
        }
    }
    fn fract(self) -> Self {
        self - self.trunc()
    }
    fn abs(self) -> Self {
        if self.hi < 0.0 || (self.hi == 0.0 && self.lo < 0.0) {
            -self
        } else {
            self
        }
    }
    fn signum(self) -> Self {
        Self::exact(self.hi.signum())
    }
    fn is_sign_positive(self) -> bool {
        self.hi.is_sign_positive()
    }
    fn is_sign_negative(self) -> bool {
        self.hi.is_sign_negative()
    }
    fn mul_add(self, a: Self, b: Self) -> Self {
        self * a + b
    }
    fn recip(self) -> Self {
        Self::one() / self
    }
    fn powi(self, n: i32) -> Self {
        let mut base = self;
        let mut e = n.unsigned_abs();
        let mut acc = Self::one();
        while e > 0 {
            if e & 1 == 1 {
                acc *= base;
            }
            base = base.sqr();
            e >>= 1;
        }
        if n < 0 {
            acc.recip()
        } else {
            acc
        }
    }
    fn powf(self, n: Self) -> Self {
        (n * self.ln_dd()).exp_dd()
    }
    fn sqrt(self) -> Self {
        self.sqrt_dd()
    }
    fn exp(self) -> Self {
        self.exp_dd()
    }
    fn exp2(self) -> Self {
        (self * Self::ln2()).exp_dd()
    }
    fn ln(self) -> Self {
        self.ln_dd()
    }
    fn log(self, base: Self) -> Self {
        self.ln_dd() / base.ln_dd()
    }
    fn log2(self) -> Self {
        self.ln_dd() / Self::ln2()
    }
    fn log10(self) -> Self {
        self.ln_dd() / Self::exact(10.0).ln_dd()
    }
    fn max(self, o: Self) -> Self {
        if self.is_nan() || o > self {
            o
        } else {
            self
        }
    }
    fn min(self, o: Self) -> Self {
        if self.is_nan() || o < self {
            o
        } else {
            self
        }
    }
    fn abs_sub(self, o: Self) -> Self {
        if self <= o {
            Self::zero()
        } else {
            self - o
        }
    }
    fn cbrt(self) -> Self {
        self.map_hi(f64::cbrt)
    }
    fn hypot(self, o: Self) -> Self {
        (self * self + o * o).sqrt_dd()
    }
    fn sin(self) -> Self {
        self.map_hi(f64::sin)
    }
    fn cos(self) -> Self {
        self.map_hi(f64::cos)
    }
    fn tan(self) -> Self {
        self.map_hi(f64::tan)
    }
    fn asin(self) -> Self {
        self.map_hi(f64::asin)
    }
    fn acos(self) -> Self {
        self.map_hi(f64::acos)
    }
    fn atan(self) -> Self {
        self.map_hi(f64::atan)
    }
    fn atan2(self, o: Self) -> Self {
        Self::exact(self.hi.atan2(o.hi))
    }
    fn sin_cos(self) -> (Self, Self) {
        (self.sin(), self.cos())
    }
    fn exp_m1(self) -> Self {
        self.exp_dd() - Self::one()
    }
    fn ln_1p(self) -> Self {
        (Self::one() + self).ln_dd()
    }
    fn sinh(self) -> Self {
        self.map_hi(f64::sinh)
    }
    fn cosh(self) -> Self {
        self.map_hi(f64::cosh)
    }
    fn tanh(self) -> Self {
        self.map_hi(f64::tanh)
    }
    fn asinh(self) -> Self {
        self.map_hi(f64::asinh)
    }
    fn acosh(self) -> Self {
        self.map_hi(f64::acosh)
    }
    fn atanh(self) -> Self {
        self.map_hi(f64::atanh)
    }
    fn integer_decode(self) -> (u64, i16, i8) {
        self.hi.integer_decode()
    }
}

macro_rules! consts {
    ($($name:ident),*) => {$(
        fn $name() -> Self {
            Self::exact(<f64 as FloatConst>::$name())
        }
    )*};
}

impl FloatConst for DoubleDouble {
    consts!(
        E, FRAC_1_PI, FRAC_1_SQRT_2, FRAC_2_PI, FRAC_2_SQRT_PI, FRAC_PI_2, FRAC_PI_3, FRAC_PI_4, FRAC_PI_6,
        FRAC_PI_8, LN_10, LOG10_E, LOG2_E, SQRT_2
    );

    fn PI() -> Self {
        DoubleDouble::from_parts(std::f64::consts::PI, 1.224_646_799_147_353_2e-16)
    }

    fn LN_2() -> Self {
        Self::ln2()
    }
}

impl Scalar for DoubleDouble {
    fn lit(x: f64) -> Self {
        Self::exact(x)
    }

    fn from_usize_lossy(n: usize) -> Self {
        Self::from_u64(n as u64).expect("u64 converts")
    }

    fn to_f64_lossy(self) -> f64 {
        self.hi + self.lo
    }
}
