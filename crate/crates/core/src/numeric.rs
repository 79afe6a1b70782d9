/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CompensatedSum {
    sum: f64,
    compensation: f64,
}

impl CompensatedSum {
    pub const fn new() -> Self {
        Self {
            sum: 0.0,
            compensation: 0.0,
        }
    }

    #[inline]
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.compensation += (self.sum - t) + x;
        } else {
            self.compensation += (x - t) + self.sum;
        }
        self.sum = t;
    }

    #[inline]
    pub fn merge(&mut self, other: &CompensatedSum) {
        self.add(other.sum);
        self.add(other.compensation);
    }

    #[inline]
    pub fn value(&self) -> f64 {
        self.sum + self.compensation
    }
}

impl std::iter::FromIterator<f64> for CompensatedSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut acc = CompensatedSum::new();
        iter.into_iter().for_each(|x| acc.add(x));
        acc
    }
}

/// Exact, order-independent accumulator for values in `[0, 1]`.
///
/// Each term is truncated to a multiple of 2^-90 and summed as an integer, so
/// the total does not depend on summation order or thread count. Holds up to
/// 2^38 unit terms without overflow.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct UnitIntervalSum(u128);

const UNIT_HI_SCALE: f64 = (1u64 << 62) as f64;
const UNIT_LO_SCALE: f64 = (1u64 << 28) as f64;
const UNIT_TOTAL_SCALE: f64 = UNIT_HI_SCALE * UNIT_LO_SCALE;

impl UnitIntervalSum {
    pub const ZERO: Self = Self(0);

    #[inline]
    pub fn add(&mut self, x: f64) {
        debug_assert!((0.0..=1.0).contains(&x), "term {x} outside [0, 1]");
        let scaled = x * UNIT_HI_SCALE;
        let hi = scaled as u64;
        // The fractional part of an f64 is exact.
        let lo = ((scaled - hi as f64) * UNIT_LO_SCALE) as u64;
        self.0 += ((hi as u128) << 28) + lo as u128;
    }

    #[inline]
    pub fn merge(&mut self, other: UnitIntervalSum) {
        self.0 += other.0;
    }

    pub fn value(&self) -> f64 {
        self.0 as f64 / UNIT_TOTAL_SCALE
    }

    /// The accumulated total to about 106 bits.
    pub fn value_dd(&self) -> DoubleDouble {
        let hi = self.0 as f64;
        let rest = self.0 as i128 - hi as u128 as i128;
        DoubleDouble::from_parts(hi / UNIT_TOTAL_SCALE, rest as f64 / UNIT_TOTAL_SCALE)
    }
}

/// Unevaluated sum `hi + lo` with `|lo| <= ulp(hi) / 2`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
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

impl DoubleDouble {
    pub const ZERO: Self = Self { hi: 0.0, lo: 0.0 };

    pub fn from_parts(a: f64, b: f64) -> Self {
        let (hi, lo) = two_sum(a, b);
        Self { hi, lo }
    }

    #[inline]
    pub fn add_f64(self, x: f64) -> Self {
        let (s, e) = two_sum(self.hi, x);
        Self::from_parts(s, e + self.lo)
    }

    #[inline]
    pub fn add(self, other: Self) -> Self {
        let (s, e) = two_sum(self.hi, other.hi);
        let (t, f) = two_sum(self.lo, other.lo);
        let (s, e) = two_sum(s, e + t);
        Self::from_parts(s, e + f)
    }

    pub fn neg(self) -> Self {
        Self {
            hi: -self.hi,
            lo: -self.lo,
        }
    }

    pub fn scale(self, factor: f64) -> Self {
        let p = self.hi * factor;
        let e = self.hi.mul_add(factor, -p);
        Self::from_parts(p, e + self.lo * factor)
    }

    pub fn div_f64(self, d: f64) -> Self {
        let q1 = self.hi / d;
        let p = q1 * d;
        let e = q1.mul_add(d, -p);
        let r = ((self.hi - p) - e) + self.lo;
        Self::from_parts(q1, r / d)
    }

    pub fn value(self) -> f64 {
        self.hi + self.lo
    }
}

/// Sum that is independent of the order of `values`: terms are sorted by
/// value before a compensated pass.
pub fn order_independent_sum(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    compensated_sum(sorted)
}

pub fn compensated_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    values.into_iter().collect::<CompensatedSum>().value()
}

/// Sample mean and `n - 1` standard deviation. A constant sample has
/// standard deviation exactly zero.
pub fn mean_std(samples: &[f64]) -> (f64, f64) {
    let n = samples.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    if samples.iter().all(|&s| s == samples[0]) {
        return (samples[0], 0.0);
    }
    let mean = compensated_sum(samples.iter().copied()) / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let ss = compensated_sum(samples.iter().map(|s| (s - mean) * (s - mean)));
    (mean, (ss / (n - 1) as f64).sqrt())
}
