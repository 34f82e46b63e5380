/// Error-free transforms and a compensated accumulator.
///
/// Weighted aggregation must return bit-identical results regardless of work
/// scheduling and must reproduce the exact input when every contribution is
/// identical. Plain f64 accumulation satisfies neither once counts like 3
/// introduce rounding, so sums of products are tracked with roughly 106 bits
/// of precision and the final division is corrected with an fma residual.

/// Exact sum: returns (fl(a+b), err) with a + b == fl(a+b) + err.
#[inline]
pub fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bv = s - a;
    let err = (a - (s - bv)) + (b - bv);
    (s, err)
}

/// Exact product via fma: returns (fl(a*b), err) with a * b == fl(a*b) + err.
#[inline]
pub fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    let err = f64::mul_add(a, b, -p);
    (p, err)
}

/// Running sum held as an unevaluated pair hi + lo.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    hi: f64,
    lo: f64,
}

impl CompensatedSum {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, x: f64) {
        let (s, e) = two_sum(self.hi, x);
        let lo = self.lo + e;
        // Renormalize so hi carries the leading bits again.
        let (hi, lo) = two_sum(s, lo);
        self.hi = hi;
        self.lo = lo;
    }

    /// Adds a * b without rounding the product first.
    #[inline]
    pub fn add_product(&mut self, a: f64, b: f64) {
        let (p, e) = two_prod(a, b);
        self.add(p);
        self.add(e);
    }

    pub fn value(&self) -> f64 {
        self.hi + self.lo
    }

    /// Quotient (hi + lo) / d with one fma correction step, giving a
    /// correctly rounded result for exactly representable quotients.
    pub fn div(&self, d: f64) -> f64 {
        let q0 = self.hi / d;
        let (p, pe) = two_prod(q0, d);
        let r = ((self.hi - p) - pe) + self.lo;
        q0 + r / d
    }
}

/// Relative error with an absolute floor to keep near-zero comparisons sane.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}
