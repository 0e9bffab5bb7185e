//! Exact-sign orientation and in-circle predicates.
//!
//! Each predicate evaluates its determinant in f64 first and accepts the
//! sign when it clears a forward-error bound on the floating-point
//! computation. Near-degenerate inputs fall through to exact evaluation
//! over arbitrary-precision integers scaled by powers of two, so the
//! returned sign is always the sign of the true real-arithmetic value.

use num_bigint::{BigInt, Sign};

use crate::geometry::Point;

// Unit roundoff of f64 (half an ULP at 1.0).
const U: f64 = f64::EPSILON / 2.0;
// Forward-error coefficients for the two determinant expansions, with a
// factor-of-two cushion on the textbook constants.
const ORIENT_BOUND: f64 = 2.0 * (3.0 + 16.0 * U) * U;
const INCIRCLE_BOUND: f64 = 2.0 * (10.0 + 96.0 * U) * U;

/// Sign of the cross product (b - a) x (c - a): positive when walking
/// a -> b -> c turns left, zero when the points are exactly collinear.
pub fn orient2d(a: Point, b: Point, c: Point) -> i32 {
    let detleft = (b.x - a.x) * (c.y - a.y);
    let detright = (b.y - a.y) * (c.x - a.x);
    let det = detleft - detright;
    let detsum = detleft.abs() + detright.abs();
    if det.abs() > ORIENT_BOUND * detsum {
        return sign_f64(det);
    }
    orient2d_exact(a, b, c)
}

fn orient2d_exact(a: Point, b: Point, c: Point) -> i32 {
    let bax = Fx::from(b.x).sub(&Fx::from(a.x));
    let bay = Fx::from(b.y).sub(&Fx::from(a.y));
    let cax = Fx::from(c.x).sub(&Fx::from(a.x));
    let cay = Fx::from(c.y).sub(&Fx::from(a.y));
    bax.mul(&cay).sub(&bay.mul(&cax)).signum()
}

/// Sign of the in-circle determinant: positive when `d` lies strictly
/// inside the circle through the counterclockwise triangle `a b c`,
/// negative outside, zero when exactly cocircular.
pub fn incircle(a: Point, b: Point, c: Point, d: Point) -> i32 {
    let adx = a.x - d.x;
    let ady = a.y - d.y;
    let bdx = b.x - d.x;
    let bdy = b.y - d.y;
    let cdx = c.x - d.x;
    let cdy = c.y - d.y;

    let ad2 = adx * adx + ady * ady;
    let bd2 = bdx * bdx + bdy * bdy;
    let cd2 = cdx * cdx + cdy * cdy;

    let bc = bdx * cdy - cdx * bdy;
    let ca = cdx * ady - adx * cdy;
    let ab = adx * bdy - bdx * ady;
    let det = ad2 * bc + bd2 * ca + cd2 * ab;

    let permanent = ad2 * (bdx.abs() * cdy.abs() + cdx.abs() * bdy.abs())
        + bd2 * (cdx.abs() * ady.abs() + adx.abs() * cdy.abs())
        + cd2 * (adx.abs() * bdy.abs() + bdx.abs() * ady.abs());
    if det.abs() > INCIRCLE_BOUND * permanent {
        return sign_f64(det);
    }
    incircle_exact(a, b, c, d)
}

fn incircle_exact(a: Point, b: Point, c: Point, d: Point) -> i32 {
    let dx = Fx::from(d.x);
    let dy = Fx::from(d.y);
    let adx = Fx::from(a.x).sub(&dx);
    let ady = Fx::from(a.y).sub(&dy);
    let bdx = Fx::from(b.x).sub(&dx);
    let bdy = Fx::from(b.y).sub(&dy);
    let cdx = Fx::from(c.x).sub(&dx);
    let cdy = Fx::from(c.y).sub(&dy);

    let ad2 = adx.mul(&adx).add(&ady.mul(&ady));
    let bd2 = bdx.mul(&bdx).add(&bdy.mul(&bdy));
    let cd2 = cdx.mul(&cdx).add(&cdy.mul(&cdy));

    let bc = bdx.mul(&cdy).sub(&cdx.mul(&bdy));
    let ca = cdx.mul(&ady).sub(&adx.mul(&cdy));
    let ab = adx.mul(&bdy).sub(&bdx.mul(&ady));

    ad2.mul(&bc).add(&bd2.mul(&ca)).add(&cd2.mul(&ab)).signum()
}

#[inline]
fn sign_f64(x: f64) -> i32 {
    if x > 0.0 {
        1
    } else if x < 0.0 {
        -1
    } else {
        0
    }
}

/// A dyadic rational m * 2^e holding any finite f64 exactly and closed
/// under add, subtract, and multiply.
struct Fx {
    m: BigInt,
    e: i64,
}

impl Fx {
    fn from(x: f64) -> Fx {
        debug_assert!(x.is_finite());
        let bits = x.to_bits();
        let neg = bits >> 63 == 1;
        let exp = ((bits >> 52) & 0x7ff) as i64;
        let frac = bits & ((1u64 << 52) - 1);
        let (mag, e) = if exp == 0 {
            (frac, -1074) // subnormal, no implicit leading bit
        } else {
            (frac | (1u64 << 52), exp - 1075)
        };
        let mut m = BigInt::from(mag);
        if neg {
            m = -m;
        }
        Fx { m, e }
    }

    fn add(&self, other: &Fx) -> Fx {
        let e = self.e.min(other.e);
        let a = &self.m << (self.e - e) as u32;
        let b = &other.m << (other.e - e) as u32;
        Fx { m: a + b, e }
    }

    fn sub(&self, other: &Fx) -> Fx {
        let e = self.e.min(other.e);
        let a = &self.m << (self.e - e) as u32;
        let b = &other.m << (other.e - e) as u32;
        Fx { m: a - b, e }
    }

    fn mul(&self, other: &Fx) -> Fx {
        Fx {
            m: &self.m * &other.m,
            e: self.e + other.e,
        }
    }

    fn signum(&self) -> i32 {
        match self.m.sign() {
            Sign::Minus => -1,
            Sign::NoSign => 0,
            Sign::Plus => 1,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn orient_basic_signs() {
        let a = Point::new(0.0, 0.0);
        let b = Point::new(1.0, 0.0);
        assert_eq!(orient2d(a, b, Point::new(0.0, 1.0)), 1);
        assert_eq!(orient2d(a, b, Point::new(0.0, -1.0)), -1);
        assert_eq!(orient2d(a, b, Point::new(2.0, 0.0)), 0);
        assert_eq!(orient2d(a, b, Point::new(0.5, 1e-300)), 1);
    }

    #[test]
    fn orient_near_degenerate_matches_integer_oracle() {
        // Coordinates chosen so every value is an exact multiple of
        // 2^-53 and the whole determinant fits in i128.
        let scale = (1u64 << 53) as f64;
        let oracle = |a: Point, b: Point, c: Point| -> i32 {
            let ax = (a.x * scale) as i128;
            let ay = (a.y * scale) as i128;
            let bx = (b.x * scale) as i128;
            let by = (b.y * scale) as i128;
            let cx = (c.x * scale) as i128;
            let cy = (c.y * scale) as i128;
            let det = (bx - ax) * (cy - ay) - (by - ay) * (cx - ax);
            det.signum() as i32
        };
        let ulp = 1.0 / scale;
        let b = Point::new(12.0, 12.0);
        let c = Point::new(24.0, 24.0);
        for i in 0..16 {
            for j in 0..16 {
                let a = Point::new(0.5 + i as f64 * ulp, 0.5 + j as f64 * ulp);
                assert_eq!(orient2d(a, b, c), oracle(a, b, c), "i={i} j={j}");
            }
        }
    }

    #[test]
    fn incircle_basic_signs() {
        let a = Point::new(1.0, 0.0);
        let b = Point::new(0.0, 1.0);
        let c = Point::new(-1.0, 0.0);
        assert_eq!(incircle(a, b, c, Point::new(0.0, 0.0)), 1);
        assert_eq!(incircle(a, b, c, Point::new(2.0, 0.0)), -1);
        // Fourth point of the same unit circle: exactly cocircular.
        assert_eq!(incircle(a, b, c, Point::new(0.0, -1.0)), 0);
    }

    #[test]
    fn incircle_near_degenerate_matches_bigint_oracle() {
        let scale = (1u64 << 53) as f64;
        let oracle = |a: Point, b: Point, c: Point, d: Point| -> i32 {
            let f = |v: f64| BigInt::from((v * scale) as i128);
            let (adx, ady) = (f(a.x) - f(d.x), f(a.y) - f(d.y));
            let (bdx, bdy) = (f(b.x) - f(d.x), f(b.y) - f(d.y));
            let (cdx, cdy) = (f(c.x) - f(d.x), f(c.y) - f(d.y));
            let ad2 = &adx * &adx + &ady * &ady;
            let bd2 = &bdx * &bdx + &bdy * &bdy;
            let cd2 = &cdx * &cdx + &cdy * &cdy;
            let det = ad2 * (&bdx * &cdy - &cdx * &bdy) + bd2 * (&cdx * &ady - &adx * &cdy)
                + cd2 * (&adx * &bdy - &bdx * &ady);
            match det.sign() {
                Sign::Minus => -1,
                Sign::NoSign => 0,
                Sign::Plus => 1,
            }
        };
        let ulp = 1.0 / scale;
        // Corners of a near-square: the fourth point sits within a few
        // ulps of the circumcircle of the other three.
        let a = Point::new(0.0, 0.0);
        let b = Point::new(1.0, 0.0);
        let c = Point::new(1.0, 1.0);
        for i in 0..24 {
            let d = Point::new(0.0, 1.0 + (i as f64 - 12.0) * ulp);
            assert_eq!(incircle(a, b, c, d), oracle(a, b, c, d), "i={i}");
        }
    }

    #[test]
    fn exact_path_handles_tiny_and_mixed_magnitudes() {
        let a = Point::new(1e-200, 0.0);
        let b = Point::new(2e-200, 1e-200);
        let c = Point::new(3e-200, 2e-200);
        // b - a and c - a are exactly parallel: (1,1) and (2,2) at scale.
        assert_eq!(orient2d(a, b, c), 0);
        let c2 = Point::new(3e-200, 2.0000000000000004e-200);
        assert_eq!(orient2d(a, b, c2), 1);
    }
}
