//! Double-double `exp` and `ln` for test oracles. The versions shipped with
//! `twofloat` are only accurate to about 1e-12, so these are built from its
//! arithmetic alone.

use twofloat::TwoFloat;

const LN2_HI: f64 = std::f64::consts::LN_2;
const LN2_LO: f64 = 2.319_046_813_846_299_6e-17;
const HALVINGS: i32 = 10;

pub fn dd_exp(x: TwoFloat) -> TwoFloat {
    let k = (x.hi() / LN2_HI).round();
    let r = (x - TwoFloat::new_add(LN2_HI, LN2_LO) * k) / 2f64.powi(HALVINGS);
    let mut term = TwoFloat::from(1.0);
    let mut sum = TwoFloat::from(1.0);
    for n in 1..=24 {
        term = term * r / n as f64;
        sum += term;
    }
    for _ in 0..HALVINGS {
        sum = sum * sum;
    }
    sum * 2f64.powi(k as i32)
}

/// Newton iterations on `exp(y) = x`.
pub fn dd_ln(x: TwoFloat) -> TwoFloat {
    let mut y = TwoFloat::from(x.hi().ln());
    for _ in 0..3 {
        y = y + x * dd_exp(-y) - 1.0;
    }
    y
}

#[test]
fn exp_and_ln_agree_with_known_values() {
    let e = dd_exp(TwoFloat::from(1.0));
    assert!((e - TwoFloat::new_add(std::f64::consts::E, 1.445_646_891_729_250_2e-16)).abs() < 1e-28);
    let l = dd_ln(TwoFloat::from(2.0));
    assert!((l - TwoFloat::new_add(LN2_HI, LN2_LO)).abs() < 1e-28);
    for x in [-30.0f64, -3.3, 0.0, 1e-7, 4.5, 40.0] {
        let t = TwoFloat::from(x);
        assert!(((dd_ln(dd_exp(t)) - t).abs()).hi() < 1e-27 * x.abs().max(1.0));
    }
}
