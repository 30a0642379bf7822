//! Closed-form thresholds and equilibria of the partner model.
//!
//! A single infectious individual is followed through one partnership
//! cycle by a seven-state absorbing chain:
//!
//! ```text
//!   A  infectious single            -> D (recovers, rate 1), B (pairs, rate r+ y*)
//!   B  infectious + healthy partner -> C (transmits, λ), E (recovers, 1), F (breakup, r-)
//!   C  two infectious partners      -> B (one recovers, 2), G (breakup, r-)
//!   D, E, F, G absorbing
//! ```
//!
//! Everything else (R0, the critical rate, the singles-infection drift Δ and
//! its root) is read off the absorption probabilities of this chain.

use serde::{Deserialize, Serialize};

use crate::error::{ModelError, Result};
use crate::linalg::{solve3, Mat3};

/// Values of `i` this far above `y*` are treated as `y*`.
pub const DELTA_CLAMP: f64 = 1e-12;
/// Absolute tolerance of the endemic-root bisection.
pub const I_STAR_TOL: f64 = 1e-12;
const I_STAR_MAX_ITER: usize = 200;

/// The three model rates: transmission per partnership, formation and
/// breakup.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Params {
    pub lambda: f64,
    pub r_plus: f64,
    pub r_minus: f64,
}

fn check_rate(name: &'static str, value: f64) -> Result<()> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(ModelError::InvalidParameter {
            name,
            value,
            reason: "must be finite and strictly positive",
        })
    }
}

impl Params {
    pub fn new(lambda: f64, r_plus: f64, r_minus: f64) -> Result<Self> {
        check_rate("lambda", lambda)?;
        check_rate("r_plus", r_plus)?;
        check_rate("r_minus", r_minus)?;
        Ok(Self {
            lambda,
            r_plus,
            r_minus,
        })
    }

    /// Re-checks positivity, for values built with struct literals or serde.
    pub fn validate(&self) -> Result<()> {
        Params::new(self.lambda, self.r_plus, self.r_minus).map(|_| ())
    }

    pub fn with_lambda(&self, lambda: f64) -> Result<Self> {
        Params::new(lambda, self.r_plus, self.r_minus)
    }

    /// `r_+ / r_-`.
    pub fn alpha(&self) -> f64 {
        self.r_plus / self.r_minus
    }

    pub fn y_star(&self) -> f64 {
        y_star_rates(self.r_plus, self.r_minus)
    }

    pub fn derived(&self) -> DerivedConstants {
        DerivedConstants::new(self)
    }
}

/// Equilibrium fraction of singles for the given partnership rates.
///
/// Positive root of `α y² + y − 1 = 0`, written as `2 / (1 + sqrt(1 + 4α))`
/// so that small `α` does not cancel.
pub fn y_star_rates(r_plus: f64, r_minus: f64) -> f64 {
    let alpha = r_plus / r_minus;
    2.0 / (1.0 + (1.0 + 4.0 * alpha).sqrt())
}

pub fn y_star(p: &Params) -> f64 {
    p.y_star()
}

/// Constants shared by the R0, λ_c and Δ formulas.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DerivedConstants {
    pub y_star: f64,
    /// Probability that an infectious single pairs up before recovering.
    pub p_r: f64,
    /// Exit rate of state B.
    pub a: f64,
    /// Exit rate of state C.
    pub b: f64,
    /// `ab / (ab − 2λ)`, the B–C loop factor.
    pub sigma: f64,
    /// `2 p_r − 1`.
    pub beta: f64,
}

impl DerivedConstants {
    pub fn new(p: &Params) -> Self {
        let y_star = p.y_star();
        let ry = p.r_plus * y_star;
        let p_r = ry / (1.0 + ry);
        let a = 1.0 + p.lambda + p.r_minus;
        let b = 2.0 + p.r_minus;
        let sigma = a * b / (a * b - 2.0 * p.lambda);
        Self {
            y_star,
            p_r,
            a,
            b,
            sigma,
            beta: 2.0 * p_r - 1.0,
        }
    }
}

/// Absorption probabilities of the partnership-cycle chain, from each of
/// its transient states, and the per-event drifts in infectious singles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AbsorptionSummary {
    pub p_af: f64,
    pub p_ag: f64,
    pub p_bf: f64,
    pub p_bg: f64,
    pub p_cf: f64,
    pub p_cg: f64,
    pub delta_s: f64,
    pub delta_si: f64,
    pub delta_ii: f64,
}

impl AbsorptionSummary {
    fn from_probabilities(p: [f64; 6]) -> Self {
        let [p_af, p_ag, p_bf, p_bg, p_cf, p_cg] = p;
        Self {
            p_af,
            p_ag,
            p_bf,
            p_bg,
            p_cf,
            p_cg,
            delta_s: -1.0,
            delta_si: -1.0 + p_bf + 2.0 * p_bg,
            delta_ii: -2.0 + p_cf + 2.0 * p_cg,
        }
    }

    pub fn probabilities(&self) -> [f64; 6] {
        [
            self.p_af, self.p_ag, self.p_bf, self.p_bg, self.p_cf, self.p_cg,
        ]
    }

    /// Expected number of infectious singles on absorption from A.
    pub fn reproduction_number(&self) -> f64 {
        self.p_af + 2.0 * self.p_ag
    }
}

/// Path-sum expressions for the absorption probabilities.
pub fn absorption_closed_form(p: &Params) -> AbsorptionSummary {
    let d = p.derived();
    let p_bf = d.sigma * p.r_minus / d.a;
    let p_bg = d.sigma * (p.lambda / d.a) * (p.r_minus / d.b);
    let p_cf = (2.0 / d.b) * p_bf;
    let p_cg = p.r_minus / d.b + (2.0 / d.b) * p_bg;
    AbsorptionSummary::from_probabilities([
        d.p_r * p_bf,
        d.p_r * p_bg,
        p_bf,
        p_bg,
        p_cf,
        p_cg,
    ])
}

/// Absorption probabilities of the cycle chain from a direct linear solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AbsorptionOracle {
    /// Rows A, B, C; columns D, E, F, G.
    pub absorption: [[f64; 4]; 3],
}

impl AbsorptionOracle {
    pub fn summary(&self) -> AbsorptionSummary {
        let [a, b, c] = self.absorption;
        AbsorptionSummary::from_probabilities([a[2], a[3], b[2], b[3], c[2], c[3]])
    }

    pub fn p_ad(&self) -> f64 {
        self.absorption[0][0]
    }
}

/// Builds the jump chain of the cycle and solves `(I − Q) H = R` for the
/// absorption matrix `H`, column by column.
pub fn absorption_oracle(p: &Params) -> Result<AbsorptionOracle> {
    p.validate()?;
    let ry = p.r_plus * y_star(p);
    // Outgoing rates per transient state, targets indexed A,B,C | D,E,F,G.
    let rates: [[f64; 7]; 3] = [
        [0.0, ry, 0.0, 1.0, 0.0, 0.0, 0.0],
        [0.0, 0.0, p.lambda, 0.0, 1.0, p.r_minus, 0.0],
        [0.0, 2.0, 0.0, 0.0, 0.0, 0.0, p.r_minus],
    ];
    let mut i_minus_q: Mat3 = [[0.0; 3]; 3];
    let mut r = [[0.0; 4]; 3];
    for (s, row) in rates.iter().enumerate() {
        let total: f64 = row.iter().sum();
        for t in 0..3 {
            i_minus_q[s][t] = if s == t { 1.0 } else { 0.0 } - row[t] / total;
        }
        for t in 0..4 {
            r[s][t] = row[3 + t] / total;
        }
    }
    let mut absorption = [[0.0; 4]; 3];
    for col in 0..4 {
        let h = solve3(
            &i_minus_q,
            &[r[0][col], r[1][col], r[2][col]],
            "absorption transient block",
        )?;
        for s in 0..3 {
            absorption[s][col] = h[s];
        }
    }
    Ok(AbsorptionOracle { absorption })
}

/// Basic reproduction number from the explicit rational formula.
pub fn r0(p: &Params) -> f64 {
    let d = p.derived();
    let rm = p.r_minus;
    d.p_r * rm * (2.0 + rm + 2.0 * p.lambda) / (2.0 + 3.0 * rm + p.lambda * rm + rm * rm)
}

/// Critical transmission rate, or its absence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum CriticalValue {
    Finite(f64),
    Infinite,
}

impl CriticalValue {
    pub fn finite(&self) -> Option<f64> {
        match self {
            CriticalValue::Finite(v) => Some(*v),
            CriticalValue::Infinite => None,
        }
    }

    pub fn is_finite(&self) -> bool {
        matches!(self, CriticalValue::Finite(_))
    }
}

impl std::fmt::Display for CriticalValue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CriticalValue::Finite(v) => write!(f, "{v}"),
            CriticalValue::Infinite => f.write_str("inf"),
        }
    }
}

impl std::str::FromStr for CriticalValue {
    type Err = std::num::ParseFloatError;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim() {
            "inf" => Ok(CriticalValue::Infinite),
            other => other.parse().map(CriticalValue::Finite),
        }
    }
}

/// Smallest transmission rate above which R0 exceeds one.
///
/// Finite exactly when `r_+ y* > 1`.
pub fn lambda_c(r_plus: f64, r_minus: f64) -> Result<CriticalValue> {
    check_rate("r_plus", r_plus)?;
    check_rate("r_minus", r_minus)?;
    let ry = r_plus * y_star_rates(r_plus, r_minus);
    if ry <= 1.0 {
        return Ok(CriticalValue::Infinite);
    }
    let g = ry - 1.0;
    let rm = r_minus;
    Ok(CriticalValue::Finite(
        (2.0 / rm) * (2.0 / g) + 2.0 / rm + 4.0 / g + 1.0 + rm / g,
    ))
}

/// Event-type split and drift in infectious singles at level `i`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeltaBreakdown {
    pub z: f64,
    pub p_s: f64,
    pub p_ii: f64,
    pub p_si: f64,
    pub value: f64,
}

/// Expected change in infectious singles per event that touches one, with
/// the singles fraction frozen at `y*`.
pub fn delta(i: f64, p: &Params) -> Result<DeltaBreakdown> {
    let abs = absorption_closed_form(p);
    delta_with(i, p, p.y_star(), &abs)
}

fn delta_with(i: f64, p: &Params, ys: f64, abs: &AbsorptionSummary) -> Result<DeltaBreakdown> {
    if !(i >= 0.0 && i <= ys + DELTA_CLAMP) {
        return Err(ModelError::Domain {
            quantity: "i",
            value: i,
            lo: 0.0,
            hi: ys,
        });
    }
    let i = i.min(ys);
    let z = 1.0 + p.r_plus * (ys - i / 2.0);
    let p_s = 1.0 / z;
    let p_ii = p.r_plus * i / (2.0 * z);
    let p_si = p.r_plus * (ys - i) / z;
    let value = p_s * abs.delta_s + p_ii * abs.delta_ii + p_si * abs.delta_si;
    Ok(DeltaBreakdown {
        z,
        p_s,
        p_ii,
        p_si,
        value,
    })
}

/// Endemic level of infectious singles: the root of Δ in `(0, y*)`, or
/// `None` when `R0 <= 1`.
pub fn i_star(p: &Params) -> Result<Option<f64>> {
    p.validate()?;
    if r0(p) <= 1.0 {
        return Ok(None);
    }
    let ys = p.y_star();
    let abs = absorption_closed_form(p);
    let f = |i: f64| delta_with(i, p, ys, &abs).map(|d| d.value);
    let (mut lo, mut hi) = (0.0, ys);
    let (f_lo, f_hi) = (f(lo)?, f(hi)?);
    if !(f_lo > 0.0 && f_hi < 0.0) {
        return Err(ModelError::NotBracketed {
            lo,
            hi,
            f_lo,
            f_hi,
        });
    }
    for _ in 0..I_STAR_MAX_ITER {
        if hi - lo <= I_STAR_TOL {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if f(mid)? > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(Some(0.5 * (lo + hi)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn params(lambda: f64, r_plus: f64, r_minus: f64) -> Params {
        Params::new(lambda, r_plus, r_minus).unwrap()
    }

    #[test]
    fn rejects_non_positive_rates() {
        assert!(Params::new(0.0, 1.0, 1.0).is_err());
        assert!(Params::new(1.0, -1.0, 1.0).is_err());
        assert!(Params::new(1.0, 1.0, f64::NAN).is_err());
        assert!(lambda_c(1.0, 0.0).is_err());
    }

    #[test]
    fn y_star_hand_values() {
        // α = 2: 2y² + y − 1 = (2y − 1)(y + 1).
        assert_abs_diff_eq!(y_star_rates(2.0, 1.0), 0.5, epsilon = 1e-15);
        // α = 1: golden-ratio conjugate.
        assert_abs_diff_eq!(
            y_star_rates(1.0, 1.0),
            (5.0f64.sqrt() - 1.0) / 2.0,
            epsilon = 1e-15
        );
    }

    #[test]
    fn y_star_asymptotics() {
        // α → 0: y* ≈ 1 − α.
        for alpha in [1e-3, 1e-4, 1e-5] {
            let ys = y_star_rates(alpha, 1.0);
            assert!((1.0 - ys - alpha).abs() < 3.0 * alpha * alpha);
        }
        // α → ∞: y* √α → 1.
        let mut prev = f64::INFINITY;
        for alpha in [1e2, 1e4, 1e6, 1e8] {
            let err = (y_star_rates(alpha, 1.0) * alpha.sqrt() - 1.0).abs();
            assert!(err < prev);
            prev = err;
        }
        assert!(prev < 1e-3);
    }

    #[test]
    fn derived_constant_invariants() {
        for &(l, rp, rm) in &[(1.0, 3.0, 1.0), (50.0, 0.1, 0.1), (0.01, 20.0, 9.0)] {
            let d = params(l, rp, rm).derived();
            assert!(d.y_star > 0.0 && d.y_star < 1.0);
            assert!(d.a * d.b > 2.0 * l);
            assert!(d.sigma >= 1.0);
            assert!(d.p_r > 0.0 && d.p_r < 1.0);
            assert!(d.beta > -1.0 && d.beta < 1.0);
        }
    }

    #[test]
    fn closed_form_matches_oracle_at_reference_point() {
        let p = params(1.0, 3.0, 1.0);
        let closed = absorption_closed_form(&p);
        let oracle = absorption_oracle(&p).unwrap().summary();
        for (c, o) in closed.probabilities().iter().zip(oracle.probabilities()) {
            assert_abs_diff_eq!(*c, o, epsilon = 1e-12);
        }
    }

    #[test]
    fn oracle_rows_sum_to_one_and_p_ad() {
        let p = params(2.5, 4.0, 0.7);
        let o = absorption_oracle(&p).unwrap();
        for row in o.absorption {
            assert_abs_diff_eq!(row.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        }
        let ry = p.r_plus * p.y_star();
        assert_abs_diff_eq!(o.p_ad(), 1.0 / (1.0 + ry), epsilon = 1e-14);
    }

    #[test]
    fn small_lambda_limit() {
        let p = params(1e-12, 3.0, 2.0);
        let abs = absorption_closed_form(&p);
        assert!(abs.p_bg < 1e-11);
        assert_abs_diff_eq!(abs.p_bf, 2.0 / 3.0, epsilon = 1e-11);
    }

    #[test]
    fn summary_invariants() {
        let p = params(5.0, 2.0, 0.3);
        let abs = absorption_closed_form(&p);
        assert!(abs.probabilities().iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(abs.p_af + abs.p_ag <= 1.0);
        assert!(abs.p_bf + abs.p_bg <= 1.0);
        assert!(abs.p_cf + abs.p_cg <= 1.0);
        assert!(abs.delta_ii <= 0.0);
        assert_eq!(abs.delta_s, -1.0);
        assert_abs_diff_eq!(abs.delta_si, -1.0 + abs.p_bf + 2.0 * abs.p_bg, epsilon = 0.0);
    }

    #[test]
    fn r0_reference_value() {
        let p = params(1.0, 3.0, 1.0);
        let ys = (13.0f64.sqrt() - 1.0) / 6.0;
        let pr = 3.0 * ys / (1.0 + 3.0 * ys);
        let expected = pr * 5.0 / 7.0;
        assert_abs_diff_eq!(r0(&p), expected, epsilon = 1e-14);
        assert_abs_diff_eq!(r0(&p), 0.40410, epsilon = 5e-6);
        let oracle = absorption_oracle(&p).unwrap().summary();
        assert_abs_diff_eq!(r0(&p), oracle.reproduction_number(), epsilon = 1e-12);
    }

    #[test]
    fn r0_fast_partnering_limit() {
        // r_− = 1 and λ = 3 sits at the r_+ = ∞ critical point.
        let mut prev = 0.0;
        for rp in [1e2, 1e4, 1e6, 1e8] {
            let v = r0(&params(3.0, rp, 1.0));
            assert!(v > prev && v < 1.0);
            prev = v;
        }
        assert!((prev - 1.0).abs() < 1e-3);
    }

    #[test]
    fn r0_increases_with_lambda() {
        let mut prev = 0.0;
        for k in 1..200 {
            let v = r0(&params(0.1 * k as f64, 2.5, 1.5));
            assert!(v > prev);
            prev = v;
        }
    }

    #[test]
    fn lambda_c_boundary_is_infinite() {
        assert_eq!(lambda_c(2.0, 1.0).unwrap(), CriticalValue::Infinite);
        assert_eq!(lambda_c(1.5, 1.0).unwrap(), CriticalValue::Infinite);
        assert!(lambda_c(2.1, 1.0).unwrap().is_finite());
    }

    #[test]
    fn lambda_c_is_root_of_r0() {
        let lc = lambda_c(6.0, 2.0).unwrap().finite().unwrap();
        assert_abs_diff_eq!(r0(&params(lc, 6.0, 2.0)), 1.0, epsilon = 1e-10);
        // Oracle: bisection on R0(λ) = 1.
        let (mut lo, mut hi) = (1e-9, 1e6);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if r0(&params(mid, 6.0, 2.0)) < 1.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        assert!((lc - 0.5 * (lo + hi)).abs() <= 1e-10 * lc.max(1.0));
    }

    #[test]
    fn lambda_c_fast_partnering_limit() {
        let lc = |rp: f64| lambda_c(rp, 2.0).unwrap().finite().unwrap();
        let mut prev = f64::INFINITY;
        for rp in [10.0, 1e3, 1e5, 1e7, 1e9] {
            let v = lc(rp);
            assert!(v < prev && v > 2.0);
            prev = v;
        }
        assert!((prev - 2.0).abs() < 1e-3);
    }

    #[test]
    fn critical_value_text_roundtrip() {
        assert_eq!("inf".parse::<CriticalValue>().unwrap(), CriticalValue::Infinite);
        let v = CriticalValue::Finite(3.25);
        assert_eq!(v.to_string().parse::<CriticalValue>().unwrap(), v);
        assert_eq!(
            serde_json::to_string(&CriticalValue::Infinite).unwrap(),
            r#"{"kind":"infinite"}"#
        );
    }

    #[test]
    fn delta_at_zero_is_r0_minus_one() {
        for &(l, rp, rm) in &[(1.0, 3.0, 1.0), (8.0, 6.0, 2.0), (0.5, 10.0, 0.2)] {
            let p = params(l, rp, rm);
            assert_abs_diff_eq!(delta(0.0, &p).unwrap().value, r0(&p) - 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn delta_domain_and_clamp() {
        let p = params(8.0, 6.0, 2.0);
        let ys = p.y_star();
        assert!(delta(-1e-9, &p).is_err());
        assert!(delta(ys + 1e-9, &p).is_err());
        let clamped = delta(ys + 0.5e-12, &p).unwrap();
        assert_eq!(clamped, delta(ys, &p).unwrap());
        assert_eq!(clamped.p_si, 0.0);
        assert!(clamped.value < 0.0);
    }

    #[test]
    fn i_star_absent_when_subcritical() {
        assert_eq!(i_star(&params(1.0, 3.0, 1.0)).unwrap(), None);
        // r_+ y* <= 1: never supercritical.
        assert_eq!(i_star(&params(1e4, 2.0, 1.0)).unwrap(), None);
    }

    #[test]
    fn i_star_is_root_of_delta() {
        let p = params(8.0, 6.0, 2.0);
        assert!(r0(&p) > 1.0);
        let is = i_star(&p).unwrap().unwrap();
        assert!(is > 0.0 && is < p.y_star());
        assert!(delta(is, &p).unwrap().value.abs() < 1e-11);
    }

    proptest::proptest! {
        #[test]
        fn delta_probabilities_partition(
            l in 0.01f64..50.0, rp in 0.01f64..50.0, rm in 0.01f64..50.0, frac in 0.0f64..=1.0
        ) {
            let p = params(l, rp, rm);
            let d = delta(frac * p.y_star(), &p).unwrap();
            proptest::prop_assert!(d.z > 0.0);
            proptest::prop_assert!((d.p_s + d.p_si + d.p_ii - 1.0).abs() < 1e-12);
        }

        #[test]
        fn closed_form_agrees_with_linear_solve(
            l in 0.01f64..50.0, rp in 0.01f64..50.0, rm in 0.01f64..50.0
        ) {
            let p = params(l, rp, rm);
            let c = absorption_closed_form(&p);
            let o = absorption_oracle(&p).unwrap().summary();
            for (x, y) in c.probabilities().iter().zip(o.probabilities()) {
                proptest::prop_assert!((x - y).abs() < 1e-12);
            }
            proptest::prop_assert!((r0(&p) - o.reproduction_number()).abs() < 1e-12);
        }

        #[test]
        fn finiteness_of_lambda_c_matches_rate_condition(rp in 0.05f64..20.0, rm in 0.05f64..20.0) {
            let boundary = 1.0 + 1.0 / rm;
            proptest::prop_assume!((rp - boundary).abs() > 1e-9);
            proptest::prop_assert_eq!(lambda_c(rp, rm).unwrap().is_finite(), rp > boundary);
        }
    }
}
