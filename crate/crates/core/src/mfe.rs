//! Mean-field equations for the rescaled counts `(y, i, si, ii)`, their
//! fixed-step integration, equilibria and linearisation at the
//! disease-free state.

use serde::{Deserialize, Serialize};

use crate::analytic::{i_star, r0, Params};
use crate::error::{ModelError, Result};
use crate::linalg::{
    inverse2, inverse3, mat_mul3, mat_vec2, spectral_abscissa3, spectral_radius3, Mat2, Mat3,
};

/// Membership slack for the invariant region.
pub const LAMBDA_SLACK: f64 = 1e-9;
/// Integration aborts once a state drifts this far outside the region.
pub const MAX_DRIFT: f64 = 1e-6;
pub const DEFAULT_DT: f64 = 1e-3;
/// Sup-norm of the derivative at which a run counts as stationary.
pub const EQUILIBRIUM_TOL: f64 = 1e-10;
pub const EQUILIBRIUM_T_MAX: f64 = 1e4;
/// Required agreement between the integrated and reconstructed equilibria.
pub const EQUILIBRIUM_AGREEMENT: f64 = 1e-6;

/// Fractions of singles, infectious singles, SI pairs and II pairs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MfeState {
    pub y: f64,
    pub i: f64,
    pub si: f64,
    pub ii: f64,
}

/// The same state with `ip = si + ii` in place of `si`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MfeStateIp {
    pub y: f64,
    pub i: f64,
    pub ip: f64,
    pub ii: f64,
}

impl MfeState {
    pub fn new(y: f64, i: f64, si: f64, ii: f64) -> Self {
        Self { y, i, si, ii }
    }

    pub fn disease_free(p: &Params) -> Self {
        Self::new(p.y_star(), 0.0, 0.0, 0.0)
    }

    pub fn ip(&self) -> f64 {
        self.si + self.ii
    }

    pub fn s(&self) -> f64 {
        self.y - self.i
    }

    pub fn ss(&self) -> f64 {
        (1.0 - self.y) / 2.0 - self.si - self.ii
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.y, self.i, self.si, self.ii]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }

    pub fn to_ip(&self) -> MfeStateIp {
        MfeStateIp {
            y: self.y,
            i: self.i,
            ip: self.ip(),
            ii: self.ii,
        }
    }

    /// How far the state lies outside the invariant region (0 inside).
    pub fn region_violation(&self) -> f64 {
        let ip = self.ip();
        [
            -self.y,
            self.y - 1.0,
            -self.i,
            self.i - self.y,
            -self.ii,
            -self.si,
            ip - (1.0 - self.y) / 2.0,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }

    /// Nearest-ish point of the region, for roundoff-sized excursions.
    pub fn clamped(&self) -> Self {
        let y = self.y.clamp(0.0, 1.0);
        let i = self.i.clamp(0.0, y);
        let mut si = self.si.max(0.0);
        let mut ii = self.ii.max(0.0);
        let cap = (1.0 - y) / 2.0;
        if si + ii > cap {
            let excess = si + ii - cap;
            let from_si = excess.min(si);
            si -= from_si;
            ii = (ii - (excess - from_si)).max(0.0);
        }
        Self::new(y, i, si, ii)
    }

    pub fn max_abs_diff(&self, other: &MfeState) -> f64 {
        self.to_array()
            .iter()
            .zip(other.to_array())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

impl MfeStateIp {
    pub fn to_si(&self) -> MfeState {
        MfeState::new(self.y, self.i, self.ip - self.ii, self.ii)
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.y, self.i, self.ip, self.ii]
    }
}

fn check_region(state: &MfeState) -> Result<()> {
    let violation = state.region_violation();
    if violation > LAMBDA_SLACK || !violation.is_finite() {
        return Err(ModelError::OutsideRegion { violation });
    }
    Ok(())
}

#[inline]
fn rhs_array(u: &[f64; 4], p: &Params) -> [f64; 4] {
    let [y, i, si, ii] = *u;
    let (l, rp, rm) = (p.lambda, p.r_plus, p.r_minus);
    [
        -rp * y * y + rm * (1.0 - y),
        -(1.0 + rp * y) * i + rm * (si + 2.0 * ii),
        rp * (y - i) * i - (1.0 + l + rm) * si + 2.0 * ii,
        rp * i * i / 2.0 + l * si - (2.0 + rm) * ii,
    ]
}

/// Time derivative in `(y, i, si, ii)` coordinates.
pub fn mfe_rhs(state: &MfeState, p: &Params) -> Result<MfeState> {
    check_region(state)?;
    Ok(MfeState::from_array(rhs_array(&state.to_array(), p)))
}

/// Time derivative in `(y, i, ip, ii)` coordinates.
pub fn mfe_rhs_ip(state: &MfeStateIp, p: &Params) -> Result<MfeStateIp> {
    check_region(&state.to_si())?;
    let MfeStateIp { y, i, ip, ii } = *state;
    let (l, rp, rm) = (p.lambda, p.r_plus, p.r_minus);
    Ok(MfeStateIp {
        y: -rp * y * y + rm * (1.0 - y),
        i: -(1.0 + rp * y) * i + rm * (ip + ii),
        ip: rp * (y - i / 2.0) * i - (1.0 + rm) * ip + ii,
        ii: rp * i * i / 2.0 + l * ip - (2.0 + rm + l) * ii,
    })
}

#[inline]
fn axpy(u: &[f64; 4], h: f64, k: &[f64; 4]) -> [f64; 4] {
    [u[0] + h * k[0], u[1] + h * k[1], u[2] + h * k[2], u[3] + h * k[3]]
}

fn rk4_step(u: &[f64; 4], h: f64, p: &Params, k1: &[f64; 4]) -> [f64; 4] {
    let k2 = rhs_array(&axpy(u, h / 2.0, k1), p);
    let k3 = rhs_array(&axpy(u, h / 2.0, &k2), p);
    let k4 = rhs_array(&axpy(u, h, &k3), p);
    let mut out = *u;
    for j in 0..4 {
        out[j] += h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
    }
    out
}

/// Bookkeeping returned by every integration run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegrationStats {
    pub steps: usize,
    pub t_final: f64,
    pub final_state: MfeState,
    /// Largest distance outside the region seen before clamping.
    pub max_drift: f64,
}

/// What the observer wants after seeing a state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Flow {
    Continue,
    Stop,
}

/// Fixed-step RK4 from `state0` to `t_end`, handing every accepted state
/// (including the initial one) to `observer` together with its derivative.
pub fn integrate_with<F>(
    state0: &MfeState,
    p: &Params,
    t_end: f64,
    dt: f64,
    mut observer: F,
) -> Result<IntegrationStats>
where
    F: FnMut(f64, &MfeState, &[f64; 4]) -> Flow,
{
    p.validate()?;
    check_region(state0)?;
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(ModelError::InvalidParameter {
            name: "dt",
            value: dt,
            reason: "must be positive",
        });
    }
    if !(t_end >= 0.0 && t_end.is_finite()) {
        return Err(ModelError::InvalidParameter {
            name: "t_end",
            value: t_end,
            reason: "must be non-negative",
        });
    }
    let ratio = t_end / dt;
    let steps = if (ratio - ratio.round()).abs() < 1e-9 {
        ratio.round() as usize
    } else {
        ratio.ceil() as usize
    };
    let h = if steps == 0 { 0.0 } else { t_end / steps as f64 };

    let mut u = state0.clamped().to_array();
    let mut max_drift = state0.region_violation();
    let mut k = rhs_array(&u, p);
    let mut taken = 0;
    let mut t = 0.0;
    if observer(0.0, &MfeState::from_array(u), &k) == Flow::Continue {
        for n in 1..=steps {
            let next = rk4_step(&u, h, p, &k);
            t = n as f64 * h;
            let state = MfeState::from_array(next);
            let drift = state.region_violation();
            if !(drift <= MAX_DRIFT) {
                return Err(ModelError::IntegrationFailure { time: t, drift });
            }
            max_drift = max_drift.max(drift);
            u = if drift <= LAMBDA_SLACK {
                state.clamped().to_array()
            } else {
                next
            };
            k = rhs_array(&u, p);
            taken = n;
            if observer(t, &MfeState::from_array(u), &k) == Flow::Stop {
                break;
            }
        }
    }
    Ok(IntegrationStats {
        steps: taken,
        t_final: t,
        final_state: MfeState::from_array(u),
        max_drift,
    })
}

/// A recorded solution.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<MfeState>,
    pub max_drift: f64,
}

impl Trajectory {
    pub fn last(&self) -> Option<&MfeState> {
        self.states.last()
    }
}

/// Integrates and records every step.
pub fn integrate(state0: &MfeState, p: &Params, t_end: f64, dt: f64) -> Result<Trajectory> {
    integrate_sampled(state0, p, t_end, dt, dt)
}

/// Integrates with step `dt` and records roughly every `sample_dt` (the
/// final state is always recorded).
pub fn integrate_sampled(
    state0: &MfeState,
    p: &Params,
    t_end: f64,
    dt: f64,
    sample_dt: f64,
) -> Result<Trajectory> {
    let stride = ((sample_dt / dt).round() as usize).max(1);
    let mut times = Vec::new();
    let mut states = Vec::new();
    let mut count = 0usize;
    let stats = integrate_with(state0, p, t_end, dt, |t, s, _| {
        if count % stride == 0 {
            times.push(t);
            states.push(*s);
        }
        count += 1;
        Flow::Continue
    })?;
    if times.last() != Some(&stats.t_final) {
        times.push(stats.t_final);
        states.push(stats.final_state);
    }
    Ok(Trajectory {
        times,
        states,
        max_drift: stats.max_drift,
    })
}

/// Interior start used to approach the endemic state.
pub fn endemic_start(p: &Params) -> MfeState {
    let ys = p.y_star();
    MfeState::new(ys, ys / 2.0, (1.0 - ys) / 8.0, (1.0 - ys) / 8.0)
}

/// Integrates until the derivative sup-norm drops below [`EQUILIBRIUM_TOL`].
pub fn integrate_to_rest(state0: &MfeState, p: &Params, dt: f64) -> Result<(f64, MfeState)> {
    let mut reached = None;
    let stats = integrate_with(state0, p, EQUILIBRIUM_T_MAX, dt, |t, s, k| {
        let norm = k.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if norm < EQUILIBRIUM_TOL {
            reached = Some((t, *s));
            Flow::Stop
        } else {
            Flow::Continue
        }
    })?;
    reached.ok_or(ModelError::NoConvergence {
        t_end: stats.t_final,
    })
}

/// Endemic state rebuilt from the analytic root: `(si, ii) = Φ∞ L† i*`.
pub fn endemic_from_i_star(p: &Params) -> Result<Option<MfeState>> {
    let Some(is) = i_star(p)? else {
        return Ok(None);
    };
    let lin = linearize(p)?;
    let ys = p.y_star();
    let l_dagger = [p.r_plus * (ys - is), p.r_plus * is / 2.0];
    let v = mat_vec2(&lin.phi_inf, &l_dagger);
    Ok(Some(MfeState::new(ys, is, v[0] * is, v[1] * is)))
}

/// The attracting equilibrium on the `y = y*` slice.
///
/// Below threshold this is the disease-free state. Above it the state is
/// found by integration from [`endemic_start`] and cross-checked against
/// [`endemic_from_i_star`].
pub fn mfe_equilibrium(p: &Params) -> Result<MfeState> {
    p.validate()?;
    if r0(p) <= 1.0 {
        return Ok(MfeState::disease_free(p));
    }
    let (_, integrated) = integrate_to_rest(&endemic_start(p), p, DEFAULT_DT)?;
    let reconstructed = endemic_from_i_star(p)?.expect("R0 > 1 has an endemic root");
    if integrated.max_abs_diff(&reconstructed) > EQUILIBRIUM_AGREEMENT {
        return Err(ModelError::EquilibriumMismatch {
            integrated: integrated.to_array(),
            reconstructed: reconstructed.to_array(),
        });
    }
    Ok(integrated)
}

/// Linear structure around the disease-free state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearizedSystem {
    /// Pair block `[[−a, 2], [λ, −b]]` acting on `(si, ii)`.
    pub k: Mat2,
    /// Pair-formation input `r_+ (y*, 0)` at `i = 0`.
    pub l0: [f64; 2],
    /// `−K⁻¹`, the integrated pair semigroup.
    pub phi_inf: Mat2,
    /// Jacobian of `(i, si, ii)` at the disease-free state.
    pub a3: Mat3,
    /// Spectral abscissa of `a3`.
    pub mu: f64,
    params: Params,
}

impl LinearizedSystem {
    /// Right-hand side of the growth-rate equation
    /// `μ = −(1 + r_+ y*) + r_- (1, 2) (μ I − K)⁻¹ L₀`.
    pub fn growth_rate_rhs(&self, mu: f64) -> Result<f64> {
        let p = &self.params;
        let shifted = [
            [mu - self.k[0][0], -self.k[0][1]],
            [-self.k[1][0], mu - self.k[1][1]],
        ];
        let v = mat_vec2(&inverse2(&shifted, "μI − K")?, &self.l0);
        Ok(-(1.0 + p.r_plus * p.y_star()) + p.r_minus * (v[0] + 2.0 * v[1]))
    }
}

pub fn linearize(p: &Params) -> Result<LinearizedSystem> {
    p.validate()?;
    let d = p.derived();
    let ry = p.r_plus * d.y_star;
    let k = [[-d.a, 2.0], [p.lambda, -d.b]];
    let kinv = inverse2(&k, "pair block K")?;
    let phi_inf = [[-kinv[0][0], -kinv[0][1]], [-kinv[1][0], -kinv[1][1]]];
    let a3 = [
        [-(1.0 + ry), p.r_minus, 2.0 * p.r_minus],
        [ry, -d.a, 2.0],
        [0.0, p.lambda, -d.b],
    ];
    Ok(LinearizedSystem {
        k,
        l0: [ry, 0.0],
        phi_inf,
        a3,
        mu: spectral_abscissa3(&a3),
        params: *p,
    })
}

/// New-infection / transition split of the disease-free Jacobian.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NextGenDecomposition {
    pub f: Mat3,
    pub v: Mat3,
    pub rho: f64,
}

pub fn next_gen(p: &Params) -> Result<NextGenDecomposition> {
    p.validate()?;
    let d = p.derived();
    let ry = p.r_plus * d.y_star;
    let f = [[0.0, 0.0, 0.0], [ry, 0.0, 0.0], [0.0, 0.0, 0.0]];
    let v = [
        [1.0 + ry, -p.r_minus, -2.0 * p.r_minus],
        [0.0, d.a, -2.0],
        [0.0, -p.lambda, d.b],
    ];
    let fv = mat_mul3(&f, &inverse3(&v, "transition matrix V")?);
    Ok(NextGenDecomposition {
        f,
        v,
        rho: spectral_radius3(&fv),
    })
}

/// Spectral radius of `F V⁻¹`.
pub fn next_gen_r0(p: &Params) -> Result<f64> {
    next_gen(p).map(|d| d.rho)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytic::lambda_c;
    use crate::linalg::{max_abs_diff3, sub3};
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_xoshiro::Xoshiro256PlusPlus;

    fn params(lambda: f64, r_plus: f64, r_minus: f64) -> Params {
        Params::new(lambda, r_plus, r_minus).unwrap()
    }

    fn random_region_point<R: Rng>(rng: &mut R) -> MfeState {
        let y: f64 = rng.gen();
        let i = rng.gen::<f64>() * y;
        let ip = rng.gen::<f64>() * (1.0 - y) / 2.0;
        let ii = rng.gen::<f64>() * ip;
        MfeState::new(y, i, ip - ii, ii)
    }

    #[test]
    fn disease_free_state_is_stationary() {
        let p = params(2.0, 4.0, 1.0);
        let d = mfe_rhs(&MfeState::disease_free(&p), &p).unwrap();
        assert!(d.to_array().iter().all(|v| v.abs() < 1e-15));
        let d = mfe_rhs_ip(&MfeState::disease_free(&p).to_ip(), &p).unwrap();
        assert!(d.to_array().iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn hand_evaluated_derivative() {
        let p = params(2.0, 4.0, 1.0);
        let d = mfe_rhs(&MfeState::new(0.5, 0.1, 0.05, 0.02), &p).unwrap();
        assert_abs_diff_eq!(d.y, -0.5, epsilon = 1e-15);
        // i' = −(1 + 2)·0.1 + (0.05 + 0.04)
        assert_abs_diff_eq!(d.i, -0.21, epsilon = 1e-15);
        // si' = 4·0.4·0.1 − 4·0.05 + 0.04
        assert_abs_diff_eq!(d.si, 0.0, epsilon = 1e-15);
        // ii' = 0.02 + 0.1 − 0.06
        assert_abs_diff_eq!(d.ii, 0.06, epsilon = 1e-15);
    }

    #[test]
    fn rejects_states_outside_region() {
        let p = params(2.0, 4.0, 1.0);
        assert!(mfe_rhs(&MfeState::new(0.5, 0.6, 0.0, 0.0), &p).is_err());
        assert!(mfe_rhs(&MfeState::new(0.5, 0.1, 0.2, 0.1), &p).is_err());
        assert!(mfe_rhs(&MfeState::new(0.5, 0.1, -1e-3, 0.0), &p).is_err());
        assert!(mfe_rhs(&MfeState::new(0.5, 0.1, -1e-10, 0.0), &p).is_ok());
    }

    #[test]
    fn coordinate_forms_agree() {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(11);
        for _ in 0..1000 {
            let p = params(
                rng.gen_range(0.1..20.0),
                rng.gen_range(0.1..20.0),
                rng.gen_range(0.1..20.0),
            );
            let u = random_region_point(&mut rng);
            let d = mfe_rhs(&u, &p).unwrap();
            let d_ip = mfe_rhs_ip(&u.to_ip(), &p).unwrap();
            assert!((d.y - d_ip.y).abs() < 1e-12);
            assert!((d.i - d_ip.i).abs() < 1e-12);
            assert!((d.si + d.ii - d_ip.ip).abs() < 1e-12);
            assert!((d.ii - d_ip.ii).abs() < 1e-12);
        }
    }

    #[test]
    fn jacobian_matches_central_differences() {
        // At the disease-free state the (i, si, ii) Jacobian is A3.
        let p = params(3.0, 5.0, 1.5);
        let lin = linearize(&p).unwrap();
        let base = MfeState::disease_free(&p).to_array();
        let h = 1e-6;
        for col in 0..3 {
            let mut plus = base;
            let mut minus = base;
            plus[col + 1] += h;
            minus[col + 1] -= h;
            let fp = rhs_array(&plus, &p);
            let fm = rhs_array(&minus, &p);
            for row in 0..3 {
                let fd = (fp[row + 1] - fm[row + 1]) / (2.0 * h);
                assert!((fd - lin.a3[row][col]).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn directional_derivatives_are_second_order() {
        let p = params(3.0, 5.0, 1.5);
        let x = [0.4, 0.1, 0.05, 0.05];
        let dir = [0.3, -0.2, 0.1, 0.4];
        let jv = |h: f64| {
            let fp = rhs_array(&axpy(&x, h, &dir), &p);
            let fm = rhs_array(&axpy(&x, -h, &dir), &p);
            fp.iter().zip(fm).map(|(a, b)| (a - b) / (2.0 * h)).collect::<Vec<_>>()
        };
        // The field is quadratic, so central differences are exact up to roundoff.
        let exact = jv(1e-2);
        for h in [1e-3, 1e-4] {
            for (a, b) in jv(h).iter().zip(&exact) {
                assert!((a - b).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn rk4_order() {
        let p = params(8.0, 6.0, 2.0);
        let u0 = MfeState::new(0.9, 0.2, 0.02, 0.01);
        let end = |dt: f64| *integrate(&u0, &p, 2.0, dt).unwrap().last().unwrap();
        let coarse = end(0.04);
        let mid = end(0.02);
        let fine = end(0.01);
        let e1 = coarse.max_abs_diff(&mid);
        let e2 = mid.max_abs_diff(&fine);
        let ratio = e1 / e2;
        assert!(ratio > 12.0 && ratio < 20.0, "ratio {ratio}");
    }

    #[test]
    fn y_relaxes_to_y_star() {
        let p = params(2.0, 4.0, 1.0);
        for y0 in [0.0, 0.3, 1.0] {
            let u0 = MfeState::new(y0, 0.0, 0.0, 0.0);
            let end = *integrate_sampled(&u0, &p, 30.0, 1e-3, 1.0).unwrap().last().unwrap();
            assert!((end.y - p.y_star()).abs() < 1e-10);
        }
    }

    #[test]
    fn subcritical_runs_die_out() {
        let p = params(1.0, 3.0, 1.0);
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(5);
        for _ in 0..50 {
            let u0 = random_region_point(&mut rng);
            let traj = integrate_sampled(&u0, &p, 200.0, 1e-2, 200.0).unwrap();
            let end = traj.last().unwrap();
            assert!(end.i + end.si + end.ii < 1e-6);
            assert!(traj.max_drift <= MAX_DRIFT);
        }
    }

    #[test]
    fn equilibrium_below_threshold_is_disease_free() {
        let p = params(1.0, 3.0, 1.0);
        assert_eq!(mfe_equilibrium(&p).unwrap(), MfeState::disease_free(&p));
    }

    #[test]
    fn endemic_equilibrium_consistency() {
        let p = params(8.0, 6.0, 2.0);
        let eq = mfe_equilibrium(&p).unwrap();
        let is = i_star(&p).unwrap().unwrap();
        assert!((eq.i - is).abs() < 1e-6);
        assert!(eq.i > 0.0 && eq.i < eq.y);
        assert!(eq.region_violation() == 0.0 && eq.ss() > 0.0 && eq.si > 0.0 && eq.ii > 0.0);
        let d = mfe_rhs(&eq, &p).unwrap();
        assert!(d.to_array().iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn pair_block_and_phi_inf() {
        let p = params(4.0, 2.0, 0.5);
        let lin = linearize(&p).unwrap();
        let d = p.derived();
        let det = lin.k[0][0] * lin.k[1][1] - lin.k[0][1] * lin.k[1][0];
        assert_abs_diff_eq!(det, d.a * d.b - 2.0 * p.lambda, epsilon = 1e-12);
        assert!(det > 0.0);
        assert!(lin.phi_inf.iter().flatten().all(|v| *v >= 0.0));
    }

    #[test]
    fn phi_inf_rows_give_breakup_yields() {
        // r_- (1, 2) Φ∞ = (1 + Δ_SI, 2 + Δ_II).
        let p = params(3.0, 4.0, 1.2);
        let lin = linearize(&p).unwrap();
        let abs = crate::analytic::absorption_closed_form(&p);
        let row = [
            p.r_minus * (lin.phi_inf[0][0] + 2.0 * lin.phi_inf[1][0]),
            p.r_minus * (lin.phi_inf[0][1] + 2.0 * lin.phi_inf[1][1]),
        ];
        assert_abs_diff_eq!(row[0], 1.0 + abs.delta_si, epsilon = 1e-12);
        assert_abs_diff_eq!(row[1], 2.0 + abs.delta_ii, epsilon = 1e-12);
    }

    #[test]
    fn growth_rate_sign_tracks_r0() {
        let (rp, rm) = (6.0, 2.0);
        let lc = lambda_c(rp, rm).unwrap().finite().unwrap();
        for factor in [0.3, 0.7, 0.95, 1.05, 1.5, 4.0] {
            let p = params(lc * factor, rp, rm);
            let lin = linearize(&p).unwrap();
            assert_eq!(lin.mu > 0.0, r0(&p) > 1.0, "factor {factor}");
            // μ = 0 reproduces R0 = 1: rhs(0) = (1 + r_+ y*)(R0 − 1).
            let ry = rp * p.y_star();
            assert_abs_diff_eq!(
                lin.growth_rate_rhs(0.0).unwrap(),
                (1.0 + ry) * (r0(&p) - 1.0),
                epsilon = 1e-12
            );
            if r0(&p) > 1.0 {
                assert!((lin.growth_rate_rhs(lin.mu).unwrap() - lin.mu).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn next_generation_pieces() {
        let p = params(1.0, 3.0, 1.0);
        let ng = next_gen(&p).unwrap();
        let nonzero: Vec<f64> = ng.f.iter().flatten().copied().filter(|v| *v != 0.0).collect();
        assert_eq!(nonzero, vec![p.r_plus * p.y_star()]);
        let lin = linearize(&p).unwrap();
        assert!(max_abs_diff3(&sub3(&ng.f, &ng.v), &lin.a3) < 1e-15);
        assert_abs_diff_eq!(ng.rho, r0(&p), epsilon = 1e-10);
        assert_abs_diff_eq!(ng.rho, 0.40410, epsilon = 5e-6);
    }

    #[test]
    fn next_generation_at_threshold() {
        let lc = lambda_c(6.0, 2.0).unwrap().finite().unwrap();
        let rho = next_gen_r0(&params(lc, 6.0, 2.0)).unwrap();
        assert!((rho - 1.0).abs() < 1e-8);
    }

    #[test]
    fn ordered_starts_stay_ordered() {
        let p = params(8.0, 6.0, 2.0);
        let lo = MfeState::new(0.6, 0.05, 0.01, 0.01).to_ip();
        let hi = MfeState::new(0.6, 0.2, 0.05, 0.03).to_ip();
        let a = integrate_sampled(&lo.to_si(), &p, 20.0, 1e-3, 0.1).unwrap();
        let b = integrate_sampled(&hi.to_si(), &p, 20.0, 1e-3, 0.1).unwrap();
        for (u, v) in a.states.iter().zip(&b.states) {
            let (u, v) = (u.to_ip(), v.to_ip());
            assert!(u.i <= v.i + 1e-8 && u.ip <= v.ip + 1e-8 && u.ii <= v.ii + 1e-8);
        }
    }

    #[test]
    fn drift_beyond_tolerance_aborts() {
        // A start grossly outside the region is rejected up front.
        let p = params(1.0, 1.0, 1.0);
        let bad = MfeState::new(0.5, 0.7, 0.0, 0.0);
        assert!(matches!(
            integrate(&bad, &p, 1.0, 1e-3),
            Err(ModelError::OutsideRegion { .. })
        ));
        // A step far too large for the dynamics leaves the region mid-run.
        let stiff = params(1e4, 1e4, 1e4);
        let res = integrate(&MfeState::new(0.5, 0.2, 0.1, 0.1), &stiff, 1.0, 0.5);
        assert!(matches!(res, Err(ModelError::IntegrationFailure { .. })));
    }
}
