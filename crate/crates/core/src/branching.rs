//! Upper- and lower-bound branching processes for the early epidemic.
//!
//! Particles are infectious singles (`I`), discordant pairs (`SI`) and
//! concordant infected pairs (`II`). Both processes are described by a
//! table of channels: a type that fires, a per-particle rate and a jump in
//! the counts. The rate matrix, the mean matrix and the simulator are all
//! read off the same table.

use rand::Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use crate::analytic::Params;
use crate::error::{ModelError, Result};
use crate::linalg::{expm3, scale3, spectral_abscissa3, vec_mat3, Mat3, Vec3};
use crate::replicas::rng_from_seed;

pub const DEFAULT_POPULATION_CAP: u64 = 10_000_000;
pub const DELTA_SEARCH_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BranchingKind {
    /// Dominates the infection from above (used when `R0 < 1`).
    Ubp,
    /// Dominated by the infection (used when `R0 > 1`).
    Lbp,
}

impl std::fmt::Display for BranchingKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            BranchingKind::Ubp => "ubp",
            BranchingKind::Lbp => "lbp",
        })
    }
}

impl std::str::FromStr for BranchingKind {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ubp" | "upper" => Ok(BranchingKind::Ubp),
            "lbp" | "lower" => Ok(BranchingKind::Lbp),
            _ => Err(ModelError::InvalidState(format!(
                "unknown branching kind '{s}' (expected ubp or lbp)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BranchingParams {
    pub base: Params,
    pub delta: f64,
    pub kind: BranchingKind,
}

impl BranchingParams {
    /// Requires `0 <= δ <= y*` for either kind.
    pub fn new(base: Params, delta: f64, kind: BranchingKind) -> Result<Self> {
        base.validate()?;
        let ys = base.y_star();
        if !(delta.is_finite() && (0.0..=ys).contains(&delta)) {
            return Err(ModelError::Domain {
                quantity: "delta",
                value: delta,
                lo: 0.0,
                hi: ys,
            });
        }
        Ok(Self { base, delta, kind })
    }

    pub fn validate(&self) -> Result<()> {
        Self::new(self.base, self.delta, self.kind).map(|_| ())
    }

    pub fn with_delta(&self, delta: f64) -> Result<Self> {
        Self::new(self.base, delta, self.kind)
    }
}

/// Particle counts `(I, SI, II)`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BranchingState {
    pub n_i: u64,
    pub n_si: u64,
    pub n_ii: u64,
}

impl BranchingState {
    pub fn new(n_i: u64, n_si: u64, n_ii: u64) -> Self {
        Self { n_i, n_si, n_ii }
    }

    pub fn is_extinct(&self) -> bool {
        self.n_i == 0 && self.n_si == 0 && self.n_ii == 0
    }

    pub fn total(&self) -> u64 {
        self.n_i + self.n_si + self.n_ii
    }

    pub fn counts(&self) -> [u64; 3] {
        [self.n_i, self.n_si, self.n_ii]
    }

    pub fn to_vec3(&self) -> Vec3 {
        [self.n_i as f64, self.n_si as f64, self.n_ii as f64]
    }

    /// Adds `jump`, flooring each count at zero.
    fn shift(&mut self, jump: [i64; 3]) {
        let step = |n: u64, d: i64| (n as i64 + d).max(0) as u64;
        self.n_i = step(self.n_i, jump[0]);
        self.n_si = step(self.n_si, jump[1]);
        self.n_ii = step(self.n_ii, jump[2]);
    }
}

/// One transition type: particles of type `source` fire at
/// `per_particle` each and move the counts by `jump`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Channel {
    pub source: usize,
    pub per_particle: f64,
    pub jump: [i64; 3],
}

const fn ch(source: usize, per_particle: f64, jump: [i64; 3]) -> Channel {
    Channel {
        source,
        per_particle,
        jump,
    }
}

/// The five pair channels shared by both processes.
fn pair_channels(p: &Params) -> [Channel; 5] {
    [
        ch(1, 1.0, [0, -1, 0]),
        ch(1, p.r_minus, [1, -1, 0]),
        ch(1, p.lambda, [0, -1, 1]),
        ch(2, 2.0, [0, 1, -1]),
        ch(2, p.r_minus, [2, 0, -1]),
    ]
}

fn ubp_channels(bp: &BranchingParams) -> [Channel; 9] {
    let p = &bp.base;
    let (ys, d) = (p.y_star(), bp.delta);
    let pc = pair_channels(p);
    [
        ch(0, 1.0, [-1, 0, 0]),
        ch(0, p.r_plus * (ys - d), [-1, 1, 0]),
        ch(0, 2.0 * p.r_plus * d, [0, 1, 0]),
        ch(0, p.r_plus * d, [0, 0, 1]),
        pc[0],
        pc[1],
        pc[2],
        pc[3],
        pc[4],
    ]
}

fn lbp_channels(bp: &BranchingParams) -> [Channel; 8] {
    let p = &bp.base;
    let (ys, d) = (p.y_star(), bp.delta);
    let pc = pair_channels(p);
    [
        ch(0, 1.0 + 2.0 * p.r_plus * d, [-1, 0, 0]),
        ch(0, p.r_plus * (ys - d), [-1, 1, 0]),
        ch(0, p.r_plus * d, [-2, 0, 0]),
        pc[0],
        pc[1],
        pc[2],
        pc[3],
        pc[4],
    ]
}

/// Channel table of the process `bp.kind`.
pub fn channels(bp: &BranchingParams) -> Vec<Channel> {
    match bp.kind {
        BranchingKind::Ubp => ubp_channels(bp).to_vec(),
        BranchingKind::Lbp => lbp_channels(bp).to_vec(),
    }
}

fn rates_from<const K: usize>(table: &[Channel; K], st: &BranchingState) -> [f64; K] {
    let counts = st.to_vec3();
    table.map(|c| c.per_particle * counts[c.source])
}

fn kind_check(bp: &BranchingParams, expected: BranchingKind) -> Result<()> {
    bp.validate()?;
    if bp.kind != expected {
        return Err(ModelError::InvalidState(format!(
            "expected {expected} parameters, got {}",
            bp.kind
        )));
    }
    Ok(())
}

pub fn ubp_rates(st: &BranchingState, bp: &BranchingParams) -> Result<[f64; 9]> {
    kind_check(bp, BranchingKind::Ubp)?;
    Ok(rates_from(&ubp_channels(bp), st))
}

pub fn lbp_rates(st: &BranchingState, bp: &BranchingParams) -> Result<[f64; 8]> {
    kind_check(bp, BranchingKind::Lbp)?;
    Ok(rates_from(&lbp_channels(bp), st))
}

/// `A[i][j]`: expected rate of change of type-`j` counts per type-`i`
/// particle.
pub fn rate_matrix(bp: &BranchingParams) -> Mat3 {
    let mut a = [[0.0; 3]; 3];
    for c in channels(bp) {
        for (j, d) in c.jump.iter().enumerate() {
            a[c.source][j] += c.per_particle * *d as f64;
        }
    }
    a
}

/// `exp(A t)`.
pub fn mean_matrix(a: &Mat3, t: f64) -> Result<Mat3> {
    if !(t >= 0.0 && t.is_finite()) {
        return Err(ModelError::InvalidParameter {
            name: "t",
            value: t,
            reason: "must be finite and nonnegative",
        });
    }
    Ok(expm3(&scale3(a, t)))
}

/// `B_0 exp(A t)`, the mean counts at time `t` (ignoring the floor at zero).
pub fn expected_counts(init: &BranchingState, bp: &BranchingParams, t: f64) -> Result<Vec3> {
    Ok(vec_mat3(&init.to_vec3(), &mean_matrix(&rate_matrix(bp), t)?))
}

pub fn spectral_abscissa(a: &Mat3) -> f64 {
    spectral_abscissa3(a)
}

fn abscissa_at(base: &Params, kind: BranchingKind, delta: f64) -> Result<f64> {
    Ok(spectral_abscissa3(&rate_matrix(&BranchingParams::new(*base, delta, kind)?)))
}

/// Largest `δ ∈ [0, y*]` (to [`DELTA_SEARCH_TOL`]) keeping the process on
/// the side of criticality it has at `δ = 0`, shifted by `target`: the UBP
/// keeps `μ(A(δ)) < target`, the LBP keeps `μ(A(δ)) > target`.
fn delta_search(base: &Params, kind: BranchingKind, target: f64) -> Result<f64> {
    let inside = |d: f64| -> Result<bool> {
        let mu = abscissa_at(base, kind, d)?;
        Ok(match kind {
            BranchingKind::Ubp => mu < target,
            BranchingKind::Lbp => mu > target,
        })
    };
    if !inside(0.0)? {
        return Err(ModelError::InvalidState(format!(
            "{kind} at delta = 0 is not on the required side of criticality"
        )));
    }
    let ys = base.y_star();
    if inside(ys)? {
        return Ok(ys);
    }
    let (mut lo, mut hi) = (0.0, ys);
    while hi - lo > DELTA_SEARCH_TOL {
        let mid = 0.5 * (lo + hi);
        if inside(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

/// Largest slack for which the UBP stays subcritical (needs `R0 < 1`) or
/// the LBP stays supercritical (needs `R0 > 1`).
pub fn delta_threshold(base: &Params, kind: BranchingKind) -> Result<f64> {
    delta_search(base, kind, 0.0)
}

/// Largest slack keeping `μ(A(δ))` on the far side of `μ(A(0)) / 2`.
pub fn delta_half_abscissa(base: &Params, kind: BranchingKind) -> Result<f64> {
    let mu0 = abscissa_at(base, kind, 0.0)?;
    delta_search(base, kind, 0.5 * mu0)
}

/// Options for [`simulate_branching`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchingConfig {
    pub t_end: f64,
    /// Stop once the total population exceeds this.
    pub cap: u64,
    /// Times at which the counts are recorded (sorted, within `[0, t_end]`).
    pub observe: Vec<f64>,
}

impl BranchingConfig {
    pub fn new(t_end: f64) -> Self {
        Self {
            t_end,
            cap: DEFAULT_POPULATION_CAP,
            observe: Vec::new(),
        }
    }

    /// Observation grid `0, dt, 2dt, …, ≤ t_end`.
    pub fn with_grid(mut self, dt: f64) -> Self {
        let steps = (self.t_end / dt + 1e-9).floor() as usize;
        self.observe = (0..=steps).map(|k| k as f64 * dt).collect();
        self
    }

    fn validate(&self) -> Result<()> {
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            return Err(ModelError::InvalidParameter {
                name: "t_end",
                value: self.t_end,
                reason: "must be positive and finite",
            });
        }
        if self.cap == 0 {
            return Err(ModelError::InvalidParameter {
                name: "cap",
                value: 0.0,
                reason: "must be positive",
            });
        }
        if self.observe.windows(2).any(|w| w[0] > w[1])
            || self.observe.iter().any(|t| !(*t >= 0.0 && *t <= self.t_end))
        {
            return Err(ModelError::InvalidState(
                "observation times must be sorted and lie in [0, t_end]".into(),
            ));
        }
        Ok(())
    }
}

/// Result of one branching run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchingRun {
    pub kind: BranchingKind,
    pub delta: f64,
    pub seed: u64,
    pub extinction_time: Option<f64>,
    /// Time at which the population cap was exceeded.
    pub censor_time: Option<f64>,
    pub final_time: f64,
    pub final_counts: BranchingState,
    /// Counts at each requested time; `None` after censoring.
    pub observations: Vec<(f64, Option<BranchingState>)>,
    pub events: u64,
}

impl BranchingRun {
    pub fn extinct(&self) -> bool {
        self.extinction_time.is_some()
    }

    pub fn censored(&self) -> bool {
        self.censor_time.is_some()
    }

    /// Alive at `t`: not extinct by then (censored runs count as alive).
    pub fn alive_at(&self, t: f64) -> bool {
        self.extinction_time.map_or(true, |te| te > t)
    }

    pub fn summary(&self) -> BranchingSummary {
        BranchingSummary {
            kind: self.kind,
            delta: self.delta,
            seed: self.seed,
            extinct: self.extinct(),
            extinction_time: self.extinction_time,
            censored: self.censor_time.map(|t| Censoring {
                reason: "supercritical growth".into(),
                time: t,
            }),
            final_counts: self.final_counts,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Censoring {
    pub reason: String,
    pub time: f64,
}

/// Per-run JSON record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchingSummary {
    pub kind: BranchingKind,
    pub delta: f64,
    pub seed: u64,
    pub extinct: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub extinction_time: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub censored: Option<Censoring>,
    pub final_counts: BranchingState,
}

/// Exact jump-chain path of the branching process.
///
/// The LBP channel `I → I − 2` fired with a single `I` particle removes
/// just that particle.
pub fn simulate_branching(
    init: &BranchingState,
    bp: &BranchingParams,
    cfg: &BranchingConfig,
    seed: u64,
) -> Result<BranchingRun> {
    bp.validate()?;
    cfg.validate()?;
    let table = channels(bp);
    let mut rng = rng_from_seed(seed);
    let mut st = *init;
    let mut t = 0.0;
    let mut events = 0u64;
    let mut observations = Vec::with_capacity(cfg.observe.len());
    let mut next_obs = 0usize;
    let mut extinction_time = st.is_extinct().then_some(0.0);
    let mut censor_time = None;
    let mut rates = vec![0.0; table.len()];

    loop {
        if extinction_time.is_some() {
            break;
        }
        if st.total() > cfg.cap {
            censor_time = Some(t);
            break;
        }
        let counts = st.to_vec3();
        let mut total = 0.0;
        for (r, c) in rates.iter_mut().zip(&table) {
            *r = c.per_particle * counts[c.source];
            total += *r;
        }
        let t_next = t + rng.sample::<f64, _>(Exp1) / total;
        while next_obs < cfg.observe.len() && cfg.observe[next_obs] < t_next {
            observations.push((cfg.observe[next_obs], Some(st)));
            next_obs += 1;
        }
        if t_next > cfg.t_end {
            t = cfg.t_end;
            break;
        }
        let target = rng.gen::<f64>() * total;
        let k = crate::sim::pick_channel(&rates, target);
        st.shift(table[k].jump);
        t = t_next;
        events += 1;
        if st.is_extinct() {
            extinction_time = Some(t);
        }
    }
    // Remaining observation times: extinct runs stay at zero, censored runs
    // are unknown.
    for &obs in &cfg.observe[next_obs..] {
        let value = if censor_time.is_some() { None } else { Some(st) };
        observations.push((obs, value));
    }
    Ok(BranchingRun {
        kind: bp.kind,
        delta: bp.delta,
        seed,
        extinction_time,
        censor_time,
        final_time: t,
        final_counts: st,
        observations,
        events,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{identity3, max_abs_diff3, sub3, transpose3};
    use crate::mfe::linearize;
    use approx::assert_abs_diff_eq;

    fn params(lambda: f64, r_plus: f64, r_minus: f64) -> Params {
        Params::new(lambda, r_plus, r_minus).unwrap()
    }

    fn bp(p: Params, delta: f64, kind: BranchingKind) -> BranchingParams {
        BranchingParams::new(p, delta, kind).unwrap()
    }

    #[test]
    fn delta_range() {
        let p = params(1.0, 3.0, 1.0);
        let ys = p.y_star();
        for kind in [BranchingKind::Ubp, BranchingKind::Lbp] {
            assert!(BranchingParams::new(p, -1e-9, kind).is_err());
            assert!(BranchingParams::new(p, ys + 1e-9, kind).is_err());
            assert!(BranchingParams::new(p, f64::NAN, kind).is_err());
            assert!(BranchingParams::new(p, ys, kind).is_ok());
        }
    }

    #[test]
    fn kinds_must_match() {
        let p = params(1.0, 3.0, 1.0);
        let st = BranchingState::new(1, 1, 1);
        assert!(ubp_rates(&st, &bp(p, 0.0, BranchingKind::Lbp)).is_err());
        assert!(lbp_rates(&st, &bp(p, 0.0, BranchingKind::Ubp)).is_err());
    }

    #[test]
    fn zero_state_has_zero_rates() {
        let p = params(2.0, 4.0, 1.0);
        let st = BranchingState::default();
        assert!(ubp_rates(&st, &bp(p, 0.1, BranchingKind::Ubp))
            .unwrap()
            .iter()
            .all(|r| *r == 0.0));
        assert!(lbp_rates(&st, &bp(p, 0.1, BranchingKind::Lbp))
            .unwrap()
            .iter()
            .all(|r| *r == 0.0));
    }

    #[test]
    fn hand_evaluated_rates() {
        let p = params(2.0, 4.0, 1.0);
        let ys = 2.0 / (1.0 + 17f64.sqrt());
        let st = BranchingState::new(1, 1, 1);
        let u = ubp_rates(&st, &bp(p, 0.1, BranchingKind::Ubp)).unwrap();
        let u_ref = [1.0, 4.0 * (ys - 0.1), 0.8, 0.4, 1.0, 1.0, 2.0, 2.0, 1.0];
        let l = lbp_rates(&st, &bp(p, 0.1, BranchingKind::Lbp)).unwrap();
        let l_ref = [1.8, 4.0 * (ys - 0.1), 0.4, 1.0, 1.0, 2.0, 2.0, 1.0];
        for (a, b) in u.iter().zip(u_ref) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-14);
        }
        for (a, b) in l.iter().zip(l_ref) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-14);
        }
    }

    #[test]
    fn processes_coincide_without_slack() {
        let p = params(2.0, 4.0, 1.0);
        let st = BranchingState::new(3, 2, 5);
        let u = ubp_rates(&st, &bp(p, 0.0, BranchingKind::Ubp)).unwrap();
        let l = lbp_rates(&st, &bp(p, 0.0, BranchingKind::Lbp)).unwrap();
        // The extra I-channels vanish; the rest line up one to one.
        assert_eq!(u[2], 0.0);
        assert_eq!(u[3], 0.0);
        assert_eq!(l[2], 0.0);
        assert_eq!([u[0], u[1]], [l[0], l[1]]);
        assert_eq!(u[4..], l[3..]);
        let (au, al) = (
            rate_matrix(&bp(p, 0.0, BranchingKind::Ubp)),
            rate_matrix(&bp(p, 0.0, BranchingKind::Lbp)),
        );
        assert_eq!(au, al);
    }

    #[test]
    fn rate_matrices_match_the_displayed_forms() {
        let p = params(2.0, 4.0, 1.0);
        let (ys, rp, rm, l) = (p.y_star(), 4.0, 1.0, 2.0);
        for d in [0.0, 0.05, 0.2] {
            let u = rate_matrix(&bp(p, d, BranchingKind::Ubp));
            let u_ref = [
                [-(1.0 + rp * (ys - d)), rp * (ys + d), rp * d],
                [rm, -(1.0 + rm + l), l],
                [2.0 * rm, 2.0, -(2.0 + rm)],
            ];
            assert!(max_abs_diff3(&u, &u_ref) < 1e-14);
            let lo = rate_matrix(&bp(p, d, BranchingKind::Lbp));
            let mut l_ref = u_ref;
            l_ref[0] = [-(1.0 + rp * ys + 3.0 * rp * d), rp * (ys - d), 0.0];
            assert!(max_abs_diff3(&lo, &l_ref) < 1e-14);
        }
    }

    #[test]
    fn explicit_matrix_without_slack() {
        let p = params(1.0, 3.0, 1.0);
        let ry = 3.0 * p.y_star();
        let a = rate_matrix(&bp(p, 0.0, BranchingKind::Ubp));
        let expected = [
            [-(1.0 + ry), ry, 0.0],
            [1.0, -3.0, 1.0],
            [2.0, 2.0, -3.0],
        ];
        assert!(max_abs_diff3(&a, &expected) < 1e-14);
    }

    #[test]
    fn transpose_of_disease_free_jacobian() {
        for (l, rp, rm) in [(1.0, 3.0, 1.0), (8.0, 6.0, 2.0), (0.3, 0.5, 4.0)] {
            let p = params(l, rp, rm);
            let a = rate_matrix(&bp(p, 0.0, BranchingKind::Ubp));
            let a3 = linearize(&p).unwrap().a3;
            assert!(max_abs_diff3(&a, &transpose3(&a3)) < 1e-14);
        }
    }

    #[test]
    fn continuity_in_delta() {
        let p = params(2.0, 4.0, 1.0);
        let a0 = rate_matrix(&bp(p, 0.0, BranchingKind::Ubp));
        let mut last = f64::INFINITY;
        for d in [1e-1, 1e-2, 1e-3, 1e-4, 1e-5] {
            let diff = max_abs_diff3(&rate_matrix(&bp(p, d, BranchingKind::Ubp)), &a0);
            assert!(diff < last);
            assert!(diff <= 12.0 * d + 1e-15);
            last = diff;
        }
    }

    #[test]
    fn mean_matrix_basics() {
        let a = rate_matrix(&bp(params(2.0, 4.0, 1.0), 0.1, BranchingKind::Lbp));
        assert_eq!(mean_matrix(&a, 0.0).unwrap(), identity3());
        assert!(mean_matrix(&a, -1.0).is_err());
        let h = 1e-6;
        let m = mean_matrix(&a, h).unwrap();
        let fd = scale3(&sub3(&m, &identity3()), 1.0 / h);
        assert!(max_abs_diff3(&fd, &a) < 1e-4);
    }

    #[test]
    fn classification_matches_r0() {
        let (rp, rm) = (3.0, 1.0);
        let lc = crate::analytic::lambda_c(rp, rm).unwrap().finite().unwrap();
        for f in [0.2, 0.5, 0.9, 0.99, 1.01, 1.1, 2.0, 5.0] {
            let p = params(lc * f, rp, rm);
            let mu = spectral_abscissa(&rate_matrix(&bp(p, 0.0, BranchingKind::Ubp)));
            let r0 = crate::analytic::r0(&p);
            assert_eq!(mu > 0.0, r0 > 1.0, "f = {f}");
        }
    }

    #[test]
    fn delta_search_brackets_criticality() {
        let sub = params(1.0, 3.0, 1.0);
        let d = delta_threshold(&sub, BranchingKind::Ubp).unwrap();
        assert!(d > 0.0);
        let mu = |p: &Params, k, d| spectral_abscissa(&rate_matrix(&bp(*p, d, k)));
        assert!(mu(&sub, BranchingKind::Ubp, d) < 0.0);
        if d < sub.y_star() {
            assert!(mu(&sub, BranchingKind::Ubp, d + 2.0 * DELTA_SEARCH_TOL) >= 0.0);
        }
        let half = delta_half_abscissa(&sub, BranchingKind::Ubp).unwrap();
        assert!(half < d);
        let mu0 = mu(&sub, BranchingKind::Ubp, 0.0);
        assert!(mu(&sub, BranchingKind::Ubp, half) < 0.5 * mu0);

        let sup = params(8.0, 6.0, 2.0);
        let d = delta_threshold(&sup, BranchingKind::Lbp).unwrap();
        assert!(d > 0.0 && mu(&sup, BranchingKind::Lbp, d) > 0.0);
        assert!(delta_threshold(&sup, BranchingKind::Ubp).is_err());
        assert!(delta_threshold(&sub, BranchingKind::Lbp).is_err());
    }

    #[test]
    fn extinct_start_and_determinism() {
        let b = bp(params(1.0, 3.0, 1.0), 0.01, BranchingKind::Ubp);
        let cfg = BranchingConfig::new(5.0).with_grid(1.0);
        let run = simulate_branching(&BranchingState::default(), &b, &cfg, 0).unwrap();
        assert_eq!(run.extinction_time, Some(0.0));
        assert_eq!(run.observations.len(), 6);
        let init = BranchingState::new(20, 0, 0);
        let a = simulate_branching(&init, &b, &cfg, 11).unwrap();
        let c = simulate_branching(&init, &b, &cfg, 11).unwrap();
        assert_eq!(a, c);
        assert_eq!(a.observations[0], (0.0, Some(init)));
    }

    #[test]
    fn cap_censors_supercritical_growth() {
        let b = bp(params(8.0, 6.0, 2.0), 0.0, BranchingKind::Lbp);
        let mut cfg = BranchingConfig::new(1000.0);
        cfg.cap = 500;
        cfg.observe = vec![0.0, 999.0];
        let run = simulate_branching(&BranchingState::new(200, 0, 0), &b, &cfg, 3).unwrap();
        assert!(run.censored());
        assert!(run.final_counts.total() > 500);
        assert_eq!(run.observations[1], (999.0, None));
        let json = serde_json::to_value(run.summary()).unwrap();
        assert_eq!(json["kind"], "lbp");
        assert_eq!(json["censored"]["reason"], "supercritical growth");
        assert!(json.get("extinction_time").is_none());
    }

    #[test]
    fn lower_process_never_goes_negative() {
        let p = params(0.5, 3.0, 1.0);
        let b = bp(p, p.y_star(), BranchingKind::Lbp);
        for seed in 0..200 {
            let run = simulate_branching(
                &BranchingState::new(1, 0, 0),
                &b,
                &BranchingConfig::new(50.0),
                seed,
            )
            .unwrap();
            assert!(run.extinct());
        }
    }

    #[test]
    fn branching_property_in_the_mean() {
        let b = bp(params(2.0, 4.0, 1.0), 0.05, BranchingKind::Ubp);
        let mut cfg = BranchingConfig::new(2.0);
        cfg.observe = vec![2.0];
        let mean = |init: BranchingState, offset: u64| -> ([f64; 3], [f64; 3]) {
            let reps = 20_000;
            let mut sum = [0.0; 3];
            let mut sq = [0.0; 3];
            for r in 0..reps {
                let run = simulate_branching(&init, &b, &cfg, offset + r).unwrap();
                let v = run.observations[0].1.unwrap().to_vec3();
                for k in 0..3 {
                    sum[k] += v[k];
                    sq[k] += v[k] * v[k];
                }
            }
            let n = reps as f64;
            let m = sum.map(|s| s / n);
            let se = [0, 1, 2].map(|k| ((sq[k] / n - m[k] * m[k]) / n).sqrt());
            (m, se)
        };
        let (m1, se1) = mean(BranchingState::new(1, 0, 0), 0);
        let (m2, se2) = mean(BranchingState::new(2, 0, 0), 1 << 32);
        for k in 0..3 {
            let se = (4.0 * se1[k] * se1[k] + se2[k] * se2[k]).sqrt();
            assert!((m2[k] - 2.0 * m1[k]).abs() < 4.0 * se, "type {k}");
        }
    }
}
