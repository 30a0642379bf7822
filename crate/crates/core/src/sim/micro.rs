//! Site-level simulation by the graphical construction.
//!
//! Marks arrive as superposed Poisson processes: recovery at rate 1 on
//! every site, and transmission (λ), formation (r+/N) and breakup (r-) on
//! every edge of the complete graph. A mark changes the configuration only
//! when its rule applies, so two configurations driven by the same marks are
//! coupled exactly as in the construction. The cost is quadratic in N;
//! populations are capped at [`MAX_MICRO_SITES`].

use rand::Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use super::{EventRecord, MacroState, Sample, Transition};
use crate::analytic::Params;
use crate::error::{ModelError, Result};
use crate::replicas::{rng_from_seed, SimRng};

pub const MAX_MICRO_SITES: usize = 200;

/// Infection status per site plus a partial matching of partners.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MicroState {
    infected: Vec<bool>,
    partner: Vec<Option<u32>>,
}

impl MicroState {
    /// `pairs` must form a matching: every site in at most one pair.
    pub fn new(infected: Vec<bool>, pairs: &[(usize, usize)]) -> Result<Self> {
        let n = infected.len();
        if !(2..=MAX_MICRO_SITES).contains(&n) {
            return Err(ModelError::InvalidState(format!(
                "site-level simulation needs 2 <= N <= {MAX_MICRO_SITES}, got {n}"
            )));
        }
        let mut partner = vec![None; n];
        for &(x, y) in pairs {
            if x >= n || y >= n || x == y {
                return Err(ModelError::InvalidState(format!("bad edge ({x}, {y})")));
            }
            if partner[x].is_some() || partner[y].is_some() {
                return Err(ModelError::InvalidState(format!(
                    "edge ({x}, {y}) shares a site with another open edge"
                )));
            }
            partner[x] = Some(y as u32);
            partner[y] = Some(x as u32);
        }
        Ok(Self { infected, partner })
    }

    /// A random admissible configuration with the given numbers of
    /// infectious sites and open edges.
    pub fn random<R: Rng>(n: usize, infected: usize, pairs: usize, rng: &mut R) -> Result<Self> {
        if infected > n || 2 * pairs > n {
            return Err(ModelError::InvalidState(format!(
                "cannot place {infected} infections and {pairs} pairs on {n} sites"
            )));
        }
        let mut order: Vec<usize> = (0..n).collect();
        shuffle(&mut order, rng);
        let edges: Vec<(usize, usize)> = (0..pairs).map(|k| (order[2 * k], order[2 * k + 1])).collect();
        shuffle(&mut order, rng);
        let mut inf = vec![false; n];
        for &x in &order[..infected] {
            inf[x] = true;
        }
        Self::new(inf, &edges)
    }

    pub fn n(&self) -> usize {
        self.infected.len()
    }

    pub fn is_infected(&self, x: usize) -> bool {
        self.infected[x]
    }

    pub fn partner_of(&self, x: usize) -> Option<usize> {
        self.partner[x].map(|p| p as usize)
    }

    pub fn infected_sites(&self) -> impl Iterator<Item = usize> + '_ {
        self.infected.iter().enumerate().filter(|(_, v)| **v).map(|(x, _)| x)
    }

    /// Open edges as `(x, y)` with `x < y`, sorted.
    pub fn matching(&self) -> Vec<(usize, usize)> {
        self.partner
            .iter()
            .enumerate()
            .filter_map(|(x, p)| p.map(|y| (x, y as usize)).filter(|(x, y)| x < y))
            .collect()
    }

    /// Partnerships are symmetric and no site is in two of them.
    pub fn is_admissible(&self) -> bool {
        self.partner.iter().enumerate().all(|(x, p)| match p {
            None => true,
            Some(y) => *y as usize != x && self.partner[*y as usize] == Some(x as u32),
        })
    }

    /// `V ⊆ other.V`.
    pub fn infection_within(&self, other: &MicroState) -> bool {
        self.infected
            .iter()
            .zip(&other.infected)
            .all(|(a, b)| !*a || *b)
    }

    pub fn same_edges(&self, other: &MicroState) -> bool {
        self.partner == other.partner
    }

    pub fn to_macro(&self) -> MacroState {
        let mut st = MacroState {
            n: self.n() as u64,
            s: 0,
            i: 0,
            ss: 0,
            si: 0,
            ii: 0,
        };
        for (x, p) in self.partner.iter().enumerate() {
            let inf = self.infected[x];
            match p {
                None if inf => st.i += 1,
                None => st.s += 1,
                Some(y) if (*y as usize) > x => {
                    match inf as u8 + self.infected[*y as usize] as u8 {
                        0 => st.ss += 1,
                        1 => st.si += 1,
                        _ => st.ii += 1,
                    }
                }
                Some(_) => {}
            }
        }
        st
    }

    /// Applies one mark and reports which aggregate transition, if any, it
    /// produced.
    pub fn apply(&mut self, mark: Mark) -> Option<Transition> {
        match mark {
            Mark::Recovery(x) => {
                if !self.infected[x] {
                    return None;
                }
                self.infected[x] = false;
                Some(match self.partner_of(x) {
                    None => Transition::RecoverSingle,
                    Some(y) if self.infected[y] => Transition::RecoverInIi,
                    Some(_) => Transition::RecoverInSi,
                })
            }
            Mark::Transmission(x, y) => {
                if self.partner_of(x) != Some(y) || self.infected[x] == self.infected[y] {
                    return None;
                }
                self.infected[x] = true;
                self.infected[y] = true;
                Some(Transition::Transmit)
            }
            Mark::Formation(x, y) => {
                if self.partner[x].is_some() || self.partner[y].is_some() {
                    return None;
                }
                self.partner[x] = Some(y as u32);
                self.partner[y] = Some(x as u32);
                Some(match self.infected[x] as u8 + self.infected[y] as u8 {
                    0 => Transition::PairSs,
                    1 => Transition::PairSi,
                    _ => Transition::PairIi,
                })
            }
            Mark::Breakup(x, y) => {
                if self.partner_of(x) != Some(y) {
                    return None;
                }
                self.partner[x] = None;
                self.partner[y] = None;
                Some(match self.infected[x] as u8 + self.infected[y] as u8 {
                    0 => Transition::BreakSs,
                    1 => Transition::BreakSi,
                    _ => Transition::BreakIi,
                })
            }
        }
    }
}

fn shuffle<R: Rng>(v: &mut [usize], rng: &mut R) {
    for k in (1..v.len()).rev() {
        let j = rng.gen_range(0..=k);
        v.swap(k, j);
    }
}

/// A labelled point of the construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mark {
    Recovery(usize),
    Transmission(usize, usize),
    Formation(usize, usize),
    Breakup(usize, usize),
}

/// Stream of marks from the superposed Poisson processes.
#[derive(Debug, Clone)]
pub struct MarkStream {
    n: usize,
    params: Params,
    time: f64,
    total_rate: f64,
    site_rate: f64,
    rng: SimRng,
}

impl MarkStream {
    pub fn new(n: usize, params: Params, seed: u64) -> Result<Self> {
        params.validate()?;
        let edges = (n * (n - 1) / 2) as f64;
        let site_rate = n as f64;
        let edge_rate = params.lambda + params.r_plus / n as f64 + params.r_minus;
        Ok(Self {
            n,
            params,
            time: 0.0,
            total_rate: site_rate + edges * edge_rate,
            site_rate,
            rng: rng_from_seed(seed),
        })
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn next_mark(&mut self) -> (f64, Mark) {
        let wait: f64 = self.rng.sample::<f64, _>(Exp1) / self.total_rate;
        self.time += wait;
        let u = self.rng.gen::<f64>() * self.total_rate;
        if u < self.site_rate {
            return (self.time, Mark::Recovery(self.rng.gen_range(0..self.n)));
        }
        let x = self.rng.gen_range(0..self.n);
        let mut y = self.rng.gen_range(0..self.n - 1);
        if y >= x {
            y += 1;
        }
        let (x, y) = (x.min(y), x.max(y));
        // Split the edge part of the total rate by label.
        let p = &self.params;
        let v = self.rng.gen::<f64>() * (p.lambda + p.r_plus / self.n as f64 + p.r_minus);
        let mark = if v < p.lambda {
            Mark::Transmission(x, y)
        } else if v < p.lambda + p.r_plus / self.n as f64 {
            Mark::Formation(x, y)
        } else {
            Mark::Breakup(x, y)
        };
        (self.time, mark)
    }
}

/// One site-level path driven by its own mark stream.
#[derive(Debug, Clone)]
pub struct MicroSimulator {
    state: MicroState,
    aggregate: MacroState,
    stream: MarkStream,
    pending: Option<(f64, Mark)>,
    time: f64,
}

impl MicroSimulator {
    pub fn new(init: MicroState, params: Params, seed: u64) -> Result<Self> {
        if !init.is_admissible() {
            return Err(ModelError::InvalidState("initial edges are not a matching".into()));
        }
        let stream = MarkStream::new(init.n(), params, seed)?;
        let aggregate = init.to_macro();
        Ok(Self {
            state: init,
            aggregate,
            stream,
            pending: None,
            time: 0.0,
        })
    }

    pub fn state(&self) -> &MicroState {
        &self.state
    }

    /// Aggregate counts, maintained incrementally.
    pub fn aggregate(&self) -> &MacroState {
        &self.aggregate
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    /// Processes the next mark (effective or not) if it falls no later than
    /// `horizon`; otherwise keeps it for later and moves the clock to
    /// `horizon`.
    pub fn advance(&mut self, horizon: f64) -> Option<(f64, Mark, Option<Transition>)> {
        let (t, mark) = match self.pending.take() {
            Some(m) => m,
            None => self.stream.next_mark(),
        };
        if t > horizon {
            self.pending = Some((t, mark));
            self.time = self.time.max(horizon);
            return None;
        }
        self.time = t;
        let tr = self.state.apply(mark);
        if let Some(tr) = tr {
            tr.apply(&mut self.aggregate);
        }
        Some((t, mark, tr))
    }

    pub fn step(&mut self) -> (f64, Mark, Option<Transition>) {
        self.advance(f64::INFINITY).expect("marks arrive at finite times")
    }
}

/// A site-level run: effective events plus aggregate samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MicroRun {
    pub seed: u64,
    pub events: Vec<EventRecord>,
    pub samples: Vec<Sample>,
    pub final_state: MicroState,
    pub marks_processed: u64,
}

/// Appends grid samples at times `< upto` (or `<= upto` when `inclusive`).
fn push_samples(
    samples: &mut Vec<Sample>,
    next: &mut usize,
    sample_dt: f64,
    t_end: f64,
    upto: f64,
    inclusive: bool,
    st: &MacroState,
) {
    loop {
        let t = *next as f64 * sample_dt;
        if t > t_end || t > upto || (!inclusive && t == upto) {
            break;
        }
        samples.push(Sample { t, state: *st });
        *next += 1;
    }
}

fn check_horizon(t_end: f64, sample_dt: f64) -> Result<()> {
    if !(t_end > 0.0 && t_end.is_finite()) {
        return Err(ModelError::InvalidParameter {
            name: "t_end",
            value: t_end,
            reason: "must be positive and finite",
        });
    }
    if !(sample_dt > 0.0 && sample_dt.is_finite()) {
        return Err(ModelError::InvalidParameter {
            name: "sample_dt",
            value: sample_dt,
            reason: "must be positive and finite",
        });
    }
    Ok(())
}

pub fn simulate_micro(
    init: &MicroState,
    p: &Params,
    t_end: f64,
    sample_dt: f64,
    seed: u64,
) -> Result<MicroRun> {
    check_horizon(t_end, sample_dt)?;
    let mut sim = MicroSimulator::new(init.clone(), *p, seed)?;
    let mut events = Vec::new();
    let mut samples = Vec::new();
    let mut next = 0usize;
    let mut marks = 0u64;
    loop {
        let before = *sim.aggregate();
        let fired = sim.advance(t_end);
        push_samples(&mut samples, &mut next, sample_dt, t_end, sim.time(), fired.is_none(), &before);
        let Some((t, _, tr)) = fired else { break };
        marks += 1;
        if let Some(tr) = tr {
            events.push(EventRecord { time: t, transition: tr });
        }
    }
    if samples.last().map(|s| s.t) != Some(t_end) {
        samples.push(Sample {
            t: t_end,
            state: *sim.aggregate(),
        });
    }
    Ok(MicroRun {
        seed,
        events,
        samples,
        final_state: sim.state,
        marks_processed: marks,
    })
}

/// Two configurations driven by one mark stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoupledRun {
    pub seed: u64,
    pub samples_a: Vec<Sample>,
    pub samples_b: Vec<Sample>,
    /// Marks after which `V^A ⊆ V^B` or `E^A = E^B` failed.
    pub violations: u64,
    pub first_violation: Option<f64>,
    pub marks_processed: u64,
}

/// Runs the monotone coupling from `V^A_0 ⊆ V^B_0` with shared edges.
pub fn coupled_pair(
    init_a: &MicroState,
    init_b: &MicroState,
    p: &Params,
    t_end: f64,
    sample_dt: f64,
    seed: u64,
) -> Result<CoupledRun> {
    check_horizon(t_end, sample_dt)?;
    if init_a.n() != init_b.n() || !init_a.same_edges(init_b) {
        return Err(ModelError::InvalidState(
            "coupled configurations must share the same edges".into(),
        ));
    }
    if !init_a.infection_within(init_b) {
        return Err(ModelError::InvalidState(
            "initial infections of A are not contained in those of B".into(),
        ));
    }
    let mut a = MicroSimulator::new(init_a.clone(), *p, seed)?;
    let mut b_state = init_b.clone();
    let mut b_agg = init_b.to_macro();
    let mut samples_a = Vec::new();
    let mut samples_b = Vec::new();
    let (mut next_a, mut next_b) = (0usize, 0usize);
    let mut violations = 0u64;
    let mut first_violation = None;
    let mut marks = 0u64;
    loop {
        let (before_a, before_b) = (*a.aggregate(), b_agg);
        let fired = a.advance(t_end);
        let (upto, inclusive) = (a.time(), fired.is_none());
        push_samples(&mut samples_a, &mut next_a, sample_dt, t_end, upto, inclusive, &before_a);
        push_samples(&mut samples_b, &mut next_b, sample_dt, t_end, upto, inclusive, &before_b);
        let Some((t, mark, _)) = fired else { break };
        marks += 1;
        if let Some(tr) = b_state.apply(mark) {
            tr.apply(&mut b_agg);
        }
        if !a.state().infection_within(&b_state) || !a.state().same_edges(&b_state) {
            violations += 1;
            first_violation.get_or_insert(t);
        }
    }
    Ok(CoupledRun {
        seed,
        samples_a,
        samples_b,
        violations,
        first_violation,
        marks_processed: marks,
    })
}
