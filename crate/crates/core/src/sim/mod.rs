//! Exact stochastic simulation of the partner model.
//!
//! The aggregate chain on `(S, I, SS, SI, II)` has ten transitions and is
//! simulated with the direct (jump-chain) method. The site-level
//! construction in [`micro`] is kept for small populations, where it is
//! used to check the aggregate rates and the monotone coupling.

pub mod io;
pub mod micro;

use rand::Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use crate::analytic::Params;
use crate::error::{ModelError, Result};
use crate::replicas::{rng_from_seed, SimRng};

pub const DEFAULT_SAMPLE_DT: f64 = 0.1;

/// Counts of susceptible and infectious singles and of the three pair types
/// on `n` sites.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MacroState {
    pub n: u64,
    pub s: u64,
    pub i: u64,
    pub ss: u64,
    pub si: u64,
    pub ii: u64,
}

impl MacroState {
    /// Builds a state and checks `S + I + 2(SS + SI + II) = N`.
    pub fn new(n: u64, s: u64, i: u64, ss: u64, si: u64, ii: u64) -> Result<Self> {
        let state = Self { n, s, i, ss, si, ii };
        state.validate()?;
        Ok(state)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(ModelError::InvalidState(format!(
                "population must have at least 2 sites, got {}",
                self.n
            )));
        }
        let total = self.s + self.i + 2 * (self.ss + self.si + self.ii);
        if total != self.n {
            return Err(ModelError::InvalidState(format!(
                "S + I + 2(SS + SI + II) = {total} but N = {}",
                self.n
            )));
        }
        Ok(())
    }

    /// `ceil(0.1 N)` infectious singles, everyone else a susceptible single.
    pub fn default_initial(n: u64) -> Result<Self> {
        let i = (n as f64 * 0.1).ceil() as u64;
        Self::new(n, n.saturating_sub(i), i.min(n), 0, 0, 0)
    }

    /// No infection left anywhere.
    pub fn infection_free(&self) -> bool {
        self.i == 0 && self.si == 0 && self.ii == 0
    }

    /// Number of infectious sites.
    pub fn infected(&self) -> u64 {
        self.i + self.si + 2 * self.ii
    }

    pub fn singles(&self) -> u64 {
        self.s + self.i
    }

    pub fn y(&self) -> f64 {
        self.singles() as f64 / self.n as f64
    }

    /// Rescaled `(s, i, ss, si, ii)`.
    pub fn fractions(&self) -> [f64; 5] {
        let n = self.n as f64;
        [
            self.s as f64 / n,
            self.i as f64 / n,
            self.ss as f64 / n,
            self.si as f64 / n,
            self.ii as f64 / n,
        ]
    }

    /// Rescaled state in mean-field coordinates.
    pub fn to_mfe(&self) -> crate::mfe::MfeState {
        let [_, i, _, si, ii] = self.fractions();
        crate::mfe::MfeState::new(self.y(), i, si, ii)
    }
}

/// The ten transitions of the aggregate chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum Transition {
    /// I → S.
    RecoverSingle = 0,
    /// S + S → SS.
    PairSs = 1,
    /// S + I → SI.
    PairSi = 2,
    /// I + I → II.
    PairIi = 3,
    /// SI → SS.
    RecoverInSi = 4,
    /// II → SI.
    RecoverInIi = 5,
    /// SI → II.
    Transmit = 6,
    /// SS → S + S.
    BreakSs = 7,
    /// SI → S + I.
    BreakSi = 8,
    /// II → I + I.
    BreakIi = 9,
}

impl Transition {
    pub const ALL: [Transition; 10] = [
        Transition::RecoverSingle,
        Transition::PairSs,
        Transition::PairSi,
        Transition::PairIi,
        Transition::RecoverInSi,
        Transition::RecoverInIi,
        Transition::Transmit,
        Transition::BreakSs,
        Transition::BreakSi,
        Transition::BreakIi,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(k: usize) -> Option<Self> {
        Self::ALL.get(k).copied()
    }

    /// Applies the transition; callers only fire transitions with positive
    /// rate, so the decrements cannot underflow.
    #[inline]
    pub fn apply(self, st: &mut MacroState) {
        match self {
            Transition::RecoverSingle => {
                st.i -= 1;
                st.s += 1;
            }
            Transition::PairSs => {
                st.s -= 2;
                st.ss += 1;
            }
            Transition::PairSi => {
                st.s -= 1;
                st.i -= 1;
                st.si += 1;
            }
            Transition::PairIi => {
                st.i -= 2;
                st.ii += 1;
            }
            Transition::RecoverInSi => {
                st.si -= 1;
                st.ss += 1;
            }
            Transition::RecoverInIi => {
                st.ii -= 1;
                st.si += 1;
            }
            Transition::Transmit => {
                st.si -= 1;
                st.ii += 1;
            }
            Transition::BreakSs => {
                st.ss -= 1;
                st.s += 2;
            }
            Transition::BreakSi => {
                st.si -= 1;
                st.s += 1;
                st.i += 1;
            }
            Transition::BreakIi => {
                st.ii -= 1;
                st.i += 2;
            }
        }
    }
}

/// Rates of the ten transitions, indexed as [`Transition`].
#[inline]
pub fn macro_rates(st: &MacroState, p: &Params) -> [f64; 10] {
    let n = st.n as f64;
    let (s, i) = (st.s as f64, st.i as f64);
    let (ss, si, ii) = (st.ss as f64, st.si as f64, st.ii as f64);
    let form = p.r_plus / n;
    [
        i,
        form * s * (s - 1.0) / 2.0,
        form * s * i,
        form * i * (i - 1.0) / 2.0,
        si,
        2.0 * ii,
        p.lambda * si,
        p.r_minus * ss,
        p.r_minus * si,
        p.r_minus * ii,
    ]
}

/// Picks the channel whose cumulative-rate interval contains `target`.
#[inline]
pub(crate) fn pick_channel(rates: &[f64], target: f64) -> usize {
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (k, r) in rates.iter().enumerate() {
        if *r > 0.0 {
            acc += r;
            last_positive = k;
            if target < acc {
                return k;
            }
        }
    }
    // Rounding can leave `target` a hair above the final partial sum.
    last_positive
}

/// Direct-method simulator for the aggregate chain.
#[derive(Debug, Clone)]
pub struct MacroSimulator {
    state: MacroState,
    params: Params,
    time: f64,
    rng: SimRng,
}

impl MacroSimulator {
    pub fn new(init: MacroState, params: Params, seed: u64) -> Result<Self> {
        init.validate()?;
        params.validate()?;
        Ok(Self {
            state: init,
            params,
            time: 0.0,
            rng: rng_from_seed(seed),
        })
    }

    pub fn state(&self) -> &MacroState {
        &self.state
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    pub fn rates(&self) -> [f64; 10] {
        macro_rates(&self.state, &self.params)
    }

    /// Fires the next transition if it happens no later than `horizon`.
    /// Otherwise the clock is moved to `horizon` and `None` is returned.
    #[inline]
    pub fn advance(&mut self, horizon: f64) -> Option<Transition> {
        let rates = macro_rates(&self.state, &self.params);
        let total: f64 = rates.iter().sum();
        if total <= 0.0 {
            self.time = self.time.max(horizon);
            return None;
        }
        let wait: f64 = self.rng.sample::<f64, _>(Exp1) / total;
        let t_next = self.time + wait;
        if t_next > horizon {
            self.time = horizon;
            return None;
        }
        let target = self.rng.gen::<f64>() * total;
        let tr = Transition::ALL[pick_channel(&rates, target)];
        tr.apply(&mut self.state);
        self.time = t_next;
        Some(tr)
    }

    /// Draws only which transition fires next, without moving the clock or
    /// the state.
    pub fn sample_next_transition(&mut self) -> Option<Transition> {
        let rates = self.rates();
        let total: f64 = rates.iter().sum();
        if total <= 0.0 {
            return None;
        }
        let target = self.rng.gen::<f64>() * total;
        Some(Transition::ALL[pick_channel(&rates, target)])
    }
}

/// Options for [`simulate_macro`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub t_end: f64,
    pub sample_dt: f64,
    /// Keep simulating the partnership dynamics after the infection is gone.
    pub run_past_extinction: bool,
    /// Keep every event in the log (memory grows with the event count).
    pub record_events: bool,
    /// Start of the time-averaging window.
    pub average_from: f64,
}

impl SimConfig {
    pub fn new(t_end: f64) -> Self {
        Self {
            t_end,
            sample_dt: DEFAULT_SAMPLE_DT,
            run_past_extinction: false,
            record_events: false,
            average_from: 0.0,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            return Err(ModelError::InvalidParameter {
                name: "t_end",
                value: self.t_end,
                reason: "must be positive and finite",
            });
        }
        if !(self.sample_dt > 0.0 && self.sample_dt.is_finite()) {
            return Err(ModelError::InvalidParameter {
                name: "sample_dt",
                value: self.sample_dt,
                reason: "must be positive and finite",
            });
        }
        Ok(())
    }
}

/// One fired transition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub time: f64,
    pub transition: Transition,
}

/// State observed at a sample time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub t: f64,
    pub state: MacroState,
}

/// Everything a macro run produces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventLog {
    pub seed: u64,
    pub events: Vec<EventRecord>,
    pub event_count: u64,
    pub samples: Vec<Sample>,
    pub absorption_time: Option<f64>,
    pub final_time: f64,
    pub final_state: MacroState,
    /// Time averages of `i` and `y` over `[average_from, final_time]`.
    pub time_avg_i: Option<f64>,
    pub time_avg_y: Option<f64>,
}

impl EventLog {
    pub fn absorbed(&self) -> bool {
        self.absorption_time.is_some()
    }

    pub fn summary(&self) -> ReplicaSummary {
        ReplicaSummary {
            seed: self.seed,
            absorbed: self.absorbed(),
            absorption_time: self.absorption_time,
            time_avg_i: self.time_avg_i,
            time_avg_y: self.time_avg_y,
        }
    }
}

/// Per-replica JSON summary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReplicaSummary {
    pub seed: u64,
    pub absorbed: bool,
    pub absorption_time: Option<f64>,
    pub time_avg_i: Option<f64>,
    pub time_avg_y: Option<f64>,
}

/// Runs one path of the aggregate chain.
pub fn simulate_macro(init: &MacroState, p: &Params, cfg: &SimConfig, seed: u64) -> Result<EventLog> {
    cfg.validate()?;
    let mut sim = MacroSimulator::new(*init, *p, seed)?;
    let inv_n = 1.0 / init.n as f64;

    let mut samples = Vec::new();
    let mut events = Vec::new();
    let mut event_count = 0u64;
    let mut next_sample = 0usize;
    let mut absorption_time = init.infection_free().then_some(0.0);
    let (mut int_i, mut int_y) = (0.0, 0.0);

    let mut flush = |samples: &mut Vec<Sample>, upto: f64, inclusive: bool, st: &MacroState| {
        loop {
            let t = next_sample as f64 * cfg.sample_dt;
            if t > cfg.t_end || t > upto || (!inclusive && t == upto) {
                break;
            }
            samples.push(Sample { t, state: *st });
            next_sample += 1;
        }
    };

    loop {
        if absorption_time.is_some() && !cfg.run_past_extinction {
            break;
        }
        let before = *sim.state();
        let t0 = sim.time();
        let fired = sim.advance(cfg.t_end);
        let t1 = sim.time();
        flush(&mut samples, t1, fired.is_none(), &before);
        let lo = t0.max(cfg.average_from);
        if t1 > lo {
            int_i += before.i as f64 * inv_n * (t1 - lo);
            int_y += before.singles() as f64 * inv_n * (t1 - lo);
        }
        let Some(tr) = fired else { break };
        event_count += 1;
        if cfg.record_events {
            events.push(EventRecord {
                time: t1,
                transition: tr,
            });
        }
        if absorption_time.is_none() && sim.state().infection_free() {
            absorption_time = Some(t1);
        }
    }

    let final_time = sim.time();
    let final_state = *sim.state();
    if samples.last().map(|s| s.t) != Some(final_time) {
        samples.push(Sample {
            t: final_time,
            state: final_state,
        });
    }
    let window = final_time - cfg.average_from;
    let (time_avg_i, time_avg_y) = if window > 0.0 {
        (Some(int_i / window), Some(int_y / window))
    } else {
        (None, None)
    };
    Ok(EventLog {
        seed,
        events,
        event_count,
        samples,
        absorption_time,
        final_time,
        final_state,
        time_avg_i,
        time_avg_y,
    })
}
