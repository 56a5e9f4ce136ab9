//! Synchronous discrete-time SIS and SIR contagion simulators.
//!
//! Per step, a susceptible node with `k` infected neighbors becomes
//! infected with probability `1 - (1 - beta)^k`; an infected node recovers
//! (SIS: back to susceptible, SIR: permanently immune) with probability
//! `mu`. All nodes update simultaneously from the previous step's states.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use super::{Graph, TimeSeriesPanel};
use crate::error::{CoreError, CoreResult};
use crate::fp;
use crate::matrix::DenseMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum State {
    Susceptible,
    Infected,
    Recovered,
}

fn check_rates(beta: f64, mu: f64) -> CoreResult<()> {
    if !(0.0..=1.0).contains(&beta) || !(0.0..=1.0).contains(&mu) {
        return Err(CoreError::invalid(format!(
            "rates must lie in [0,1]: beta={} mu={}",
            beta, mu
        )));
    }
    Ok(())
}

fn initial_states(g: &Graph, initial_infected: &[usize]) -> CoreResult<Vec<State>> {
    if initial_infected.is_empty() {
        return Err(CoreError::invalid("initial infected set must be non-empty"));
    }
    let mut states = vec![State::Susceptible; g.node_count()];
    for &n in initial_infected {
        if n >= g.node_count() {
            return Err(CoreError::invalid(format!("seed node {} out of range", n)));
        }
        states[n] = State::Infected;
    }
    Ok(states)
}

fn infection_prob(beta: f64, infected_neighbors: u32) -> f64 {
    1.0 - fp::powi(1.0 - beta, infected_neighbors)
}

fn record_indicator_row(panel: &mut DenseMatrix, t: usize, states: &[State]) {
    for (n, s) in states.iter().enumerate() {
        panel.set(t, n, if *s == State::Infected { 1.0 } else { 0.0 });
    }
}

/// SIS dynamics over `steps` synchronous updates. The returned panel has
/// `steps + 1` rows (the initial condition plus one row per step) of 0/1
/// infection indicators.
pub fn simulate_sis(
    g: &Graph,
    beta: f64,
    mu: f64,
    steps: usize,
    initial_infected: &[usize],
    rng: &mut impl Rng,
) -> CoreResult<TimeSeriesPanel> {
    check_rates(beta, mu)?;
    let mut states = initial_states(g, initial_infected)?;
    let adj = g.adjacency_lists();
    let mut panel = DenseMatrix::zeros(steps + 1, g.node_count());
    record_indicator_row(&mut panel, 0, &states);
    for t in 1..=steps {
        let mut next = states.clone();
        for n in 0..g.node_count() {
            match states[n] {
                State::Susceptible => {
                    let k = adj[n]
                        .iter()
                        .filter(|&&v| states[v] == State::Infected)
                        .count() as u32;
                    if k > 0 && rng.gen::<f64>() < infection_prob(beta, k) {
                        next[n] = State::Infected;
                    }
                }
                State::Infected => {
                    if rng.gen::<f64>() < mu {
                        next[n] = State::Susceptible;
                    }
                }
                State::Recovered => unreachable!("SIS has no recovered state"),
            }
        }
        states = next;
        record_indicator_row(&mut panel, t, &states);
    }
    TimeSeriesPanel::new(panel)
}

/// Outcome of an SIR run: the indicator panel plus per-step state counts.
#[derive(Debug, Clone)]
pub struct SirOutcome {
    /// 0/1 infected indicators; rows stop early once no node is infected.
    pub panel: TimeSeriesPanel,
    /// `(susceptible, infected, recovered)` for every recorded row.
    pub counts: Vec<(usize, usize, usize)>,
    pub susceptible: usize,
    pub infected: usize,
    pub recovered: usize,
}

/// SIR dynamics; recovered nodes are permanently immune and the run stops
/// once no infected nodes remain (earlier than `steps` when the epidemic
/// dies out).
pub fn simulate_sir(
    g: &Graph,
    beta: f64,
    mu: f64,
    steps: usize,
    initial_infected: &[usize],
    rng: &mut impl Rng,
) -> CoreResult<SirOutcome> {
    check_rates(beta, mu)?;
    let mut states = initial_states(g, initial_infected)?;
    let adj = g.adjacency_lists();
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(steps + 1);
    let mut counts: Vec<(usize, usize, usize)> = Vec::with_capacity(steps + 1);
    let indicator = |sts: &[State]| -> Vec<f64> {
        sts.iter()
            .map(|s| if *s == State::Infected { 1.0 } else { 0.0 })
            .collect()
    };
    let tally = |sts: &[State]| -> (usize, usize, usize) {
        sts.iter().fold((0, 0, 0), |(s, i, r), st| match st {
            State::Susceptible => (s + 1, i, r),
            State::Infected => (s, i + 1, r),
            State::Recovered => (s, i, r + 1),
        })
    };
    rows.push(indicator(&states));
    counts.push(tally(&states));
    for _ in 1..=steps {
        if states.iter().all(|s| *s != State::Infected) {
            break;
        }
        let mut next = states.clone();
        for n in 0..g.node_count() {
            match states[n] {
                State::Susceptible => {
                    let k = adj[n]
                        .iter()
                        .filter(|&&v| states[v] == State::Infected)
                        .count() as u32;
                    if k > 0 && rng.gen::<f64>() < infection_prob(beta, k) {
                        next[n] = State::Infected;
                    }
                }
                State::Infected => {
                    if rng.gen::<f64>() < mu {
                        next[n] = State::Recovered;
                    }
                }
                State::Recovered => {}
            }
        }
        states = next;
        rows.push(indicator(&states));
        counts.push(tally(&states));
    }
    let panel = TimeSeriesPanel::new(DenseMatrix::from_rows(&rows)?)?;
    let (susceptible, infected, recovered) = *counts.last().expect("at least one row");
    Ok(SirOutcome {
        panel,
        counts,
        susceptible,
        infected,
        recovered,
    })
}
