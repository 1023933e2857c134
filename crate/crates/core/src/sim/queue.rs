//! Queueing models: the M/M/c closed form and a blocking tandem-line
//! discrete-event simulation whose stylized approximation is built from it.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, VecDeque};

use rand_distr::{Distribution, Exp};

use super::{Bounds, SimRng, SimulationModel};
use crate::error::{Error, Result};

/// Mean length of stay (waiting plus service) in an M/M/c queue.
pub fn stylized_queue_mean_los(arrival_rate: f64, service_rate: f64, servers: usize) -> Result<f64> {
    if servers == 0 || !(arrival_rate >= 0.0) || !(service_rate > 0.0) {
        return Err(Error::Domain("need λ ≥ 0, μ > 0 and at least one server".into()));
    }
    let c = servers as f64;
    if arrival_rate >= c * service_rate {
        return Err(Error::Domain(format!(
            "unstable queue: λ = {arrival_rate} ≥ cμ = {}",
            c * service_rate
        )));
    }
    let a = arrival_rate / service_rate;
    // Erlang B by the usual recursion, then Erlang C.
    let mut b = 1.0;
    for k in 1..=servers {
        b = a * b / (k as f64 + a * b);
    }
    let rho = a / c;
    let erlang_c = b / (1.0 - rho * (1.0 - b));
    let wq = erlang_c / (c * service_rate - arrival_rate);
    Ok(wq + 1.0 / service_rate)
}

/// One station of a tandem line.
#[derive(Clone, Debug, PartialEq)]
pub struct Station {
    pub servers: usize,
    /// Waiting room in front of the servers; `None` is unlimited.
    pub buffer: Option<usize>,
}

/// Poisson arrivals into a line of multi-server stations with finite
/// buffers and blocking after service.
///
/// The decision variables are the service rates, one per station. The
/// simulated objective is the negated mean sojourn time of a customer batch
/// minus a staffing cost `cost · Σ c_j μ_j`.
#[derive(Clone, Debug)]
pub struct TandemQueue {
    name: String,
    pub arrival_rate: f64,
    pub stations: Vec<Station>,
    pub cost: f64,
    pub warmup: usize,
    pub customers: usize,
    bounds: Bounds,
}

impl TandemQueue {
    pub fn new(arrival_rate: f64, stations: Vec<Station>, cost: f64) -> Result<Self> {
        if stations.is_empty() || stations.iter().any(|s| s.servers == 0) {
            return Err(Error::Domain("every station needs at least one server".into()));
        }
        if stations[0].buffer.is_some() {
            return Err(Error::Domain("the first station must have an unlimited queue".into()));
        }
        let lower = stations.iter().map(|s| 1.1 * arrival_rate / s.servers as f64).collect();
        let upper = stations.iter().map(|s| 4.0 * arrival_rate / s.servers as f64).collect();
        Ok(Self {
            name: "tandem-queue".into(),
            arrival_rate,
            stations,
            cost,
            warmup: 200,
            customers: 2000,
            bounds: Bounds::new(lower, upper)?,
        })
    }

    /// The bundled three-station line.
    pub fn standard() -> Self {
        let stations = vec![
            Station { servers: 2, buffer: None },
            Station { servers: 1, buffer: Some(4) },
            Station { servers: 2, buffer: Some(3) },
        ];
        Self::new(1.0, stations, 0.25).expect("valid bundled configuration")
    }

    pub fn with_run_length(mut self, warmup: usize, customers: usize) -> Self {
        self.warmup = warmup;
        self.customers = customers;
        self
    }

    /// Mean sojourn time of `customers` customers after `warmup` departures.
    pub fn simulate_sojourn(&self, rates: &[f64], warmup: usize, customers: usize, rng: &mut SimRng) -> Result<f64> {
        if rates.len() != self.stations.len() {
            return Err(Error::Dimension { expected: self.stations.len(), got: rates.len() });
        }
        if customers == 0 {
            return Err(Error::Domain("need at least one measured customer".into()));
        }
        let mut sim = Line::new(self, rates)?;
        sim.run(warmup, customers, rng)
    }
}

impl SimulationModel for TandemQueue {
    fn name(&self) -> &str {
        &self.name
    }

    fn dimension(&self) -> usize {
        self.stations.len()
    }

    fn bounds(&self) -> &Bounds {
        &self.bounds
    }

    fn evaluate(&self, x: &[f64], rng: &mut SimRng) -> Result<f64> {
        let sojourn = self.simulate_sojourn(x, self.warmup, self.customers, rng)?;
        Ok(-sojourn - self.staffing_cost(x))
    }

    fn stylized(&self, x: &[f64]) -> Option<f64> {
        let mut total = 0.0;
        for (s, &mu) in self.stations.iter().zip(x) {
            total += stylized_queue_mean_los(self.arrival_rate, mu, s.servers).ok()?;
        }
        Some(-total - self.staffing_cost(x))
    }
}

impl TandemQueue {
    fn staffing_cost(&self, x: &[f64]) -> f64 {
        self.cost * self.stations.iter().zip(x).map(|(s, mu)| s.servers as f64 * mu).sum::<f64>()
    }
}

#[derive(Clone, Copy, Debug)]
struct Customer {
    arrival: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum EventKind {
    Arrival,
    ServiceEnd { station: usize },
}

#[derive(Clone, Copy, Debug)]
struct Event {
    time: f64,
    seq: u64,
    kind: EventKind,
    customer: Customer,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Event {}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Event {
    // Reversed so that the max-heap pops the earliest event first.
    fn cmp(&self, other: &Self) -> Ordering {
        other.time.total_cmp(&self.time).then_with(|| other.seq.cmp(&self.seq))
    }
}

struct StationState {
    servers: usize,
    buffer: Option<usize>,
    service: Exp<f64>,
    /// Servers holding a customer, in service or blocked.
    occupied: usize,
    queue: VecDeque<Customer>,
    /// Customers done here but unable to move on, in order of completion.
    blocked: VecDeque<Customer>,
}

struct Line {
    stations: Vec<StationState>,
    interarrival: Exp<f64>,
    events: BinaryHeap<Event>,
    now: f64,
    seq: u64,
    departed: usize,
    measured: usize,
    total_sojourn: f64,
}

impl Line {
    fn new(model: &TandemQueue, rates: &[f64]) -> Result<Self> {
        let interarrival = Exp::new(model.arrival_rate).map_err(|e| Error::Domain(e.to_string()))?;
        let stations = model
            .stations
            .iter()
            .zip(rates)
            .map(|(s, &mu)| {
                Ok(StationState {
                    servers: s.servers,
                    buffer: s.buffer,
                    service: Exp::new(mu).map_err(|e| Error::Domain(format!("service rate {mu}: {e}")))?,
                    occupied: 0,
                    queue: VecDeque::new(),
                    blocked: VecDeque::new(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            stations,
            interarrival,
            events: BinaryHeap::new(),
            now: 0.0,
            seq: 0,
            departed: 0,
            measured: 0,
            total_sojourn: 0.0,
        })
    }

    fn schedule(&mut self, delay: f64, kind: EventKind, customer: Customer) {
        self.seq += 1;
        self.events.push(Event { time: self.now + delay, seq: self.seq, kind, customer });
    }

    fn can_enter(&self, j: usize) -> bool {
        let s = &self.stations[j];
        s.occupied < s.servers || s.buffer.is_none_or(|cap| s.queue.len() < cap)
    }

    fn enter(&mut self, j: usize, customer: Customer, rng: &mut SimRng) {
        let s = &mut self.stations[j];
        if s.occupied < s.servers {
            s.occupied += 1;
            let t = s.service.sample(rng);
            self.schedule(t, EventKind::ServiceEnd { station: j }, customer);
        } else {
            s.queue.push_back(customer);
        }
    }

    /// A server at `j` became free: start the next queued customer, then let
    /// any customer blocked upstream move in, which may cascade further up.
    fn release_server(&mut self, j: usize, rng: &mut SimRng) {
        self.stations[j].occupied -= 1;
        if let Some(next) = self.stations[j].queue.pop_front() {
            self.enter(j, next, rng);
        }
        if j > 0 && self.can_enter(j) {
            if let Some(waiting) = self.stations[j - 1].blocked.pop_front() {
                self.enter(j, waiting, rng);
                self.release_server(j - 1, rng);
            }
        }
    }

    fn run(&mut self, warmup: usize, customers: usize, rng: &mut SimRng) -> Result<f64> {
        let last = self.stations.len() - 1;
        let first_gap = self.interarrival.sample(rng);
        self.schedule(first_gap, EventKind::Arrival, Customer { arrival: first_gap });
        while self.measured < customers {
            let ev = self.events.pop().ok_or_else(|| Error::Evaluation("event list ran dry".into()))?;
            self.now = ev.time;
            match ev.kind {
                EventKind::Arrival => {
                    self.enter(0, ev.customer, rng);
                    let gap = self.interarrival.sample(rng);
                    self.schedule(gap, EventKind::Arrival, Customer { arrival: self.now + gap });
                }
                EventKind::ServiceEnd { station } if station == last => {
                    self.departed += 1;
                    if self.departed > warmup {
                        self.measured += 1;
                        self.total_sojourn += self.now - ev.customer.arrival;
                    }
                    self.release_server(station, rng);
                }
                EventKind::ServiceEnd { station } => {
                    if self.can_enter(station + 1) {
                        self.enter(station + 1, ev.customer, rng);
                        self.release_server(station, rng);
                    } else {
                        self.stations[station].blocked.push_back(ev.customer);
                    }
                }
            }
        }
        Ok(self.total_sojourn / self.measured as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::ReplicationStreams;

    #[test]
    fn mm1_closed_form() {
        assert!((stylized_queue_mean_los(0.5, 1.0, 1).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn empty_system_limit() {
        for c in 1..5 {
            let v = stylized_queue_mean_los(1e-9, 2.0, c).unwrap();
            assert!((v - 0.5).abs() < 1e-8);
        }
    }

    #[test]
    fn unstable_is_domain_error() {
        assert!(matches!(stylized_queue_mean_los(2.0, 1.0, 2), Err(Error::Domain(_))));
    }

    #[test]
    fn los_increases_with_arrival_rate() {
        for c in 1..=4 {
            let mut prev = 0.0;
            for k in 1..200 {
                let lam = c as f64 * 1.3 * k as f64 / 200.0;
                let v = stylized_queue_mean_los(lam, 1.3, c).unwrap();
                assert!(v > prev, "c={c}, λ={lam}");
                prev = v;
            }
        }
    }

    #[test]
    fn mm2_matches_simulation() {
        let q = TandemQueue::new(1.5, vec![Station { servers: 2, buffer: None }], 0.0).unwrap();
        let mut rng = ReplicationStreams::new(11).stream(0);
        let sim = q.simulate_sojourn(&[1.0], 10_000, 1_000_000, &mut rng).unwrap();
        let exact = stylized_queue_mean_los(1.5, 1.0, 2).unwrap();
        assert!((sim - exact).abs() / exact < 0.02, "sim {sim} vs {exact}");
    }

    #[test]
    fn unbuffered_line_decomposes() {
        let stations = vec![
            Station { servers: 2, buffer: None },
            Station { servers: 1, buffer: None },
            Station { servers: 3, buffer: None },
        ];
        let q = TandemQueue::new(1.0, stations, 0.0).unwrap();
        let rates = [0.8, 1.6, 0.5];
        let mut rng = ReplicationStreams::new(3).stream(0);
        let sim = q.simulate_sojourn(&rates, 10_000, 600_000, &mut rng).unwrap();
        let sum: f64 = q
            .stations
            .iter()
            .zip(rates)
            .map(|(s, mu)| stylized_queue_mean_los(1.0, mu, s.servers).unwrap())
            .sum();
        assert!((sim - sum).abs() / sum < 0.03, "sim {sim} vs {sum}");
    }

    #[test]
    fn blocking_lengthens_sojourn() {
        let open = TandemQueue::new(
            1.0,
            vec![Station { servers: 1, buffer: None }, Station { servers: 1, buffer: None }],
            0.0,
        )
        .unwrap();
        let tight = TandemQueue::new(
            1.0,
            vec![Station { servers: 1, buffer: None }, Station { servers: 1, buffer: Some(0) }],
            0.0,
        )
        .unwrap();
        let s = ReplicationStreams::new(8);
        let a = open.simulate_sojourn(&[1.5, 1.5], 1000, 100_000, &mut s.stream(0)).unwrap();
        let b = tight.simulate_sojourn(&[1.5, 1.5], 1000, 100_000, &mut s.stream(0)).unwrap();
        assert!(b > a);
    }

    #[test]
    fn stylized_uses_station_sum() {
        let q = TandemQueue::standard();
        let x = q.bounds().center();
        let psi = q.stylized(&x).unwrap();
        assert!(psi.is_finite() && psi < 0.0);
    }
}
