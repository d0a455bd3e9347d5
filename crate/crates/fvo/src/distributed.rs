//! Distributed realization of the tracking algorithms over a sparse
//! communication graph.
//!
//! Each asset keeps a local multiplier estimate, mixed every interval with
//! Metropolis weights, and tracks the network averages feeding the
//! feedforward terms with a first-order dynamic average consensus. The
//! multiplier-rate formulas only use the global sums as ratios against the
//! rho sum, and ratios of sums equal ratios of averages, so tracked averages
//! suffice. The delivery-curve drive term is injected at one designated
//! node; the feasibility residual uses the tracked average of the delivered
//! quantities scaled by the network size, so the mean-field of the local
//! multiplier updates reproduces the centralized law. One synchronous
//! message round runs per control interval by default.

use thiserror::Error;

use crate::controller::driving::beta_ratio;
use crate::controller::{
    apply_plant_command, stationarity_error, switching_signal, tot1_command_delta,
    tot2_command_delta, AlgorithmKind, AruStepOutput, AssetParams, AssetState, BoxConstraint,
    ControllerError, ControllerGains, PlantModel, StepDiagnostics,
};
use crate::costs::rho;
use crate::curves::DeliveryCurve;
use crate::grid::FrequencyMeasurement;

#[derive(Debug, Error, PartialEq)]
pub enum GraphError {
    #[error("graph needs at least one node")]
    Empty,
    #[error("edge ({0}, {1}) out of range")]
    BadEdge(usize, usize),
    #[error("self-loop at node {0}")]
    SelfLoop(usize),
    #[error("communication graph is not connected")]
    Disconnected,
    #[error("nodes desynchronized: rounds {0} vs {1}")]
    Desynchronized(u64, u64),
}

/// Undirected communication graph with Metropolis mixing weights
/// (symmetric, doubly stochastic, positive diagonal).
#[derive(Debug, Clone)]
pub struct CommGraph {
    n: usize,
    /// Per node: (neighbor, weight), self excluded.
    neighbors: Vec<Vec<(usize, f64)>>,
    /// Self weights.
    diagonal: Vec<f64>,
}

impl CommGraph {
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self, GraphError> {
        if n == 0 {
            return Err(GraphError::Empty);
        }
        let mut adjacency: Vec<Vec<usize>> = vec![Vec::new(); n];
        for &(a, b) in edges {
            if a >= n || b >= n {
                return Err(GraphError::BadEdge(a, b));
            }
            if a == b {
                return Err(GraphError::SelfLoop(a));
            }
            if !adjacency[a].contains(&b) {
                adjacency[a].push(b);
                adjacency[b].push(a);
            }
        }
        // Connectivity via breadth-first search.
        let mut seen = vec![false; n];
        let mut queue = vec![0usize];
        seen[0] = true;
        while let Some(k) = queue.pop() {
            for &j in &adjacency[k] {
                if !seen[j] {
                    seen[j] = true;
                    queue.push(j);
                }
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(GraphError::Disconnected);
        }

        let degree: Vec<usize> = adjacency.iter().map(|a| a.len()).collect();
        let mut neighbors = vec![Vec::new(); n];
        let mut diagonal = vec![1.0; n];
        for k in 0..n {
            for &j in &adjacency[k] {
                let w = 1.0 / (1.0 + degree[k].max(degree[j]) as f64);
                neighbors[k].push((j, w));
                diagonal[k] -= w;
            }
        }
        Ok(Self {
            n,
            neighbors,
            diagonal,
        })
    }

    /// Ring where every node talks to its two cyclic neighbors.
    pub fn ring(n: usize) -> Result<Self, GraphError> {
        if n <= 2 {
            let edges: Vec<(usize, usize)> = (1..n).map(|k| (k - 1, k)).collect();
            return Self::from_edges(n, &edges);
        }
        let edges: Vec<(usize, usize)> = (0..n).map(|k| (k, (k + 1) % n)).collect();
        Self::from_edges(n, &edges)
    }

    pub fn complete(n: usize) -> Result<Self, GraphError> {
        let mut edges = Vec::new();
        for a in 0..n {
            for b in a + 1..n {
                edges.push((a, b));
            }
        }
        Self::from_edges(n, &edges)
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// out_k = sum_j w_kj in_j. The diagonal term is applied first so the
    /// n = 1 graph reduces to the exact identity.
    pub fn mix(&self, input: &[f64], out: &mut [f64]) {
        debug_assert_eq!(input.len(), self.n);
        for k in 0..self.n {
            let mut acc = self.diagonal[k] * input[k];
            for &(j, w) in &self.neighbors[k] {
                acc += w * input[j];
            }
            out[k] = acc;
        }
    }

    /// Estimate of the second-largest eigenvalue modulus of the mixing
    /// matrix (power iteration on the deviation-from-average subspace).
    pub fn contraction_factor(&self) -> f64 {
        if self.n == 1 {
            return 0.0;
        }
        let mut v: Vec<f64> = (0..self.n)
            .map(|k| ((k as f64) * 0.7371).sin())
            .collect();
        let mut next = vec![0.0; self.n];
        let mut factor = 0.0;
        for _ in 0..400 {
            let mean = v.iter().sum::<f64>() / self.n as f64;
            for x in v.iter_mut() {
                *x -= mean;
            }
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm < 1e-300 {
                return 0.0;
            }
            for x in v.iter_mut() {
                *x /= norm;
            }
            self.mix(&v, &mut next);
            factor = next.iter().map(|x| x * x).sum::<f64>().sqrt();
            std::mem::swap(&mut v, &mut next);
        }
        factor
    }
}

/// Per-node estimator state.
#[derive(Debug, Clone, Default)]
pub struct NodeState {
    /// Local multiplier estimate.
    pub lambda: f64,
    /// Local multiplier-rate estimate applied at the last round.
    pub beta: f64,
    pub round: u64,
}

/// Tracked-average channels of the dynamic average consensus.
#[derive(Debug, Clone, Default)]
struct Tracker {
    /// Current tracked averages, one vector per channel.
    s: Vec<Vec<f64>>,
    /// Local signals of the previous round.
    prev: Vec<Vec<f64>>,
    initialized: bool,
    scratch: Vec<f64>,
}

const CH_RHO: usize = 0;
const CH_COUPLING_W: usize = 1;
const CH_COUPLING_WW: usize = 2;
const CH_X: usize = 3;
const CH_INJ_RATE: usize = 4;
const CH_INJ_ACC: usize = 5;
const CHANNELS: usize = 6;

impl Tracker {
    fn new(n: usize) -> Self {
        Self {
            s: vec![vec![0.0; n]; CHANNELS],
            prev: vec![vec![0.0; n]; CHANNELS],
            initialized: false,
            scratch: vec![0.0; n],
        }
    }

    /// One synchronous round: pure mixing plus the signal increment,
    /// grouped as (mix - prev) + now so the single-node graph tracks the
    /// signal exactly. Extra rounds per interval mix with a zero increment.
    fn round(&mut self, graph: &CommGraph, channel: usize, now: &[f64], inject: bool) {
        let s = &mut self.s[channel];
        let prev = &mut self.prev[channel];
        if !self.initialized {
            s.copy_from_slice(now);
        } else {
            graph.mix(s, &mut self.scratch);
            if inject {
                for k in 0..now.len() {
                    s[k] = (self.scratch[k] - prev[k]) + now[k];
                }
            } else {
                s.copy_from_slice(&self.scratch);
            }
        }
        if inject {
            prev.copy_from_slice(now);
        }
    }
}

/// An aggregated response unit whose coordination runs over a communication
/// graph instead of a central aggregator.
#[derive(Debug)]
pub struct DistributedAru {
    algorithm: AlgorithmKind,
    plant: PlantModel,
    assets: Vec<AssetParams>,
    boxes: Vec<BoxConstraint>,
    gains: ControllerGains,
    tau: Vec<f64>,
    graph: CommGraph,
    rounds_per_interval: u32,
    pub states: Vec<AssetState>,
    pub nodes: Vec<NodeState>,
    pub diag: StepDiagnostics,
    tracker: Tracker,
    alpha_prime_prev: Vec<f64>,
    sigma_prev: Vec<u8>,
    slope_prev: f64,
    // Scratch.
    signal: Vec<f64>,
    f_xw: Vec<f64>,
    f_xww: Vec<f64>,
    f_xx: Vec<f64>,
    rho_w: Vec<f64>,
    lambda_mixed: Vec<f64>,
    alpha: Vec<f64>,
    alpha_prime: Vec<f64>,
}

impl DistributedAru {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        algorithm: AlgorithmKind,
        plant: PlantModel,
        assets: Vec<AssetParams>,
        gains: ControllerGains,
        graph: CommGraph,
        rounds_per_interval: u32,
        lambda0: f64,
        sigma0: u8,
    ) -> Result<Self, ControllerError> {
        assert!(
            algorithm != AlgorithmKind::Benchmark,
            "the benchmark has no distributed form"
        );
        assert_eq!(graph.len(), assets.len(), "one node per asset");
        gains.validate()?;
        let plant = if algorithm == AlgorithmKind::Tot2 {
            PlantModel::FirstOrder
        } else {
            plant
        };
        let mut boxes = Vec::with_capacity(assets.len());
        for (index, asset) in assets.iter().enumerate() {
            asset.validate(index)?;
            if plant == PlantModel::FirstOrder && !(asset.tau_s > 0.0) {
                return Err(ControllerError::BadTimeConstant {
                    index,
                    tau: asset.tau_s,
                });
            }
            boxes.push(asset.deviation_box()?);
        }
        let n = assets.len();
        let tau = assets.iter().map(|a| a.tau_s).collect();
        Ok(Self {
            algorithm,
            plant,
            assets,
            boxes,
            gains,
            tau,
            graph,
            rounds_per_interval: rounds_per_interval.max(1),
            states: vec![
                AssetState {
                    sigma: sigma0,
                    ..AssetState::default()
                };
                n
            ],
            nodes: vec![
                NodeState {
                    lambda: lambda0,
                    ..NodeState::default()
                };
                n
            ],
            diag: StepDiagnostics::default(),
            tracker: Tracker::new(n),
            alpha_prime_prev: vec![0.0; n],
            sigma_prev: vec![sigma0; n],
            slope_prev: 0.0,
            signal: vec![0.0; n],
            f_xw: vec![0.0; n],
            f_xww: vec![0.0; n],
            f_xx: vec![0.0; n],
            rho_w: vec![0.0; n],
            lambda_mixed: vec![0.0; n],
            alpha: vec![0.0; n],
            alpha_prime: vec![0.0; n],
        })
    }

    pub fn len(&self) -> usize {
        self.assets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assets.is_empty()
    }

    pub fn assets(&self) -> &[AssetParams] {
        &self.assets
    }

    pub fn boxes(&self) -> &[BoxConstraint] {
        &self.boxes
    }

    pub fn sum_delivered_mw(&self) -> f64 {
        self.states.iter().map(|s| s.x).sum()
    }

    /// Conservation check: per channel, sum of tracked averages minus sum of
    /// current local signals (telescoping property; exact up to mixing
    /// round-off).
    pub fn conservation_residual(&self) -> f64 {
        if !self.tracker.initialized {
            return 0.0;
        }
        let mut worst: f64 = 0.0;
        for ch in 0..CHANNELS {
            let s_sum: f64 = self.tracker.s[ch].iter().sum();
            let sig_sum: f64 = self.tracker.prev[ch].iter().sum();
            worst = worst.max((s_sum - sig_sum).abs());
        }
        worst
    }

    /// Advances the unit one control interval: one (or more) consensus
    /// rounds followed by the per-asset control laws using local estimates
    /// only.
    pub fn step(
        &mut self,
        meas: &FrequencyMeasurement,
        curve: &DeliveryCurve,
        c_agg_mw: f64,
        dt_s: f64,
    ) -> Result<AruStepOutput, ControllerError> {
        let n = self.assets.len();
        let dev = meas.deviation_hz;
        let rate = meas.rate_hzps;
        let acc = meas.acc_hzps2;
        let slope = curve.derivative(dev, Some(rate));
        let required = curve.evaluate(dev) * c_agg_mw;
        let gains = self.gains;
        let rate_sq = rate * rate;
        let tot2 = self.algorithm == AlgorithmKind::Tot2;

        // Local error terms at the current local multipliers. The first
        // algorithm anchors on its command state (plant-unaware on the
        // first-order plant); the second compensates the plant explicitly.
        let mut sum_x = 0.0;
        for i in 0..n {
            let s = &mut self.states[i];
            sum_x += s.x;
            let anchor = if tot2 || self.plant == PlantModel::FirstOrder {
                s.r
            } else {
                s.x
            };
            let d = self.assets[i].cost.derivatives(
                if tot2 { s.x } else { anchor },
                dev,
            );
            self.f_xx[i] = d.f_xx;
            self.f_xw[i] = d.f_xw;
            self.f_xww[i] = d.f_xww;
            let f_big = if tot2 {
                let correction = s.r - s.x - self.tau[i] * self.alpha_prime_prev[i];
                gains.kappa_x * (d.f_x + self.nodes[i].lambda + correction)
            } else {
                gains.kappa_x * (d.f_x + self.nodes[i].lambda)
            };
            let e = stationarity_error(anchor, f_big, &self.boxes[i]);
            let sigma = switching_signal(anchor - e, &self.boxes[i]);
            s.e = e;
            s.sigma = sigma;
            self.rho_w[i] = rho(&d, sigma).expect("curvature validated at construction");
            let product_e = (f_big - e) * e;
            self.diag.min_sign_product_e = self.diag.min_sign_product_e.min(product_e);
            self.diag.min_sign_product_sign = self
                .diag
                .min_sign_product_sign
                .min((f_big - e) * if e == 0.0 { 0.0 } else { e.signum() });
        }

        // Consensus rounds: signal increments enter on the first round,
        // the rest mix with held signals.
        for round in 0..self.rounds_per_interval {
            let inject = round == 0;
            self.track_channel(CH_RHO, inject, |this, k| this.rho_w[k]);
            self.track_channel(CH_COUPLING_W, inject, |this, k| {
                this.rho_w[k] * this.f_xw[k]
            });
            self.track_channel(CH_COUPLING_WW, inject, |this, k| {
                this.rho_w[k] * this.f_xww[k]
            });
            self.track_channel(CH_X, inject, |this, k| {
                if tot2 || this.plant == PlantModel::Direct {
                    this.states[k].x
                } else {
                    this.states[k].r
                }
            });
            self.track_channel(CH_INJ_RATE, inject, |_this, k| {
                if k == 0 {
                    slope * rate * c_agg_mw
                } else {
                    0.0
                }
            });
            self.track_channel(CH_INJ_ACC, inject, |_this, k| {
                if k == 0 {
                    slope * acc * c_agg_mw
                } else {
                    0.0
                }
            });
            self.tracker.initialized = true;
            for node in &mut self.nodes {
                node.round += 1;
            }
        }

        // Switching instants make the trajectory-rate difference spurious;
        // see the centralized monitor.
        let switching_instant = self.diag.steps == 0
            || slope != self.slope_prev
            || self
                .states
                .iter()
                .zip(&self.sigma_prev)
                .any(|(s, prev)| s.sigma != *prev);

        // Local feedforward estimates and multiplier integration.
        let n_f = n as f64;
        let mut lambda_dot_mean = 0.0;
        let mut gamma3_requirement: f64 = 0.0;
        for round in 0..self.rounds_per_interval {
            let mut lambdas = std::mem::take(&mut self.signal);
            for (slot, node) in lambdas.iter_mut().zip(&self.nodes) {
                *slot = node.lambda;
            }
            self.graph.mix(&lambdas, &mut self.lambda_mixed);
            self.signal = lambdas;
            let integrate = round == self.rounds_per_interval - 1;
            for i in 0..n {
                if integrate {
                    let avg_rho = self.tracker.s[CH_RHO][i];
                    let prime_numerator = self.tracker.s[CH_COUPLING_W][i] * rate
                        + self.tracker.s[CH_INJ_RATE][i];
                    let beta_prime = beta_ratio(avg_rho, prime_numerator);
                    let residual = gains.kappa_lambda * (n_f * self.tracker.s[CH_X][i] - required);
                    let lambda_dot = residual + beta_prime;
                    self.nodes[i].lambda = self.lambda_mixed[i] + dt_s * lambda_dot;
                    self.nodes[i].beta = beta_prime;
                    lambda_dot_mean += lambda_dot / n_f;
                    self.alpha_prime[i] =
                        -self.rho_w[i] * (self.f_xw[i] * rate + beta_prime);
                    if tot2 {
                        let second_numerator = self.tracker.s[CH_COUPLING_W][i] * acc
                            + self.tracker.s[CH_COUPLING_WW][i] * rate_sq
                            + self.tracker.s[CH_INJ_ACC][i];
                        let beta_second = beta_ratio(avg_rho, second_numerator);
                        self.alpha[i] = -self.tau[i]
                            * self.rho_w[i]
                            * (self.f_xw[i] * acc + self.f_xww[i] * rate_sq + beta_second)
                            + self.alpha_prime[i];
                    } else {
                        self.alpha[i] = self.alpha_prime[i];
                    }
                    let monitored = if tot2 {
                        let x_dot = (self.states[i].r - self.states[i].x) / self.tau[i];
                        let alpha_prime_dot = if switching_instant {
                            0.0
                        } else {
                            (self.alpha_prime[i] - self.alpha_prime_prev[i]) / dt_s
                        };
                        (self.f_xx[i] - 1.0) * x_dot + self.f_xw[i] * rate + lambda_dot
                            - self.tau[i] * alpha_prime_dot
                    } else {
                        lambda_dot + self.f_xw[i] * rate
                    };
                    gamma3_requirement = gamma3_requirement.max(monitored.abs());
                } else {
                    self.nodes[i].lambda = self.lambda_mixed[i];
                }
            }
        }

        // Per-asset control laws with local estimates.
        for i in 0..n {
            let (delta_cmd, u) = if tot2 {
                tot2_command_delta(self.states[i].e, self.alpha[i], &gains, dt_s)
            } else {
                tot1_command_delta(self.states[i].e, self.f_xx[i], self.alpha[i], &gains, dt_s)
            };
            let overshoot = apply_plant_command(
                self.plant,
                &self.boxes[i],
                self.tau[i],
                &mut self.states[i],
                delta_cmd,
                dt_s,
            );
            self.diag.max_absorbed_overshoot_mw =
                self.diag.max_absorbed_overshoot_mw.max(overshoot);
            self.states[i].u = u;
        }
        if tot2 {
            self.alpha_prime_prev.copy_from_slice(&self.alpha_prime);
        }
        for (prev, s) in self.sigma_prev.iter_mut().zip(&self.states) {
            *prev = s.sigma;
        }
        self.slope_prev = slope;

        self.diag.steps += 1;
        self.diag.max_gamma3_requirement =
            self.diag.max_gamma3_requirement.max(gamma3_requirement);
        for (s, b) in self.states.iter().zip(&self.boxes) {
            self.diag.max_x_violation_mw = self.diag.max_x_violation_mw.max(b.violation(s.x));
            self.diag.max_r_violation_mw = self.diag.max_r_violation_mw.max(b.violation(s.r));
        }
        let finite = self
            .nodes
            .iter()
            .all(|nd| nd.lambda.is_finite())
            && self.states.iter().all(|s| s.x.is_finite() && s.r.is_finite());
        if !finite {
            return Err(ControllerError::NonFinite {
                step: self.diag.steps,
            });
        }

        // True aggregate mismatch for recording; individual nodes only know
        // their estimates.
        let mismatch = sum_x - required;
        Ok(AruStepOutput {
            required_mw: required,
            mismatch_mw: mismatch,
            lambda_dot: lambda_dot_mean,
            gamma3_requirement,
        })
    }

    fn track_channel(&mut self, channel: usize, inject: bool, f: impl Fn(&Self, usize) -> f64) {
        let mut signal = std::mem::take(&mut self.signal);
        for (k, slot) in signal.iter_mut().enumerate() {
            *slot = f(self, k);
        }
        self.tracker.round(&self.graph, channel, &signal, inject);
        self.signal = signal;
    }

    /// Checks all nodes share the same round counter.
    pub fn check_synchronized(&self) -> Result<(), GraphError> {
        let first = self.nodes.first().map(|n| n.round).unwrap_or(0);
        for node in &self.nodes {
            if node.round != first {
                return Err(GraphError::Desynchronized(first, node.round));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::controller::Aru;
    use crate::costs::QuadraticCost;
    use crate::curves::ServiceKind;

    fn assets(n: usize) -> Vec<AssetParams> {
        let mut rng = crate::rng::SplitMix64::new(1234);
        (0..n)
            .map(|_| AssetParams {
                cost: QuadraticCost::new(rng.uniform(1.5, 5.0), 1.0).unwrap(),
                p_min_mw: -6.0,
                p_max_mw: 6.0,
                baseline_mw: rng.uniform(-2.0, 2.0),
                tau_s: rng.uniform(0.05, 0.2),
            })
            .collect()
    }

    fn meas(dev: f64, rate: f64, t: f64) -> FrequencyMeasurement {
        FrequencyMeasurement {
            deviation_hz: dev,
            rate_hzps: rate,
            acc_hzps2: 0.0,
            timestamp_s: t,
        }
    }

    #[test]
    fn metropolis_weights_are_doubly_stochastic() {
        let g = CommGraph::ring(8).unwrap();
        let ones = vec![1.0; 8];
        let mut out = vec![0.0; 8];
        g.mix(&ones, &mut out);
        for v in out {
            assert!((v - 1.0).abs() < 1e-15);
        }
        for k in 0..8 {
            assert!(g.diagonal[k] > 0.0);
        }
    }

    #[test]
    fn complete_graph_averages_in_one_round() {
        let g = CommGraph::complete(5).unwrap();
        let vals = [1.0, 2.0, 3.0, 4.0, 10.0];
        let mut out = vec![0.0; 5];
        g.mix(&vals, &mut out);
        let avg = vals.iter().sum::<f64>() / 5.0;
        for v in out {
            assert!((v - avg).abs() < 1e-12);
        }
    }

    #[test]
    fn ring_contracts_at_the_spectral_rate() {
        let g = CommGraph::ring(12).unwrap();
        let factor = g.contraction_factor();
        assert!(factor < 1.0 && factor > 0.5);
        // Static signals: deviation from average shrinks at most by the
        // contraction factor per round.
        let mut v: Vec<f64> = (0..12).map(|k| (k as f64 * 1.37).cos()).collect();
        let mut out = vec![0.0; 12];
        for _ in 0..30 {
            let mean = v.iter().sum::<f64>() / 12.0;
            let dev_before: f64 = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>().sqrt();
            g.mix(&v, &mut out);
            std::mem::swap(&mut v, &mut out);
            let dev_after: f64 = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>().sqrt();
            assert!(dev_after <= factor * dev_before + 1e-12);
        }
    }

    #[test]
    fn zero_signals_stay_zero() {
        let curve = DeliveryCurve::default_for(ServiceKind::Dr);
        let mut unit = DistributedAru::new(
            AlgorithmKind::Tot1,
            PlantModel::Direct,
            assets(6)
                .into_iter()
                .map(|mut a| {
                    a.cost.b = 0.0;
                    a.baseline_mw = 0.0;
                    a
                })
                .collect(),
            ControllerGains::default(),
            CommGraph::ring(6).unwrap(),
            1,
            0.0,
            1,
        )
        .unwrap();
        for k in 0..50 {
            unit.step(&meas(0.0, 0.0, k as f64 * 1e-3), &curve, 30.0, 1e-3)
                .unwrap();
        }
        assert!(unit.nodes.iter().all(|n| n.lambda == 0.0));
        assert!(unit.states.iter().all(|s| s.x == 0.0));
    }

    #[test]
    fn disconnected_graph_is_rejected() {
        assert_eq!(
            CommGraph::from_edges(4, &[(0, 1), (2, 3)]).unwrap_err(),
            GraphError::Disconnected
        );
        assert!(CommGraph::from_edges(4, &[(0, 1), (1, 2), (2, 3)]).is_ok());
    }

    #[test]
    fn single_node_matches_centralized_bitwise() {
        let params = assets(1);
        let curve = DeliveryCurve::default_for(ServiceKind::Dm);
        let gains = ControllerGains::default();
        for algorithm in [AlgorithmKind::Tot1, AlgorithmKind::Tot2] {
            let plant = match algorithm {
                AlgorithmKind::Tot1 => PlantModel::Direct,
                _ => PlantModel::FirstOrder,
            };
            let mut central =
                Aru::new(algorithm, plant, params.clone(), gains, 0.0, 1).unwrap();
            let mut dist = DistributedAru::new(
                algorithm,
                plant,
                params.clone(),
                gains,
                CommGraph::ring(1).unwrap(),
                1,
                0.0,
                1,
            )
            .unwrap();
            for k in 0..400 {
                let t = k as f64 * 1e-3;
                let m = meas(-0.12 - 1e-4 * (t * 40.0).sin(), 0.004 * (t * 40.0).cos(), t);
                let a = central.step(&m, &curve, 30.0, 1e-3).unwrap();
                let b = dist.step(&m, &curve, 30.0, 1e-3).unwrap();
                assert_eq!(central.states[0].x.to_bits(), dist.states[0].x.to_bits());
                assert_eq!(central.states[0].r.to_bits(), dist.states[0].r.to_bits());
                assert_eq!(
                    central.multiplier.lambda.to_bits(),
                    dist.nodes[0].lambda.to_bits()
                );
                assert_eq!(a.mismatch_mw.to_bits(), b.mismatch_mw.to_bits());
            }
        }
    }

    #[test]
    fn consensus_conserves_channel_sums() {
        let curve = DeliveryCurve::default_for(ServiceKind::Dr);
        let mut unit = DistributedAru::new(
            AlgorithmKind::Tot1,
            PlantModel::Direct,
            assets(10),
            ControllerGains::default(),
            CommGraph::ring(10).unwrap(),
            1,
            0.0,
            1,
        )
        .unwrap();
        for k in 0..300 {
            let t = k as f64 * 1e-3;
            unit.step(&meas(-0.1 + 0.02 * (t * 3.0).sin(), 0.06 * (t * 3.0).cos(), t), &curve, 30.0, 1e-3)
                .unwrap();
            assert!(
                unit.conservation_residual() < 1e-9,
                "residual {}",
                unit.conservation_residual()
            );
        }
        unit.check_synchronized().unwrap();
    }

    #[test]
    fn lambda_spread_contracts_under_mixing() {
        let curve = DeliveryCurve::default_for(ServiceKind::Dr);
        let n = 8;
        let mut unit = DistributedAru::new(
            AlgorithmKind::Tot1,
            PlantModel::Direct,
            assets(n),
            ControllerGains::default(),
            CommGraph::ring(n).unwrap(),
            1,
            0.0,
            1,
        )
        .unwrap();
        // Seed disagreement in the local multipliers, then run with a static
        // frozen measurement: the spread must not grow.
        for (k, node) in unit.nodes.iter_mut().enumerate() {
            node.lambda = k as f64 - 3.5;
        }
        let spread = |unit: &DistributedAru| {
            let max = unit.nodes.iter().map(|n| n.lambda).fold(f64::MIN, f64::max);
            let min = unit.nodes.iter().map(|n| n.lambda).fold(f64::MAX, f64::min);
            max - min
        };
        let m = meas(0.0, 0.0, 0.0);
        let mut prev = spread(&unit);
        for _ in 0..200 {
            unit.step(&m, &curve, 30.0, 1e-3).unwrap();
            let now = spread(&unit);
            assert!(now <= prev + 1e-9, "spread grew: {prev} -> {now}");
            prev = now;
        }
        assert!(prev < 0.5);
    }

    #[test]
    fn ring_tracks_centralized_run() {
        // A 12-asset ring under a moving requirement stays within a small
        // envelope of the centralized run with identical parameters.
        let params = assets(12);
        let curve = DeliveryCurve::default_for(ServiceKind::Dr);
        let gains = ControllerGains::default();
        let mut central = Aru::new(
            AlgorithmKind::Tot2,
            PlantModel::FirstOrder,
            params.clone(),
            gains,
            0.0,
            1,
        )
        .unwrap();
        let mut dist = DistributedAru::new(
            AlgorithmKind::Tot2,
            PlantModel::FirstOrder,
            params,
            gains,
            CommGraph::ring(12).unwrap(),
            1,
            0.0,
            1,
        )
        .unwrap();
        let mut central_env: f64 = 0.0;
        let mut dist_env: f64 = 0.0;
        for k in 0..4000 {
            let t = k as f64 * 1e-3;
            // Slow sweep through the active range.
            let dev = -0.08 - 0.06 * (0.8 * t).sin();
            let rate = -0.06 * 0.8 * (0.8 * t).cos();
            let m = meas(dev, rate, t);
            let a = central.step(&m, &curve, 30.0, 1e-3).unwrap();
            let b = dist.step(&m, &curve, 30.0, 1e-3).unwrap();
            if t > 1.0 {
                central_env = central_env.max(a.mismatch_mw.abs());
                dist_env = dist_env.max(b.mismatch_mw.abs());
            }
        }
        assert!(
            dist_env <= 5.0 * central_env.max(1e-3),
            "distributed envelope {dist_env} vs centralized {central_env}"
        );
        assert_eq!(dist.diag.max_x_violation_mw, 0.0);
    }
}
