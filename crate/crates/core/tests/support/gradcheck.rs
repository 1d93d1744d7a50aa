//! Central finite-difference checks of every analytic gradient in `rl`.

use p2pgrid::rl::ppo::{clipped_objective_and_grad, value_loss_and_grad, ActorSample};
use p2pgrid::rl::{GaussianPolicy, Mlp};
use p2pgrid::rng::{stream, SimRng, Stream};
use rand::Rng;

pub const STEP: f64 = 1e-5;
pub const MAX_REL_ERROR: f64 = 1e-4;
/// Below this magnitude a coordinate is compared absolutely against `FLOOR * MAX_REL_ERROR`.
const FLOOR: f64 = 1e-6;

#[derive(Debug, Default)]
pub struct Report {
    pub instances: usize,
    pub worst: f64,
    pub failures: Vec<String>,
}

impl Report {
    fn record(&mut self, label: String, analytic: &[f64], numeric: &[f64]) {
        self.instances += 1;
        let worst = analytic
            .iter()
            .zip(numeric)
            .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(FLOOR))
            .fold(0.0, f64::max);
        self.worst = self.worst.max(worst);
        if !(worst < MAX_REL_ERROR) {
            self.failures.push(format!("{label}: relative error {worst:.3e}"));
        }
    }
}

fn central(params: &mut [f64], mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    (0..params.len())
        .map(|i| {
            let orig = params[i];
            params[i] = orig + STEP;
            let up = f(params);
            params[i] = orig - STEP;
            let down = f(params);
            params[i] = orig;
            (up - down) / (2.0 * STEP)
        })
        .collect()
}

fn sizes(rng: &mut SimRng) -> Vec<usize> {
    let depth = rng.random_range(1..=3);
    let mut s = vec![rng.random_range(1..=6)];
    s.extend((0..depth).map(|_| rng.random_range(2..=7)));
    s.push(rng.random_range(1..=4));
    s
}

fn vector(rng: &mut SimRng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-scale..scale)).collect()
}

fn with_params(net: &Mlp, params: &[f64]) -> Mlp {
    let mut net = net.clone();
    net.params.copy_from_slice(params);
    net
}

fn mlp_output(rng: &mut SimRng, report: &mut Report, id: usize) {
    let s = sizes(rng);
    let net = Mlp::glorot(&s, rng);
    let x = vector(rng, s[0], 2.0);
    let upstream = vector(rng, net.output_dim(), 1.0);
    let analytic = net.gradient(&x, &upstream).unwrap();
    let mut p = net.params.clone();
    let numeric = central(&mut p, |p| {
        let out = with_params(&net, p).predict(&x).unwrap();
        out.iter().zip(&upstream).map(|(o, u)| o * u).sum()
    });
    report.record(format!("mlp #{id} {s:?}"), &analytic, &numeric);
}

/// Packs mean-net parameters followed by the log-std vector.
fn policy_params(policy: &GaussianPolicy) -> Vec<f64> {
    policy.mean.params.iter().chain(&policy.log_std).copied().collect()
}

fn with_policy_params(policy: &GaussianPolicy, p: &[f64]) -> GaussianPolicy {
    let mut out = policy.clone();
    let n = out.mean.params.len();
    out.mean.params.copy_from_slice(&p[..n]);
    out.log_std.copy_from_slice(&p[n..]);
    out
}

fn random_policy(rng: &mut SimRng) -> GaussianPolicy {
    let s = sizes(rng);
    let mut policy = GaussianPolicy::new(&s, 0.0, rng);
    policy.log_std = vector(rng, policy.action_dim(), 1.0);
    policy
}

fn log_prob(rng: &mut SimRng, report: &mut Report, id: usize) {
    let policy = random_policy(rng);
    let x = vector(rng, policy.mean.input_dim(), 2.0);
    let action = vector(rng, policy.action_dim(), 2.0);
    let (_, cache) = policy.forward(&x).unwrap();
    let mut net_grads = vec![0.0; policy.mean.n_params()];
    let mut std_grads = vec![0.0; policy.action_dim()];
    policy.accumulate_log_prob_grad(&cache, &action, 1.0, &mut net_grads, &mut std_grads);
    let analytic: Vec<f64> = net_grads.into_iter().chain(std_grads).collect();
    let mut p = policy_params(&policy);
    let numeric = central(&mut p, |p| with_policy_params(&policy, p).log_prob(&x, &action).unwrap());
    report.record(format!("log_prob #{id}"), &analytic, &numeric);
}

/// Old log-probs are placed so each ratio sits well inside or well outside the
/// clip interval, away from the kinks where the objective is not differentiable.
fn clipped_objective(rng: &mut SimRng, report: &mut Report, id: usize) {
    let policy = random_policy(rng);
    let eps = 0.2;
    let n = rng.random_range(1..=6);
    let obs: Vec<Vec<f64>> = (0..n).map(|_| vector(rng, policy.mean.input_dim(), 2.0)).collect();
    let actions: Vec<Vec<f64>> = (0..n).map(|_| vector(rng, policy.action_dim(), 2.0)).collect();
    let mut old = Vec::with_capacity(n);
    let mut adv = Vec::with_capacity(n);
    for (o, a) in obs.iter().zip(&actions) {
        let lp = policy.log_prob(o, a).unwrap();
        let ratio: f64 = match rng.random_range(0..3) {
            0 => rng.random_range(0.9..1.1),
            1 => rng.random_range(1.4..2.0),
            _ => rng.random_range(0.3..0.6),
        };
        old.push(lp - ratio.ln());
        adv.push(rng.random_range(-2.0..2.0));
    }
    let batch: Vec<ActorSample<'_>> = (0..n)
        .map(|i| ActorSample { obs: &obs[i], action: &actions[i], old_log_prob: old[i], advantage: adv[i] })
        .collect();
    let (_, net_grads, std_grads) = clipped_objective_and_grad(&policy, &batch, eps).unwrap();
    let analytic: Vec<f64> = net_grads.into_iter().chain(std_grads).collect();
    let mut p = policy_params(&policy);
    let numeric = central(&mut p, |p| clipped_objective_and_grad(&with_policy_params(&policy, p), &batch, eps).unwrap().0);
    report.record(format!("clipped objective #{id}"), &analytic, &numeric);
}

fn value_loss(rng: &mut SimRng, report: &mut Report, id: usize) {
    let mut s = sizes(rng);
    *s.last_mut().unwrap() = 1;
    let critic = Mlp::glorot(&s, rng);
    let n = rng.random_range(1..=6);
    let obs: Vec<Vec<f64>> = (0..n).map(|_| vector(rng, s[0], 2.0)).collect();
    let targets = vector(rng, n, 3.0);
    let batch: Vec<(&[f64], f64)> = obs.iter().map(Vec::as_slice).zip(targets).collect();
    let (_, analytic) = value_loss_and_grad(&critic, &batch).unwrap();
    let mut p = critic.params.clone();
    let numeric = central(&mut p, |p| value_loss_and_grad(&with_params(&critic, p), &batch).unwrap().0);
    report.record(format!("value loss #{id}"), &analytic, &numeric);
}

/// Runs `per_family` random instances of each gradient kind.
pub fn run(seed: u64, per_family: usize) -> Report {
    let mut rng = stream(seed, Stream::Init(0));
    let mut report = Report::default();
    for id in 0..per_family {
        mlp_output(&mut rng, &mut report, id);
        log_prob(&mut rng, &mut report, id);
        clipped_objective(&mut rng, &mut report, id);
        value_loss(&mut rng, &mut report, id);
    }
    report
}
