//! Gauss-Seidel power-flow reference built directly from a network JSON value.
//!
//! Deliberately shares no code with the library solver: its own admittance
//! assembly and its own complex arithmetic on `(re, im)` pairs.

use serde_json::Value;

#[derive(Clone, Copy, Debug)]
struct C(f64, f64);

impl C {
    fn add(self, o: C) -> C {
        C(self.0 + o.0, self.1 + o.1)
    }
    fn sub(self, o: C) -> C {
        C(self.0 - o.0, self.1 - o.1)
    }
    fn mul(self, o: C) -> C {
        C(self.0 * o.0 - self.1 * o.1, self.0 * o.1 + self.1 * o.0)
    }
    fn div(self, o: C) -> C {
        let d = o.0 * o.0 + o.1 * o.1;
        C((self.0 * o.0 + self.1 * o.1) / d, (self.1 * o.0 - self.0 * o.1) / d)
    }
    fn conj(self) -> C {
        C(self.0, -self.1)
    }
    fn abs(self) -> f64 {
        self.0.hypot(self.1)
    }
}

pub struct Reference {
    pub v_mag: Vec<f64>,
    pub v_ang: Vec<f64>,
}

fn num(v: &Value, key: &str) -> f64 {
    v.get(key).and_then(Value::as_f64).unwrap_or(0.0)
}

/// Solves to a voltage update below `tol` between sweeps.
pub fn solve(network: &Value, injections: &[(f64, f64)], slack_v: f64, tol: f64) -> Reference {
    let buses = network["buses"].as_array().expect("buses");
    let n = buses.len();
    let mut y = vec![vec![C(0.0, 0.0); n]; n];
    let mut slack = 0;
    for b in buses {
        let k = b["id"].as_u64().expect("id") as usize;
        y[k][k] = y[k][k].add(C(num(b, "shunt_g"), num(b, "shunt_b")));
        if b["kind"] == "slack" {
            slack = k;
        }
    }
    for br in network["branches"].as_array().expect("branches") {
        let f = br["from"].as_u64().unwrap() as usize;
        let t = br["to"].as_u64().unwrap() as usize;
        let ys = C(1.0, 0.0).div(C(num(br, "r"), num(br, "x")));
        let half = C(0.0, num(br, "b_half"));
        y[f][f] = y[f][f].add(ys).add(half);
        y[t][t] = y[t][t].add(ys).add(half);
        y[f][t] = y[f][t].sub(ys);
        y[t][f] = y[t][f].sub(ys);
    }

    let mut v = vec![C(slack_v, 0.0); n];
    for _ in 0..1_000_000 {
        let mut change: f64 = 0.0;
        for k in (0..n).filter(|&k| k != slack) {
            let s = C(injections[k].0, injections[k].1);
            let mut acc = s.conj().div(v[k].conj());
            for j in (0..n).filter(|&j| j != k) {
                acc = acc.sub(y[k][j].mul(v[j]));
            }
            let next = acc.div(y[k][k]);
            change = change.max(next.sub(v[k]).abs());
            v[k] = next;
        }
        if change < tol {
            return Reference {
                v_mag: v.iter().map(|c| c.abs()).collect(),
                v_ang: v.iter().map(|c| c.1.atan2(c.0)).collect(),

            };
        }
    }
    panic!("Gauss-Seidel reference did not converge");
}
