use p2pgrid::market::{self, Bid, MarketError, Tariffs};
use proptest::prelude::*;

fn bids(q: &[f64]) -> Vec<Bid> {
    q.iter().enumerate().map(|(i, &q)| Bid::new(i, q)).collect()
}

fn tariffs() -> impl Strategy<Value = Tariffs> {
    (0.0f64..20.0, 0.1f64..20.0).prop_map(|(fit, gap)| Tariffs::new(fit, fit + gap).unwrap())
}

/// At least one buyer so that the round clears.
fn quantities() -> impl Strategy<Value = Vec<f64>> {
    (prop::collection::vec(-10.0f64..10.0, 0..12), 0.01f64..10.0).prop_map(|(mut q, buy)| {
        q.push(-buy);
        q
    })
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1.0)
}

proptest! {
    #[test]
    fn price_stays_between_tariffs_and_never_rises(t in tariffs(), s1 in 0.0f64..5.0, s2 in 0.0f64..5.0) {
        let (lo, hi) = (s1.min(s2), s1.max(s2));
        let p_lo = market::clearing_price(lo, &t).unwrap();
        let p_hi = market::clearing_price(hi, &t).unwrap();
        prop_assert!(t.fit <= p_hi && p_hi <= p_lo && p_lo <= t.ur);
    }

    #[test]
    fn price_is_continuous_at_full_supply(t in tariffs(), d in 0.0f64..1e-9) {
        let below = market::clearing_price(1.0 - d, &t).unwrap();
        let above = market::clearing_price(1.0 + d, &t).unwrap();
        prop_assert!((below - above).abs() <= (t.ur - t.fit) * d + 1e-12);
    }

    #[test]
    fn peer_trades_balance(t in tariffs(), q in quantities()) {
        let r = market::settle(&bids(&q), &t).unwrap();
        prop_assume!(r.sdr <= 1.0);
        let sold: f64 = q.iter().enumerate().filter(|(_, &b)| b >= 0.0).map(|(i, _)| r.rewards[&i]).sum();
        let bought: f64 = q.iter().filter(|&&b| b < 0.0).map(|&b| -r.sdr * r.price * b).sum();
        prop_assert!(close(sold, bought), "{sold} vs {bought}");
        for (i, &b) in q.iter().enumerate().filter(|(_, &b)| b < 0.0) {
            let from_utility = r.rewards[&i] - r.sdr * r.price * b;
            prop_assert!(close(from_utility, (1.0 - r.sdr) * t.ur * b));
        }
    }

    #[test]
    fn oversupply_trades_everything_at_fit(t in tariffs(), q in quantities(), extra in 0.01f64..50.0) {
        let mut q = q;
        let buy: f64 = -q.iter().filter(|&&b| b < 0.0).sum::<f64>();
        q.push(buy + extra);
        let r = market::settle(&bids(&q), &t).unwrap();
        prop_assert!(r.sdr > 1.0);
        for (i, &b) in q.iter().enumerate() {
            prop_assert!(close(r.rewards[&i], t.fit * b));
        }
    }

    #[test]
    fn p2p_never_worse_than_the_utility(t in tariffs(), q in quantities()) {
        let b = bids(&q);
        let p2p = market::clear(&b, &t).unwrap();
        let base = market::settle_no_p2p(&b, &t).unwrap();
        for i in 0..q.len() {
            prop_assert!(p2p.rewards[&i] >= base.rewards[&i] - 1e-12 * base.rewards[&i].abs().max(1.0));
        }
    }

    #[test]
    fn scaling_all_bids_scales_rewards(t in tariffs(), q in quantities(), c in 0.01f64..100.0) {
        let r1 = market::settle(&bids(&q), &t).unwrap();
        let scaled: Vec<f64> = q.iter().map(|&b| b * c).collect();
        let r2 = market::settle(&bids(&scaled), &t).unwrap();
        prop_assert!(close(r1.sdr, r2.sdr));
        prop_assert!(close(r1.price, r2.price));
        for i in 0..q.len() {
            prop_assert!(close(r1.rewards[&i] * c, r2.rewards[&i]));
        }
    }

    #[test]
    fn rounds_without_buyers_settle_at_fit(t in tariffs(), q in prop::collection::vec(0.0f64..10.0, 1..12)) {
        prop_assume!(q.iter().any(|&b| b > 0.0));
        prop_assert!(matches!(market::settle(&bids(&q), &t), Err(MarketError::Suspended)));
        let r = market::clear(&bids(&q), &t).unwrap();
        prop_assert!(r.suspended);
        prop_assert_eq!(r.price, t.fit);
    }
}
