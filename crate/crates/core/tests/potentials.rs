use bandshare::potential::{bucket_index, state_total};
use bandshare::{CapacityRegion, CounterexampleParams, LogPotential};

fn two_route_networks() -> Vec<CapacityRegion> {
    vec![
        CapacityRegion::single_link(1.0, 2).unwrap(),
        CapacityRegion::single_link(3.0, 2).unwrap(),
        // Two links, route 0 on both, route 1 on the second only.
        CapacityRegion::checked(
            vec!["a".into(), "b".into()],
            vec!["l0".into(), "l1".into()],
            vec![vec![1.0, 0.0], vec![1.0, 1.0]],
            vec![0.6, 1.0],
        )
        .unwrap(),
    ]
}

#[test]
fn balanced_fairness_is_feasible_and_saturating() {
    let mut regions = two_route_networks();
    regions.push(CapacityRegion::line_network());
    for region in regions {
        let cap = vec![12; region.num_routes()];
        let phi = LogPotential::balanced_fairness(&region, cap).unwrap();
        phi.for_each_state(|n, _| {
            if state_total(n) == 0 {
                return;
            }
            let x = phi.allocation(n).unwrap();
            assert!(region.contains(x.rates(), 1e-9).unwrap(), "{n:?} {x:?}");
            let util = region.max_utilisation(x.rates()).unwrap();
            assert!((util - 1.0).abs() <= 1e-9, "{n:?} utilisation {util}");
        });
    }
}

#[test]
fn counterexample_case_split_up_to_64() {
    for region in two_route_networks() {
        let base = LogPotential::balanced_fairness(&region, vec![64, 64]).unwrap();
        for alpha in [1.5, 2.0, 7.0] {
            let params = CounterexampleParams::new(base.clone(), alpha).unwrap();
            let hat = LogPotential::counterexample(&params);
            base.for_each_state(|n, _| {
                let total = state_total(n);
                if total == 0 || total > 64 {
                    return;
                }
                let x = base.allocation(n).unwrap();
                let x_hat = hat.allocation(n).unwrap();
                let power = total.is_power_of_two() && bucket_index(total).unwrap() >= 1;
                let factor = if power { 1.0 / alpha } else { 1.0 };
                for (a, b) in x_hat.rates().iter().zip(x.rates()) {
                    assert!((a - factor * b).abs() <= 1e-12, "{n:?}: {a} vs {factor}*{b}");
                }
                assert!(region.contains(x_hat.rates(), 1e-9).unwrap());
            });
        }
    }
}

#[test]
fn single_link_balanced_fairness_is_processor_sharing() {
    for capacity in [1.0, 2.0, 10.0] {
        let region = CapacityRegion::single_link(capacity, 3).unwrap();
        let phi = LogPotential::balanced_fairness(&region, vec![40, 40, 40]).unwrap();
        phi.for_each_state(|n, _| {
            let total = state_total(n);
            if total == 0 || total > 40 {
                return;
            }
            let x = phi.allocation(n).unwrap();
            for (r, rate) in x.rates().iter().enumerate() {
                let ps = n[r] as f64 * capacity / total as f64;
                assert!((rate - ps).abs() <= 1e-12, "{n:?}");
            }
        });
    }
}

#[test]
fn potential_is_one_at_origin_and_zero_off_lattice() {
    let region = CapacityRegion::line_network();
    let phi = LogPotential::balanced_fairness(&region, vec![3, 3, 3]).unwrap();
    assert_eq!(phi.log_phi(&[0, 0, 0]).unwrap(), 0.0);
    assert_eq!(phi.log_phi_signed(&[0, -1, 2]).unwrap(), f64::NEG_INFINITY);
    phi.for_each_state(|_, v| assert!(v.is_finite()));
}
