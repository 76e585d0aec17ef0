use nalgebra::DMatrix;
use owalloc::allocator::*;
use proptest::prelude::*;

/// Random instance with `sum(e_min) <= sum(capacity)`.
fn problem_strategy(max_k: usize, max_l: usize) -> impl Strategy<Value = AllocationProblem> {
    (1..=max_k, 1..=max_l).prop_flat_map(|(k, l)| {
        (
            prop::collection::vec(prop_oneof![1 => Just(0.0), 4 => 0.01..3.0f64], k * l),
            prop::collection::vec(0.5..5.0f64, k),
            prop::collection::vec(0.0..0.5f64, k),
            prop::collection::vec(0.2..3.0f64, l),
            prop::collection::vec(0.5..2.0f64, k),
        )
            .prop_map(move |(r, e_max, frac, cap, xi)| {
                let mut e_min: Vec<f64> = e_max.iter().zip(&frac).map(|(m, f)| m * f).collect();
                let (need, have): (f64, f64) = (e_min.iter().sum(), cap.iter().sum());
                if need > have {
                    e_min.iter_mut().for_each(|v| *v *= 0.9 * have / need);
                }
                AllocationProblem::new(DMatrix::from_row_slice(k, l, &r), e_min, e_max, cap, xi)
                    .unwrap()
            })
    })
}

fn allocation_strategy(k: usize, l: usize) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-1.0..4.0f64, k * l).prop_map(move |v| DMatrix::from_row_slice(k, l, &v))
}

/// Maximizer of `ln(1 + xi r e) - mu e` on `[0, cap]` by bisection on the
/// derivative, which is strictly decreasing.
fn numeric_argmax(mu: f64, xi: f64, r: f64, cap: f64) -> f64 {
    let d = |e: f64| xi * r / (1.0 + xi * r * e) - mu;
    if d(0.0) <= 0.0 {
        return 0.0;
    }
    if d(cap) >= 0.0 {
        return cap;
    }
    let (mut lo, mut hi) = (0.0, cap);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if d(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[test]
fn kkt_matches_numeric_maximization_on_1000_triples() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..1000 {
        let mu = rng.random_range(0.01..5.0);
        let xi = rng.random_range(0.1..3.0);
        let r = rng.random_range(0.01..5.0);
        let cap = rng.random_range(0.1..5.0);
        let got = kkt_allocation(mu, xi, r, cap);
        let want = numeric_argmax(mu, xi, r, cap);
        assert!(
            (got - want).abs() <= 1e-8,
            "mu={mu} xi={xi} r={r}: {got} vs {want}"
        );
    }
}

proptest! {
    #[test]
    fn utility_is_invariant_under_user_permutation(p in problem_strategy(4, 3), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let (k, l) = p.rates.shape();
        let e = repair_allocation(&DMatrix::from_element(k, l, 0.3), &p);
        let mut perm: Vec<usize> = (0..k).collect();
        perm.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let pick = |v: &[f64]| perm.iter().map(|&i| v[i]).collect::<Vec<_>>();
        let rates = DMatrix::from_fn(k, l, |i, j| p.rates[(perm[i], j)]);
        let pp = AllocationProblem::new(rates, pick(&p.e_min), pick(&p.e_max), p.capacity.clone(), pick(&p.weights)).unwrap();
        let ep = DMatrix::from_fn(k, l, |i, j| e[(perm[i], j)]);
        let (a, b) = (utility(&e, &p).unwrap(), utility(&ep, &pp).unwrap());
        prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
    }

    #[test]
    fn repair_never_increases_violation(p in problem_strategy(4, 4), raw in allocation_strategy(4, 4)) {
        let (k, l) = p.rates.shape();
        let e = raw.view((0, 0), (k, l)).into_owned();
        let repaired = repair_allocation(&e, &p);
        prop_assert!(max_violation(&repaired, &p) <= max_violation(&e, &p) + 1e-12);
        prop_assert!(is_feasible(&repaired, &p), "violation {}", max_violation(&repaired, &p));
        prop_assert!(repaired.iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn repair_is_identity_on_feasible_points(p in problem_strategy(3, 3)) {
        let once = repair_allocation(&DMatrix::zeros(p.num_users(), p.num_aps()), &p);
        prop_assert_eq!(repair_allocation(&once, &p), once);
    }

    #[test]
    fn multiplier_updates_stay_nonnegative(p in problem_strategy(3, 3), raw in allocation_strategy(3, 3), step in 0.0..10.0f64, init in 0.0..2.0f64) {
        let (k, l) = p.rates.shape();
        let e = raw.view((0, 0), (k, l)).map(|v| v.max(0.0));
        let s = MultiplierState::uniform(k, l, init, StepSchedule::Constant(step));
        let next = update_multipliers(&s, &e, &p);
        prop_assert!(next.lambda.iter().chain(&next.eta_max).chain(&next.eta_min).all(|v| *v >= 0.0));
        prop_assert_eq!(next.iteration, 1);
    }

    #[test]
    fn kkt_response_is_within_box(mu in -1.0..5.0f64, xi in 0.1..3.0f64, r in 0.0..5.0f64, cap in 0.0..5.0f64) {
        let e = kkt_allocation(mu, xi, r, cap);
        prop_assert!((0.0..=cap).contains(&e));
    }

    #[test]
    fn dual_solutions_are_feasible_and_bounded(p in problem_strategy(4, 4)) {
        for update in [MultiplierUpdate::Newton, MultiplierUpdate::Subgradient] {
            let cfg = SolverConfig { update, max_iters: 400, ..SolverConfig::default() };
            let sol = solve_dual(&p, &cfg).unwrap();
            prop_assert!(sol.feasible);
            prop_assert!(is_feasible(&sol.allocation, &p));
            let tol = p.tolerance();
            for l in 0..p.num_aps() {
                prop_assert!(sol.allocation.column(l).sum() <= p.capacity[l] + tol);
            }
            for k in 0..p.num_users() {
                let t = sol.allocation.row(k).sum();
                prop_assert!(t >= p.e_min[k] - tol && t <= p.e_max[k] + tol);
            }
            // weak duality, up to the utility a tolerance-feasible point can
            // gain: dU/de <= max(xi r) per entry, off by <= tol per constraint
            let kappa = (0..p.num_users())
                .flat_map(|k| (0..p.num_aps()).map(move |l| (k, l)))
                .map(|(k, l)| p.rates[(k, l)] * p.weights[k])
                .fold(0.0, f64::max);
            let slack = kappa * tol * (p.num_users() + p.num_aps()) as f64;
            let bound = sol.dual_bound.unwrap();
            prop_assert!(bound >= sol.utility - slack - 1e-12, "bound {} utility {}", bound, sol.utility);
            // best-so-far trace never decreases
            let finite: Vec<f64> = sol.trace.iter().map(|t| t.utility).filter(|u| u.is_finite()).collect();
            prop_assert!(finite.windows(2).all(|w| w[1] >= w[0]));
            let uniform = uniform_allocation(&p);
            if uniform.feasible {
                prop_assert!(sol.utility >= uniform.utility - 1e-6 * uniform.utility.abs().max(1.0));
            }
        }
    }
}
