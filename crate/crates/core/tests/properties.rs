use std::sync::Arc;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use seval_core::dataset::extract_trajectory;
use seval_core::engine::{candidate_indices, random_rollout, sample_training_subsets, CandidateMode};
use seval_core::instance::{generate, makespan, parse_standard, validate_schedule};
use seval_core::oracle::{dispatch_solve, solve_exact, DispatchRule, SolveLimits};
use seval_core::state::{is_conflict_free, SchedState};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn random_rollouts_are_feasible(n in 1usize..7, m in 1usize..7, seed: u64, roll: u64) {
        let inst = Arc::new(generate(n, m, seed));
        let r = random_rollout(&inst, &mut ChaCha8Rng::seed_from_u64(roll)).unwrap();
        prop_assert!(validate_schedule(&inst, &r.schedule).is_empty());
        prop_assert!(r.steps >= 1 && r.steps <= inst.num_ops());
    }

    #[test]
    fn candidates_are_valid_and_maximal(n in 1usize..7, m in 1usize..7, seed: u64, logits in prop::collection::vec(-5.0f64..5.0, 7)) {
        let inst = Arc::new(generate(n, m, seed));
        let f = SchedState::new(inst).feasible_assignments().unwrap();
        let mut probs: Vec<f64> = logits[..f.len()].iter().map(|x| x.exp()).collect();
        let z: f64 = probs.iter().sum();
        probs.iter_mut().for_each(|p| *p /= z);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for c in candidate_indices(&probs, &f, 8, CandidateMode::Maximal, &mut rng) {
            prop_assert!(!c.is_empty() && is_conflict_free(&f, &c));
            for i in 0..f.len() {
                if !c.contains(&i) {
                    let mut more = c.clone();
                    more.push(i);
                    prop_assert!(!is_conflict_free(&f, &more));
                }
            }
        }
    }

    #[test]
    fn training_subset_scores_match_definition(n in 1usize..7, m in 1usize..7, seed: u64, mask in prop::collection::vec(any::<bool>(), 7)) {
        let inst = Arc::new(generate(n, m, seed));
        let f = SchedState::new(inst).feasible_assignments().unwrap();
        let opt = &mask[..f.len()];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (bits, score) in sample_training_subsets(&f, opt, &mut rng, 16) {
            let chosen: Vec<usize> = (0..bits.len()).filter(|&i| bits[i]).collect();
            prop_assert!(is_conflict_free(&f, &chosen));
            let hits = chosen.iter().filter(|&&i| opt[i]).count();
            prop_assert_eq!(score, hits as f64 / chosen.len() as f64);
        }
    }

    #[test]
    fn exact_never_loses_to_dispatch(n in 1usize..5, m in 1usize..5, seed: u64) {
        let inst = generate(n, m, seed);
        let best = solve_exact(&inst, SolveLimits::default()).makespan;
        for rule in DispatchRule::ALL {
            prop_assert!(best <= dispatch_solve(&inst, rule).makespan);
        }
        prop_assert!(best >= inst.trivial_lower_bound());
    }

    #[test]
    fn square_trajectories_replay_the_optimum(n in 1usize..5, seed: u64) {
        let inst = Arc::new(generate(n, n, seed));
        let sol = solve_exact(&inst, SolveLimits::default());
        let t = extract_trajectory(&inst, &sol.schedule).unwrap();
        let mut s = SchedState::new(inst.clone());
        for x in &t {
            s.apply_in_place(&x.optimal_subset().unwrap()).unwrap();
        }
        prop_assert_eq!(makespan(&inst, &s.to_schedule().unwrap()).unwrap(), sol.makespan);
    }

    #[test]
    fn parser_never_panics(text in "[0-9 \\n]{0,40}") {
        let _ = parse_standard(&text);
    }
}
