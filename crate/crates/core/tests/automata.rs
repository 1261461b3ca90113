mod common;

use lstm_fsa::validation::accepts;
use lstm_fsa::{build_from_ids, determinize, minimize, Dfa, NodeId, StepLabel, Symbol};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const DFA_SYMBOLS: [usize; 3] = [0, 1, 2];

#[test]
fn minimization_preserves_language_and_is_minimal() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for case in 0..100 {
        let d = common::random_dfa(&mut rng, 8, 3);
        let m = minimize(&d).unwrap();
        assert_eq!(common::disagreement(&d, &m, &DFA_SYMBOLS, 12), None, "case {case}");
        assert_eq!(m.len(), common::minimal_state_count(&d), "case {case}");
        assert!(common::isomorphic(&minimize(&m).unwrap(), &m), "case {case}");
        assert_eq!(m.start, 0);
    }
}

#[test]
fn subset_construction_preserves_language() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let symbols: Vec<usize> = common::NFA_SYMBOLS.iter().map(|s| s.index()).collect();
    for case in 0..100 {
        let a = common::random_nfa(&mut rng, 6);
        let nfa = common::BitNfa::new(&a);
        let d = determinize(&a);
        d.validate().unwrap();
        let mut mismatch = None;
        common::enumerate(
            &symbols,
            10,
            (d.start, common::NFA_START),
            &mut |&(q, set), s| (d.transitions[q][s], nfa.step(set, s)),
            &mut |w, &(q, set)| {
                if d.accepting[q] != nfa.accepting(set) {
                    mismatch = Some(w.to_vec());
                }
                mismatch.is_none()
            },
        );
        assert_eq!(mismatch, None, "case {case}");
    }
}

#[test]
fn trash_absorbs_and_stays_last_resort() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..50 {
        let a = common::random_nfa(&mut rng, 6);
        let d = determinize(&a);
        if let Some(t) = d.trash {
            assert!(d.transitions[t].iter().all(|&x| x == t));
            assert!(!d.accepting[t]);
            assert_eq!(d.labels[t].to_string(), "-2");
        }
    }
}

fn trace_strategy() -> impl Strategy<Value = (Vec<StepLabel>, Vec<usize>, Vec<NodeId>)> {
    (1usize..6, 1usize..40).prop_flat_map(|(k, n)| {
        (
            prop::collection::vec((0..Symbol::COUNT, 0..k as NodeId), n),
            prop::collection::vec(0..n, 0..4),
        )
            .prop_map(move |(steps, cuts)| {
                let mut boundaries: Vec<usize> = cuts;
                boundaries.push(0);
                boundaries.sort_unstable();
                boundaries.dedup();
                let labels = steps
                    .iter()
                    .enumerate()
                    .map(|(t, &(s, _))| StepLabel::new(Symbol::ALL[s], t))
                    .collect();
                let ids = steps.iter().map(|&(_, id)| id).collect();
                (labels, boundaries, ids)
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn construction_is_deterministic_and_conserves_weight(
        (labels, boundaries, ids) in trace_strategy(),
        flow in any::<bool>(),
    ) {
        let a = build_from_ids(&labels, &boundaries, &ids, flow).unwrap();
        let b = build_from_ids(&labels, &boundaries, &ids, flow).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(a.total_weight(), labels.len());
        for e in a.edges.values() {
            prop_assert_eq!(e.long_label.len(), e.weight);
            let short: std::collections::BTreeSet<Symbol> = e.long_label.iter().map(|l| l.symbol).collect();
            prop_assert_eq!(&short, &e.short_label);
        }
    }

    #[test]
    fn extraction_pipeline_preserves_language(
        (labels, boundaries, ids) in trace_strategy(),
        flow in any::<bool>(),
    ) {
        let a = build_from_ids(&labels, &boundaries, &ids, flow).unwrap();
        let d = determinize(&a);
        let m = minimize(&d).unwrap();
        let all: Vec<usize> = (0..Symbol::COUNT).collect();
        // length 5 over seven symbols keeps each case under 20k words
        prop_assert_eq!(common::disagreement(&d, &m, &all, 5), None);
        prop_assert!(common::isomorphic(&minimize(&m).unwrap(), &m));
        prop_assert_eq!(m.len(), common::minimal_state_count(&d));

        // accepting states are reachable and not dead
        let reach = m.reachable();
        let alive = m.live_states();
        for q in 0..m.len() {
            if m.accepting[q] {
                prop_assert!(reach.contains(&q));
                prop_assert!(alive[q]);
            }
        }
        if let Some(t) = m.trash {
            prop_assert!(!alive[t]);
            prop_assert_eq!(m.labels[t].to_string(), "-2");
        }
    }

    #[test]
    fn acceptance_is_pure(
        (labels, boundaries, ids) in trace_strategy(),
        flow in any::<bool>(),
        word in prop::collection::vec(0..Symbol::COUNT, 0..10),
    ) {
        let m = minimize(&determinize(&build_from_ids(&labels, &boundaries, &ids, flow).unwrap())).unwrap();
        let mut s = vec![Symbol::B];
        s.extend(word.iter().map(|&i| Symbol::ALL[i]));
        s.push(Symbol::E);
        let first = accepts(&m, &s).unwrap();
        prop_assert_eq!(first, accepts(&m, &s).unwrap());
        if first.accepted {
            prop_assert_eq!(first.consumed, s.len());
            prop_assert!(first.end_check_passed);
        }
    }

    #[test]
    fn json_round_trips(
        (labels, boundaries, ids) in trace_strategy(),
        flow in any::<bool>(),
    ) {
        let a = build_from_ids(&labels, &boundaries, &ids, flow).unwrap();
        prop_assert_eq!(&lstm_fsa::ExtractedAutomaton::from_json(&a.to_json().unwrap()).unwrap(), &a);
        let m = minimize(&determinize(&a)).unwrap();
        prop_assert_eq!(&Dfa::from_json(&m.to_json().unwrap()).unwrap(), &m);
    }
}
