use std::collections::BTreeMap;

use proptest::prelude::*;
use valor_core::agents::{
    adjudicate_reference, compute_vote_summary, AlignmentFactors, ChosenAnswer, DecisionPath, PersonaOutput,
    PersonaStatus,
};
use valor_core::evaluation::{accuracy, binarize, holm_adjust, mae};
use valor_core::sampling::{kmeans, KMeansOptions};

#[derive(Debug, Clone)]
struct Spec {
    value: usize,
    cites: bool,
    values: bool,
    edges: bool,
    ok: bool,
    age: usize,
    country: usize,
}

fn spec() -> impl Strategy<Value = Spec> {
    (0..4usize, any::<bool>(), any::<bool>(), any::<bool>(), prop::bool::weighted(0.85), 0..3usize, 0..2usize).prop_map(
        |(value, cites, values, edges, ok, age, country)| Spec {
            value,
            cites,
            values,
            edges,
            ok,
            age,
            country,
        },
    )
}

fn build(s: &Spec, value_override: Option<usize>) -> PersonaOutput {
    let value = value_override.unwrap_or(s.value).to_string();
    PersonaOutput {
        persona_id: format!("P{}{}", s.age, s.country),
        status: if s.ok { PersonaStatus::Ok } else { PersonaStatus::Failed },
        chosen_answer: s.ok.then(|| ChosenAnswer {
            option_text: format!("Option {value}"),
            option_value: value,
        }),
        reasoning: String::new(),
        alignment_factors: s.ok.then(|| AlignmentFactors {
            demographic: if s.cites { "age and country".into() } else { "age".into() },
            value_summaries_used: if s.values { vec!["v".into()] } else { vec![] },
            hyper_edges_used: if s.edges { vec!["e".into()] } else { vec![] },
            integration_rationale: String::new(),
        }),
        demographics: [
            ("age".to_string(), ["30", "41", "55"][s.age].to_string()),
            ("country".to_string(), ["DE", "BR"][s.country].to_string()),
        ]
        .into_iter()
        .collect(),
        warnings: vec![],
        failure: (!s.ok).then(|| "bad".to_string()),
        calls: vec![],
    }
}

fn target() -> BTreeMap<String, String> {
    [("age", "30"), ("country", "DE")].iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
}

fn evidence(s: &Spec) -> u32 {
    if !s.ok {
        return 0;
    }
    u32::from(s.cites) + u32::from(s.values) + u32::from(s.edges)
}

proptest! {
    #[test]
    fn adjudication_ignores_persona_order(specs in prop::collection::vec(spec(), 1..9), seed in any::<u64>(), delta in 0u32..3) {
        prop_assume!(specs.iter().any(|s| s.ok));
        let outputs: Vec<PersonaOutput> = specs.iter().map(|s| build(s, None)).collect();
        let mut shuffled = outputs.clone();
        let n = shuffled.len();
        for i in 0..n {
            let j = (seed.wrapping_mul(i as u64 + 1) % n as u64) as usize;
            shuffled.swap(i, j);
        }
        let a = adjudicate_reference(&outputs, &compute_vote_summary(&outputs), &target(), delta).unwrap();
        let b = adjudicate_reference(&shuffled, &compute_vote_summary(&shuffled), &target(), delta).unwrap();
        prop_assert_eq!(a.final_answer, b.final_answer);
        prop_assert_eq!(a.decision_path, b.decision_path);
    }

    #[test]
    fn unanimous_sets_keep_their_answer(specs in prop::collection::vec(spec(), 1..9), value in 0usize..4, delta in 0u32..3) {
        prop_assume!(specs.iter().any(|s| s.ok));
        let outputs: Vec<PersonaOutput> = specs.iter().map(|s| build(s, Some(value))).collect();
        let j = adjudicate_reference(&outputs, &compute_vote_summary(&outputs), &target(), delta).unwrap();
        prop_assert_eq!(j.final_answer.option_value, value.to_string());
    }

    #[test]
    fn vote_only_decides_near_ties(specs in prop::collection::vec(spec(), 1..9), delta in 0u32..3) {
        prop_assume!(specs.iter().any(|s| s.ok));
        let outputs: Vec<PersonaOutput> = specs.iter().map(|s| build(s, None)).collect();
        let j = adjudicate_reference(&outputs, &compute_vote_summary(&outputs), &target(), delta).unwrap();
        let mut per_option: BTreeMap<usize, u32> = BTreeMap::new();
        for s in specs.iter().filter(|s| s.ok) {
            *per_option.entry(s.value).or_default() += evidence(s);
        }
        let mut ev: Vec<u32> = per_option.values().copied().collect();
        ev.sort_unstable_by(|a, b| b.cmp(a));
        if j.decision_path == DecisionPath::Vote {
            prop_assert!(ev.len() > 1 && ev[0] - ev[1] <= delta);
        }
    }

    #[test]
    fn holm_is_monotone_and_bounded(raw in prop::collection::vec(0.0f64..=1.0, 1..20)) {
        let adj = holm_adjust(&raw);
        prop_assert_eq!(adj.len(), raw.len());
        for i in 0..raw.len() {
            prop_assert!(adj[i] >= raw[i] && adj[i] <= 1.0);
            for j in 0..raw.len() {
                if raw[i] <= raw[j] {
                    prop_assert!(adj[i] <= adj[j]);
                }
            }
        }
    }

    #[test]
    fn binarize_is_monotone(lo in -5i32..5, span in 1i32..12, a in 0i32..12, b in 0i32..12) {
        let hi = lo + span;
        let (a, b) = (lo + a.min(span), lo + b.min(span));
        let ba = binarize(f64::from(a), f64::from(lo), f64::from(hi)).unwrap();
        let bb = binarize(f64::from(b), f64::from(lo), f64::from(hi)).unwrap();
        if a <= b {
            prop_assert!(ba <= bb);
        }
    }

    #[test]
    fn accuracy_complements_binary_mae(pairs in prop::collection::vec((0u8..2, 0u8..2), 1..50)) {
        let (p, g): (Vec<u8>, Vec<u8>) = pairs.into_iter().unzip();
        let pf: Vec<f64> = p.iter().map(|&x| f64::from(x)).collect();
        let gf: Vec<f64> = g.iter().map(|&x| f64::from(x)).collect();
        let acc = accuracy(&p, &g).unwrap();
        let err = mae(&pf, &gf).unwrap();
        prop_assert!((acc + err - 1.0).abs() < 1e-12);
    }

    #[test]
    fn kmeans_objective_never_rises(
        points in prop::collection::vec(prop::collection::vec(-10.0f64..10.0, 2), 2..40),
        k in 1usize..6,
        seed in any::<u64>(),
    ) {
        let k = k.min(points.len());
        let opts = KMeansOptions::default();
        let r = kmeans(&points, k, seed, &opts).unwrap();
        for w in r.objective_history.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-9 * w[0].max(1.0));
        }
        prop_assert_eq!(kmeans(&points, k, seed, &opts).unwrap(), r);
    }
}
