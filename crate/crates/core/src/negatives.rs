//! Hard negatives: swap the event type for a confusable one, or reassign the
//! argument roles.

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{ConfusionMatrix, CorpusRecord};
use crate::error::{Error, Result};
use crate::ontology::Ontology;
use crate::seed;
use crate::types::{Argument, EventStructure};

/// How a negative was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    /// Drawn from the gold row of a confusion matrix.
    Confusion,
    /// Gold row had no off-diagonal mass; drawn uniformly.
    UniformFallback,
    RightRotation,
    /// Single argument given a role of the same event type from the role
    /// confusion row.
    RoleConfusionSameType,
    /// Single argument given a role of another event type from the role
    /// confusion row.
    RoleConfusionAnyType,
    RoleUniformFallback,
    /// No arguments, so no argument negative exists.
    Degenerate,
}

impl Rule {
    pub fn is_fallback(&self) -> bool {
        matches!(
            self,
            Rule::UniformFallback | Rule::RoleUniformFallback | Rule::Degenerate
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub event: Rule,
    pub arguments: Rule,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NegativePair {
    pub positive: EventStructure,
    pub negative_event: EventStructure,
    /// `None` when the event has no arguments.
    pub negative_args: Option<EventStructure>,
    pub provenance: Provenance,
}

fn draw(candidates: &[(String, u64)], seed: u64) -> Option<String> {
    let dist = WeightedIndex::new(candidates.iter().map(|(_, w)| *w)).ok()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Some(candidates[dist.sample(&mut rng)].0.clone())
}

fn draw_uniform(candidates: &[String], seed: u64) -> Option<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    candidates.choose(&mut rng).cloned()
}

fn off_diagonal(gold: &str, cm: &ConfusionMatrix) -> Result<Vec<(String, u64)>> {
    let row = cm
        .row(gold)
        .ok_or_else(|| Error::UnknownLabel(gold.to_string()))?;
    Ok(cm
        .labels
        .iter()
        .zip(row)
        .filter(|(l, &c)| *l != gold && c > 0)
        .map(|(l, &c)| (l.clone(), c))
        .collect())
}

/// A label other than `gold`, drawn proportionally to the off-diagonal
/// entries of `gold`'s confusion row.
pub fn sample_negative_type(gold: &str, cm: &ConfusionMatrix, seed: u64) -> Result<(String, Rule)> {
    let weighted = off_diagonal(gold, cm)?;
    if let Some(label) = draw(&weighted, seed) {
        return Ok((label, Rule::Confusion));
    }
    let others: Vec<String> = cm.labels.iter().filter(|l| *l != gold).cloned().collect();
    match draw_uniform(&others, seed) {
        Some(label) => {
            log::warn!("confusion row for `{gold}` is empty off the diagonal; sampling uniformly");
            Ok((label, Rule::UniformFallback))
        }
        None => Err(Error::NotApplicable(format!(
            "no label other than `{gold}` to sample"
        ))),
    }
}

/// Right-rotate the role sequence by one while entities keep their
/// positions: entity `i` takes role `i - 1 (mod k)`.
pub fn rotate_arguments(ev: &EventStructure) -> Result<EventStructure> {
    let k = ev.arguments.len();
    if k < 2 {
        return Err(Error::NotApplicable(format!(
            "rotation needs at least 2 arguments, `{}` has {k}",
            ev.event_type
        )));
    }
    let mut out = ev.clone();
    for (i, arg) in out.arguments.iter_mut().enumerate() {
        arg.role = ev.arguments[(i + k - 1) % k].role.clone();
    }
    Ok(out)
}

/// Give the only argument of `ev` a different role, drawn from its row of
/// the role confusion matrix. Roles of the same event type are preferred.
pub fn sample_negative_role(
    ev: &EventStructure,
    arg_cm: &ConfusionMatrix,
    ont: &Ontology,
    seed: u64,
) -> Result<(EventStructure, Rule)> {
    if ev.arguments.len() != 1 {
        return Err(Error::NotApplicable(format!(
            "role sampling needs exactly 1 argument, got {}",
            ev.arguments.len()
        )));
    }
    let gold = ev.arguments[0].role.as_str();
    let own: &[String] = ont.roles(&ev.event_type).unwrap_or(&[]);
    let weighted: Vec<(String, u64)> = off_diagonal(gold, arg_cm)?
        .into_iter()
        .filter(|(r, _)| ont.is_known_role(r))
        .collect();
    let same: Vec<(String, u64)> = weighted
        .iter()
        .filter(|(r, _)| own.contains(r))
        .cloned()
        .collect();
    let (role, rule) = if let Some(r) = draw(&same, seed) {
        (r, Rule::RoleConfusionSameType)
    } else if let Some(r) = draw(&weighted, seed) {
        (r, Rule::RoleConfusionAnyType)
    } else {
        let mut pool: Vec<String> = own.iter().filter(|r| *r != gold).cloned().collect();
        if pool.is_empty() {
            pool = ont
                .event_types
                .iter()
                .flat_map(|e| e.roles.iter())
                .filter(|r| *r != gold)
                .cloned()
                .collect();
            pool.sort();
            pool.dedup();
        }
        let r = draw_uniform(&pool, seed)
            .ok_or_else(|| Error::NotApplicable(format!("no role other than `{gold}`")))?;
        log::warn!("no confusable role for `{gold}`; sampling uniformly");
        (r, Rule::RoleUniformFallback)
    };
    let mut out = ev.clone();
    out.arguments[0].role = role;
    Ok((out, rule))
}

/// Re-type `ev` as `new_type`. Each argument keeps its slot position: the
/// argument in the old type's k-th role takes the new type's k-th role, and
/// arguments past the end of the new role list are dropped.
pub fn retype_event(ev: &EventStructure, new_type: &str, ont: &Ontology) -> Result<EventStructure> {
    let old_roles = ont
        .roles(&ev.event_type)
        .ok_or_else(|| Error::UnknownLabel(ev.event_type.clone()))?;
    let new_roles = ont
        .roles(new_type)
        .ok_or_else(|| Error::UnknownLabel(new_type.to_string()))?;
    let arguments = ev
        .arguments
        .iter()
        .filter_map(|a| {
            let k = old_roles.iter().position(|r| *r == a.role)?;
            new_roles.get(k).map(|r| Argument {
                role: r.clone(),
                entity: a.entity.clone(),
            })
        })
        .collect();
    Ok(EventStructure {
        event_type: new_type.to_string(),
        trigger: ev.trigger.clone(),
        arguments,
        dependency_depth: ev.dependency_depth,
    })
}

/// Both negatives for one event.
pub fn generate_negatives(
    ev: &EventStructure,
    event_cm: &ConfusionMatrix,
    arg_cm: &ConfusionMatrix,
    ont: &Ontology,
    seed: u64,
) -> Result<NegativePair> {
    let (neg_type, event_rule) =
        sample_negative_type(&ev.event_type, event_cm, seed::derive(seed, "type"))?;
    let negative_event = retype_event(ev, &neg_type, ont)?;
    let (negative_args, arg_rule) = match ev.arguments.len() {
        0 => (None, Rule::Degenerate),
        1 => {
            let (e, r) = sample_negative_role(ev, arg_cm, ont, seed::derive(seed, "role"))?;
            (Some(e), r)
        }
        _ => (Some(rotate_arguments(ev)?), Rule::RightRotation),
    };
    Ok(NegativePair {
        positive: ev.clone(),
        negative_event,
        negative_args,
        provenance: Provenance {
            event: event_rule,
            arguments: arg_rule,
        },
    })
}

/// `count` negative pairs for the record's event `event_index`, seeded from
/// `global_seed` and the record id.
pub fn negatives_for_record(
    record: &CorpusRecord,
    event_index: usize,
    event_cm: &ConfusionMatrix,
    arg_cm: &ConfusionMatrix,
    ont: &Ontology,
    global_seed: u64,
    count: usize,
) -> Result<Vec<NegativePair>> {
    let ev = record.events.get(event_index).ok_or_else(|| {
        Error::Precondition(format!("record `{}` has no event {event_index}", record.id))
    })?;
    let base = seed::derive(global_seed, &record.id);
    (0..count)
        .map(|k| {
            let s = if k == 0 {
                base
            } else {
                seed::derive(base, &k.to_string())
            };
            generate_negatives(ev, event_cm, arg_cm, ont, s)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{EntityMention, Span, Trigger};
    use proptest::prelude::*;
    use std::collections::HashMap;

    const CAPTION: &str = "Protesters carry an injured man in a stretcher.";

    fn running() -> EventStructure {
        let m = |s, e, t| EntityMention::from_caption(CAPTION, Span::new(s, e), t).unwrap();
        EventStructure {
            event_type: "Transport".into(),
            trigger: Trigger {
                span: Span::new(11, 16),
                text: "carry".into(),
            },
            arguments: vec![
                Argument {
                    role: "agent".into(),
                    entity: m(0, 10, "PER"),
                },
                Argument {
                    role: "entity".into(),
                    entity: m(17, 31, "PER"),
                },
                Argument {
                    role: "instrument".into(),
                    entity: m(35, 46, "VEH"),
                },
            ],
            dependency_depth: 0,
        }
    }

    fn cm(labels: &[&str], counts: Vec<Vec<u64>>) -> ConfusionMatrix {
        ConfusionMatrix::new(labels.iter().map(|s| s.to_string()).collect(), counts).unwrap()
    }

    fn frequencies(gold: &str, m: &ConfusionMatrix, n: u64) -> HashMap<String, f64> {
        let mut out = HashMap::new();
        for s in 0..n {
            let (l, _) = sample_negative_type(gold, m, seed::derive(99, &s.to_string())).unwrap();
            *out.entry(l).or_insert(0.0) += 1.0 / n as f64;
        }
        out
    }

    #[test]
    fn rotation_matches_worked_example() {
        let r = rotate_arguments(&running()).unwrap();
        let roles: Vec<&str> = r.roles().collect();
        assert_eq!(roles, ["instrument", "agent", "entity"]);
        assert_eq!(r.arguments[1].entity.text, "an injured man");
        assert_eq!(r.arguments[1].role, "agent");
        assert_eq!(r.arguments[0].entity.text, "Protesters");
    }

    #[test]
    fn rotating_a_pair_swaps() {
        let mut ev = running();
        ev.arguments.truncate(2);
        let r = rotate_arguments(&ev).unwrap();
        assert_eq!(r.roles().collect::<Vec<_>>(), ["entity", "agent"]);
        ev.arguments.truncate(1);
        assert!(matches!(
            rotate_arguments(&ev),
            Err(Error::NotApplicable(_))
        ));
    }

    #[test]
    fn confusion_row_drives_type_frequencies() {
        let m = cm(
            &["Transport", "Arrest", "Attack"],
            vec![vec![5, 3, 1], vec![0, 1, 0], vec![0, 0, 1]],
        );
        let f = frequencies("Transport", &m, 10_000);
        assert!((f["Arrest"] - 0.75).abs() < 0.02);
        assert!((f["Attack"] - 0.25).abs() < 0.02);
        assert!(!f.contains_key("Transport"));
    }

    #[test]
    fn forced_and_fallback_type_draws() {
        let m = cm(
            &["Transport", "Arrest", "Attack"],
            vec![vec![5, 3, 0], vec![0, 1, 0], vec![0, 0, 1]],
        );
        for s in 0..50 {
            assert_eq!(
                sample_negative_type("Transport", &m, s).unwrap(),
                ("Arrest".into(), Rule::Confusion)
            );
            let (l, rule) = sample_negative_type("Attack", &m, s).unwrap();
            assert_ne!(l, "Attack");
            assert_eq!(rule, Rule::UniformFallback);
        }
        assert!(matches!(
            sample_negative_type("Die", &m, 0),
            Err(Error::UnknownLabel(_))
        ));
    }

    #[test]
    fn type_draw_is_deterministic_given_seed() {
        let m = cm(
            &["A", "B", "C"],
            vec![vec![0, 1, 1], vec![1, 0, 1], vec![1, 1, 0]],
        );
        for s in 0..20 {
            assert_eq!(
                sample_negative_type("A", &m, s).unwrap(),
                sample_negative_type("A", &m, s).unwrap()
            );
        }
    }

    fn single_arg(ty: &str, role: &str) -> EventStructure {
        let mut ev = running();
        ev.event_type = ty.into();
        ev.arguments.truncate(1);
        ev.arguments[0].role = role.into();
        ev
    }

    #[test]
    fn role_sampling_follows_row() {
        let ont = Ontology::running_example();
        let m = cm(
            &["attacker", "target", "instrument"],
            vec![vec![1, 0, 0], vec![0, 1, 0], vec![1, 3, 2]],
        );
        let ev = single_arg("Attack", "instrument");
        let n = 10_000;
        let mut target = 0;
        for s in 0..n {
            let (out, rule) = sample_negative_role(&ev, &m, &ont, s).unwrap();
            assert_eq!(rule, Rule::RoleConfusionSameType);
            assert_ne!(out.arguments[0].role, "instrument");
            target += (out.arguments[0].role == "target") as u32;
        }
        assert!((target as f64 / n as f64 - 0.75).abs() < 0.02);

        let forced = cm(&["attacker", "target"], vec![vec![0, 4], vec![0, 1]]);
        let (out, _) =
            sample_negative_role(&single_arg("Attack", "attacker"), &forced, &ont, 3).unwrap();
        assert_eq!(out.arguments[0].role, "target");

        assert!(matches!(
            sample_negative_role(&running(), &m, &ont, 0),
            Err(Error::NotApplicable(_))
        ));
    }

    #[test]
    fn role_sampling_prefers_same_type_then_falls_back() {
        let ont = Ontology::running_example();
        // agent is confused with detainee (Arrest) and entity (Transport)
        let m = cm(
            &["agent", "detainee", "entity"],
            vec![vec![1, 9, 1], vec![0, 1, 0], vec![0, 0, 1]],
        );
        for s in 0..100 {
            let (out, _) =
                sample_negative_role(&single_arg("Transport", "agent"), &m, &ont, s).unwrap();
            assert_eq!(out.arguments[0].role, "entity");
        }
        let (out, rule) =
            sample_negative_role(&single_arg("Arrest", "detainee"), &m, &ont, 1).unwrap();
        assert_eq!(rule, Rule::RoleUniformFallback);
        assert!(["agent", "place"].contains(&out.arguments[0].role.as_str()));
    }

    #[test]
    fn retyping_keeps_slot_positions() {
        let ont = Ontology::running_example();
        let neg = retype_event(&running(), "Arrest", &ont).unwrap();
        let pairs: Vec<(&str, &str)> = neg
            .arguments
            .iter()
            .map(|a| (a.role.as_str(), a.entity.text.as_str()))
            .collect();
        assert_eq!(
            pairs,
            [
                ("agent", "Protesters"),
                ("detainee", "an injured man"),
                ("place", "a stretcher")
            ]
        );
        let mut wide = running();
        wide.arguments[2].role = "destination".into();
        assert_eq!(
            retype_event(&wide, "Arrest", &ont).unwrap().arguments.len(),
            2
        );
    }

    #[test]
    fn generated_pair_invariants() {
        let ont = Ontology::running_example();
        let ecm = cm(
            &["Transport", "Arrest", "Attack"],
            vec![vec![5, 3, 1], vec![2, 1, 0], vec![1, 1, 1]],
        );
        let acm = cm(&["agent", "entity"], vec![vec![1, 1], vec![1, 1]]);
        for s in 0..30 {
            let pair = generate_negatives(&running(), &ecm, &acm, &ont, s).unwrap();
            assert_ne!(pair.negative_event.event_type, "Transport");
            let args = pair.negative_args.unwrap();
            assert_ne!(args, pair.positive);
            assert_eq!(pair.provenance.arguments, Rule::RightRotation);
        }
        let mut bare = running();
        bare.arguments.clear();
        let pair = generate_negatives(&bare, &ecm, &acm, &ont, 0).unwrap();
        assert!(pair.negative_args.is_none());
        assert!(pair.provenance.arguments.is_fallback());
    }

    fn event_with(k: usize) -> EventStructure {
        let mut ev = running();
        let roles = ["agent", "entity", "instrument", "origin", "destination"];
        let base = ev.arguments[0].clone();
        ev.arguments = (0..k)
            .map(|i| Argument {
                role: roles[i].into(),
                entity: EntityMention {
                    text: format!("e{i}"),
                    ..base.entity.clone()
                },
            })
            .collect();
        ev
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn rotating_k_times_is_identity(k in 2usize..6) {
            let ev = event_with(k);
            let mut cur = ev.clone();
            for step in 1..=k {
                cur = rotate_arguments(&cur).unwrap();
                let mut a: Vec<_> = cur.roles().collect();
                let mut b: Vec<_> = ev.roles().collect();
                a.sort();
                b.sort();
                prop_assert_eq!(a, b);
                if step < k {
                    prop_assert_ne!(&cur, &ev);
                }
            }
            prop_assert_eq!(cur, ev);
        }

        #[test]
        fn sampled_type_distribution_matches_row(row in proptest::collection::vec(0u64..20, 5), seed0 in 0u64..1000) {
            let labels = ["A", "B", "C", "D", "E"];
            prop_assume!(row[1..].iter().sum::<u64>() > 0);
            let mut counts = vec![vec![1u64; 5]; 5];
            counts[0] = row.clone();
            let m = cm(&labels, counts);
            let total: u64 = row[1..].iter().sum();
            let n = 4000u64;
            let mut hits = [0u64; 5];
            for s in 0..n {
                let (l, _) = sample_negative_type("A", &m, seed::derive(seed0, &s.to_string())).unwrap();
                hits[labels.iter().position(|x| *x == l).unwrap()] += 1;
            }
            prop_assert_eq!(hits[0], 0);
            let tv: f64 = (1..5)
                .map(|j| (hits[j] as f64 / n as f64 - row[j] as f64 / total as f64).abs())
                .sum::<f64>() / 2.0;
            prop_assert!(tv < 0.05, "tv {}", tv);
        }
    }
}
