use std::collections::BTreeSet;

use helpgrid_core::agents::{AgentKind, AgentProfile, NoiseProfile};
use helpgrid_core::codec::{encode_diff, parse_utterance, ParseMode};
use helpgrid_core::corpus::generate_synthetic;
use helpgrid_core::help::{HelpContext, HelpPayload};
use helpgrid_core::metrics::{iglu_reward, penalized_distance, rotate_quarter};
use helpgrid_core::regions::{RegionScheme, SchemeKind};
use helpgrid_core::{Coordinate, GridBounds, GridDiff, GridState};
use proptest::prelude::*;

fn cell() -> impl Strategy<Value = Coordinate> {
    (-5..=5i32, 0..=8i32, -5..=5i32).prop_map(|(x, y, z)| Coordinate::new(x, y, z))
}

fn blocks(max: usize) -> impl Strategy<Value = BTreeSet<Coordinate>> {
    prop::collection::btree_set(cell(), 0..=max)
}

proptest! {
    #[test]
    fn codec_roundtrip(set in blocks(20)) {
        let d = GridDiff::additions(set);
        let text = encode_diff(&d).unwrap();
        prop_assert_eq!(parse_utterance(&text, GridBounds::default(), ParseMode::Strict).unwrap(), d);
    }

    #[test]
    fn grid_diff_roundtrip(before in blocks(10), after in blocks(10)) {
        let b = GridBounds::default();
        let g0 = GridState::new(b, before).unwrap();
        let g1 = GridState::new(b, after).unwrap();
        let d = g0.diff_to(&g1).unwrap();
        prop_assert_eq!(&g0.apply(&d).unwrap(), &g1);
        let json = serde_json::to_string(&g1).unwrap();
        prop_assert_eq!(serde_json::from_str::<GridState>(&json).unwrap(), g0.apply(&d).unwrap());
    }

    #[test]
    fn reward_invariant_under_shift_and_turn(gold in blocks(5), k in 0u8..4, dx in -3..=3i32, dz in -3..=3i32) {
        let b = GridBounds::default();
        let g = GridDiff::additions(gold.iter().copied());
        let moved: BTreeSet<Coordinate> = gold.iter().map(|&c| rotate_quarter(c, k, b).offset(dx, 0, dz)).collect();
        // Only compare when the moved copy stays inside the grid.
        prop_assume!(moved.iter().all(|&c| b.contains(c)));
        let m = GridDiff::additions(moved);
        prop_assert_eq!(iglu_reward(&m, &g, b), gold.len() as f64);
        prop_assert_eq!(iglu_reward(&m, &g, b), iglu_reward(&g, &m, b));
    }

    #[test]
    fn reward_bounded_by_sizes(pred in blocks(6), gold in blocks(6)) {
        let r = iglu_reward(&GridDiff::additions(pred.clone()), &GridDiff::additions(gold.clone()), GridBounds::default());
        prop_assert!(r <= pred.len().min(gold.len()) as f64);
    }

    #[test]
    fn zero_distance_means_exact_placement(pred in blocks(4), gold in prop::collection::btree_set(cell(), 1..=4)) {
        let d = penalized_distance(&GridDiff::additions(pred.clone()), &GridDiff::additions(gold.clone())).unwrap();
        let exact = !pred.is_empty() && pred.is_subset(&gold) && pred.len() == gold.len();
        prop_assert_eq!(d == 0.0, exact);
    }

    #[test]
    fn every_cell_has_one_region(c in cell(), kind in prop::sample::select(vec![SchemeKind::Quad4, SchemeKind::CenterSplit8, SchemeKind::CenterSplit12])) {
        let s = RegionScheme::new(kind);
        let b = GridBounds::default();
        let hits = s.regions().iter().filter(|r| s.contains(r, c, b)).count();
        prop_assert_eq!(hits, 1);
    }

    #[test]
    fn oracle_help_is_sound(pred in blocks(6), gold in prop::collection::btree_set(cell(), 1..=6), seed in any::<u64>()) {
        let ctx = HelpContext::default();
        let (p, g) = (GridDiff::additions(pred.clone()), GridDiff::additions(gold.clone()));
        let r = ctx.restrictive_oracle(&g, seed).unwrap();
        let HelpPayload::Restrictive { region } = &r.payload else { unreachable!() };
        prop_assert!(gold.iter().any(|&c| ctx.scheme.contains(region, c, ctx.bounds)));
        let HelpPayload::Mistake { count } = ctx.mistake_oracle(&p, &g, seed).unwrap().payload else { unreachable!() };
        prop_assert!(count.matches(pred.difference(&gold).count()));
        // The canonical utterance normalizes back to the same help.
        prop_assert_eq!(ctx.normalize(&r.utterance).unwrap().payload, r.payload);
    }
}

#[test]
fn help_aware_restrictive_is_hard_on_every_scheme() {
    for kind in [SchemeKind::Quad4, SchemeKind::CenterSplit8, SchemeKind::CenterSplit12] {
        let ctx = HelpContext {
            scheme: RegionScheme::new(kind),
            ..HelpContext::default()
        };
        let builder = AgentProfile::new(AgentKind::HelpAwareNoisy, NoiseProfile::default(), 9)
            .build(ctx.scheme)
            .unwrap();
        for e in generate_synthetic(31, 150, &[], GridBounds::default()) {
            for region in ctx.scheme.regions() {
                let help = ctx.message(HelpPayload::Restrictive { region: region.clone() }, 0).unwrap();
                let pred = builder.predict_diff(&e, Some(&help));
                assert!(pred.added().iter().all(|&c| ctx.scheme.contains(&region, c, ctx.bounds)), "{} {region}", e.id);
                assert!(pred.added().iter().all(|&c| !e.grid_before.is_occupied(c)));
            }
        }
    }
}
