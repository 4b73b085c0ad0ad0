//! Property tests for the library's module invariants.

use proptest::prelude::*;

use noptc::prune::{self, SparsitySchedule};
use noptc::quant;
use noptc::{arith, corpus, serdes, structure};

fn corpus_target() -> impl Strategy<Value = &'static str> {
    prop::sample::select(corpus::TARGETS.to_vec())
}

proptest! {
    // quantization to a symmetric Q-bit grid is a projection: applying it
    // twice equals applying it once, and in-range error is at most half a step
    #[test]
    fn symmetric_quantizer_projects(w in -4.0f64..4.0, q in 2u8..=8) {
        let (code, val) = quant::quantize_symmetric_one(w, q);
        let (code2, val2) = quant::quantize_symmetric_one(val, q);
        prop_assert_eq!((code, val), (code2, val2));
        let half_step = 2f64.powi(-(q as i32));
        if (-1.0..1.0 - half_step).contains(&w) {
            prop_assert!((val - w).abs() <= half_step + 1e-15);
        }
        prop_assert!((-1.0..1.0).contains(&val) || val == -1.0);
    }

    // asymmetric range quantization reconstructs any in-range value to
    // within half a scale step
    #[test]
    fn asymmetric_round_trip_bounded(lo in -10.0f64..0.0, width in 1e-3f64..20.0, t in 0.0f64..1.0) {
        let hi = lo + width;
        let params = quant::asymmetric_params_for_range(lo, hi);
        let v = lo + t * width;
        let code = quant::encode_value(v, &params, 0);
        let back = quant::decode_value(code, &params, 0);
        prop_assert!((back - v).abs() <= params.scales[0] / 2.0 + 1e-12);
    }

    // the sparsity ramp never decreases and stays inside [s_initial, s_final]
    #[test]
    fn schedule_monotone_and_bounded(
        s_i in 0.0f64..0.5,
        extra in 0.01f64..0.5,
        t0 in 0u64..100,
        spans in 1u64..20,
    ) {
        let s_f = s_i + extra;
        let s = SparsitySchedule::new(s_i, s_f, t0, 10, spans * 10).unwrap();
        let mut prev = -1.0f64;
        for t in 0..(t0 + spans * 10 + 25) {
            let v = s.sparsity_at(t);
            prop_assert!(v >= prev - 1e-15);
            prop_assert!((s_i - 1e-15..=s_f + 1e-15).contains(&v));
            prev = v;
        }
    }

    // magnitude masks hit the ceil'd target count and never revive weights
    // as the target grows
    #[test]
    fn masks_monotone_under_growing_target(
        weights in prop::collection::vec(-10.0f64..10.0, 4..64),
        steps in prop::collection::vec(0.0f64..1.0, 1..6),
    ) {
        let mut mask = vec![1u8; weights.len()];
        let mut targets = steps;
        targets.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut prev_mask = mask.clone();
        for &t in &targets {
            prune::update_mask(&weights, &mut mask, t);
            let zeroed = mask.iter().filter(|&&m| m == 0).count();
            prop_assert_eq!(zeroed, (t * weights.len() as f64).ceil() as usize);
            for (a, b) in prev_mask.iter().zip(&mask) {
                prop_assert!(b <= a, "a pruned weight came back");
            }
            prev_mask = mask.clone();
        }
    }

    // fake quantization is idempotent and bounded by the grid step
    #[test]
    fn fake_quant_projects(x in -5.0f64..5.0, lo in -3.0f64..0.0, width in 0.1f64..6.0, bits in 2u32..=8) {
        let hi = lo + width;
        let y = prune::fake_quant_forward(x, lo, hi, bits);
        prop_assert_eq!(prune::fake_quant_forward(y, lo, hi, bits), y);
        let step = width / (2f64.powi(bits as i32) - 1.0);
        prop_assert!((y - x.clamp(lo, hi)).abs() <= step / 2.0 + 1e-12);
    }

    // serialization is deterministic and lossless on every corpus generator
    #[test]
    fn serdes_round_trip(target in corpus_target(), seed in 0u64..500) {
        let g = corpus::gen_for_target(&corpus::GraphGenSpec::new(target, seed)).unwrap();
        let a = serdes::serialize(&g);
        let b = serdes::serialize(&g);
        prop_assert_eq!(&a.bytes, &b.bytes);
        prop_assert_eq!(serdes::deserialize(&a.bytes).unwrap(), g);
    }

    // the arithmetic fixpoint driver never increases the graph cost model
    // and is deterministic
    #[test]
    fn fixpoint_cost_non_increasing(target in corpus_target(), seed in 0u64..200) {
        let g = corpus::gen_for_target(&corpus::GraphGenSpec::new(target, seed)).unwrap();
        let rules = arith::default_rules();
        let (opt1, _) = arith::simplify_to_fixpoint(&g, &rules, arith::DEFAULT_MAX_ITERS).unwrap();
        let (opt2, _) = arith::simplify_to_fixpoint(&g, &rules, arith::DEFAULT_MAX_ITERS).unwrap();
        prop_assert_eq!(&opt1, &opt2);
        prop_assert!(arith::CostModel::cost(&opt1) <= arith::CostModel::cost(&g));
    }

    // structural passes keep the graph valid and never add operators
    #[test]
    fn structure_passes_shrink(target in corpus_target(), seed in 0u64..200) {
        let g = corpus::gen_for_target(&corpus::GraphGenSpec::new(target, seed)).unwrap();
        let before = g.total_operator_count();
        let mut opt = g;
        for pass in structure::default_passes() {
            structure::apply_pass(&pass, &mut opt).unwrap();
        }
        opt.validate().unwrap();
        prop_assert!(opt.total_operator_count() <= before);
    }
}
