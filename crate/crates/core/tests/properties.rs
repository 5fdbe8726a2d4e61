use proptest::prelude::*;
use rustfft::FftPlanner;

use vibrotact::dsp::{dft321, limit_value, process_trace, PipelineConfig, Reduction};
use vibrotact::evaluation::{accuracy, sus_score, ConfusionMatrix, SusResponse};
use vibrotact::psychophysics::{build_plan, longest_run};
use vibrotact::rng::derive_seed;
use vibrotact::statfit::{fit_probit, jnd, pse, FitDataset};
use vibrotact::texture::{read_trace, write_trace, AccelTrace, Ladder};

fn trace_strategy(max_len: usize) -> impl Strategy<Value = AccelTrace> {
    prop::collection::vec((-20.0f64..20.0, -20.0f64..20.0, -20.0f64..20.0), 16..max_len).prop_map(|v| {
        let ax: Vec<f64> = v.iter().map(|s| s.0).collect();
        let ay: Vec<f64> = v.iter().map(|s| s.1).collect();
        let az: Vec<f64> = v.iter().map(|s| s.2).collect();
        AccelTrace::from_axes(0.0, 2000.0, &ax, &ay, &az).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn dft321_preserves_energy(v in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0, -5.0f64..5.0), 1..200)) {
        let ax: Vec<f64> = v.iter().map(|s| s.0).collect();
        let ay: Vec<f64> = v.iter().map(|s| s.1).collect();
        let az: Vec<f64> = v.iter().map(|s| s.2).collect();
        let out = dft321(&ax, &ay, &az, &mut FftPlanner::new());
        let e_in: f64 = ax.iter().chain(&ay).chain(&az).map(|x| x * x).sum();
        let e_out: f64 = out.iter().map(|x| x * x).sum();
        prop_assert!((e_in - e_out).abs() <= 1e-9 * e_in.max(1.0));
    }

    #[test]
    fn limiter_is_bounded_and_idempotent(x in prop::num::f64::ANY, ceiling in 0.1f64..100.0) {
        let y = limit_value(x, ceiling);
        prop_assert!(y.abs() <= ceiling);
        prop_assert_eq!(limit_value(y, ceiling), y);
        if x.is_finite() && x.abs() <= ceiling {
            prop_assert_eq!(y, x);
        }
    }

    #[test]
    fn duty_stays_in_range(trace in trace_strategy(600), duty_max in 0.05f64..1.0, k in 0.01f64..5.0, dft in any::<bool>()) {
        let cfg = PipelineConfig {
            duty_max,
            scale_k: k,
            reduction: if dft { Reduction::Dft321 } else { Reduction::Magnitude },
            ..PipelineConfig::default()
        };
        let run = process_trace(&trace, &cfg, None).unwrap();
        prop_assert!(run.pwm.frames.iter().all(|f| (0.0..=duty_max).contains(&f.duty)));
        prop_assert_eq!(run.carrier.len(), trace.len());
    }

    #[test]
    fn chunking_never_changes_output(trace in trace_strategy(900), chunk in 1usize..300, dft in any::<bool>()) {
        let cfg = PipelineConfig {
            reduction: if dft { Reduction::Dft321 } else { Reduction::Magnitude },
            dft_block: 64,
            ..PipelineConfig::default()
        };
        let batch = process_trace(&trace, &cfg, None).unwrap();
        let chunked = process_trace(&trace, &cfg, Some(chunk)).unwrap();
        prop_assert_eq!(batch.pwm, chunked.pwm);
        prop_assert_eq!(batch.carrier.values, chunked.carrier.values);
    }

    #[test]
    fn trace_csv_round_trips(trace in trace_strategy(100)) {
        let mut buf = Vec::new();
        write_trace(&trace, &mut buf).unwrap();
        let back = read_trace(buf.as_slice()).unwrap();
        prop_assert_eq!(back.samples(), trace.samples());
        prop_assert_eq!(back.rate_hz(), trace.rate_hz());
    }

    #[test]
    fn jnd_and_pse_follow_their_definitions(b0 in -10.0f64..10.0, b1 in 1e-4f64..1.0) {
        prop_assert_eq!(jnd(b1).unwrap(), 1.0 / b1);
        prop_assert_eq!(pse(b0, b1).unwrap(), -b0 / b1);
        prop_assert!(jnd(-b1).is_err());
    }

    #[test]
    fn plans_are_balanced_and_capped(seed in any::<u64>()) {
        let plan = build_plan(seed);
        prop_assert!(plan.validate().is_ok());
        let levels: Vec<usize> = plan.trials.iter().map(|t| t.level).collect();
        prop_assert!(longest_run(&levels) <= 3);
        prop_assert!(plan.trials.iter().all(|t| (1..=2).contains(&t.ref_variant) && (1..=2).contains(&t.cmp_variant)));
    }

    #[test]
    fn seed_derivation_separates_streams(root in any::<u64>(), i in 0u64..1000) {
        prop_assert_eq!(derive_seed(root, "a", i), derive_seed(root, "a", i));
        prop_assert_ne!(derive_seed(root, "a", i), derive_seed(root, "b", i));
        prop_assert_ne!(derive_seed(root, "a", i), derive_seed(root, "a", i + 1));
    }

    #[test]
    fn confusion_accuracy_bounded_and_relabel_invariant(
        counts in prop::collection::vec(prop::collection::vec(0u32..20, 5), 5),
        perm in Just((0..5).collect::<Vec<usize>>()).prop_shuffle(),
    ) {
        prop_assume!(counts.iter().flatten().sum::<u32>() > 0);
        let labels = Ladder::default().levels;
        let cm = ConfusionMatrix { labels: labels.clone(), counts: counts.clone() };
        let a = accuracy(&cm).unwrap();
        prop_assert!((0.0..=1.0).contains(&a.overall));
        prop_assert!(a.per_true_class.iter().chain(&a.per_chosen_class).flatten().all(|v| (0.0..=1.0).contains(v)));
        let permuted = ConfusionMatrix {
            labels: perm.iter().map(|&i| labels[i].clone()).collect(),
            counts: perm.iter().map(|&i| perm.iter().map(|&j| counts[i][j]).collect()).collect(),
        };
        prop_assert_eq!(permuted.total(), cm.total());
        let b = accuracy(&permuted).unwrap();
        prop_assert_eq!(b.overall, a.overall);
        for (new, &old) in perm.iter().enumerate() {
            prop_assert_eq!(b.per_true_class[new], a.per_true_class[old]);
        }
    }

    #[test]
    fn sus_is_monotone(items in prop::collection::vec(1u8..=5, 10), pos in 0usize..10) {
        let base = sus_score(&SusResponse::new(&items).unwrap());
        prop_assert!((0.0..=100.0).contains(&base));
        if items[pos] < 5 {
            let mut up = items.clone();
            up[pos] += 1;
            let s = sus_score(&SusResponse::new(&up).unwrap());
            // Item 1 is pos 0: odd items gain, even items lose.
            if pos % 2 == 0 { prop_assert!(s >= base) } else { prop_assert!(s <= base) }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn fit_is_equivariant(ys in prop::collection::vec(any::<bool>(), 50), c in 0.1f64..10.0) {
        let xs = [18.0, 65.0, 127.0, 195.0, 264.0];
        let data = FitDataset::from_pairs(ys.iter().enumerate().map(|(i, &y)| (xs[i % 5], y)));
        let Ok(fit) = fit_probit(&data) else { return Ok(()) };
        prop_assume!(fit.converged);
        // Flipping every response negates both coefficients.
        let flipped = fit_probit(&data.label_flipped()).unwrap();
        prop_assert!((flipped.beta0 + fit.beta0).abs() < 1e-6 * (1.0 + fit.beta0.abs()));
        prop_assert!((flipped.beta1 + fit.beta1).abs() < 1e-6 * (1e-3 + fit.beta1.abs()));
        // Rescaling x by c divides the slope by c and leaves the intercept alone.
        let scaled = fit_probit(&data.scaled(c)).unwrap();
        prop_assert!((scaled.beta0 - fit.beta0).abs() < 1e-6 * (1.0 + fit.beta0.abs()));
        prop_assert!((scaled.beta1 * c - fit.beta1).abs() < 1e-6 * (1e-3 + fit.beta1.abs()));
    }
}
