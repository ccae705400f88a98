use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use wbgnn::baselines::{
    exhaustive, hybrid_zf_precode, power_control_2pair, schedule_rate, strongest, PowerControlInstance, PowerDecision,
    Precode,
};
use wbgnn::channel::{read_dataset, write_dataset, ChannelTensor, Dataset, ScenarioConfig, Split};
use wbgnn::checkpoint::{load_precoder, load_scheduler, save_precoder, save_scheduler};
use wbgnn::precoder::{precode_samples, PrecoderParams};
use wbgnn::scheduler::{hard_top, soft_top, SchedulerParams, Variant};
use wbgnn::system::{check_constraints, sum_rate, Axis, HybridSolution, Permutation, Permute};
use wbgnn::tensor::{Tape, Tensor};
use wbgnn::Complex64;

fn channel(seed: u64, m: usize, k: usize, n_r: usize, n_t: usize, scale: f64) -> ChannelTensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ChannelTensor::from_fn(m, k, n_r, n_t, |_, _, _, _| {
        Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)) * scale
    })
}

fn solution(seed: u64, m: usize, n_t: usize, n_rf: usize, k: usize, n_r: usize) -> HybridSolution {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = HybridSolution::zeros(m, n_t, n_rf, k, n_r);
    for c in s.w_rf.iter_mut().chain(s.v_rf.iter_mut()) {
        *c = Complex64::from_polar(1.0, rng.random_range(0.0..6.3));
    }
    for c in &mut s.w_bb {
        *c = Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
    }
    s
}

fn shuffled(seed: u64, n: usize) -> Permutation {
    let mut map: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in (1..n).rev() {
        map.swap(i, rng.random_range(0..=i));
    }
    Permutation::new(map).unwrap()
}

fn dims() -> impl Strategy<Value = (usize, usize, usize, usize)> {
    (1usize..4, 1usize..4, 1usize..3, 1usize..5)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn sum_rate_ignores_relabelling((m, k, n_r, n_t) in dims(), n_rf in 1usize..4, seed in any::<u64>(), axis in 0usize..4) {
        let h = channel(seed, m, k, n_r, n_t, 1.0);
        let sol = solution(seed ^ 1, m, n_t, n_rf, k, n_r);
        let (axis, p) = match axis {
            0 => (Axis::Rb, shuffled(seed, m)),
            1 => (Axis::UserGroup, shuffled(seed, k)),
            2 => (Axis::Antenna { group: None }, shuffled(seed, n_r)),
            _ => (Axis::BsAntenna, shuffled(seed, n_t)),
        };
        let r0 = sum_rate(&h, None, &sol, 0.2).unwrap().sum_rate;
        let r1 = sum_rate(&h.permute(axis, &p).unwrap(), None, &sol.permute(axis, &p).unwrap(), 0.2).unwrap().sum_rate;
        prop_assert!((r0 - r1).abs() <= 1e-12 * r0.abs().max(1.0));
    }

    #[test]
    fn permutation_round_trips((m, k, n_r, n_t) in dims(), seed in any::<u64>()) {
        let h = channel(seed, m, k, n_r, n_t, 1.0);
        let p = shuffled(seed, k);
        let back = h.permute(Axis::UserGroup, &p).unwrap().permute(Axis::UserGroup, &p.inverse()).unwrap();
        prop_assert_eq!(back, h);
    }

    #[test]
    fn precoder_output_is_feasible(
        (m, k, n_r, n_t) in dims(),
        extra_rf in 0usize..3,
        seed in any::<u64>(),
        log_scale in -8.0f64..4.0,
        log_power in -3.0f64..3.0,
        attention in any::<bool>(),
    ) {
        let h = channel(seed, m, k, n_r, n_t, 10f64.powf(log_scale));
        let p_tot = 10f64.powf(log_power);
        let params = PrecoderParams::new(&[5, 4], k + extra_rf, seed);
        let (sols, _) = precode_samples(&params, &[&h], p_tot, attention).unwrap();
        let r = check_constraints(&sols[0], p_tot);
        prop_assert!(r.unit_modulus_rf <= 1e-12 && r.unit_modulus_comb <= 1e-12, "{r:?}");
        prop_assert!(r.power_residual <= 1e-9, "{r:?}");
    }

    #[test]
    fn soft_rows_are_distributions(z in prop::collection::vec(-5.0f64..5.0, 2..7), tau in 0.05f64..2.0, kp in 1usize..3) {
        let k = z.len();
        let kp = kp.min(k);
        let mut tape = Tape::new();
        let zv = tape.constant(Tensor::new(&[1, 1, k], z.clone()).unwrap());
        let (b, _) = soft_top(&mut tape, zv, kp, tau).unwrap();
        for row in tape.value(b).data().chunks(k) {
            prop_assert!(row.iter().all(|&v| (0.0..=1.0).contains(&v)));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let hard = hard_top(&z, 1, k, kp);
        prop_assert_eq!(hard.indices()[0].len(), kp);
    }

    #[test]
    fn exhaustive_dominates_strongest(m in 1usize..3, k in 2usize..5, seed in any::<u64>()) {
        let h = channel(seed, m, k, 1, 3, 1.0);
        let kp = 2.min(k);
        let precode: &Precode = &hybrid_zf_precode;
        let (_, best) = exhaustive(&h, kp, precode, 1.0, 0.1, false).unwrap();
        // slots ascending, the order exhaustive enumerates in
        let mut picks = strongest(&h, kp).indices();
        picks.iter_mut().for_each(|p| p.sort_unstable());
        let s = schedule_rate(&h, &picks, precode, 1.0, 0.1).unwrap();
        prop_assert!(best >= s - 1e-12);
    }

    #[test]
    fn power_rule_picks_the_best_corner(ht in -1.0f64..1.0, hi in -1.0f64..1.0, s2 in -1.0f64..1.0, p in -1.0f64..1.0) {
        let inst = PowerControlInstance { h_t: 10f64.powf(ht), h_i: 10f64.powf(hi), sigma2: 10f64.powf(s2), p_max: 10f64.powf(p) };
        let (d, _) = power_control_2pair(&inst).unwrap();
        let both = inst.rate(inst.p_max, inst.p_max);
        let single = inst.rate(inst.p_max, 0.0);
        prop_assume!((both - single).abs() > 1e-9 * both);
        prop_assert_eq!(d, if both > single { PowerDecision::Both } else { PowerDecision::Single });
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn dataset_files_round_trip((m, k, n_r, n_t) in dims(), count in 1usize..4, seed in any::<u64>()) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.wbch");
        let samples: Vec<ChannelTensor> = (0..count).map(|i| channel(seed.wrapping_add(i as u64), m, k, n_r, n_t, 1e-5)).collect();
        let cfg = ScenarioConfig { m, k, n_r, n_t, k_prime: 1, n_rf: 1, ..ScenarioConfig::default() };
        let ds = Dataset::new(cfg, Split::Test, samples);
        write_dataset(&path, &ds).unwrap();
        prop_assert_eq!(read_dataset(&path).unwrap(), ds);
    }

    #[test]
    fn checkpoints_round_trip(hidden in prop::collection::vec(1usize..6, 1..3), kp in 1usize..3, seed in any::<u64>(), sgnn in any::<bool>()) {
        let dir = tempfile::tempdir().unwrap();
        let prec = PrecoderParams::new(&hidden, kp + 1, seed);
        let variant = if sgnn { Variant::Sgnn } else { Variant::Ngnn };
        let sched = SchedulerParams::new(variant, &hidden, kp, seed);
        save_precoder(&prec, &dir.path().join("p.wbnn")).unwrap();
        save_scheduler(&sched, &dir.path().join("s.wbnn")).unwrap();
        prop_assert_eq!(load_precoder(&dir.path().join("p.wbnn")).unwrap(), prec);
        prop_assert_eq!(load_scheduler(&dir.path().join("s.wbnn")).unwrap(), sched);
    }
}
