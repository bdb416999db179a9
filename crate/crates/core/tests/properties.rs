use mecwpt::baselines::{baseline_covariance, BaselineKind};
use mecwpt::channel::{read_channel_csv, write_channel_csv};
use mecwpt::charging::{solve_p3, solve_p4_gains};
use mecwpt::harness::realization;
use mecwpt::lambert::lambert_w0;
use mecwpt::linalg::C64;
use mecwpt::offload::solve_p2;
use mecwpt::orchestrator::offload_bounds;
use mecwpt::*;
use proptest::prelude::*;

fn channels(k: usize, n: usize) -> impl Strategy<Value = Vec<Vec<C64>>> {
    prop::collection::vec(prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0).prop_map(|(a, b)| C64::new(a, b)), n), k)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn lambert_residual_small(x in -1.0f64 / std::f64::consts::E..1e12) {
        let r = lambert_w0(x).unwrap();
        prop_assert!(r.value >= -1.0);
        prop_assert!((r.value * r.value.exp() - x).abs() <= 1e-12 * x.abs().max(1.0));
    }

    #[test]
    fn p2_times_respect_latency(seed in 0u64..10_000, k in 1usize..5, frac in prop::collection::vec(0.0f64..1.0, 4)) {
        let params = SystemParams { n_users: k, n_cells: 1, n_antennas: 32, ..SystemParams::default() };
        let (sc, ch) = realization(&params, 20.0, seed).unwrap();
        let u = sc.tasks(0);
        let hi = offload_bounds(&u, &params).unwrap().1;
        let local_most = 0.9 * params.latency * params.f_user / params.cycles_user;
        let s: Vec<f64> = (0..k).map(|i| {
            let lo = (u[i] - local_most).max(0.0);
            lo + frac[i] * (hi[i] - lo)
        }).collect();
        let sol = solve_p2(&s, &ch.cell(0), &params, &u).unwrap();
        let alloc = Allocation {
            s: s.clone(), t_u: sol.t_u.clone(), t_d: sol.t_d.clone(),
            t1: sol.t1, t2: sol.t2, t3: sol.t3, t_c: params.latency - sol.t1 - sol.t3,
            w_q: linalg::CMatrix::zeros(32, 32), alpha: vec![0.0; k],
        };
        prop_assert!(latency_check(&alloc, &params, &u).is_empty());
        prop_assert!(sol.relative_gap() <= 1e-4);
    }

    #[test]
    fn p4_invariants(a in prop::collection::vec(prop::collection::vec(0.0f64..2.0, 3), 3),
                     e in prop::collection::vec(0.0f64..1.0, 3),
                     t_c in 1e-3f64..2e-2) {
        let params = SystemParams::default();
        let sol = solve_p4_gains(&a, &e, t_c, &params).unwrap();
        prop_assert!(sol.lambda_q.windows(2).all(|w| w[0] >= w[1] - 1e-12 * w[0].abs()));
        prop_assert!(sol.lambda_q.iter().all(|&l| l >= 0.0));
        prop_assert!(sol.lambda_q.iter().sum::<f64>() <= params.p_ap * (1.0 + 1e-9));
        for i in 0..3 {
            prop_assert!((0.0..=1.0).contains(&sol.alpha[i]));
            if sol.relaxed.contains(&i) {
                continue;
            }
            let pi = e[i] / (params.efficiency * t_c);
            let got: f64 = a[i].iter().zip(&sol.lambda_q).map(|(g, l)| g * l).sum();
            prop_assert!(got >= sol.alpha[i] * pi * (1.0 - 1e-9) - 1e-12);
        }
    }

    #[test]
    fn p3_invariants(h in channels(3, 5), e in prop::collection::vec(0.0f64..0.05, 3), t_c in 1e-3f64..2e-2) {
        let params = SystemParams::default();
        let sol = solve_p3(&h, &e, t_c, &params).unwrap();
        prop_assert!(sol.w_q.trace().re <= params.p_ap * (1.0 + 1e-9));
        prop_assert!(sol.w_q.hermitian_defect() <= 1e-12 * sol.w_q.frobenius_norm().max(1.0));
        for i in 0..3 {
            prop_assert!((0.0..=1.0).contains(&sol.alpha[i]));
            prop_assert!(sol.received[i] <= e[i]);
            prop_assert!(sol.harvested[i] >= sol.alpha[i] * e[i] * (1.0 - 1e-6));
        }
    }

    #[test]
    fn baselines_never_overcharge(h in channels(3, 4), e in prop::collection::vec(1e-6f64..0.05, 3), t_c in 1e-3f64..2e-2) {
        let params = SystemParams::default();
        for kind in [BaselineKind::Isotropic, BaselineKind::EqualK] {
            let sol = baseline_covariance(kind, &h, &e, t_c, &params, None).unwrap();
            prop_assert!(sol.w_q.trace().re <= params.p_ap * (1.0 + 1e-9));
            for i in 0..3 {
                prop_assert!(sol.harvested[i] <= e[i] * (1.0 + 1e-12));
            }
        }
    }

    #[test]
    fn outer_step_stays_in_box(s in prop::collection::vec(0.0f64..1.0, 4),
                               g in prop::collection::vec(-1e3f64..1e3, 4),
                               hs in prop::collection::vec(-1.0f64..1e3, 4)) {
        let lo = vec![0.0; 4];
        let hi = vec![1.0; 4];
        let d = outer_step(&s, &g, &hs, &lo, &hi);
        for i in 0..4 {
            let x = s[i] + d[i];
            prop_assert!((-1e-15..=1.0 + 1e-15).contains(&x));
            prop_assert!(d[i] * g[i] <= 0.0);
        }
    }

    #[test]
    fn config_round_trip(n in 8usize..256, k in 1usize..8, l in 1usize..9, w in 0.0f64..1.0, td in 1e-3f64..1.0, p in 1.0f64..100.0) {
        let params = SystemParams { n_antennas: n.max(2 * k), n_users: k, n_cells: l, weight: w, latency: td, p_ap: p, ..SystemParams::default() };
        prop_assume!(params.validate().is_ok());
        let back = load_params(&params.to_config_text()).unwrap();
        prop_assert_eq!(back, params);
    }

    #[test]
    fn channel_csv_round_trip(h in channels(3, 6)) {
        let mut buf = Vec::new();
        write_channel_csv(&h, &mut buf).unwrap();
        let back = read_channel_csv(buf.as_slice()).unwrap();
        prop_assert_eq!(back, h);
    }
}
