//! Temporary exploration harness (not part of the deliverable).

use swfqi::features::{build_realizable_features, LinearQ};
use swfqi::fqi::*;
use swfqi::mdp::*;
use swfqi::soft_bellman::Temperature;
use swfqi::stationary::*;

fn garnet(seed: u64) -> TabularMdp {
    generate_garnet(&GarnetSpec {
        n_states: 50,
        n_actions: 4,
        branching: 5,
        reward_std: 0.1,
        discount: 0.99,
        seed,
    })
    .unwrap()
}

fn main() {
    let which = std::env::args().nth(1).unwrap_or_default();
    match which.as_str() {
        "pop" => population_dynamics(),
        "profile" => profiles(),
        "fitted" => fitted_dynamics(),
        "inject" => injection_dynamics(),
        "fixedw" => fixed_weight_dynamics(),
        "homotopy" => homotopy_dynamics(),
        "trace" => homotopy_trace(),
        "onehot" => onehot_decay(),
        "noise" => noise_sweep(),
        "super" => superposition(),
        "noisefloor" => noise_floor(),
        "cor7" => corollary_envelope(),
        "deriv" => derivative_sweep(),
        _ => println!("usage: scratch [...]"),
    }
}

fn noise_floor() {
    for seed in [1u64, 2, 3] {
        let mdp = garnet(seed);
        let t = Temperature::new(0.1).unwrap();
        let refs = SoftRefs::solve(&mdp, t, &RefSolverParams::default()).unwrap();
        let behavior = dirichlet_behavior_policy(&mdp, seed);
        let nu_b = behavior_measure(&mdp, &behavior);
        let features = build_realizable_features(&refs.q_star, 5, seed, &refs.mu_star).unwrap();
        let env = FqiEnv {
            mdp: &mdp,
            features: &features,
            behavior: &behavior,
            nu_b,
        };
        for noise in [0.0, 0.1, 0.5] {
            let params = FqiParams {
                noise_seed: seed,
                ..FqiParams::new(
                    t,
                    2500,
                    0.0,
                    WeightingMode::StationaryNoisy {
                        noise_scale: noise,
                        refresh_period: 1,
                    },
                )
            };
            let rec = run_fqi(
                &env,
                FqiMode::Population,
                &LinearQ::zeros(&features),
                &params,
                &refs,
            )
            .unwrap();
            let e = rec.errors();
            let tail_max = e[2300..].iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let tail_med = {
                let mut t: Vec<f64> = e[2300..].to_vec();
                t.sort_by(|a, b| a.partial_cmp(b).unwrap());
                t[t.len() / 2]
            };
            println!(
                "seed {seed} noise {noise}: tail max {tail_max:.3e} median {tail_med:.3e}"
            );
        }
    }
}

fn corollary_envelope() {
    for seed in 1..=5u64 {
        let mdp = garnet(seed);
        let t = Temperature::new(0.1).unwrap();
        let refs = SoftRefs::solve(&mdp, t, &RefSolverParams::default()).unwrap();
        let behavior = dirichlet_behavior_policy(&mdp, seed);
        let nu_b = behavior_measure(&mdp, &behavior);
        let features = build_realizable_features(&refs.q_star, 5, seed, &refs.mu_star).unwrap();
        let prof = contraction_profile(&mdp, t, &refs.mu_star, &refs.pi_star, 0.0).unwrap();
        // Reference = located fixed point of the projected operator.
        let (q_plus, residual) =
            projected_fixed_point(&mdp, &features, &refs, 0.0, 1e-13, 200_000).unwrap();
        let q_plus_table = swfqi::features::evaluate_linear(&q_plus, &features).unwrap();
        let refs_plus = SoftRefs {
            q_star: q_plus_table,
            ..refs.clone()
        };
        let env = FqiEnv {
            mdp: &mdp,
            features: &features,
            behavior: &behavior,
            nu_b,
        };
        let ratio = density_ratio(&refs.mu_star, &env.nu_b, RATIO_FLOOR).unwrap();
        let params = FqiParams::new(t, 60, 0.0, WeightingMode::Fixed { ratio });
        let q0 = basin_init(&features, &refs_plus, 0.5 * prof.r0, seed).unwrap();
        let rec = run_fqi(&env, FqiMode::Population, &q0, &params, &refs_plus).unwrap();
        let e = rec.errors();
        let rhos: Vec<f64> = e.windows(2).map(|w| w[1] / w[0]).collect();
        let viol = (5..50)
            .filter(|&k| rhos[k] - 0.99 > prof.beta_loc * e[k])
            .count();
        let max_excess = (5..50)
            .map(|k| rhos[k] - 0.99)
            .fold(f64::NEG_INFINITY, f64::max);
        // Envelope fit on positive parts.
        let pts: Vec<(f64, f64)> = (5..50)
            .filter(|&k| rhos[k] - 0.99 > 1e-12)
            .map(|k| (k as f64, (rhos[k] - 0.99).ln()))
            .collect();
        let ratio = if pts.len() >= 2 {
            let xs: Vec<f64> = pts.iter().map(|p| p.0).collect();
            let ys: Vec<f64> = pts.iter().map(|p| p.1).collect();
            ols_slope(&xs, &ys).exp()
        } else {
            0.0
        };
        let rho_measured = (e[50] / e[5]).powf(1.0 / 45.0);
        println!(
            "seed {seed}: fp-residual {residual:.2e} viol {viol}/45 max(rho-gamma) {max_excess:.3e} envelope-ratio {ratio:.4} rho_meas {rho_measured:.5} positive-pts {}",
            pts.len()
        );
    }
}

fn derivative_sweep() {
    use swfqi::diagnostics::{check_first_derivative, check_second_derivative};
    for tau in [0.1, 0.5, 1.0, 10.0] {
        let mut worst1 = 0.0f64;
        let mut worst2 = 0.0f64;
        for seed in 1..=5u64 {
            let mdp = garnet(seed);
            let t = Temperature::new(tau).unwrap();
            let refs = SoftRefs::solve(&mdp, t, &RefSolverParams::default()).unwrap();
            let e1 = check_first_derivative(&mdp, &refs.q_star, t, &refs.mu_star, 20, 1e-5, seed)
                .unwrap();
            let e2 = check_second_derivative(&mdp, &refs.q_star, t, &refs.mu_star, 20, 1e-3, seed)
                .unwrap();
            worst1 = worst1.max(e1);
            worst2 = worst2.max(e2);
        }
        println!("tau {tau}: worst first {worst1:.3e} (tol 1e-6) worst second {worst2:.3e} (tol 1e-4)");
    }
}

fn onehot_decay() {
    use swfqi::features::one_hot_features;
    for seed in [1u64, 2, 3] {
        let mdp = garnet(seed);
        let t = Temperature::new(0.5).unwrap();
        let refs = SoftRefs::solve(&mdp, t, &RefSolverParams::default()).unwrap();
        let behavior = dirichlet_behavior_policy(&mdp, seed);
        let nu_b = behavior_measure(&mdp, &behavior);
        let features = one_hot_features(&mdp);
        let env = FqiEnv {
            mdp: &mdp,
            features: &features,
            behavior: &behavior,
            nu_b,
        };
        let params = FqiParams::new(t, 100, 0.0, WeightingMode::Behavior);
        let rec = run_fqi(
            &env,
            FqiMode::Population,
            &LinearQ::zeros(&features),
            &params,
            &refs,
        )
        .unwrap();
        let e = rec.errors();
        let worst = (0..=100)
            .map(|k| e[k] / (e[0] * 0.99f64.powi(k as i32)))
            .fold(f64::NEG_INFINITY, f64::max);
        println!("seed {seed}: worst e_k/(gamma^k e_0) = {worst:.6}");
    }
}

fn noise_sweep() {
    for seed in [1u64, 2, 3] {
        let mdp = garnet(seed);
        let t = Temperature::new(0.1).unwrap();
        let refs = SoftRefs::solve(&mdp, t, &RefSolverParams::default()).unwrap();
        let behavior = dirichlet_behavior_policy(&mdp, seed);
        let nu_b = behavior_measure(&mdp, &behavior);
        let features = build_realizable_features(&refs.q_star, 5, seed, &refs.mu_star).unwrap();
        let env = FqiEnv {
            mdp: &mdp,
            features: &features,
            behavior: &behavior,
            nu_b,
        };
        for noise in [0.0, 0.1, 0.5] {
            let params = FqiParams {
                noise_seed: seed,
                ..FqiParams::new(
                    t,
                    300,
                    0.0,
                    WeightingMode::StationaryNoisy {
                        noise_scale: noise,
                        refresh_period: 1,
                    },
                )
            };
            let rec = run_fqi(
                &env,
                FqiMode::Population,
                &LinearQ::zeros(&features),
                &params,
                &refs,
            )
            .unwrap();
            let e = rec.errors();
            let floor = e[250..].iter().copied().fold(f64::INFINITY, f64::min);
            let werr: Vec<f64> = rec
                .rows
                .iter()
                .filter_map(|r| r.weight_err)
                .collect();
            let mean_werr = werr.iter().sum::<f64>() / werr.len().max(1) as f64;
            println!(
                "seed {seed} noise {noise}: e300 {:.3e} floor {:.3e} mean weight_err {:.4}",
                e[300], floor, mean_werr
            );
        }
    }
}

fn superposition() {
    use rand::distributions::Distribution;
    for seed in [1u64, 2] {
        for scale in [1e-3, 1e-4] {
            let mdp = garnet(seed);
            let t = Temperature::new(0.1).unwrap();
            let refs = SoftRefs::solve(&mdp, t, &RefSolverParams::default()).unwrap();
            let behavior = dirichlet_behavior_policy(&mdp, seed);
            let nu_b = behavior_measure(&mdp, &behavior);
            let features =
                build_realizable_features(&refs.q_star, 5, seed, &refs.mu_star).unwrap();
            let env = FqiEnv {
                mdp: &mdp,
                features: &features,
                behavior: &behavior,
                nu_b,
            };
            let params = FqiParams::new(
                t,
                60,
                0.0,
                WeightingMode::StationaryExact { refresh_period: 1 },
            );
            let q0 = LinearQ::zeros(&features);
            let mut rng = swfqi::rng::stream_rng(seed, swfqi::rng::Stream::WeightNoise);
            let mut draw = |scale: f64| {
                let mut p = DensityRatio::ones(50, 4);
                for v in p.values_mut() {
                    let g: f64 = rand_distr::StandardNormal.sample(&mut rng);
                    *v = (scale * g).exp();
                }
                p
            };
            let p1 = draw(scale);
            let p2 = draw(scale);
            let ea = inject_weight_error_once(&env, &q0, &params, &refs, 15, &p1).unwrap();
            let eb = inject_weight_error_once(&env, &q0, &params, &refs, 30, &p2).unwrap();
            let eab = inject_weight_errors(
                &env,
                &q0,
                &params,
                &refs,
                &[(15, p1.clone()), (30, p2.clone())],
            )
            .unwrap();
            // Superposition slack: excess(both) - (|excess A| + |excess B|).
            let worst = (0..=60)
                .map(|k| eab.excess[k] - (ea.excess[k].abs() + eb.excess[k].abs()))
                .fold(f64::NEG_INFINITY, f64::max);
            println!(
                "seed {seed} scale {scale}: max|A| {:.2e} max|B| {:.2e} superposition-slack {worst:.2e}",
                ea.excess.iter().map(|v| v.abs()).fold(f64::NEG_INFINITY, f64::max),
                eb.excess.iter().map(|v| v.abs()).fold(f64::NEG_INFINITY, f64::max)
            );
        }
    }
}

fn homotopy_trace() {
    for (stages, per_stage) in [(10usize, 10usize), (10, 30)] {
        for seed in [0u64, 1] {
            let mdp = garnet(seed);
            let target = Temperature::new(1e-6).unwrap();
            let refs = SoftRefs::solve(&mdp, target, &RefSolverParams::default()).unwrap();
            let behavior = dirichlet_behavior_policy(&mdp, seed);
            let nu_b = behavior_measure(&mdp, &behavior);
            let features =
                build_realizable_features(&refs.q_star, 5, seed, &refs.mu_star).unwrap();
            let dataset = sample_reset_dataset(&mdp, &behavior, 100_000, seed).unwrap();
            let env = FqiEnv {
                mdp: &mdp,
                features: &features,
                behavior: &behavior,
                nu_b,
            };
            let schedule = HomotopySchedule {
                tau_init: 1.0,
                tau_target: 1e-6,
                stages,
                iters_per_stage: per_stage,
                decay: HomotopyDecay::Geometric,
            };
            let q0 = LinearQ::zeros(&features);
            for weighting in [
                WeightingMode::Behavior,
                WeightingMode::StationaryExact { refresh_period: 1 },
            ] {
                let params = FqiParams::new(target, 300, 1e-10, weighting.clone());
                let rec = run_homotopy(
                    &env,
                    FqiMode::Fitted(&dataset),
                    &q0,
                    &schedule,
                    &params,
                    &RefSolverParams::default(),
                )
                .unwrap();
                let e = rec.errors();
                let samples: Vec<String> = (0..=300)
                    .step_by(10)
                    .map(|k| format!("{:.2e}", e[k]))
                    .collect();
                let max1 = e[1..]
                    .iter()
                    .copied()
                    .fold(f64::NEG_INFINITY, f64::max);
                println!(
                    "{stages}x{per_stage} seed {seed} {:?}:\n  {}\n  max(k>=1) {max1:.3e}",
                    weighting,
                    samples.join(" ")
                );
            }
        }
    }
}

fn homotopy_dynamics() {
    let start = std::time::Instant::now();
    for tau_init in [0.1, 1.0] {
        let mut sw_wins_final = 0;
        let mut sw_wins_max = 0;
        let mut n = 0;
        for seed in 0..10u64 {
            let mdp = garnet(seed);
            let target = Temperature::new(1e-6).unwrap();
            let refs = SoftRefs::solve(&mdp, target, &RefSolverParams::default()).unwrap();
            let behavior = dirichlet_behavior_policy(&mdp, seed);
            let nu_b = behavior_measure(&mdp, &behavior);
            let features =
                build_realizable_features(&refs.q_star, 5, seed, &refs.mu_star).unwrap();
            let dataset = sample_reset_dataset(&mdp, &behavior, 100_000, seed).unwrap();
            let env = FqiEnv {
                mdp: &mdp,
                features: &features,
                behavior: &behavior,
                nu_b,
            };
            let schedule = HomotopySchedule {
                tau_init,
                tau_target: 1e-6,
                stages: 10,
                iters_per_stage: 10,
                decay: HomotopyDecay::Geometric,
            };
            let q0 = LinearQ::zeros(&features);
            let mut finals = Vec::new();
            let mut maxes = Vec::new();
            for weighting in [
                WeightingMode::Behavior,
                WeightingMode::StationaryExact { refresh_period: 1 },
            ] {
                let params = FqiParams::new(target, 300, 1e-10, weighting);
                let rec = run_homotopy(
                    &env,
                    FqiMode::Fitted(&dataset),
                    &q0,
                    &schedule,
                    &params,
                    &RefSolverParams::default(),
                )
                .unwrap();
                finals.push(*rec.target_errors.last().unwrap());
                let after_first_stage = rec.target_errors[schedule.iters_per_stage..]
                    .iter()
                    .copied()
                    .fold(f64::NEG_INFINITY, f64::max);
                maxes.push(after_first_stage);
                if seed < 2 {
                    let e = &rec.target_errors;
                    println!(
                        "tau_init {tau_init} seed {seed} {:?}: t0 {:.3e} t20 {:.3e} t50 {:.3e} t100 {:.3e} t300 {:.3e} max(k>=1) {:.4e} diverged {}",
                        params.weighting, e[0], e[20], e[50], e[100], e[300],
                        rec.max_target_error_excluding_init(), rec.diverged
                    );
                }
            }
            n += 1;
            if finals[1] < finals[0] {
                sw_wins_final += 1;
            }
            if maxes[1] < maxes[0] {
                sw_wins_max += 1;
            }
        }
        println!(
            "tau_init {tau_init}: SW final win {sw_wins_final}/{n}, SW max-path win {sw_wins_max}/{n}"
        );
    }
    println!("total {:?}", start.elapsed());
}

fn fixed_weight_dynamics() {
    // Idealized iteration: fixed exact mu* weights, basin start at 0.5 r0.
    for seed in 1..=5u64 {
        let mdp = garnet(seed);
        let t = Temperature::new(0.1).unwrap();
        let refs = SoftRefs::solve(&mdp, t, &RefSolverParams::default()).unwrap();
        let behavior = dirichlet_behavior_policy(&mdp, seed);
        let nu_b = behavior_measure(&mdp, &behavior);
        let features = build_realizable_features(&refs.q_star, 5, seed, &refs.mu_star).unwrap();
        let prof = contraction_profile(&mdp, t, &refs.mu_star, &refs.pi_star, 0.0).unwrap();
        let ratio = density_ratio(&refs.mu_star, &nu_b, RATIO_FLOOR).unwrap();
        let env = FqiEnv {
            mdp: &mdp,
            features: &features,
            behavior: &behavior,
            nu_b: nu_b.clone(),
        };
        let params = FqiParams::new(t, 60, 0.0, WeightingMode::Fixed { ratio });
        let q0 = basin_init(&features, &refs, 0.5 * prof.r0, seed).unwrap();
        let rec = run_fqi(&env, FqiMode::Population, &q0, &params, &refs).unwrap();
        let e = rec.errors();
        let rhos: Vec<f64> = e.windows(2).map(|w| w[1] / w[0]).collect();
        let viol = (5..50)
            .filter(|&k| rhos[k] - 0.99 > prof.beta_loc * e[k])
            .count();
        let max_excess = (5..50)
            .map(|k| rhos[k] - 0.99)
            .fold(f64::NEG_INFINITY, f64::max);
        println!(
            "seed {seed}: e0 {:.3e} corollary violations {viol}/45 max(rho-gamma) {:.3e} beta*e5 {:.3e}",
            e[0],
            max_excess,
            prof.beta_loc * e[5]
        );
        // Same but with per-step refreshed weights (the actual SW run).
        let params_sw = FqiParams::new(
            t,
            60,
            0.0,
            WeightingMode::StationaryExact { refresh_period: 1 },
        );
        let rec_sw = run_fqi(&env, FqiMode::Population, &q0, &params_sw, &refs).unwrap();
        let esw = rec_sw.errors();
        let rhos_sw: Vec<f64> = esw.windows(2).map(|w| w[1] / w[0]).collect();
        let max_sw = (5..50)
            .map(|k| rhos_sw[k] - 0.99)
            .fold(f64::NEG_INFINITY, f64::max);
        println!("  refreshed: max(rho-gamma) {:.3e}", max_sw);
    }
}

fn injection_dynamics() {
    use rand::distributions::Distribution;
    for seed in 1..=5u64 {
        let mdp = garnet(seed);
        let t = Temperature::new(0.1).unwrap();
        let refs = SoftRefs::solve(&mdp, t, &RefSolverParams::default()).unwrap();
        let behavior = dirichlet_behavior_policy(&mdp, seed);
        let nu_b = behavior_measure(&mdp, &behavior);
        let features = build_realizable_features(&refs.q_star, 5, seed, &refs.mu_star).unwrap();
        let env = FqiEnv {
            mdp: &mdp,
            features: &features,
            behavior: &behavior,
            nu_b,
        };
        let params = FqiParams::new(
            t,
            80,
            0.0,
            WeightingMode::StationaryExact { refresh_period: 1 },
        );
        let q0 = LinearQ::zeros(&features);
        // Multiplicative log-normal perturbation, scale 0.3.
        let mut rng = swfqi::rng::stream_rng(seed, swfqi::rng::Stream::WeightNoise);
        let mut pert = DensityRatio::ones(50, 4);
        for v in pert.values_mut() {
            let g: f64 = rand_distr::StandardNormal.sample(&mut rng);
            *v = (0.3 * g).exp();
        }
        let j = 20;
        let exp = inject_weight_error_once(&env, &q0, &params, &refs, j, &pert).unwrap();
        let clean_rho = {
            let e = exp.clean.errors();
            (e[70] / e[30]).powf(1.0 / 40.0)
        };
        // log|excess| decay after j+1.
        let xs: Vec<f64> = (j + 2..=j + 30).map(|k| k as f64).collect();
        let ys: Vec<f64> = (j + 2..=j + 30)
            .map(|k| exp.excess[k].abs().max(1e-300).ln())
            .collect();
        let slope = ols_slope(&xs, &ys);
        println!(
            "seed {seed}: clean_rho {clean_rho:.5} log-slope {slope:.5} log(rho)+0.05 = {:.5} excess[j+1] {:.3e} excess[j+20] {:.3e}",
            clean_rho.ln() + 0.05,
            exp.excess[j + 1],
            exp.excess[j + 20]
        );
    }
}

fn ols_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

fn fitted_dynamics() {
    let start = std::time::Instant::now();
    let tau_target = 1e-6;
    for seed in 0..3u64 {
        let mdp = garnet(seed);
        let t = Temperature::new(tau_target).unwrap();
        let refs = SoftRefs::solve(&mdp, t, &RefSolverParams::default()).unwrap();
        let behavior = dirichlet_behavior_policy(&mdp, seed);
        let nu_b = behavior_measure(&mdp, &behavior);
        let features = build_realizable_features(&refs.q_star, 5, seed, &refs.mu_star).unwrap();
        let dataset = sample_reset_dataset(&mdp, &behavior, 100_000, seed).unwrap();
        let env = FqiEnv {
            mdp: &mdp,
            features: &features,
            behavior: &behavior,
            nu_b,
        };
        let q0 = LinearQ::zeros(&features);
        for (label, weighting) in [
            ("behavior", WeightingMode::Behavior),
            (
                "sw",
                WeightingMode::StationaryExact { refresh_period: 1 },
            ),
        ] {
            let t0 = std::time::Instant::now();
            let params = FqiParams::new(t, 300, 1e-10, weighting);
            let rec = run_fqi(&env, FqiMode::Fitted(&dataset), &q0, &params, &refs).unwrap();
            let e = rec.errors();
            // R^2 of log error over last 50, and over a detected decay window.
            let r2_last50 = r2_of_log_fit(&e[250..=300]);
            println!(
                "seed {seed} {label}: e0 {:.3e} e100 {:.3e} e300 {:.3e} max {:.3e} diverged {} r2(last50) {:.3} elapsed {:?}",
                e[0],
                e[100],
                e[300],
                rec.max_error(),
                rec.diverged,
                r2_last50,
                t0.elapsed()
            );
        }
    }
    println!("total {:?}", start.elapsed());
}

fn r2_of_log_fit(errors: &[f64]) -> f64 {
    let xs: Vec<f64> = (0..errors.len()).map(|i| i as f64).collect();
    let ys: Vec<f64> = errors.iter().map(|e| e.max(1e-300).ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| {
            let p = intercept + slope * x;
            (y - p) * (y - p)
        })
        .sum();
    let ss_tot: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    if ss_tot == 0.0 {
        1.0
    } else {
        1.0 - ss_res / ss_tot
    }
}

fn profiles() {
    for seed in 1..=5u64 {
        let mdp = garnet(seed);
        for tau in [0.1, 0.5, 1.0] {
            let t = Temperature::new(tau).unwrap();
            let refs = SoftRefs::solve(&mdp, t, &RefSolverParams::default()).unwrap();
            let prof =
                contraction_profile(&mdp, t, &refs.mu_star, &refs.pi_star, 0.0).unwrap();
            let qnorm = weighted_l2_norm(&refs.q_star, &refs.mu_star).unwrap();
            println!(
                "seed {seed} tau {tau}: pi_min {:.3e} c_inf {:.3e} beta {:.3e} r0 {:.3e} ||Q*|| {:.3}",
                prof.pi_min, prof.c_inf, prof.beta_loc, prof.r0, qnorm
            );
        }
    }
}

fn population_dynamics() {
    let start = std::time::Instant::now();
    for seed in 1..=5u64 {
        let mdp = garnet(seed);
        let t = Temperature::new(0.1).unwrap();
        let refs = SoftRefs::solve(&mdp, t, &RefSolverParams::default()).unwrap();
        let behavior = dirichlet_behavior_policy(&mdp, seed);
        let nu_b = behavior_measure(&mdp, &behavior);
        let features = build_realizable_features(&refs.q_star, 5, seed, &refs.mu_star).unwrap();
        let env = FqiEnv {
            mdp: &mdp,
            features: &features,
            behavior: &behavior,
            nu_b,
        };
        let params = FqiParams::new(
            t,
            300,
            0.0,
            WeightingMode::StationaryExact { refresh_period: 1 },
        );
        // Basin start: q0 near Q*.
        let q0 = basin_init(&features, &refs, 1e-7, seed).unwrap();
        let rec = run_fqi(&env, FqiMode::Population, &q0, &params, &refs).unwrap();
        let e = rec.errors();
        let rhos: Vec<f64> = e.windows(2).map(|w| w[1] / w[0]).collect();
        println!(
            "seed {seed}: e0 {:.3e} e50 {:.3e} e300 {:.3e} ratio300 {:.3e}",
            e[0],
            e[50],
            e[300],
            e[300] / e[0]
        );
        println!(
            "  rho5..12 {:?}",
            &rhos[5..12]
                .iter()
                .map(|r| format!("{r:.4}"))
                .collect::<Vec<_>>()
        );
        println!(
            "  rho late {:?}",
            &rhos[290..299]
                .iter()
                .map(|r| format!("{r:.4}"))
                .collect::<Vec<_>>()
        );
        // Also from theta = 0.
        let rec0 = run_fqi(
            &env,
            FqiMode::Population,
            &LinearQ::zeros(&features),
            &params,
            &refs,
        )
        .unwrap();
        let e0 = rec0.errors();
        println!(
            "  from zero: e0 {:.3e} e300 {:.3e} ratio {:.3e} monotone {}",
            e0[0],
            e0[300],
            e0[300] / e0[0],
            e0.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12))
        );
    }
    println!("elapsed {:?}", start.elapsed());
}
