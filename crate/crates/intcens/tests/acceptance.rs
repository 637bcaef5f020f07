//! End-to-end acceptance checks, one test per criterion. Each prints a
//! single pass/fail line (visible with `--nocapture`; failures also panic
//! with details).

use intcens::asymptotics::{chernoff_variance, sigma, ChernoffParams, ModelSpec, Variant};
use intcens::characterization::{verify_fenchel_simple, w2_process};
use intcens::data_model::{
    CurrentStatusObservation, Observation2, Sample2, StepDistribution,
};
use intcens::estimators::{
    criterion_ls_full, fit_current_status, fit_ls_full, fit_ls_full_barrier, fit_ls_simple,
    fit_mle_ic2, sup_distance, BarrierOptions, IcmOptions,
};
use intcens::isotonic::{gcm_left_slopes, pava, CusumDiagram};
use intcens::simulation::{gen_model, rep_rng};
use intcens::smooth_functionals::{functional_variance_study, solve_scores, theta_values};
use rand::Rng;

fn report(criterion: &str, pass: bool) {
    println!(
        "acceptance {criterion}: {}",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "acceptance criterion failed: {criterion}");
}

/// The case-2 machinery on degenerate intervals must reproduce the
/// current-status convex-minorant estimator exactly.
#[test]
fn criterion_1_current_status_equivalence() {
    let far_v = 1000.0;
    let opts = IcmOptions {
        tol: 1e-12,
        max_iter: 5000,
        ..IcmOptions::default()
    };
    let mut worst = 0.0f64;
    for rep in 0..200 {
        let mut rng = rep_rng(101, rep);
        let n = rng.gen_range(5..=500);
        let mut cs = Vec::with_capacity(n);
        let mut ic = Vec::with_capacity(n);
        for _ in 0..n {
            let t: f64 = rng.gen_range(0.05..2.0);
            let x: f64 = rng.gen_range(0.0..2.0);
            let delta = u8::from(x <= t);
            cs.push(CurrentStatusObservation { t, delta });
            // a status-at-t observation is the case-2 observation with the
            // second inspection beyond all data: X <= t becomes d0, X > t
            // becomes d1 relative to the far endpoint
            ic.push(Observation2::new(t, far_v, delta, 1 - delta).unwrap());
        }
        let f_cs = fit_current_status(&cs).unwrap();
        let sample = Sample2::new(ic, Some(far_v)).unwrap();
        let f_ic = fit_mle_ic2(&sample, &opts).unwrap();
        let times: Vec<f64> = cs.iter().map(|o| o.t).collect();
        worst = worst.max(sup_distance(&f_cs, &f_ic.f, &times));
    }
    report(
        "1 current-status equivalence (sup distance <= 1e-10)",
        worst <= 1e-10,
    );
}

/// The ICM and log-barrier solvers must agree on the full LS estimator.
#[test]
fn criterion_2_solver_cross_agreement() {
    let model = ModelSpec::trunc_exp_02();
    let icm_opts = IcmOptions {
        tol: 1e-9,
        max_iter: 2000,
        ..IcmOptions::default()
    };
    let mut worst = 0.0f64;
    for rep in 0..50 {
        let mut rng = rep_rng(202, rep);
        let sample = gen_model(&model, 200, &mut rng).unwrap();
        let icm = fit_ls_full(&sample, &icm_opts).unwrap();
        let bar = fit_ls_full_barrier(&sample, &BarrierOptions::default()).unwrap();
        let times = sample.grid_times();
        worst = worst.max(sup_distance(&icm.f, &bar, &times));
    }
    report(
        "2 solver cross-agreement (sup distance <= 1e-6)",
        worst <= 1e-6,
    );
}

/// Every fit must carry a passing optimality certificate, and the one-step
/// process must vanish just left of each jump.
#[test]
fn criterion_3_optimality_certificates() {
    let model = ModelSpec::trunc_exp_02();
    let opts = IcmOptions {
        tol: 1e-8,
        max_iter: 2000,
        ..IcmOptions::default()
    };
    let mut pass = true;
    for rep in 0..30 {
        let mut rng = rep_rng(303, rep);
        let sample = gen_model(&model, 150, &mut rng).unwrap();
        let full = fit_ls_full(&sample, &opts).unwrap();
        pass &= full.converged && full.fenchel.pass && full.fenchel.tol == 1e-8;

        let simple = fit_ls_simple(&sample).unwrap();
        let rep_simple = verify_fenchel_simple(&simple, &sample, 1e-10);
        pass &= rep_simple.pass;

        // complementary slackness: W2 returns to ~0 immediately left of
        // every jump of the one-step estimator
        let w2 = w2_process(&simple, &sample);
        let times = sample.grid_times();
        let mut prev_val = 0.0;
        for (j, &t) in times.iter().enumerate() {
            let val = simple.evaluate(t);
            if val > prev_val && j > 0 {
                // W2 at the preceding grid point
                pass &= w2[j - 1].1.abs() <= 1e-10;
            }
            if val > prev_val && j == 0 {
                // jump at the first point: W2(0) = 0 trivially
            }
            prev_val = val;
        }
    }
    report("3 optimality certificates", pass);
}

/// Exact minimizer of the LS criterion over monotone [0,1] vectors by
/// enumeration of constant-block patterns with pinned 0/1 boundary blocks.
/// Each pattern's free block values solve a small linear system; the best
/// feasible candidate is the global minimum of the convex criterion.
fn brute_force_ls_full(sample: &Sample2) -> Vec<f64> {
    let k = sample.grid().len();
    let pairs: Vec<(usize, usize)> = (0..sample.n()).map(|i| sample.grid_indices(i)).collect();
    let obs = sample.observations();

    let crit = |y: &[f64]| -> f64 {
        let mut c = 0.0;
        for (i, &(ju, jv)) in pairs.iter().enumerate() {
            let o = &obs[i];
            let r0 = y[ju] - f64::from(o.d0);
            let r1 = y[jv] - y[ju] - f64::from(o.d1);
            let r2 = y[jv] - f64::from(o.d0 + o.d1);
            c += r0 * r0 + r1 * r1 + r2 * r2;
        }
        c
    };

    let mut best = (f64::INFINITY, vec![0.0; k]);
    // compositions of the k grid points into consecutive blocks, encoded by
    // "new block starts here" bits
    for cut in 0..(1u32 << (k - 1)) {
        let mut block_of = vec![0usize; k];
        let mut nblocks = 1;
        for j in 1..k {
            if cut & (1 << (j - 1)) != 0 {
                nblocks += 1;
            }
            block_of[j] = nblocks - 1;
        }
        // z leading blocks pinned at 0, o trailing blocks pinned at 1
        for z in 0..=nblocks {
            for o in 0..=(nblocks - z) {
                let free = nblocks - z - o;
                // value of block b: 0 for b < z, variable for z <= b <
                // z+free, 1 otherwise
                let mut h = nalgebra::DMatrix::<f64>::zeros(free.max(1), free.max(1));
                let mut g = nalgebra::DVector::<f64>::zeros(free.max(1));
                let mut constant_ok = true;
                // accumulate the quadratic in the free variables x_m:
                // for each residual r = sum c_m x_m + d, add to H and g
                let add_residual = |coef: &[(usize, f64)], d: f64,
                                        h: &mut nalgebra::DMatrix<f64>,
                                        g: &mut nalgebra::DVector<f64>| {
                    for &(m1, c1) in coef {
                        for &(m2, c2) in coef {
                            h[(m1, m2)] += 2.0 * c1 * c2;
                        }
                        g[m1] += 2.0 * c1 * d;
                    }
                };
                let var_of = |j: usize| -> (Option<usize>, f64) {
                    let b = block_of[j];
                    if b < z {
                        (None, 0.0)
                    } else if b < z + free {
                        (Some(b - z), 0.0)
                    } else {
                        (None, 1.0)
                    }
                };
                for (i, &(ju, jv)) in pairs.iter().enumerate() {
                    let ob = &obs[i];
                    let (vu, cu) = var_of(ju);
                    let (vv, cv) = var_of(jv);
                    // r0 = y_u - d0
                    let mut coef = Vec::new();
                    if let Some(m) = vu {
                        coef.push((m, 1.0));
                    }
                    add_residual(&coef, cu - f64::from(ob.d0), &mut h, &mut g);
                    // r1 = y_v - y_u - d1
                    let mut coef = Vec::new();
                    if let Some(m) = vv {
                        coef.push((m, 1.0));
                    }
                    if let Some(m) = vu {
                        coef.push((m, -1.0));
                    }
                    add_residual(&coef, cv - cu - f64::from(ob.d1), &mut h, &mut g);
                    // r2 = y_v - d0 - d1
                    let mut coef = Vec::new();
                    if let Some(m) = vv {
                        coef.push((m, 1.0));
                    }
                    add_residual(&coef, cv - f64::from(ob.d0 + ob.d1), &mut h, &mut g);
                }
                let x = if free == 0 {
                    Vec::new()
                } else {
                    match h.clone().svd(true, true).solve(&(-&g), 1e-12) {
                        Ok(x) => x.iter().copied().collect::<Vec<f64>>(),
                        Err(_) => {
                            constant_ok = false;
                            Vec::new()
                        }
                    }
                };
                if !constant_ok {
                    continue;
                }
                // assemble and check feasibility (weak inequalities: ties
                // reduce to coarser patterns enumerated elsewhere)
                let mut y = vec![0.0; k];
                let mut feasible = true;
                for j in 0..k {
                    let (v, c) = var_of(j);
                    y[j] = match v {
                        Some(m) => x[m],
                        None => c,
                    };
                }
                for j in 0..k {
                    if !(-1e-9..=1.0 + 1e-9).contains(&y[j]) {
                        feasible = false;
                    }
                    if j > 0 && y[j] < y[j - 1] - 1e-9 {
                        feasible = false;
                    }
                }
                if !feasible {
                    continue;
                }
                for v in y.iter_mut() {
                    *v = v.clamp(0.0, 1.0);
                }
                for j in 1..k {
                    if y[j] < y[j - 1] {
                        y[j] = y[j - 1];
                    }
                }
                let c = crit(&y);
                if c < best.0 {
                    best = (c, y);
                }
            }
        }
    }
    best.1
}

/// The ICM solution matches an exact enumeration oracle on every indicator
/// pattern of a fixed 4-observation design.
#[test]
fn criterion_4_brute_force_oracle() {
    let design = [(0.2, 0.8), (0.4, 1.2), (0.6, 1.5), (1.0, 1.8)];
    let opts = IcmOptions {
        tol: 1e-10,
        max_iter: 5000,
        ..IcmOptions::default()
    };
    let mut worst = 0.0f64;
    for pattern in 0..81u32 {
        let mut p = pattern;
        let mut obs = Vec::with_capacity(4);
        for &(u, v) in &design {
            let (d0, d1) = match p % 3 {
                0 => (1, 0),
                1 => (0, 1),
                _ => (0, 0),
            };
            p /= 3;
            obs.push(Observation2::new(u, v, d0, d1).unwrap());
        }
        let sample = Sample2::new(obs, Some(2.0)).unwrap();
        let fit = fit_ls_full(&sample, &opts).unwrap();
        let oracle = brute_force_ls_full(&sample);
        let f_oracle = StepDistribution::from_grid(&sample, &oracle).unwrap();
        // sanity: the oracle value can never exceed the solver's
        assert!(
            criterion_ls_full(&f_oracle, &sample)
                <= criterion_ls_full(&fit.f, &sample) + 1e-9
        );
        for (j, gp) in sample.grid().iter().enumerate() {
            worst = worst.max((fit.f.evaluate(gp.time) - oracle[j]).abs());
        }
    }
    report(
        "4 brute-force oracle (coordinate error <= 2e-3)",
        worst <= 2e-3,
    );
}

/// Scaled variance of the plug-in mean against the values reported for the
/// triangle model, and the information lower bound.
#[test]
fn criterion_5_functional_variances() {
    let reps = if std::env::var("INTCENS_FULL_STUDY").is_ok() {
        10_000
    } else {
        2_000
    };
    let model = ModelSpec::triangle_01();
    let opts = IcmOptions {
        tol: 1e-8,
        max_iter: 2000,
        ..IcmOptions::default()
    };
    let table = functional_variance_study(&model, 1000, reps, 505, &opts).unwrap();
    let targets = [0.1237086, 0.1259036, 0.1270756]; // mle, ls_full, ls_simple
    let bound = 0.1198987 * 0.97;
    let mut pass = true;
    for (row, &target) in table.rows.iter().zip(&targets) {
        let rel = (row.n_var - target).abs() / target;
        println!(
            "  {}: n*var = {:.7} (target {target}, rel err {:.3})",
            row.estimator.label(),
            row.n_var,
            rel
        );
        pass &= rel <= 0.08 && row.n_var >= bound && row.excluded == 0;
    }
    report("5 functional variances (within 8%, above lower bound)", pass);
}

/// The scaled variance of the full LS estimator tracks the theoretical
/// limit curve sigma(t)^2 Var(Z) for the uniform inspection model.
#[test]
fn criterion_6_variance_curve_vs_theory() {
    let model = ModelSpec::uniform_02();
    let n = 10_000;
    let reps = 1_000;
    let grid = [0.5, 1.0, 1.5];
    let opts = IcmOptions {
        tol: 1e-7,
        max_iter: 2000,
        ..IcmOptions::default()
    };

    let z = chernoff_variance(&ChernoffParams {
        paths: 50_000,
        ..ChernoffParams::default()
    })
    .unwrap();

    let mut values = vec![Vec::with_capacity(reps); grid.len()];
    for rep in 0..reps {
        let mut rng = rep_rng(606, rep as u64);
        let sample = gen_model(&model, n, &mut rng).unwrap();
        let fit = fit_ls_full(&sample, &opts).unwrap();
        for (g, &t) in grid.iter().enumerate() {
            values[g].push(fit.f.evaluate(t));
        }
    }
    let scale = (n as f64).powf(2.0 / 3.0);
    let mut pass = true;
    for (g, &t) in grid.iter().enumerate() {
        let xs = &values[g];
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let var =
            xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (xs.len() as f64 - 1.0);
        let scaled = scale * var;
        let s = sigma(t, &model, Variant::Full).unwrap();
        let theory = s * s * z.var;
        let rel = (scaled - theory).abs() / theory;
        println!("  t = {t}: scaled var {scaled:.4}, theory {theory:.4}, rel err {rel:.3}");
        pass &= rel <= 0.20;
    }
    let s1 = sigma(1.0, &model, Variant::Full).unwrap();
    pass &= (s1 - 0.7418).abs() < 5e-4;
    report("6 variance curve tracks theory (within 20%)", pass);
}

/// Median sup-error of each estimator strictly decreases with n.
#[test]
fn criterion_7_consistency_trend() {
    let model = ModelSpec::trunc_exp_02();
    let opts = IcmOptions {
        tol: 1e-7,
        max_iter: 2000,
        ..IcmOptions::default()
    };
    let eval: Vec<f64> = (1..200).map(|i| i as f64 * 0.01).collect();
    let mut medians = vec![Vec::new(); 3]; // mle, ls_full, ls_simple
    for (ni, &n) in [100usize, 400, 1600].iter().enumerate() {
        let mut errs = vec![Vec::with_capacity(50); 3];
        for rep in 0..50 {
            let mut rng = rep_rng(707 + ni as u64, rep);
            let sample = gen_model(&model, n, &mut rng).unwrap();
            let mle = fit_mle_ic2(&sample, &opts).unwrap();
            let full = fit_ls_full(&sample, &opts).unwrap();
            let simple = fit_ls_simple(&sample).unwrap();
            for (e, f) in [&mle.f, &full.f, &simple].iter().enumerate() {
                let sup = eval
                    .iter()
                    .map(|&t| (f.evaluate(t) - model.cdf(t)).abs())
                    .fold(0.0f64, f64::max);
                errs[e].push(sup);
            }
        }
        for e in 0..3 {
            errs[e].sort_by(|a, b| a.total_cmp(b));
            medians[e].push(0.5 * (errs[e][24] + errs[e][25]));
        }
    }
    let mut pass = true;
    for (e, name) in ["mle", "ls_full", "ls_simple"].iter().enumerate() {
        println!("  {name}: median sup-errors {:?}", medians[e]);
        pass &= medians[e][0] > medians[e][1] && medians[e][1] > medians[e][2];
    }
    report("7 consistency trend (median sup-error decreases)", pass);
}

/// Score-system invariants on MLE fits of triangle samples.
#[test]
fn criterion_8_score_system_invariants() {
    let model = ModelSpec::triangle_01();
    let opts = IcmOptions {
        tol: 1e-10,
        max_iter: 5000,
        ..IcmOptions::default()
    };
    let mut pass = true;
    for rep in 0..20 {
        let mut rng = rep_rng(808, rep);
        let sample = gen_model(&model, 500, &mut rng).unwrap();
        let fit = fit_mle_ic2(&sample, &opts).unwrap();
        let sol = solve_scores(&fit.f, &sample, &|x| x).unwrap();
        let centering: f64 = sol
            .scores
            .iter()
            .zip(&sol.masses)
            .map(|(a, p)| a * p)
            .sum();
        let theta = theta_values(&fit.f, &sol, &sample);
        let theta_mean = theta.iter().sum::<f64>() / theta.len() as f64;
        let doubled = solve_scores(&fit.f, &sample, &|x| 2.0 * x).unwrap();
        let lin_err = sol
            .scores
            .iter()
            .zip(&doubled.scores)
            .map(|(a, b)| (2.0 * a - b).abs())
            .fold(0.0f64, f64::max);
        pass &= centering.abs() <= 1e-8
            && theta_mean.abs() <= 1e-8
            && sol.residual <= 1e-10
            && lin_err <= 1e-10;
    }
    report("8 score-system invariants", pass);
}

/// Randomized isotonic-kernel checks: PAVA/GCM duality, projection
/// optimality, idempotence.
#[test]
fn criterion_9_kernel_properties() {
    let mut rng = rep_rng(909, 0);
    let mut pass = true;
    for _ in 0..1000 {
        let len = rng.gen_range(1..40);
        let values: Vec<f64> = (0..len).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let weights: Vec<f64> = (0..len).map(|_| rng.gen_range(0.1..4.0)).collect();
        let fit = pava(&values, &weights).unwrap();

        // duality with the GCM of the weighted cusum diagram
        let mut pts = Vec::new();
        let (mut x, mut y) = (0.0, 0.0);
        for (&v, &w) in values.iter().zip(&weights) {
            x += w;
            y += w * v;
            pts.push((x, y));
        }
        let slopes = gcm_left_slopes(&CusumDiagram::new(pts).unwrap()).unwrap();
        for (a, b) in fit.iter().zip(&slopes) {
            pass &= (a - b).abs() <= 1e-12;
        }

        // projection: no monotone competitor does better
        let sse = |g: &[f64]| -> f64 {
            g.iter()
                .zip(&values)
                .zip(&weights)
                .map(|((f, v), w)| w * (f - v) * (f - v))
                .sum()
        };
        let mut competitor = Vec::with_capacity(len);
        let mut acc: f64 = rng.gen_range(-5.0..5.0);
        for _ in 0..len {
            acc += rng.gen_range(0.0..1.0);
            competitor.push(acc);
        }
        pass &= sse(&fit) <= sse(&competitor) + 1e-12;

        // idempotence
        let refit = pava(&fit, &weights).unwrap();
        for (a, b) in fit.iter().zip(&refit) {
            pass &= (a - b).abs() <= 1e-12;
        }
    }
    report("9 kernel properties (1000 randomized checks)", pass);
}
