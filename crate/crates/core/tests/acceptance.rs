//! End-to-end acceptance checks. Each test prints one `criterion N: PASS|FAIL`
//! line before asserting, so `cargo test -- --nocapture` gives a summary.

use std::time::Instant;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use impact_core::baselines::{
    matching_force_torque, opposite_linear_acceleration, revised_opposite, solve_contact_point, BaselineEstimate,
    RevisedKind, RigidBodyParams,
};
use impact_core::eval::{
    compare_methods, confusion, mae, peak_metrics, pointwise_metrics, r2, rmse, run_experiment, ExperimentConfig,
    SplitFractions,
};
use impact_core::geometry::{hit_point, setup_to_region, HelmetRegion, ImpactSetup, HELMET_RADIUS_MM};
use impact_core::kinematics::{mirror_series, zero_phase_lowpass, FeatureTensor, KinematicSeries, N_CHANNELS, SERIES_LEN};
use impact_core::model::{batch_loss, loss_and_gradient, Block, Hyperparameters, LossKind, Mode, Params, Target};
use impact_core::surrogate::{linspace, simulate_grid, simulate_impact, GridSpec, SurrogateConfig};

fn report(n: u32, pass: bool, detail: String) {
    println!("criterion {n}: {} ({detail})", if pass { "PASS" } else { "FAIL" });
}

#[test]
fn criterion_01_gradient_matches_finite_differences() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let params = Params::glorot(N_CHANNELS, 4, &mut rng);
    let features: Vec<FeatureTensor> = (0..3)
        .map(|_| FeatureTensor::from_vec((0..SERIES_LEN * N_CHANNELS).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap())
        .collect();
    let refs: Vec<&FeatureTensor> = features.iter().collect();
    let mut worst = 0.0f64;
    let mut worst_at = String::new();
    for mode in [Mode::Scalar, Mode::Sequence] {
        let targets: Vec<Vec<f64>> =
            (0..3).map(|_| (0..mode.output_len()).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let trefs: Vec<&[f64]> = targets.iter().map(Vec::as_slice).collect();
        let (_, grad) = loss_and_gradient(&params, mode, &refs, &trefs, LossKind::Squared, 0.0).unwrap();
        for block in Block::ALL {
            let (mut diff, mut scale) = (0.0f64, 0.0f64);
            for i in params.range(block) {
                let h = 1e-5;
                let mut p = params.clone();
                p.as_mut_slice()[i] += h;
                let up = batch_loss(&p, mode, &refs, &trefs, LossKind::Squared, 0.0);
                p.as_mut_slice()[i] -= 2.0 * h;
                let down = batch_loss(&p, mode, &refs, &trefs, LossKind::Squared, 0.0);
                let fd = (up - down) / (2.0 * h);
                let an = grad.as_slice()[i];
                diff = diff.max((an - fd).abs());
                scale = scale.max(an.abs().max(fd.abs()));
            }
            let rel = diff / scale;
            if rel > worst {
                worst = rel;
                worst_at = format!("{mode:?} {}", block.name());
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = worst < 1e-4 && secs < 60.0;
    report(1, pass, format!("max relative error {worst:.2e} at {worst_at}, {secs:.1} s"));
    assert!(pass);
}

/// Brute-force first hit of the impactor line on the helmet sphere.
fn ray_march(setup: &ImpactSetup) -> Option<Vector3<f64>> {
    let (a, b) = (setup.alpha_deg.to_radians(), setup.beta_deg.to_radians());
    // Head-to-global rotation, yaw about z after a nose-down pitch.
    let yaw = nalgebra::Rotation3::from_axis_angle(&Vector3::z_axis(), a);
    let pitch = nalgebra::Rotation3::from_axis_angle(&Vector3::y_axis(), -b);
    let to_head = (yaw * pitch).inverse();
    let origin = Vector3::new(0.0, -setup.y_mm, -setup.z_mm);
    let at = |t: f64| to_head * (origin + Vector3::new(t, 0.0, 0.0));
    let step = 0.01;
    let r2 = HELMET_RADIUS_MM * HELMET_RADIUS_MM;
    let mut t = -2.0 * HELMET_RADIUS_MM;
    while t < 2.0 * HELMET_RADIUS_MM {
        if at(t + step).norm_squared() <= r2 {
            let (mut lo, mut hi) = (t, t + step);
            for _ in 0..40 {
                let mid = 0.5 * (lo + hi);
                if at(mid).norm_squared() <= r2 {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            return Some(at(hi));
        }
        t += step;
    }
    None
}

fn region_of_point(p: &Vector3<f64>) -> HelmetRegion {
    let theta = p.y.atan2(p.x).to_degrees();
    let eta = (p.z / p.norm()).asin().to_degrees();
    if eta < -34.0 {
        HelmetRegion::Top
    } else if (-45.0..45.0).contains(&theta) {
        HelmetRegion::Facemask
    } else if (45.0..135.0).contains(&theta) {
        HelmetRegion::Right
    } else if (-135.0..-45.0).contains(&theta) {
        HelmetRegion::Left
    } else {
        HelmetRegion::Back
    }
}

#[test]
fn criterion_02_geometry_matches_ray_march() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut hits, mut worst, mut region_ok, mut miss_mismatch) = (0usize, 0.0f64, 0usize, 0usize);
    for _ in 0..10_000 {
        let setup = ImpactSetup::new(
            rng.gen_range(-180.0..180.0),
            rng.gen_range(-45.0..70.0),
            rng.gen_range(-120.0..120.0),
            rng.gen_range(-120.0..120.0),
            rng.gen_range(3.0..10.0),
        );
        match (hit_point(&setup), ray_march(&setup)) {
            (Ok(p), Some(q)) => {
                hits += 1;
                worst = worst.max((p - q).norm());
                region_ok += usize::from(setup_to_region(&setup).unwrap() == region_of_point(&q));
            }
            (Err(_), None) => {}
            _ => miss_mismatch += 1,
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = worst < 1e-3 && region_ok == hits && miss_mismatch == 0 && secs < 60.0;
    report(
        2,
        pass,
        format!("{hits} hits, max distance {worst:.2e} mm, regions {region_ok}/{hits}, hit/miss disagreements {miss_mismatch}, {secs:.1} s"),
    );
    assert!(pass);
}

#[test]
fn criterion_03_contact_point_roundtrip() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let radius = HELMET_RADIUS_MM;
    let (mut worst_angle, mut worst_residual, mut n) = (0.0f64, 0.0f64, 0);
    while n < 2000 {
        let dir = Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        if dir.norm() < 0.1 || dir.norm() > 1.0 {
            continue;
        }
        let r0 = dir.normalize() * (radius / 1000.0);
        let f_dir = Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        let f = f_dir * rng.gen_range(100.0..10_000.0);
        // The constructed force must point into the head at r0.
        let f = if r0.dot(&f) > 0.0 { -f } else { f };
        if (r0.normalize().dot(&f.normalize())).abs() > 0.999 || (r0.normalize().dot(&f.normalize())).abs() < 0.05 {
            continue;
        }
        let t = r0.cross(&f);
        let (r, flag) = solve_contact_point(&f, &t, radius).unwrap();
        assert!(flag.is_none());
        let r_m = r / 1000.0;
        worst_angle = worst_angle.max(r_m.angle(&r0));
        worst_residual = worst_residual.max((r_m.cross(&f) - t).norm() / t.norm());
        n += 1;
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = worst_angle < 1e-6 && worst_residual < 1e-9 && secs < 10.0;
    report(3, pass, format!("{n} cases, max angle {worst_angle:.2e} rad, max residual {worst_residual:.2e}, {secs:.2} s"));
    assert!(pass);
}

fn rms_diff(a: &KinematicSeries, b: &KinematicSeries) -> f64 {
    let mut s = 0.0;
    for (x, y) in a.lin_acc().iter().zip(b.lin_acc()).chain(a.ang_vel().iter().zip(b.ang_vel())) {
        s += (x - y).norm_squared();
    }
    (s / (6 * SERIES_LEN) as f64).sqrt()
}

fn mirrored_angle_deg(a: &BaselineEstimate, b: &BaselineEstimate) -> f64 {
    let p = a.point_mm;
    let q = Vector3::new(p.x, -p.y, p.z);
    // atan2 form stays accurate for nearly parallel vectors, unlike acos.
    q.cross(&b.point_mm).norm().atan2(q.dot(&b.point_mm)).to_degrees()
}

#[test]
fn criterion_04_mirror_symmetry_chain() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let config = SurrogateConfig::default();
    let params = RigidBodyParams::default();
    let (mut worst_rms, mut worst_deg, mut n) = (0.0f64, 0.0f64, 0);
    while n < 50 {
        let setup = ImpactSetup::new(
            rng.gen_range(-180.0..180.0),
            rng.gen_range(-45.0..70.0),
            rng.gen_range(-120.0..120.0),
            rng.gen_range(-120.0..120.0),
            rng.gen_range(3.0..10.0),
        );
        let Ok(direct) = simulate_impact(&setup, &config) else { continue };
        let mirrored = simulate_impact(&setup.mirrored(), &config).unwrap();
        let reflected = mirror_series(&direct.series);
        worst_rms = worst_rms.max(rms_diff(&reflected, &mirrored.series));

        let estimators: [&dyn Fn(&KinematicSeries) -> BaselineEstimate; 5] = [
            &|s| opposite_linear_acceleration(s).unwrap(),
            &|s| revised_opposite(s, RevisedKind::Acceleration).unwrap(),
            &|s| revised_opposite(s, RevisedKind::Velocity).unwrap(),
            &|s| revised_opposite(s, RevisedKind::Position).unwrap(),
            &|s| matching_force_torque(s, &params).unwrap().estimate,
        ];
        for est in estimators {
            worst_deg = worst_deg.max(mirrored_angle_deg(&est(&direct.series), &est(&reflected)));
        }
        n += 1;
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = worst_rms < 1e-9 && worst_deg < 1e-6 && secs < 300.0;
    report(4, pass, format!("{n} setups, max kinematics RMS {worst_rms:.2e}, max baseline angle {worst_deg:.2e} deg, {secs:.1} s"));
    assert!(pass);
}

#[test]
fn criterion_05_filter_properties() {
    let (fc, fs) = (300.0, 1000.0);
    let mut peak_ok = true;
    for (center, width) in [(72usize, 3.0f64), (40, 6.0), (100, 1.5)] {
        let x: Vec<f64> = (0..SERIES_LEN)
            .map(|i| (-((i as f64 - center as f64) / width).powi(2)).exp())
            .collect();
        let y = zero_phase_lowpass(&x, fc, fs).unwrap();
        let argmax = (0..y.len()).fold(0, |b, i| if y[i] > y[b] { i } else { b });
        peak_ok &= argmax == center;
    }
    let dc = zero_phase_lowpass(&[3.7; SERIES_LEN], fc, fs).unwrap();
    let dc_err = dc.iter().map(|v| (v - 3.7).abs() / 3.7).fold(0.0, f64::max);

    // 10 Hz sine over 1 s; amplitude read from the interior.
    let n = 1000;
    let f = 10.0;
    let x: Vec<f64> = (0..n).map(|i| (2.0 * std::f64::consts::PI * f * i as f64 / fs).sin()).collect();
    let y = zero_phase_lowpass(&x, fc, fs).unwrap();
    let amp = y[200..800].iter().fold(0.0f64, |m, v| m.max(v.abs()));
    // Bilinear Butterworth magnitude, squared by the two passes.
    let ratio = (std::f64::consts::PI * f / fs).tan() / (std::f64::consts::PI * fc / fs).tan();
    let expected = 1.0 / (1.0 + ratio.powi(4));
    let amp_err = (amp - expected).abs() / expected;

    let pass = peak_ok && dc_err < 1e-9 && amp_err < 0.01;
    report(5, pass, format!("peak index preserved {peak_ok}, DC error {dc_err:.1e}, 10 Hz amplitude error {amp_err:.2e}"));
    assert!(pass);
}

#[test]
fn criterion_06_metric_oracles() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst = 0.0f64;
    let mut confusion_ok = true;
    let rel = |a: f64, b: f64| (a - b).abs() / b.abs().max(1.0);
    for _ in 0..100 {
        let n = rng.gen_range(2..60);
        let p: Vec<f64> = (0..n).map(|_| rng.gen_range(-50.0..50.0)).collect();
        let r: Vec<f64> = (0..n).map(|_| rng.gen_range(-50.0..50.0)).collect();
        let mut abs_sum = 0.0;
        let mut sq_sum = 0.0;
        for i in 0..n {
            abs_sum += (p[i] - r[i]).abs();
            sq_sum += (p[i] - r[i]).powi(2);
        }
        let m = abs_sum / n as f64;
        let s = (sq_sum / n as f64).sqrt();
        let mean = r.iter().sum::<f64>() / n as f64;
        let tot: f64 = r.iter().map(|v| (v - mean).powi(2)).sum();
        let q = 1.0 - sq_sum / tot;
        worst = worst.max(rel(mae(&p, &r).unwrap(), m));
        worst = worst.max(rel(rmse(&p, &r).unwrap(), s));
        worst = worst.max(rel(r2(&p, &r).unwrap(), q));
        assert!(rmse(&p, &r).unwrap() >= mae(&p, &r).unwrap());

        let k = rng.gen_range(1..6);
        let len = rng.gen_range(10..30);
        let profiles = |rng: &mut ChaCha8Rng| -> Vec<Vec<f64>> {
            (0..k).map(|_| (0..len).map(|_| rng.gen_range(0.0..5.0)).collect()).collect()
        };
        let (pp, rr) = (profiles(&mut rng), profiles(&mut rng));
        let pv: Vec<&[f64]> = pp.iter().map(Vec::as_slice).collect();
        let rv: Vec<&[f64]> = rr.iter().map(Vec::as_slice).collect();
        let (mut pa, mut ps) = (0.0, 0.0);
        for (a, b) in pp.iter().zip(&rr) {
            for (x, y) in a.iter().zip(b) {
                pa += (x - y).abs();
                ps += (x - y).powi(2);
            }
        }
        let cnt = (k * len) as f64;
        let pw = pointwise_metrics(&pv, &rv).unwrap();
        worst = worst.max(rel(pw.mae, pa / cnt)).max(rel(pw.rmse, (ps / cnt).sqrt()));
        assert!(pw.rmse >= pw.mae);
        let max_of = |v: &Vec<f64>| {
            let mut m = v[0];
            for x in v {
                if *x > m {
                    m = *x;
                }
            }
            m
        };
        let peak_err: f64 = pp.iter().zip(&rr).map(|(a, b)| (max_of(a) - max_of(b)).abs()).sum::<f64>() / k as f64;
        let pk = peak_metrics(&pv, &rv).unwrap();
        worst = worst.max(rel(pk.mae, peak_err));
        assert!(pk.rmse >= pk.mae);

        let preds: Vec<HelmetRegion> = (0..n).map(|_| HelmetRegion::ALL[rng.gen_range(0..5)]).collect();
        let refs: Vec<HelmetRegion> = (0..n).map(|_| HelmetRegion::ALL[rng.gen_range(0..5)]).collect();
        let cm = confusion(&preds, &refs).unwrap();
        for (i, ri) in HelmetRegion::ALL.iter().enumerate() {
            for (j, pj) in HelmetRegion::ALL.iter().enumerate() {
                let c = preds.iter().zip(&refs).filter(|(p, r)| *p == pj && *r == ri).count() as u64;
                confusion_ok &= cm.counts[i][j] == c;
            }
        }
        let acc = preds.iter().zip(&refs).filter(|(p, r)| p == r).count() as f64 / n as f64;
        worst = worst.max(rel(cm.accuracy().unwrap(), acc));
    }
    let pass = worst < 1e-12 && confusion_ok;
    report(6, pass, format!("100 fixtures, max relative deviation {worst:.2e}, confusion counts match {confusion_ok}"));
    assert!(pass);
}

fn experiment_config() -> ExperimentConfig {
    let scalar = Hyperparameters {
        hidden_units: 8,
        learning_rate: 0.005,
        epochs: 30,
        dropout_rate: 0.1,
        l2_kernel: 1e-5,
        batch_size: 32,
        seed: 0,
    };
    ExperimentConfig {
        sequence_hyper: Hyperparameters {
            hidden_units: 16,
            epochs: 15,
            ..scalar.clone()
        },
        scalar_hyper: scalar,
        seeds: vec![0, 1, 2],
        split: SplitFractions::default(),
        keep_mirror_pairs: true,
        targets: Target::ALL.to_vec(),
    }
}

fn experiment_grid() -> GridSpec {
    GridSpec {
        alpha_deg: linspace(10.0, 170.0, 5),
        beta_deg: linspace(-45.0, 70.0, 4),
        y_mm: linspace(-120.0, 120.0, 5),
        z_mm: linspace(-120.0, 120.0, 5),
        speed_mps: vec![3.0, 6.5, 10.0],
    }
}

/// Criteria 7 to 10 share one dataset and one experiment run.
#[test]
fn criteria_07_to_10_surrogate_experiment() {
    let start = Instant::now();
    let data = simulate_grid(&experiment_grid(), &SurrogateConfig::default(), 1).unwrap();
    let config = experiment_config();
    let outcome = run_experiment(&data, &config).unwrap();
    let rep = &outcome.report;
    let secs = start.elapsed().as_secs_f64();

    let no_divergence = rep.seeds.iter().all(|s| s.diverged.is_none());
    let speed = rep.test_summary(Target::Speed, "r2").unwrap();
    let beta = rep.test_summary(Target::Beta, "r2").unwrap();
    let z = rep.test_summary(Target::Z, "r2").unwrap();
    let pass7 = data.len() >= 2000 && speed.n == 3 && no_divergence && speed.mean >= 0.90 && beta.mean >= 0.70 && secs < 45.0 * 60.0;
    report(
        7,
        pass7,
        format!(
            "{} impacts, 3 seeds, speed R2 {:.4}±{:.4}, beta R2 {:.4}±{:.4}, Z R2 {:.4}±{:.4} (reported only), {secs:.0} s",
            data.len(),
            speed.mean,
            speed.std,
            beta.mean,
            beta.std,
            z.mean,
            z.std
        ),
    );

    let params = RigidBodyParams::default();
    let mut comparisons = Vec::new();
    let mut pass8 = true;
    let mut detail8 = Vec::new();
    for run in &outcome.runs {
        let cmp = compare_methods(&data, &run.test_indices, &run.models, &params).unwrap();
        let lstm = cmp.method("lstm").unwrap().accuracy.unwrap();
        let ola = cmp.method("opposite_linear_acceleration").unwrap().accuracy.unwrap();
        pass8 &= lstm > ola;
        detail8.push(format!("seed {}: LSTM {lstm:.3} vs OLA {ola:.3}", run.result.seed));
        comparisons.push(cmp);
    }
    report(8, pass8, detail8.join(", "));

    let mut pass9 = true;
    let mut detail9 = Vec::new();
    for target in [Target::ForceHelmet, Target::ForceHead] {
        let mean_peak = data
            .iter()
            .map(|d| target.values(d).into_iter().fold(f64::NEG_INFINITY, f64::max))
            .sum::<f64>()
            / data.len() as f64;
        let peak_r2 = rep.test_summary(target, "peak_r2").unwrap().mean;
        let pw_mae = rep.test_summary(target, "pointwise_mae").unwrap().mean;
        pass9 &= peak_r2 >= 0.80 && pw_mae <= 0.10 * mean_peak;
        detail9.push(format!(
            "{}: peak R2 {peak_r2:.4}, pointwise MAE {pw_mae:.4} kN vs 10% of mean peak {:.4} kN",
            target.name(),
            0.10 * mean_peak
        ));
    }
    report(9, pass9, detail9.join("; "));

    let again = run_experiment(&data, &config).unwrap();
    let first_json = serde_json::to_string(rep).unwrap();
    let second_json = serde_json::to_string(&again.report).unwrap();
    let mut pass10 = first_json == second_json;
    for (run, cmp) in again.runs.iter().zip(&comparisons) {
        let repeat = compare_methods(&data, &run.test_indices, &run.models, &params).unwrap();
        pass10 &= serde_json::to_string(&repeat).unwrap() == serde_json::to_string(cmp).unwrap();
    }
    report(10, pass10, format!("metric report of {} bytes repeated {}", first_json.len(), if pass10 { "bit-identically" } else { "with differences" }));

    assert!(pass7, "criterion 7");
    assert!(pass8, "criterion 8");
    assert!(pass9, "criterion 9");
    assert!(pass10, "criterion 10");
}
