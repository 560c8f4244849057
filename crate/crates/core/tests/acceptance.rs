//! Acceptance criteria. Each test prints one `PASS`/`FAIL` line and then
//! asserts, so a red criterion fails the run.

use proton_sde::config::Settings;
use proton_sde::convergence::{strong_error_study, StudySetup, DEFAULT_H_REF, DEFAULT_H_VALUES};
use proton_sde::experiments::{angular_defaults, angular_run, sensitivity, sensitivity_config, simulate_dose, Estimator, SensOptions};
use proton_sde::integrators::{step_energy_milstein, SchemeId};
use proton_sde::model::{calibrate_kappa, csda_range, ModelParams, Param};
use proton_sde::montecarlo::noise::{aggregate, levy_area, path_rng, sample_increment, NoiseNeeds};
use proton_sde::montecarlo::{energy_trace, PathEngine, RunConfig};
use proton_sde::observables::{depth_profile, fwhm, peak};
use proton_sde::sensitivity::{det_energy, det_energy_sens, det_stopping_time_sens, step_sens_milstein, ParamSet, SensitivityState};
use proton_sde::stats::{ks_uniform_angles, mean_var, variance_se};
use proton_sde::{Dim, GridSpec};

fn verdict(name: &str, pass: bool, detail: String) {
    println!("{} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
    assert!(pass, "{name}: {detail}");
}

fn inside(v: f64, (lo, hi): (f64, f64)) -> bool {
    v >= lo && v <= hi
}

fn strong_orders() {
    let hs = DEFAULT_H_VALUES;
    let one = (0.85, 1.15);
    let half = (0.4, 0.6);
    let euler = strong_error_study(&StudySetup::<f64>::standard(SchemeId::GeometricEuler), &hs, DEFAULT_H_REF, 1000).unwrap();
    let rkmk = strong_error_study(&StudySetup::<f64>::standard(SchemeId::MilsteinRkmk), &hs, DEFAULT_H_REF, 1000).unwrap();
    let j: Vec<f64> = rkmk.slope_j.iter().map(|s| s.unwrap()).collect();
    let pass = inside(euler.slope_e, half)
        && inside(rkmk.slope_e, one)
        && inside(euler.slope_omega, half)
        && inside(rkmk.slope_omega, one)
        && inside(euler.slope_x, one)
        && inside(rkmk.slope_x, one)
        && j.iter().all(|s| inside(*s, one));
    verdict(
        "strong orders",
        pass,
        format!(
            "EM energy {:.3}, log-Milstein energy {:.3}, geometric angle {:.3}, RKMK angle {:.3}, position {:.3}/{:.3}, J {:.3}/{:.3}/{:.3}",
            euler.slope_e, rkmk.slope_e, euler.slope_omega, rkmk.slope_omega, euler.slope_x, rkmk.slope_x, j[0], j[1], j[2]
        ),
    );
}

fn structure_preservation() {
    let mut cfg = RunConfig::<f64>::reference(Dim::Three);
    cfg.n_paths = 10_000;
    cfg.params.kappa = 1e-3;
    let engine = PathEngine::new(&cfg).unwrap();
    let (mut e_min, mut dev_max): (f64, f64) = (f64::INFINITY, 0.0);
    for i in 0..cfg.n_paths as u64 {
        let end = engine
            .run_path(i, |_, s, _| {
                e_min = e_min.min(s.energy());
                dev_max = dev_max.max((s.omega.norm() - 1.0).abs());
                Ok(())
            })
            .unwrap();
        e_min = e_min.min(end.state.energy());
        dev_max = dev_max.max((end.state.omega.norm() - 1.0).abs());
    }
    let naive = angular_run(&Settings { t_max: Some(5.0), ..angular_defaults() }, SchemeId::EulerNaive).unwrap();
    let drifted = naive.final_norms.iter().filter(|r| (*r - 1.0).abs() > 1e-3).count() as f64 / naive.final_norms.len() as f64;
    verdict(
        "structure preservation",
        e_min > 0.0 && dev_max <= 1e-12 && drifted > 0.99,
        format!("RKMK min E {e_min:.3e}, max |‖Ω‖−1| {dev_max:.2e}; naive Euler paths with norm deviation > 1e-3: {:.2}%", 100.0 * drifted),
    );
}

fn ergodicity() {
    let s = angular_defaults();
    assert_eq!((s.eps0, s.h, s.t_max, s.n_paths), (0.1, 0.01, Some(40.0), 10_000));
    let mut detail = Vec::new();
    let mut pass = true;
    for scheme in [SchemeId::GeometricEuler, SchemeId::MilsteinRkmk] {
        let run = angular_run(&s, scheme).unwrap();
        let (d, p) = ks_uniform_angles(&run.angles);
        pass &= p > 0.01;
        detail.push(format!("{} D={d:.4} p={p:.3}", scheme.name()));
    }
    let naive = angular_run(&s, SchemeId::EulerNaive).unwrap();
    let (d, p) = ks_uniform_angles(&naive.angles);
    let mean_norm = naive.norms.last().unwrap().mean;
    // the naive chain either fails uniformity or leaves the circle
    let naive_broken = p < 0.01 || (mean_norm - 1.0).abs() > 0.1;
    pass &= naive_broken;
    detail.push(format!("euler_naive D={d:.4} p={p:.3} mean norm {mean_norm:.3}"));
    verdict("ergodicity", pass, detail.join("; "));
}

fn bragg_settings(kappa: f64) -> Settings {
    Settings { kappa, n_paths: 20_000, h: 0.01, nx: 100, ..Settings::default() }
}

fn bragg_peak_placement() {
    let s = bragg_settings(0.0);
    let dir = tempfile::tempdir().unwrap();
    let start = std::time::Instant::now();
    let run = simulate_dose(&s, dir.path()).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let g = &run.output.grid;
    let (xp, _) = peak(&depth_profile(&g.spec, &g.mean_dose()));
    let r = csda_range(62.0, &s.model_params()).unwrap();
    let rel = (xp - r).abs() / r;
    verdict("bragg peak placement", rel <= 0.05 && secs < 60.0, format!("peak {xp:.4} cm vs {r:.4} cm ({:.2}%), {secs:.1} s", 100.0 * rel));
}

fn straggling_trend() {
    let dir = tempfile::tempdir().unwrap();
    let mut rows = Vec::new();
    for kappa in [0.0, 4e-5, 1e-3] {
        let run = simulate_dose(&bragg_settings(kappa), dir.path()).unwrap();
        let g = &run.output.grid;
        let prof = depth_profile(&g.spec, &g.mean_dose());
        rows.push((kappa, peak(&prof).1, fwhm(&prof)));
    }
    let pass = rows.windows(2).all(|w| w[1].1 < w[0].1 && w[1].2 > w[0].2);
    let detail = rows.iter().map(|(k, h, w)| format!("κ={k:e}: height {h:.3}, FWHM {w:.4}")).collect::<Vec<_>>().join("; ");
    verdict("straggling trend", pass, detail);
}

/// Same-noise central difference of E_T in θ, with J propagated alongside.
fn j_vs_coupled_fd(params: &ModelParams<f64>, theta: Param, h: f64, t: f64, n_paths: u64) -> (f64, f64) {
    let n = (t / h).round() as usize;
    let delta = 1e-5 * params.get(theta);
    let (plus, minus) = (params.with(theta, params.get(theta) + delta), params.with(theta, params.get(theta) - delta));
    let needs = NoiseNeeds::for_scheme(SchemeId::MilsteinRkmk, Dim::Three);
    let (mut err2, mut ref2) = (0.0, 0.0);
    for i in 0..n_paths {
        let mut rng = path_rng(17, i);
        let y0 = 62f64.ln();
        let (mut y, mut yp, mut ym) = (y0, y0, y0);
        let mut j = SensitivityState::zero();
        for _ in 0..n {
            let xi = sample_increment::<f64, _>(&mut rng, h, needs, 10).xi_e;
            j = step_sens_milstein(&j, y.exp(), h, xi, params, ParamSet::of(&[theta])).unwrap();
            y = step_energy_milstein(y, h, xi, params).unwrap();
            yp = step_energy_milstein(yp, h, xi, &plus).unwrap();
            ym = step_energy_milstein(ym, h, xi, &minus).unwrap();
        }
        let fd = (yp.exp() - ym.exp()) / (2.0 * delta);
        err2 += (j.get(theta) - fd).powi(2);
        ref2 += fd * fd;
    }
    ((err2 / n_paths as f64).sqrt(), (ref2 / n_paths as f64).sqrt())
}

fn sensitivity_deterministic_core() {
    let pr = ModelParams::<f64>::default();
    let rel = |a: f64, b: f64| (a - b).abs() / b.abs().max(1e-300);
    let stop = |q: &ModelParams<f64>| csda_range(62.0, q).unwrap();
    let mut worst: f64 = 0.0;
    let (da, dp) = det_stopping_time_sens(&pr, 62.0).unwrap();
    for (theta, analytic) in [(Param::Alpha, da), (Param::P, dp)] {
        let d = 1e-6 * pr.get(theta);
        let fd = (stop(&pr.with(theta, pr.get(theta) + d)) - stop(&pr.with(theta, pr.get(theta) - d))) / (2.0 * d);
        worst = worst.max(rel(analytic, fd));
        for t in [0.5, 1.5, 2.5, 3.2] {
            let fd = (det_energy(t, &pr.with(theta, pr.get(theta) + d), 62.0).unwrap()
                - det_energy(t, &pr.with(theta, pr.get(theta) - d), 62.0).unwrap())
                / (2.0 * d);
            worst = worst.max(rel(det_energy_sens(t, &pr, 62.0, theta).unwrap(), fd));
        }
    }
    let std = StudySetup::<f64>::standard(SchemeId::MilsteinRkmk).params;
    let mut stoch = Vec::new();
    let mut ok = true;
    for theta in Param::ALL {
        let errs: Vec<(f64, f64)> = [0.01, 0.005, 0.0025].iter().map(|h| j_vs_coupled_fd(&std, theta, *h, 0.1, 200)).collect();
        let relerr: Vec<f64> = errs.iter().map(|(e, r)| e / r).collect();
        // discrepancy is a discretisation difference of two order-1 schemes
        let slope = (relerr[0] / relerr[2]).ln() / 4f64.ln();
        ok &= relerr[2] < 1e-3 && inside(slope, (0.8, 1.2));
        stoch.push(format!("J_{} rel err {:.2e} (order {slope:.2})", theta.name(), relerr[2]));
    }
    verdict(
        "sensitivity deterministic core",
        worst < 1e-5 && ok,
        format!("closed forms vs FD worst rel {worst:.2e}; {}", stoch.join(", ")),
    );
}

struct FieldCheck {
    agree: f64,
    detail: String,
    sign_ok: bool,
}

fn column_sums(spec: &GridSpec<f64>, v: &[f64], se: &[f64]) -> Vec<(f64, f64, f64)> {
    (0..spec.nx)
        .map(|ix| {
            let (mut s, mut q) = (0.0, 0.0);
            for iy in 0..spec.ny {
                let k = spec.index(ix, iy);
                s += v[k];
                q += se[k] * se[k];
            }
            (spec.x_center(ix), s * spec.dy(), q.sqrt() * spec.dy())
        })
        .collect()
}

fn compare_fields(s: &Settings, theta: Param) -> FieldCheck {
    let dir = tempfile::tempdir().unwrap();
    let path = sensitivity(s, &SensOptions { theta, estimator: Estimator::Pathwise, fd_delta_rel: 0.01, common_noise: false }, dir.path()).unwrap();
    let fd = sensitivity(s, &SensOptions { theta, estimator: Estimator::Fd, fd_delta_rel: 0.01, common_noise: false }, dir.path()).unwrap();
    let n = path.value.len();
    let agree = (0..n)
        .filter(|&k| (path.value[k] - fd.value[k]).abs() <= 3.0 * (path.se[k].powi(2) + fd.se[k].powi(2)).sqrt())
        .count() as f64
        / n as f64;
    let spec = path.config.grid;
    let cols = column_sums(&spec, &path.value, &path.se);
    let cfg = sensitivity_config(s, theta).unwrap();
    let dose = proton_sde::run_ensemble(&RunConfig { n_paths: 20_000, ..cfg }).unwrap().grid.mean_dose();
    let (x_peak, _) = peak(&depth_profile(&spec, &dose));
    let band = |lo: f64, hi: f64| {
        let sel: Vec<&(f64, f64, f64)> = cols.iter().filter(|c| c.0 >= lo && c.0 < hi).collect();
        let v: f64 = sel.iter().map(|c| c.1).sum();
        let e: f64 = sel.iter().map(|c| c.2 * c.2).sum::<f64>().sqrt();
        (v, e)
    };
    let (sign_ok, detail) = match theta {
        Param::Alpha => {
            let prox = band(0.2 * x_peak, 0.8 * x_peak);
            let dist = band(x_peak, x_peak + 0.3);
            (
                prox.0 < -3.0 * prox.1 && dist.0 > 3.0 * dist.1,
                format!("proximal {:.3e}±{:.1e}, distal {:.3e}±{:.1e}", prox.0, prox.1, dist.0, dist.1),
            )
        }
        _ => {
            let w = spec.dx();
            let at = band(x_peak - 1.5 * w, x_peak + 1.5 * w);
            let before = band(x_peak - 0.4, x_peak - 0.15);
            let after = band(x_peak + 0.1, x_peak + 0.35);
            (
                at.0 < -3.0 * at.1 && before.0 > 3.0 * before.1 && after.0 > 3.0 * after.1,
                format!(
                    "proximal flank {:.3e}±{:.1e}, peak {:.3e}±{:.1e}, distal flank {:.3e}±{:.1e}",
                    before.0, before.1, at.0, at.1, after.0, after.1
                ),
            )
        }
    };
    FieldCheck { agree, detail: format!("peak {x_peak:.3} cm; {detail}"), sign_ok }
}

fn sensitivity_fields() {
    let base = Settings { n_paths: 100_000, h: 0.0025, ..Settings::default() };
    let a = compare_fields(&base, Param::Alpha);
    let k = compare_fields(&Settings { kappa: 1e-3, ..base }, Param::Kappa);
    verdict(
        "sensitivity fields",
        a.sign_ok && k.sign_ok && a.agree >= 0.95 && k.agree >= 0.95,
        format!(
            "alpha: {} (sign {}), pathwise/FD agreement {:.2}%; kappa: {} (sign {}), agreement {:.2}%",
            a.detail,
            a.sign_ok,
            100.0 * a.agree,
            k.detail,
            k.sign_ok,
            100.0 * k.agree
        ),
    );
}

fn monotone_energy_decay() {
    let mut detail = Vec::new();
    let mut pass = true;
    for kappa in [0.0, 1e-3] {
        let mut cfg = RunConfig::<f64>::reference(Dim::Two);
        cfg.n_paths = 100_000;
        cfg.params.kappa = kappa;
        let trace = energy_trace(&cfg).unwrap();
        let mut violations = 0;
        let mut checked = 0;
        for w in trace.windows(2) {
            if w[1].n_alive < 2 {
                break;
            }
            checked += 1;
            let tol = 3.0 * (w[0].se.powi(2) + w[1].se.powi(2)).sqrt();
            if w[1].mean > w[0].mean + tol {
                violations += 1;
            }
        }
        pass &= violations == 0;
        detail.push(format!("κ={kappa:e}: {violations} violations over {checked} steps"));
    }
    verdict("monotone energy decay", pass, detail.join("; "));
}

fn kappa_calibration() {
    let pr = ModelParams { alpha: 2.2e-3, p: 1.77, ..ModelParams::<f64>::default() };
    let k = calibrate_kappa(0.072f64 * 0.072, &pr, 62.0).unwrap();
    let two_sig = format!("{k:.1e}");
    verdict("kappa calibration", two_sig == "4.0e-5", format!("κ = {k:.6e} ({two_sig})"));
}

fn reproducibility_across_workers() {
    let read_all = |dir: &std::path::Path| {
        let mut names: Vec<_> = std::fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
        names.sort();
        names.iter().map(|p| (p.file_name().unwrap().to_owned(), std::fs::read(p).unwrap())).collect::<Vec<_>>()
    };
    let mut same = true;
    let mut files = 0;
    for dim in [2, 3] {
        let mut outs = Vec::new();
        for workers in [1, 4] {
            let s = Settings { n_paths: 3000, h: 0.01, kappa: 1e-3, dim, workers, ..Settings::default() };
            let dir = tempfile::tempdir().unwrap();
            simulate_dose(&s, dir.path()).unwrap();
            let opts = SensOptions { theta: Param::Kappa, estimator: Estimator::Pathwise, fd_delta_rel: 0.01, common_noise: false };
            sensitivity(&s, &opts, dir.path()).unwrap();
            outs.push(read_all(dir.path()));
        }
        files += outs[0].len();
        same &= outs[0] == outs[1];
    }
    verdict("reproducibility", same, format!("{files} CSV files compared byte-for-byte for workers 1 and 4"));
}

fn levy_area_law() {
    let (h, dgamma) = (0.01f64, 0.004f64);
    let needs = NoiseNeeds::for_scheme(SchemeId::MilsteinRkmk, Dim::Three);
    let mut rng = path_rng(2024, 0);
    let areas: Vec<f64> = (0..1_000_000).map(|_| sample_increment(&mut rng, h, needs, 10).on_clock(dgamma).levy_a).collect();
    let (_, var) = mean_var(&areas);
    let ratio = var / (dgamma * dgamma);
    let se = variance_se(&areas) / (dgamma * dgamma);
    let law_ok = (ratio - 1.0 / 12.0).abs() <= 3.0 * se;

    // chained aggregation against a brute-force running sum on the fine grid
    let mut worst: f64 = 0.0;
    for path in 0..100u64 {
        let mut r = path_rng(99, path);
        let fine: Vec<_> = (0..64).map(|_| sample_increment::<f64, _>(&mut r, 1e-3, needs, 10)).collect();
        let (mut w1, mut w2, mut a) = (0.0, 0.0, 0.0);
        for f in &fine {
            a += f.area + 0.5 * (w1 * f.w2 - w2 * f.w1);
            w1 += f.w1;
            w2 += f.w2;
        }
        worst = worst.max((aggregate(&fine).area - a).abs());
    }
    let agg_ok = worst <= 1e-12;
    // the area given zero increments: the bridge part alone
    let mut r = path_rng(5, 1);
    let bridge: Vec<f64> = (0..200_000).map(|_| levy_area(&mut r, 1.0, 0.0, 0.0, 10)).collect();
    verdict(
        "levy area law",
        law_ok && agg_ok,
        format!(
            "var(A)/Δγ² = {ratio:.5} ± {se:.5} (target 1/12 = {:.5}); bridge-only variance/h² = {:.5}; aggregation max diff {worst:.1e}",
            1.0 / 12.0,
            mean_var(&bridge).1
        ),
    );
}

const CRITERIA: [(&str, fn()); 11] = [
    ("strong_orders", strong_orders),
    ("structure_preservation", structure_preservation),
    ("ergodicity", ergodicity),
    ("bragg_peak_placement", bragg_peak_placement),
    ("straggling_trend", straggling_trend),
    ("sensitivity_deterministic_core", sensitivity_deterministic_core),
    ("sensitivity_fields", sensitivity_fields),
    ("monotone_energy_decay", monotone_energy_decay),
    ("kappa_calibration", kappa_calibration),
    ("reproducibility_across_workers", reproducibility_across_workers),
    ("levy_area_law", levy_area_law),
];

/// Runs every criterion on its own thread; a filter argument selects criteria
/// whose name contains it.
fn main() {
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let selected: Vec<_> =
        CRITERIA.iter().filter(|(n, _)| filters.is_empty() || filters.iter().any(|f| n.contains(f.as_str()))).collect();
    let failed: Vec<&str> = std::thread::scope(|s| {
        let handles: Vec<_> = selected.iter().map(|(n, f)| (*n, s.spawn(f))).collect();
        handles.into_iter().filter_map(|(n, h)| h.join().is_err().then_some(n)).collect()
    });
    println!("acceptance: {} of {} criteria passed", selected.len() - failed.len(), selected.len());
    if !failed.is_empty() {
        println!("failed: {}", failed.join(", "));
        std::process::exit(1);
    }
}
