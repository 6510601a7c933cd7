//! Acceptance run: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails.

mod common;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use kam_core::families::{self, direct_case};
use kam_core::fourier_taylor::{CompiledSeries, RescaleDirection};
use kam_core::freq_arith::{
    make_test_frequency, mu_nu, psi, psi_table, Gevrey, LiouvilleSchedule, TestFrequencyKind,
};
use kam_core::measure_scan::{fit_power_law, run_scan, ScanPlan, ScanResult};
use kam_core::normal_form::{one_step_normal_form, verify_estimates, EstimateBounds};
use kam_core::torus_solver::{solve_torus, verify_by_integration_with, DEFAULT_VERIFY_SAMPLES};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn sci(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.3e}")).collect();
    format!("[{}]", parts.join(", "))
}

fn log_space(from: f64, to: f64, points: usize) -> Vec<f64> {
    let (a, b) = (from.log10(), to.log10());
    (0..points)
        .map(|i| 10f64.powf(a + (b - a) * i as f64 / (points - 1) as f64))
        .collect()
}

fn small_divisor_oracle() -> Outcome {
    let golden = families::golden();
    let constant =
        make_test_frequency(TestFrequencyKind::LiouvilleConstant, 2).map_err(|e| e.to_string())?;
    let random = common::random_frequency(3, 7);
    let mut mismatches = Vec::new();
    for (name, w) in [
        ("golden", &golden),
        ("liouville constant", &constant),
        ("random n=3", &random),
    ] {
        let table = psi_table(w, 200).map_err(|e| e.to_string())?;
        let oracle = common::brute_force_psi(w, 200);
        let bad = table
            .iter()
            .zip(&oracle)
            .filter(|(r, (d, k))| r.min_divisor != *d || r.psi != 1.0 / d || r.argmin_k != *k)
            .count();
        if bad > 0 {
            mismatches.push(format!("{name}: {bad} of 200"));
        }
    }
    check(
        mismatches.is_empty(),
        format!("Q <= 200, mismatches: {mismatches:?}"),
    )
}

fn diophantine_exponent() -> Outcome {
    let golden = families::golden();
    let eps = log_space(1e-6, 1e-1, 26);
    let mu: Vec<f64> = eps
        .iter()
        .map(|&e| mu_nu(&golden, e, 1.0, None).map(|p| p.mu))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    let (slope, _) = fit_power_law(&eps, &mu).map_err(|e| e.to_string())?;

    // Liouville contrast: at eps_j just below 1 / (Q_j Psi(Q_j)) the
    // truncation order sits on the plateau Delta = Q_j.
    let schedule = LiouvilleSchedule::Exponential { base: 2.0 };
    let w = make_test_frequency(
        TestFrequencyKind::Liouville {
            schedule,
            first_quotient: 1,
        },
        2,
    )
    .map_err(|e| e.to_string())?;
    let mut le = Vec::new();
    let mut lm = Vec::new();
    for &q in &w.scales {
        let p = psi(&w, q).map_err(|e| e.to_string())?.psi;
        let e = 1.0 / (q as f64 * p * (1.0 + 1e-9));
        let prof = mu_nu(&w, e, 1.0, None).map_err(|e| e.to_string())?;
        if prof.delta != q {
            return Err(format!("Delta at scale {q} is {}", prof.delta));
        }
        le.push(e);
        lm.push(prof.mu);
    }
    let (liouville_slope, _) = fit_power_law(&le, &lm).map_err(|e| e.to_string())?;
    check(
        (slope - 0.5).abs() <= 0.1 && liouville_slope < 0.05 && w.scales.len() >= 3,
        format!(
            "golden slope {slope:.4} over eps 1e-6..1e-1; Liouville slope {liouville_slope:.4} along scales {:?}",
            w.scales
        ),
    )
}

fn normal_form_estimates() -> Outcome {
    let phys = families::single_harmonic(0.5).map_err(|e| e.to_string())?;
    let mut phi = Vec::new();
    let mut rem = Vec::new();
    let mut slowest: f64 = 0.0;
    for eps in [1e-2, 1e-3, 1e-4, 1e-5] {
        let t = Instant::now();
        let h2 = phys
            .rescale(RescaleDirection::Scale1, eps)
            .map_err(|e| e.to_string())?;
        let p = mu_nu(&h2.omega, eps, 1.0, None).map_err(|e| e.to_string())?;
        let r = one_step_normal_form(&h2, &p, 8).map_err(|e| e.to_string())?;
        let est = verify_estimates(&r, &EstimateBounds::default());
        slowest = slowest.max(t.elapsed().as_secs_f64());
        phi.push(est.phi_ratio);
        rem.push(est.remainder_ratio);
    }
    // A trend is the least-squares slope of log10(ratio) per decade of 1/eps.
    let inv: Vec<f64> = [1e2, 1e3, 1e4, 1e5].to_vec();
    let spread = |v: &[f64]| {
        v.iter().cloned().fold(0.0, f64::max) / v.iter().cloned().fold(f64::INFINITY, f64::min)
    };
    let (phi_trend, _) = fit_power_law(&inv, &phi).map_err(|e| e.to_string())?;
    let (rem_trend, _) = fit_power_law(&inv, &rem).map_err(|e| e.to_string())?;
    check(
        spread(&phi) < 100.0 && spread(&rem) < 100.0 && phi_trend <= 0.1 && rem_trend <= 0.1 && slowest < 60.0,
        format!(
            "|Phi-Id|/mu {} (trend {phi_trend:.3}); remainder/(eps mu) {} (trend {rem_trend:.3}); slowest case {slowest:.2} s",
            sci(&phi),
            sci(&rem)
        ),
    )
}

fn conjugacy() -> Outcome {
    let eps = 1e-3;
    let h = families::single_harmonic(0.5)
        .and_then(|p| p.rescale(RescaleDirection::Scale1, eps))
        .map_err(|e| e.to_string())?;
    let prof = mu_nu(&h.omega, eps, 1.0, None).map_err(|e| e.to_string())?;
    let r = one_step_normal_form(&h, &prof, 8).map_err(|e| e.to_string())?;
    let (ch, ct, g) = (
        h.compile(),
        CompiledSeries::new(&r.h_tilde_ham2),
        CompiledSeries::new(r.phi.generator()),
    );
    let mut worst: f64 = 0.0;
    for a in 0..9 {
        let action = [-1.0 + (a % 3) as f64, -1.0 + (a / 3) as f64];
        for t in 0..1024 {
            let theta = [(t % 32) as f64 / 32.0, (t / 32) as f64 / 32.0];
            let (tt, aa) = common::rk4_flow(&g, &theta, &action, 1.0, 64);
            worst = worst.max((ch.value(&tt, &aa) - ct.value(&theta, &action)).abs());
        }
    }
    check(
        worst < 1e-9,
        format!("sup |H o Phi - Htilde| = {worst:.3e} on 32^2 angles x 3^2 actions, eps = 1e-3"),
    )
}

fn torus_contract() -> Outcome {
    let t0 = Instant::now();
    let (h, target) = direct_case(1e-4).map_err(|e| e.to_string())?;
    let k = solve_torus(&h, &target, 1e-10, 12).map_err(|e| e.to_string())?;
    let d = &k.diag.defects;
    // Local order log e_{k+1} / log e_k of every Newton step.
    let orders: Vec<f64> = d.windows(2).map(|w| w[1].ln() / w[0].ln()).collect();
    let v = verify_by_integration_with(&h, &k, 1e3, 1.0 / 300.0, DEFAULT_VERIFY_SAMPLES)
        .map_err(|e| e.to_string())?;
    let total = t0.elapsed().as_secs_f64();
    check(
        k.diag.iterations() <= 6
            && orders.iter().all(|&o| o >= 1.8)
            && k.defect_norm < 1e-10
            && v.max_deviation < 1e-6
            && total < 120.0,
        format!(
            "defects {}, orders {orders:.2?}, deviation over T = 1e3 {:.3e}, {total:.1} s",
            sci(d),
            v.max_deviation
        ),
    )
}

fn scan(samples: usize) -> Result<ScanResult, String> {
    let plan = ScanPlan::acceptance(samples);
    let spec = plan.load_spec(None).map_err(|e| e.to_string())?;
    run_scan(&plan, &spec).map_err(|e| e.to_string())
}

fn measure_scaling(low: &ScanResult, high: &ScanResult) -> Outcome {
    let (a, b) = (
        low.fit.as_ref().map_err(|e| e.clone())?,
        high.fit.as_ref().map_err(|e| e.clone())?,
    );
    let mus: Vec<f64> = low.reports.iter().map(|r| r.mu).collect();
    let decades = (mus.iter().cloned().fold(0.0, f64::max)
        / mus.iter().cloned().fold(f64::INFINITY, f64::min))
    .log10();
    let ratio = |x: f64, y: f64| x.max(y) / x.min(y);
    let (rl, rh) = (ratio(a.c_low, b.c_low), ratio(a.c_high, b.c_high));
    let finite = [a.c_low, a.c_high, b.c_low, b.c_high]
        .iter()
        .all(|c| c.is_finite() && *c > 0.0);
    check(
        (0.4..=0.6).contains(&a.exponent) && (0.4..=0.6).contains(&b.exponent) && decades >= 2.0 && finite && rl < 2.0 && rh < 2.0,
        format!(
            "exponent {:.3} (512) / {:.3} (1024) over {decades:.2} decades of mu; c_low {:.3}/{:.3}, c_high {:.3}/{:.3}",
            a.exponent, b.exponent, a.c_low, b.c_low, a.c_high, b.c_high
        ),
    )
}

fn gevrey_contrast(runs: &[&ScanResult]) -> Outcome {
    let t = Instant::now();
    let g = Gevrey {
        alpha: 1.0,
        c_bar: 1.0,
    };
    let golden = families::golden();
    let mut worst_margin = f64::NEG_INFINITY;
    // Pure arithmetic over both acceptance epsilon ranges.
    let mut eps = log_space(1e-6, 1e-1, 26);
    eps.extend(ScanPlan::acceptance(512).epsilon.values());
    for e in eps {
        let p = mu_nu(&golden, e, 1.0, Some(g)).map_err(|e| e.to_string())?;
        let nu = p.nu.unwrap();
        if nu > p.mu * p.mu {
            return Err(format!("nu {nu:e} > mu^2 at eps {e:e}"));
        }
        worst_margin = worst_margin.max(nu / (p.mu * p.mu));
    }
    let elapsed = t.elapsed().as_secs_f64();
    let mut rows = 0;
    for run in runs {
        let gv = run.gevrey.as_ref().ok_or("scan produced no Gevrey rows")?;
        for w in gv.windows(2) {
            if !(w[1].log10_predicted < w[0].log10_predicted) {
                return Err(format!("predicted complement does not shrink: {:?}", w));
            }
        }
        if !gv.iter().all(|r| r.nu_below_mu_squared) {
            return Err("a Gevrey row has nu > mu^2".into());
        }
        rows += gv.len();
    }
    let last = runs[0]
        .gevrey
        .as_ref()
        .and_then(|g| g.last().cloned())
        .ok_or("no rows")?;
    check(
        elapsed < 1.0,
        format!(
            "max nu/mu^2 = {worst_margin:.3e}; {rows} report rows, smallest predicted complement 10^{:.1}; arithmetic {elapsed:.4} s",
            last.log10_predicted
        ),
    )
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn kamlab(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_kamlab"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!(
            "kamlab {args:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        ))
    }
}

fn determinism(low: &ScanResult) -> Outcome {
    // In-process: the scan at 512 samples, repeated.
    if scan(512)?.reports != low.reports {
        return Err("scan reports differ between runs".into());
    }
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = |n: &str| configs().join(n).to_string_lossy().into_owned();
    let runs: Vec<Vec<String>> = vec![
        vec![
            "freq".into(),
            "--omega".into(),
            cfg("golden.json"),
            "--qmax".into(),
            "200".into(),
        ],
        vec![
            "nf".into(),
            "--spec".into(),
            cfg("single_harmonic.json"),
            "--eps".into(),
            "1e-3".into(),
        ],
        vec![
            "torus".into(),
            "--spec".into(),
            cfg("direct_mu1e-4.json"),
            "--i0".into(),
            "0.7896948635714887,0.8412205457140455".into(),
            "--gamma".into(),
            "1".into(),
            "--tau".into(),
            "1".into(),
            "--t".into(),
            "10".into(),
        ],
        vec![
            "torus".into(),
            "--spec".into(),
            cfg("single_harmonic.json"),
            "--eps".into(),
            "1e-3".into(),
            "--i0".into(),
            "0.2,-0.3".into(),
            "--gamma".into(),
            "0.01".into(),
            "--tau".into(),
            "1.5".into(),
            "--t".into(),
            "10".into(),
        ],
        vec!["scan".into(), "--plan".into(), cfg("acceptance_plan.json")],
        vec![
            "probe".into(),
            "--spec".into(),
            cfg("single_harmonic.json"),
            "--t".into(),
            "5".into(),
            "--h".into(),
            "0.01".into(),
            "--i0".into(),
            "0.1,-0.2".into(),
        ],
    ];
    let mut files = 0;
    for (i, args) in runs.iter().enumerate() {
        let dirs = [
            tmp.path().join(format!("{i}a")),
            tmp.path().join(format!("{i}b")),
        ];
        for d in &dirs {
            let mut a: Vec<&str> = args.iter().map(String::as_str).collect();
            a.extend(["--out", d.to_str().unwrap()]);
            kamlab(&a)?;
        }
        let mut names: Vec<_> = fs::read_dir(&dirs[0])
            .map_err(|e| e.to_string())?
            .map(|e| e.unwrap().file_name())
            .collect();
        names.sort();
        for n in names {
            let (x, y) = (fs::read(dirs[0].join(&n)), fs::read(dirs[1].join(&n)));
            if x.map_err(|e| e.to_string())? != y.map_err(|e| e.to_string())? {
                return Err(format!("{} differs for {:?}", n.to_string_lossy(), args[0]));
            }
            files += 1;
        }
    }
    check(
        true,
        format!(
            "{files} artifacts from {} CLI runs byte-identical; in-process scan reports identical",
            runs.len()
        ),
    )
}

fn report(index: usize, name: &str, t: Instant, outcome: Outcome) -> bool {
    let secs = t.elapsed().as_secs_f64();
    let (tag, detail, ok) = match outcome {
        Ok(d) => ("PASS", d, true),
        Err(d) => ("FAIL", d, false),
    };
    println!("{tag} [{index}] {name}: {detail} [{secs:.2} s]");
    ok
}

fn main() {
    let mut ok = true;
    let t = Instant::now();
    ok &= report(1, "small-divisor oracle", t, small_divisor_oracle());
    if t.elapsed().as_secs_f64() >= 10.0 {
        println!("FAIL [1] small-divisor oracle: over 10 s");
        ok = false;
    }
    let t = Instant::now();
    ok &= report(
        2,
        "Diophantine exponent and Liouville contrast",
        t,
        diophantine_exponent(),
    );
    let t = Instant::now();
    ok &= report(3, "normal-form estimates", t, normal_form_estimates());
    let t = Instant::now();
    ok &= report(4, "conjugacy", t, conjugacy());
    let t = Instant::now();
    ok &= report(5, "torus solver", t, torus_contract());

    let t = Instant::now();
    let scans = scan(512).and_then(|a| scan(1024).map(|b| (a, b)));
    match &scans {
        Ok((a, b)) => {
            ok &= report(6, "measure scaling", t, measure_scaling(a, b));
            let t = Instant::now();
            ok &= report(7, "Gevrey contrast", t, gevrey_contrast(&[a, b]));
            let t = Instant::now();
            ok &= report(8, "determinism", t, determinism(a));
        }
        Err(e) => {
            for (i, name) in [
                (6, "measure scaling"),
                (7, "Gevrey contrast"),
                (8, "determinism"),
            ] {
                ok &= report(i, name, t, Err(format!("scan failed: {e}")));
            }
        }
    }
    if !ok {
        std::process::exit(1);
    }
}
