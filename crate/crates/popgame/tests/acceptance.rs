//! Acceptance suite: one test per release criterion. Each test prints a
//! single pass line (visible with `--nocapture`); a failed assertion is the
//! fail line.

use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use popgame::certify::{
    box_corners, certify_fixed, check_cone, check_convhull, check_pointwise,
    condition_matrix, sproc_soundness_check, SolverBudget, Verdict, DEFAULT_MARGIN,
};
use popgame::edm::{IpcProtocol, SwitchRate};
use popgame::games::{DelayFn, Game, MixedAutonomyGame, RoadSplitGame};
use popgame::geometry::{PopulationStructure, SupplyRate};
use popgame::linalg::sym_eig;
use popgame::pdm::SmoothingPdm;
use popgame::sampling;
use popgame::scenario::{run_certify, Overrides, Scenario};
use popgame::sim::{
    detect_rest_point_closed_loop, integrate_closed_loop, integrate_memoryless,
    lyapunov_monitor, DEFAULT_MONITOR_TOL,
};

fn scenario_path(name: &str) -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(name)
}

fn two_link_game() -> MixedAutonomyGame {
    MixedAutonomyGame::parallel_links(
        vec![
            DelayFn::Affine { a: 1.0, alpha: 1.0 },
            DelayFn::Affine { a: 1.0, alpha: 1.0 },
        ],
        0.5,
        1.0,
        1.0,
    )
    .unwrap()
}

#[test]
fn criterion_1_road_split_lmi_reproduction() {
    let start = Instant::now();
    let scenario = Scenario::from_path(&scenario_path("road_split.json")).unwrap();
    let cert = run_certify(&scenario, Overrides::default()).unwrap();
    let elapsed = start.elapsed();
    assert_eq!(cert.verdict, Verdict::Certified, "{cert:?}");
    assert_eq!(cert.omegas.len(), 4);
    assert!(cert.omegas.iter().all(|&o| o > 0.0 && o.is_finite()));
    assert!(cert.lambda_max <= -1e-8, "lambda_max {}", cert.lambda_max);
    assert!(elapsed.as_secs_f64() < 10.0, "took {elapsed:?}");
    println!(
        "criterion 1 PASS: road-split S-procedure certified, lambda_max {:.3e} in {elapsed:?}",
        cert.lambda_max
    );
}

#[test]
fn criterion_2_weighted_contraction_mixed_autonomy() {
    let game = two_link_game();
    let structure = game.structure();
    // canonical weights W = diag(mu I, I) certify the cone envelope
    let weighted = SupplyRate::weighted(structure, &game.canonical_weights()).unwrap();
    let cert = check_cone(&weighted, &game.cone_generators(), structure).unwrap();
    assert_eq!(cert.verdict, Verdict::Certified);
    assert!(cert.lambda_max <= 1e-9, "lambda_max {}", cert.lambda_max);

    // the unweighted check is refuted, and the hand-derived direction
    // zeta = (a, -a, b, -b) with (a, b) = (1, -0.75) is an explicit witness
    let identity = SupplyRate::delta_passive(structure.dim());
    let refuted = check_cone(&identity, &game.cone_generators(), structure).unwrap();
    assert_eq!(refuted.verdict, Verdict::Refuted);
    assert!(refuted.witness.is_some());

    let (a, b) = (1.0, -0.75);
    let zeta = DVector::from_vec(vec![a, -a, b, -b]);
    let x = DVector::from_vec(vec![0.5, 0.5, 0.5, 0.5]);
    let m = condition_matrix(&game.jacobian(&x).unwrap(), &identity);
    let value = (zeta.transpose() * m * &zeta)[(0, 0)];
    assert!(value > 1e-9, "hand witness value {value}");
    println!(
        "criterion 2 PASS: weighted cone certified (lambda_max {:.3e}), unweighted refuted (witness value {:.3})",
        cert.lambda_max, value
    );
}

#[test]
fn criterion_3_smith_convergence_from_random_starts() {
    let game = two_link_game();
    let protocol = IpcProtocol::smith(game.structure().clone());
    let weights = game.canonical_weights();
    for start in 0..10u64 {
        let mut rng = sampling::sample_rng(100, start);
        let x0 = sampling::sample_simplex(game.structure(), &mut rng);
        let traj =
            integrate_memoryless(&game, &protocol, &x0, 200.0, 1e-2, Some(&weights)).unwrap();
        assert!(
            traj.final_nash_gap() < 1e-6,
            "start {start}: gap {}",
            traj.final_nash_gap()
        );
        let monitor = lyapunov_monitor(&traj, DEFAULT_MONITOR_TOL);
        assert_eq!(monitor.flags, 0, "start {start}: {monitor:?}");
    }
    println!("criterion 3 PASS: 10 random starts reach nash_gap < 1e-6 with a clean Lyapunov monitor");
}

#[test]
fn criterion_4_smoothing_pdm_convergence() {
    let protocol = IpcProtocol::smith(two_link_game().structure().clone());
    let x0 = DVector::from_vec(vec![0.9, 0.1, 0.2, 0.8]);
    for tau in [0.5, 1.0, 2.0] {
        let pdm = SmoothingPdm::new(two_link_game(), tau).unwrap();
        let weights = pdm.game().canonical_weights();
        let consistent = pdm.consistent_state(&x0).unwrap();
        for (label, q0) in [
            ("consistent", consistent.clone()),
            ("perturbed", consistent.add_scalar(1.0)),
        ] {
            let traj = integrate_closed_loop(
                &pdm, &protocol, &x0, &q0, 500.0, 1e-2, Some(&weights),
            )
            .unwrap();
            let rest = detect_rest_point_closed_loop(&traj, &pdm, &protocol, 1e-6).unwrap();
            assert!(rest.is_some(), "tau {tau} {label}: no rest point");
            let monitor = lyapunov_monitor(&traj, DEFAULT_MONITOR_TOL);
            assert_eq!(monitor.flags, 0, "tau {tau} {label}: {monitor:?}");
        }
    }
    println!("criterion 4 PASS: closed loop converges for tau in {{0.5, 1, 2}} with V nonincreasing");
}

#[test]
fn criterion_5_delta_dissipativity_suite() {
    let structure = Arc::new(PopulationStructure::new(vec![2, 3], vec![1.0, 2.0]).unwrap());
    let supply = SupplyRate::delta_passive(structure.dim());
    for (name, rate) in [
        ("smith", SwitchRate::Smith),
        ("power2", SwitchRate::Power { exponent: 2.0 }),
    ] {
        let protocol = IpcProtocol::uniform(structure.clone(), rate);
        let report = protocol
            .verify_delta_dissipativity(&supply, 10_000, 42)
            .unwrap();
        assert_eq!(report.violations, 0, "{name}: {report:?}");

        // vanishing equivalences at the threshold pair (1e-10, 1e-8)
        for k in 0..200u64 {
            let mut rng = sampling::sample_rng(900, k);
            let x = sampling::sample_simplex(&structure, &mut rng);
            let p = sampling::sample_normal_vector(structure.dim(), 3.0, &mut rng);
            let s = protocol.storage(&x, &p).unwrap();
            let sigma = protocol.sigma(&x, &p).unwrap();
            let nu = protocol.velocity(&x, &p).unwrap();
            let zero_s = s <= 1e-10;
            let zero_sigma = sigma <= 1e-10;
            let zero_nu = nu.norm() <= 1e-8;
            assert_eq!(zero_s, zero_sigma, "{name} sample {k}");
            assert_eq!(zero_sigma, zero_nu, "{name} sample {k}");
        }
    }
    println!("criterion 5 PASS: 10^4 samples per protocol, zero violations; vanishing equivalences hold");
}

#[test]
fn criterion_6_pdm_storage_identity() {
    let pdm = SmoothingPdm::new(two_link_game(), 1.0).unwrap();
    let weights = pdm.game().canonical_weights();
    let supply = SupplyRate::weighted(pdm.game().structure(), &weights).unwrap();
    let report = pdm.verify_dissipativity(&supply, 10_000, 7).unwrap();
    assert_eq!(report.violations, 0, "{report:?}");
    assert!(
        report.worst_identity_error <= 1e-8,
        "identity error {}",
        report.worst_identity_error
    );
    assert!(
        report.worst_fd_slack >= -1e-6,
        "finite-difference slack {}",
        report.worst_fd_slack
    );
    println!(
        "criterion 6 PASS: 10^4 samples, identity error {:.3e}, zero dissipativity violations",
        report.worst_identity_error
    );
}

#[test]
fn criterion_7_sprocedure_soundness() {
    let game = RoadSplitGame::calibrated();
    let supply = SupplyRate::delta_passive(4);
    let cert = certify_fixed(&game, &supply, DEFAULT_MARGIN, &SolverBudget::default()).unwrap();
    assert_eq!(cert.verdict, Verdict::Certified);

    let (base, factors) = game.box_envelope();
    let report = sproc_soundness_check(
        &cert,
        &base,
        &factors,
        game.structure(),
        &supply,
        10_000,
        13,
    )
    .unwrap();
    assert_eq!(report.violations, 0, "worst {}", report.worst_value);

    // corner enumeration agrees with the convex-hull check
    let corners = box_corners(&base, &factors);
    assert_eq!(corners.len(), 16);
    let hull = check_convhull(&supply, &corners, game.structure(), 0.0).unwrap();
    assert_eq!(hull.verdict, Verdict::Certified);
    // and the sampled pointwise check concurs
    let pointwise = check_pointwise(&game, &supply, 2000, 17).unwrap();
    assert!(pointwise.passed(), "worst {}", pointwise.worst_lambda);
    println!(
        "criterion 7 PASS: 10^4 (gamma, zeta) samples sound (worst {:.3e}); 16 corners certified",
        report.worst_value
    );
}

#[test]
fn criterion_8_numerical_kernels() {
    // symmetric eigensolver residuals on random 50x50 matrices
    for trial in 0..5u64 {
        let mut rng = sampling::sample_rng(500, trial);
        let raw = DMatrix::from_fn(50, 50, |_, _| sampling::standard_normal(&mut rng));
        let m = (&raw + raw.transpose()) * 0.5;
        let (vals, vecs) = sym_eig(&m).unwrap();
        let residual = (&m * &vecs - &vecs * DMatrix::from_diagonal(&vals)).amax();
        assert!(residual <= 1e-10 * m.amax().max(1.0), "residual {residual}");
    }

    // Legendre inverse residual for BPR delays
    let bpr = DelayFn::Bpr {
        alpha: 1.0,
        beta: 0.15,
        kappa: 1.0,
    };
    for k in 0..100 {
        let q = 1.0 + k as f64 * 0.05;
        let zbar = bpr.invert(q).unwrap();
        assert!((bpr.value(zbar) - q).abs() <= 1e-10);
    }

    // RK4 Richardson ratio on a smooth segment
    let game = two_link_game();
    let protocol = IpcProtocol::smith(game.structure().clone());
    let x0 = DVector::from_vec(vec![0.8, 0.2, 0.3, 0.7]);
    let run = |h: f64| {
        integrate_memoryless(&game, &protocol, &x0, 1.0, h, None)
            .unwrap()
            .final_state()
            .clone()
    };
    let ratio = (run(0.02) - run(0.01)).norm() / (run(0.01) - run(0.005)).norm();
    assert!((12.0..=20.0).contains(&ratio), "Richardson ratio {ratio}");
    println!("criterion 8 PASS: eigensolver residuals, Legendre inverses, Richardson ratio {ratio:.2}");
}

#[test]
fn criterion_9_determinism() {
    use std::process::Command;
    let bin = env!("CARGO_BIN_EXE_popgame");
    let scenario = scenario_path("mixed_autonomy_2link.json");
    let mut outputs: Vec<(Vec<u8>, Vec<u8>)> = Vec::new();
    for _ in 0..2 {
        let dir = tempfile::tempdir().unwrap();
        let status = Command::new(bin)
            .args(["simulate", scenario.to_str().unwrap(), "--out"])
            .arg(dir.path())
            .status()
            .unwrap();
        assert!(status.success());
        let csv = std::fs::read(dir.path().join("mixed_autonomy_2link_trajectory.csv")).unwrap();
        let summary = std::fs::read(dir.path().join("mixed_autonomy_2link_summary.json")).unwrap();
        outputs.push((csv, summary));
    }
    assert_eq!(outputs[0].0, outputs[1].0, "trajectory CSVs differ");
    assert_eq!(outputs[0].1, outputs[1].1, "summary JSONs differ");

    // certificates are deterministic too
    let scenario = scenario_path("road_split.json");
    let mut certs: Vec<Vec<u8>> = Vec::new();
    for _ in 0..2 {
        let dir = tempfile::tempdir().unwrap();
        let status = Command::new(bin)
            .args(["certify", scenario.to_str().unwrap(), "--out"])
            .arg(dir.path())
            .status()
            .unwrap();
        assert!(status.success());
        certs.push(std::fs::read(dir.path().join("road_split_certificate.json")).unwrap());
    }
    assert_eq!(certs[0], certs[1], "certificate JSONs differ");
    println!("criterion 9 PASS: repeated runs with the same seed are byte-identical");
}
