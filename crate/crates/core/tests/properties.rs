use mest_core::design::DesignGenSpec;
use mest_core::harness::{experiment_summary, regime_contrast, run_experiment, summarize_experiment, ExperimentConfig};
use mest_core::probability::{verify_bennett, verify_weighted_slln, BoundedVarSpec, WeightSpec};
use mest_core::quadrature;
use mest_core::solver::{fit, objective, SolverOpts};
use mest_core::{seed, ConvexLoss, ErrorDistribution};
use rand::Rng;

fn losses() -> Vec<ConvexLoss> {
    vec![
        ConvexLoss::huber(1.345).unwrap(),
        ConvexLoss::huber(0.3).unwrap(),
        ConvexLoss::lad(),
        ConvexLoss::power(1.3).unwrap(),
        ConvexLoss::least_squares(),
        ConvexLoss::quantile(0.2).unwrap(),
        ConvexLoss::quantile(0.5).unwrap(),
    ]
}

#[test]
fn score_integrates_to_loss() {
    for loss in losses() {
        for (a, b) in [(-3.0, 2.5), (-0.5, 0.5), (0.1, 4.0), (-2.0, -1.2)] {
            let mut pts = vec![a];
            pts.extend(loss.kinks().into_iter().filter(|k| *k > a && *k < b));
            pts.push(b);
            let integral = quadrature::integrate_pieces(&|u| loss.psi(u), &pts, 1e-12).unwrap().value;
            let diff = loss.rho(b) - loss.rho(a);
            assert!((integral - diff).abs() < 1e-9, "{loss:?} [{a}, {b}] {integral} {diff}");
        }
    }
}

#[test]
fn fit_beats_perturbations() {
    let mut rng = seed::rng(31, &[]);
    let dist = ErrorDistribution::StudentT { nu: 2.0 };
    for loss in losses() {
        let design = mest_core::design::generate_design(&DesignGenSpec::GaussianIid { p: 3 }, 60, 4).unwrap();
        let e = dist.sample(60, 9);
        let y: Vec<f64> = (0..60).map(|i| design.matrix()[(i, 0)] - design.matrix()[(i, 2)] + e[i]).collect();
        let f = fit(&design, &y, &loss, &SolverOpts::default()).unwrap();
        assert!(f.converged);
        for _ in 0..50 {
            let scale = 10f64.powi(rng.random_range(-4..0));
            let b: Vec<f64> = f.beta_hat.iter().map(|v| v + scale * rng.random_range(-1.0..1.0)).collect();
            let o = objective(&design, &y, &loss, &b).unwrap();
            assert!(o >= f.objective - 1e-9 * (1.0 + f.objective), "{loss:?}");
        }
    }
}

fn blocks_config(loss: ConvexLoss, dist: ErrorDistribution, n_grid: Vec<usize>, reps: usize) -> ExperimentConfig {
    let mut c = ExperimentConfig::new(loss, dist, DesignGenSpec::OrthogonalBlocks { p: 2 }, n_grid, reps);
    c.beta0 = Some(vec![1.0, -2.0]);
    c.seed = 17;
    c
}

#[test]
fn least_squares_sweep_root_n() {
    let c = blocks_config(
        ConvexLoss::least_squares(),
        ErrorDistribution::standard_normal(),
        vec![100, 1000, 10_000],
        100,
    );
    let t = summarize_experiment(&run_experiment(&c).unwrap().records).unwrap();
    assert!(t.medians_decreasing);
    let slope = t.slope.unwrap();
    assert!((-0.65..=-0.35).contains(&slope), "{slope}");
}

#[test]
fn huber_cauchy_sweep() {
    let c = blocks_config(
        ConvexLoss::huber(1.345).unwrap(),
        ErrorDistribution::Cauchy { scale: 1.0 },
        vec![100, 1000, 10_000],
        100,
    );
    let exp = run_experiment(&c).unwrap();
    assert!(exp.conditions.passed);
    let t = summarize_experiment(&exp.records).unwrap();
    assert!(t.medians_decreasing);
    assert!(t.rows[2].median < 0.05, "{:?}", t.rows);
    assert_eq!(t.nonconverged_rate, 0.0);
}

#[test]
fn log_pareto_sweep_decreases() {
    let c = blocks_config(ConvexLoss::least_squares(), ErrorDistribution::log_pareto(), vec![200, 2000, 20_000], 60);
    let exp = run_experiment(&c).unwrap();
    assert!(exp.conditions.passed);
    let t = summarize_experiment(&exp.records).unwrap();
    assert!(t.medians_decreasing, "{:?}", t.rows);
}

#[test]
fn sweeps_are_deterministic() {
    let mut c = blocks_config(ConvexLoss::quantile(0.5).unwrap(), ErrorDistribution::log_pareto(), vec![50, 500], 20);
    c.iid_design = true;
    c.design = DesignGenSpec::GaussianIid { p: 2 };
    let a = run_experiment(&c).unwrap();
    let b = run_experiment(&c).unwrap();
    let ja = serde_json::to_string(&a.records).unwrap();
    let jb = serde_json::to_string(&b.records).unwrap();
    assert_eq!(ja, jb);
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let c2 = c.clone();
    let single = pool.install(|| run_experiment(&c2).unwrap());
    assert_eq!(serde_json::to_string(&single.records).unwrap(), ja);
}

#[test]
fn least_squares_scale_equivariance() {
    let base = blocks_config(
        ConvexLoss::least_squares(),
        ErrorDistribution::Gaussian { sigma: 1.0 },
        vec![40, 400],
        10,
    );
    let s: f64 = -3.0;
    let mut scaled = base.clone();
    scaled.dist = ErrorDistribution::Gaussian { sigma: s.abs() };
    scaled.beta0 = Some(vec![s * 1.0, s * -2.0]);
    let a = run_experiment(&base).unwrap().records;
    let b = run_experiment(&scaled).unwrap().records;
    for (ra, rb) in a.iter().zip(&b) {
        // symmetric errors: sigma * z has the same law as s * z
        assert!((rb.error_norm - s.abs() * ra.error_norm).abs() < 1e-10 * (1.0 + rb.error_norm), "{ra:?} {rb:?}");
    }
}

#[test]
fn contrast_regimes() {
    let huber = blocks_config(
        ConvexLoss::huber(1.345).unwrap(),
        ErrorDistribution::Cauchy { scale: 1.0 },
        vec![200, 2000, 20_000],
        30,
    );
    let r = regime_contrast(&huber).unwrap();
    for g in &r.regimes[..3] {
        assert!(g.summary.table.medians_decreasing, "{}", g.name);
    }
    let adv = &r.regimes[3];
    assert_eq!(adv.name, "adversarial_leverage");
    assert!(adv.summary.hypotheses.violated);
    assert!(!r.regimes[0].summary.hypotheses.violated);
    assert!(r.moment_audits.iter().all(|a| a.audit.as_ref().unwrap().finite));

    let lp = blocks_config(ConvexLoss::least_squares(), ErrorDistribution::log_pareto(), vec![200, 2000, 20_000], 30);
    let r = regime_contrast(&lp).unwrap();
    assert!(r.regimes[0].summary.table.medians_decreasing);
    let audit = |order: f64| r.moment_audits.iter().find(|a| a.order == order).unwrap().audit.clone().unwrap();
    assert!(!audit(1.2).finite);
    assert!(!audit(2.0).finite);
    assert!(audit(1.0).finite);
}

#[test]
fn summary_flags_adversarial_design() {
    let mut c = blocks_config(
        ConvexLoss::huber(1.345).unwrap(),
        ErrorDistribution::standard_normal(),
        vec![100, 1000],
        3,
    );
    c.design = DesignGenSpec::AdversarialLeverage { p: 2 };
    let s = experiment_summary(&run_experiment(&c).unwrap()).unwrap();
    assert!(s.hypotheses.violated);
    assert!(s.solver_ok);
}

#[test]
fn bennett_examples() {
    let r = verify_bennett(&BoundedVarSpec::Rademacher, 100, &[30.0], 100_000, 12).unwrap();
    assert!(r.all_dominated);
    assert!((r.rows[0].bound - 2.0 * (-900.0f64 / 260.0).exp()).abs() < 1e-12);
    assert!(r.rows[0].empirical < 0.006, "{:?}", r.rows);

    let huber = BoundedVarSpec::CenteredScore {
        loss: ConvexLoss::huber(1.0).unwrap(),
        dist: ErrorDistribution::standard_normal(),
    };
    let r = verify_bennett(&huber, 400, &[10.0, 20.0, 40.0], 20_000, 13).unwrap();
    assert!(r.all_dominated, "{r:?}");
    assert_eq!(r.b, 1.0);
}

#[test]
fn balanced_design_weights_with_log_pareto() {
    let weights = WeightSpec::DesignCoordinate { design: DesignGenSpec::OrthogonalBlocks { p: 2 }, coordinate: 1 };
    let r = verify_weighted_slln(
        &ErrorDistribution::log_pareto(),
        &ConvexLoss::least_squares(),
        &weights,
        &[1_000, 10_000, 100_000],
        50,
        21,
    )
    .unwrap();
    assert!(r.weight_growth_slope.abs() < 1e-9);
    assert!(r.medians.windows(2).all(|w| w[1] < w[0]), "{:?}", r.medians);
}
