mod common;

use common::*;
use dpsynth_core::privacy::{
    calibrate, compose, default_orders, dpem_moment, dpsgd_moment, gaussian_rdp, ma_to_rdp, rdp_to_dp, total_privacy,
    Mechanism, MechanismPlan, PrivacySpec, RdpCurve,
};

#[test]
fn dpsgd_moment_matches_oracle_grid() {
    for &(a, s, sigma, want) in &DPSGD_GRID {
        let got = dpsgd_moment(a, s, sigma).unwrap();
        assert!(rel_err(got, want) <= 1e-8, "α={a} s={s} σ={sigma}: {got} vs {want}");
    }
}

#[test]
fn dpem_moment_matches_oracle_grid() {
    for &(a, k, sigma, want) in &DPEM_GRID {
        let got = dpem_moment(a, k, sigma).unwrap();
        assert!(rel_err(got, want) <= 1e-10, "α={a} K={k} σ={sigma}: {got} vs {want}");
    }
}

#[test]
fn gaussian_rdp_matches_oracle_grid() {
    for &(sigma, a, want) in &GAUSSIAN_GRID {
        let got = gaussian_rdp(sigma, a).unwrap();
        assert!(rel_err(got, want) <= 1e-10, "σ={sigma} α={a}: {got} vs {want}");
    }
}

#[test]
fn rdp_to_dp_matches_oracle() {
    let orders = default_orders();
    let gauss = RdpCurve::from_fn(&orders, |a| gaussian_rdp(5.0, a)).unwrap();
    let zero = RdpCurve::zeros(&orders).unwrap();
    for (curve, want) in [(gauss, GAUSS_SIGMA5_TO_DP), (zero, ZERO_CURVE_TO_DP)] {
        let (eps, order) = rdp_to_dp(&curve, 1e-5).unwrap();
        assert!(rel_err(eps, want.0) <= 1e-10, "{eps} vs {}", want.0);
        assert_eq!(order, want.1);
    }
}

#[test]
fn composite_report_matches_oracle() {
    let orders = default_orders();
    let mechs = [
        Mechanism::GaussianRelease { sigma: 3.0, releases: 2 },
        Mechanism::DpEm {
            sigma: 20.0,
            components: 3,
            iterations: 20,
        },
    ];
    let r = total_privacy(&mechs, 1e-5, &orders).unwrap();
    assert!(rel_err(r.epsilon, COMPOSITE_TO_DP.0) <= 1e-10, "{}", r.epsilon);
    assert_eq!(r.optimal_order, COMPOSITE_TO_DP.1);
}

#[test]
fn mnist_sgd_share_matches_oracle() {
    let orders = default_orders();
    let m = Mechanism::SubsampledSgd {
        noise_multiplier: 1.4,
        sampling_rate: 300.0 / 63000.0,
        steps: 4 * (63000 / 300),
    };
    let (eps, order) = rdp_to_dp(&m.curve(&orders).unwrap(), 1e-5).unwrap();
    assert!(rel_err(eps, MNIST_SGD_TO_DP.0) <= 1e-8, "{eps}");
    assert_eq!(order, MNIST_SGD_TO_DP.1);
}

#[test]
fn ma_to_rdp_reparametrizes() {
    assert_eq!(ma_to_rdp(4.0, 2.0).unwrap(), (5.0, 0.5));
    assert!(ma_to_rdp(0.5, 1.0).is_err());
    assert!(ma_to_rdp(1.0, -1.0).is_err());
}

#[test]
fn dpsgd_overflow_is_infinite() {
    let v = dpsgd_moment(127, 0.5, 0.1).unwrap();
    assert_eq!(v, f64::INFINITY);
}

#[test]
fn invalid_inputs_rejected() {
    assert!(gaussian_rdp(0.0, 2.0).is_err());
    assert!(gaussian_rdp(1.0, 1.0).is_err());
    assert!(dpem_moment(1.0, 0, 1.0).is_err());
    assert!(dpsgd_moment(2, 1.0, 1.0).is_err());
    assert!(dpsgd_moment(0, 0.1, 1.0).is_err());
    assert!(rdp_to_dp(&RdpCurve::zeros(&[2.0]).unwrap(), 1.0).is_err());
    let a = RdpCurve::zeros(&[2.0, 3.0]).unwrap();
    let b = RdpCurve::zeros(&[2.0, 4.0]).unwrap();
    assert!(compose(&[a, b]).is_err());
}

#[test]
fn calibration_meets_every_share() {
    let privacy = PrivacySpec::new(1.0, 1e-5);
    let plan = MechanismPlan {
        pca_releases: 2,
        em_components: 3,
        em_iterations: 20,
        sgd_sampling_rate: 0.01,
        sgd_steps: 500,
        sgd_noise: None,
    };
    let cal = calibrate(&privacy, &plan).unwrap();
    assert!(cal.report.epsilon <= 1.0);
    assert!(cal.report.epsilon > 0.99, "{}", cal.report.epsilon);
    let pca = rdp_to_dp(&cal.report.parts[0].curve, 1e-5).unwrap().0;
    assert!(pca <= 0.1 && pca > 0.099, "{pca}");
    let enc = rdp_to_dp(
        &compose(&[cal.report.parts[0].curve.clone(), cal.report.parts[1].curve.clone()]).unwrap(),
        1e-5,
    )
    .unwrap()
    .0;
    assert!(enc <= 0.3 && enc > 0.299, "{enc}");
}

#[test]
fn infinite_epsilon_uses_search_floor() {
    let privacy = PrivacySpec::new(f64::INFINITY, 1e-5);
    let plan = MechanismPlan {
        pca_releases: 2,
        em_components: 3,
        em_iterations: 20,
        sgd_sampling_rate: 0.01,
        sgd_steps: 10,
        sgd_noise: None,
    };
    let cal = calibrate(&privacy, &plan).unwrap();
    assert_eq!((cal.pca_sigma, cal.em_sigma, cal.sgd_sigma), (1e-2, 1e-2, 1e-2));
}

#[test]
fn fixed_noise_overshoot_is_infeasible() {
    let privacy = PrivacySpec::new(1.0, 1e-5);
    let plan = MechanismPlan {
        pca_releases: 2,
        em_components: 3,
        em_iterations: 20,
        sgd_sampling_rate: 0.1,
        sgd_steps: 1000,
        sgd_noise: Some(0.5),
    };
    assert!(calibrate(&privacy, &plan).is_err());
}
