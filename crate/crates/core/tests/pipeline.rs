//! Field tabulation feeding the certificate, end to end on a scalar system.

use nalgebra::DVector;
use psafe_core::certificate::{Certificate, CertificateParams, GeneratorForm};
use psafe_core::estimation::{
    mc_probability, tabulate_mc, InterpOrder, ProbabilityField, TabulateConfig,
};
use psafe_core::sde::{augment, BarrierSpec, HorizonMode, SdeSystem, ZeroPolicy};

fn v(x: f64) -> DVector<f64> {
    DVector::from_element(1, x)
}

fn setup() -> (SdeSystem, BarrierSpec) {
    let sys = SdeSystem::scalar(|_| 2.0, |_| 1.0, |_| 2.0);
    let spec = BarrierSpec::scalar_threshold(1.0).with_horizon(HorizonMode::Fixed, 2.0);
    (sys, spec)
}

fn config(seed: u64) -> TabulateConfig {
    TabulateConfig {
        state_axes: vec![(0..=42).map(|i| 0.8 + 0.1 * i as f64).collect()],
        horizons: None,
        margins: None,
        samples: 2000,
        dt: 0.1,
        seed,
        order: InterpOrder::Cubic,
    }
}

#[test]
fn tabulated_nodes_agree_with_direct_estimates() {
    let (sys, spec) = setup();
    let field = tabulate_mc(&sys, &spec, &ZeroPolicy(1), &config(11), "zero").unwrap();
    for x in [1.2, 2.0, 3.0] {
        let z = augment(&v(x), 0.0, &spec).unwrap();
        let tab = field.evaluate(&z).unwrap().value;
        let direct = mc_probability(&sys, &spec, &ZeroPolicy(1), &z, 20_000, 0.1, 99).unwrap();
        let se_tab = (tab * (1.0 - tab) / 2000.0).sqrt();
        let se = (se_tab.powi(2) + direct.stderr.powi(2)).sqrt().max(1e-3);
        assert!(
            (tab - direct.estimate).abs() < 4.0 * se,
            "x = {x}: {tab} vs {}",
            direct.estimate
        );
    }
}

#[test]
fn filtered_inputs_meet_the_constraint_and_worst_case_meets_it_exactly() {
    let (sys, spec) = setup();
    let field = tabulate_mc(&sys, &spec, &ZeroPolicy(1), &config(5), "zero").unwrap();
    for generator in [GeneratorForm::Direct, GeneratorForm::Backward] {
        let params = CertificateParams {
            generator,
            ..CertificateParams::default()
        };
        let cert = Certificate::new(&field, &sys, &spec, params).unwrap();
        for x in [1.1, 1.5, 2.2, 3.4] {
            let z = augment(&v(x), 0.0, &spec).unwrap();
            let c = cert.safety_constraint(&z).unwrap();
            assert!(
                c.a[0] > 0.0,
                "F increases with x, so the input gain is positive at {x}"
            );
            for nominal in [-20.0, -3.0, 0.0, 4.0] {
                let out = cert.additive_filter(&v(nominal), &z).unwrap();
                assert!(out.feasible);
                assert!(c.a.dot(&out.u) >= c.b - 1e-9);
                if c.a[0] * nominal >= c.b {
                    assert_eq!(out.u[0], nominal);
                }
            }
            let u = cert.worst_case_control(&z).unwrap();
            assert!((c.a.dot(&u) - c.b).abs() < 1e-9);
        }
    }
}
