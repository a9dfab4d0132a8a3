use proptest::prelude::*;
use surfscatter_core::integrate::{integrate, mcgehee_field, IntegratorConfig};
use surfscatter_core::manifolds::melnikov_amplitude;
use surfscatter_core::model::{energy, ModelParams, PhysicalParams};
use surfscatter_core::separatrix::{gamma0, melnikov_coeff_closed, melnikov_coeff_quadrature};

#[test]
fn physical_nu_feeds_the_model() {
    let p = ModelParams::from_nu_i0(PhysicalParams::default(), 4.0, 1e-4).unwrap();
    assert!((p.nu() - 11.051879175935).abs() < 1e-10);
    assert!((p.nu() * p.i0() - 4.0).abs() < 1e-14);
}

#[test]
fn melnikov_amplitude_is_twice_the_coefficient() {
    let p = ModelParams::physical_default(5.0, 1.0);
    let l1 = melnikov_coeff_closed(1, 5.0, p.series()).value.norm();
    assert!((melnikov_amplitude(&p, 1) - 2.0 * l1).abs() <= 1e-18);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    // Both routes agree across the range the splitting runs use.
    #[test]
    fn closed_form_and_quadrature_agree(nu_i0 in 2.0f64..9.0, k in 1i64..3) {
        let s = PhysicalParams::default().corrugation;
        let c = melnikov_coeff_closed(k, nu_i0, &s).value;
        let q = melnikov_coeff_quadrature(k, nu_i0, &s, 1e-9).unwrap().value;
        prop_assert!((c - q).norm() <= 1e-8 * c.norm());
    }

    // The unperturbed separatrix lies on the level of the orbit at infinity and stays there.
    #[test]
    fn separatrix_flow_keeps_energy(u in -3.0f64..3.0, theta in 0.0f64..6.28) {
        let p = ModelParams::physical_default(5.0, 0.0);
        let y0 = gamma0(u, theta);
        prop_assert!((energy(&y0, &p) - p.level()).abs() <= 1e-13);
        let traj = integrate(mcgehee_field(&p), y0, 0.0, 5.0, &IntegratorConfig::with_tol(1e-12).unwrap()).unwrap();
        prop_assert!((energy(traj.last(), &p) - p.level()).abs() <= 1e-10);
    }
}
