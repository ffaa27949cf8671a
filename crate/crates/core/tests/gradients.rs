use crush_core::gradcheck::{check_objective, Objective};

const TOLERANCE: f64 = 1e-4;
const INSTANCES: u64 = 20;

fn check(objective: Objective) {
    for seed in 0..INSTANCES {
        let r = check_objective(objective, seed, 8).unwrap();
        assert!(r.loss.is_finite());
        assert!(r.coords >= 10, "{objective:?}: only {} coordinates", r.coords);
        assert!(r.rel_error <= TOLERANCE, "{objective:?} seed {seed}: relative error {:.3e}", r.rel_error);
    }
}

#[test]
fn ua_contrastive() {
    check(Objective::UaContrastive);
}

#[test]
fn aux_contrastive() {
    check(Objective::AuxContrastive);
}

#[test]
fn robust_ua() {
    check(Objective::RobustUa);
}

#[test]
fn cross_entropy() {
    check(Objective::CrossEntropy);
}

#[test]
fn contextual_ce() {
    check(Objective::ContextualCe);
}

#[test]
fn contextual_classification() {
    check(Objective::ContextualClassification);
}

#[test]
fn mse() {
    check(Objective::Mse);
}

#[test]
fn contextual_mse() {
    check(Objective::ContextualMse);
}

#[test]
fn contextual_regression() {
    check(Objective::ContextualRegression);
}

#[test]
fn mlm() {
    check(Objective::Mlm);
}

#[test]
fn every_objective_is_covered() {
    assert_eq!(Objective::ALL.len(), 10);
}
