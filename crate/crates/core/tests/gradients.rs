mod common;

use common::{model_gradient_error, primitive_gradient_errors};

#[test]
fn primitives_match_central_differences() {
    for (name, err) in primitive_gradient_errors() {
        assert!(err <= 1e-4, "{name}: relative error {err:e}");
    }
}

#[test]
fn micro_bert1_matches_central_differences() {
    let (err, checked) = model_gradient_error();
    assert!(checked > 3000, "only {checked} scalars checked");
    assert!(err <= 1e-4, "relative error {err:e}");
}
