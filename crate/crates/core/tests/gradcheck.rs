mod common;

use common::*;

#[test]
fn backprop_matches_central_differences() {
    let mut r = rng(2024);
    for arch in 0..25u64 {
        let model = random_architecture(1000 + arch, 1000);
        let mut x = uniform_vec(&mut r, model.input_len(), -1.0, 1.0);
        while kink_margin(&model, &x) < 1e-3 {
            x = uniform_vec(&mut r, model.input_len(), -1.0, 1.0);
        }
        let target = random_target(&model, &mut r);
        let err = max_gradient_error(&model, &x, &target, 1e-4);
        println!(
            "arch {arch}: {} params, {:?}, max rel err {err:.3e}",
            model.param_count(),
            model
                .layers()
                .iter()
                .map(|l| l.kind.label())
                .collect::<Vec<_>>()
        );
        assert!(err < 1e-4, "architecture {arch}: relative error {err}");
    }
}
