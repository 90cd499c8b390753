//! The bindings' Rust side, exercised without a browser.

use ais_web::{density_grid, run_vanilla, Trainer};

#[test]
fn density_grid_is_row_major_from_the_top() {
    let size = 41;
    let g = density_grid("gaussian", size).unwrap();
    assert_eq!(g.len(), size * size);
    // Peak of the centered Gaussian sits in the middle cell.
    let (arg, _) = g.iter().enumerate().fold((0, f64::NEG_INFINITY), |b, (i, &v)| if v > b.1 { (i, v) } else { b });
    assert_eq!(arg, 20 * size + 20);
    assert!(density_grid("nope", 8).is_err());
    assert!(density_grid("ring", 1).is_err());
}

#[test]
fn vanilla_run_shapes_and_determinism() {
    let a = run_vanilla("gauss8", "mala", 16, 200, 0.3, 4).unwrap();
    let b = run_vanilla("gauss8", "mala", 16, 200, 0.3, 4).unwrap();
    assert_eq!(a.xy().len(), 400);
    assert_eq!(a.log_w().len(), 200);
    assert_eq!(a.log_w(), b.log_w());
    assert!(a.elbo() <= a.log_z());
    assert!(a.ess() > 0.0 && a.ess() <= 1.0);
    assert!(run_vanilla("gauss8", "nuts", 16, 200, 0.3, 4).is_err());
    assert!(run_vanilla("gauss8", "rwmh", 16, 0, 0.3, 4).is_err());
}

#[test]
fn trainer_improves_the_elbo() {
    let mut t = Trainer::create("gaussian", "rwmh", 4, "pkl", 0).unwrap();
    let before = t.draw(2000, 9).unwrap().elbo();
    for _ in 0..60 {
        t.advance().unwrap();
    }
    assert_eq!(t.epoch(), 60);
    let after = t.draw(2000, 9).unwrap().elbo();
    assert!(after > before, "{before} -> {after}");
}
