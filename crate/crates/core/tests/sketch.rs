use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use chartfc::fusion::{count_sketch, mcb_fuse, SketchSpec};

fn vector(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[test]
fn count_sketch_preserves_inner_products_on_average() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = vector(&mut rng, 64);
    let y: Vec<f64> = x.iter().map(|v| v + 0.3 * rng.random_range(-1.0..1.0)).collect();
    let exact = dot(&x, &y);
    let draws = 1000;
    let mean = (0..draws)
        .map(|d| {
            let spec = SketchSpec::draw(64, 256, 1000 + d);
            dot(&count_sketch(&x, &spec), &count_sketch(&y, &spec))
        })
        .sum::<f64>()
        / draws as f64;
    let rel = (mean - exact).abs() / exact.abs();
    assert!(rel < 0.05, "estimate {mean} vs {exact} ({rel})");
}

#[test]
fn mcb_matches_quadratic_convolution() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let d = 64;
    let (a, b) = (vector(&mut rng, 40), vector(&mut rng, 48));
    let (sa, sb) = (SketchSpec::draw(40, d, 3), SketchSpec::draw(48, d, 4));
    let fused = mcb_fuse(&a, &b, &sa, &sb).unwrap();

    // Circular convolution of the two sketches, term by term.
    let (ca, cb) = (count_sketch(&a, &sa), count_sketch(&b, &sb));
    let mut conv = vec![0.0; d];
    for i in 0..d {
        for j in 0..d {
            conv[(i + j) % d] += ca[i] * cb[j];
        }
    }
    // Sketch of the full outer product under the combined hash.
    let mut outer = vec![0.0; d];
    for i in 0..a.len() {
        for j in 0..b.len() {
            outer[(sa.hash[i] + sb.hash[j]) % d] += sa.sign[i] * sb.sign[j] * a[i] * b[j];
        }
    }
    assert_eq!(fused.len(), d);
    for k in 0..d {
        assert!((fused[k] - conv[k]).abs() < 1e-6, "{k}: {} vs {}", fused[k], conv[k]);
        assert!((fused[k] - outer[k]).abs() < 1e-6, "{k}: {} vs {}", fused[k], outer[k]);
    }
}

#[test]
fn mcb_rejects_mismatched_sketches() {
    let (sa, sb) = (SketchSpec::draw(4, 8, 0), SketchSpec::draw(4, 16, 0));
    assert!(mcb_fuse(&[0.0; 4], &[0.0; 4], &sa, &sb).is_err());
}
