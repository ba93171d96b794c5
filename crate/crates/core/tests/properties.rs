use bsrdm::degradation::{blur_downsample_tensor, KernelSpec};
use bsrdm::ekp::{generate_kernel, EkpParams, Kernel};
use bsrdm::em::gradient_prior;
use bsrdm::metrics::{psnr, ssim};
use bsrdm::noise::{update_variance, PatchSize, LAMBDA_FLOOR};
use bsrdm::tensor::{ops, Graph, Tensor};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn tensor(shape: &'static [usize], lo: f64, hi: f64) -> impl Strategy<Value = Tensor> {
    let n = shape.iter().product::<usize>();
    prop::collection::vec(lo..hi, n).prop_map(move |v| Tensor::new(shape.to_vec(), v).unwrap())
}

fn q_strategy() -> impl Strategy<Value = EkpParams> {
    (0.25f64..1.5, -1.0f64..1.0, 0.25f64..1.5).prop_map(|(a, b, c)| EkpParams::new(a, b, c))
}

fn kernel_invariants(k: &Kernel) -> Result<(), TestCaseError> {
    prop_assert!(k.values().iter().all(|&v| v > 0.0));
    prop_assert!((k.sum() - 1.0).abs() < 1e-12);
    let r = k.radius() as isize;
    for i in -r..=r {
        for j in -r..=r {
            prop_assert!((k.at(i, j) - k.at(-i, -j)).abs() < 1e-15);
        }
    }
    Ok(())
}

/// `Σ r²/(2λ) + (C/2) Σ log λ` over channel-shared per-pixel variances.
fn nll(residual: &Tensor, lambda: &[f64]) -> f64 {
    let (c, h, w) = residual.dims3().unwrap();
    let r = residual.data();
    let mut total = 0.0;
    for p in 0..h * w {
        for ch in 0..c {
            total += r[ch * h * w + p].powi(2) / (2.0 * lambda[p]);
        }
        total += 0.5 * c as f64 * lambda[p].ln();
    }
    total
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn kernels_are_positive_normalized_symmetric(q in q_strategy(), r in 1usize..8) {
        kernel_invariants(&generate_kernel(q, r).unwrap())?;
    }

    #[test]
    fn flipping_q21_mirrors_kernel(q in q_strategy()) {
        let [a, b, c] = q.to_array();
        let k = generate_kernel(q, 5).unwrap();
        let m = generate_kernel(EkpParams::new(a, -b, c), 5).unwrap();
        for i in -5..=5 {
            for j in -5..=5 {
                prop_assert!((k.at(i, j) - m.at(i, -j)).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn scaling_q_shrinks_footprint(q in q_strategy()) {
        let [a, b, c] = q.to_array();
        let m: Vec<f64> = [0.5, 1.0, 2.0]
            .iter()
            .map(|s| generate_kernel(EkpParams::new(s * a, s * b, s * c), 9).unwrap().second_moment())
            .collect();
        prop_assert!(m[0] > m[1] && m[1] > m[2], "{m:?}");
    }

    #[test]
    fn isotropic_init_is_rotation_invariant(s in 1.0f64..4.0, r in 2usize..9) {
        let k = generate_kernel(EkpParams::isotropic(s), r).unwrap();
        let r = r as isize;
        for i in -r..=r {
            for j in -r..=r {
                prop_assert!((k.at(i, j) - k.at(j, -i)).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn variance_update_minimizes_nll(
        residual in tensor(&[3, 12, 12], -0.3, 0.3),
        t in prop::collection::vec(0.5f64..2.0, 144),
    ) {
        for patch in [PatchSize::Square(1), PatchSize::WholeImage] {
            let lambda = update_variance(&residual, patch).unwrap();
            let best = nll(&residual, lambda.values());
            let perturbed: Vec<f64> = match patch {
                PatchSize::WholeImage => lambda.values().iter().map(|v| v * t[0]).collect(),
                _ => lambda.values().iter().zip(&t).map(|(v, f)| v * f).collect(),
            };
            prop_assert!(nll(&residual, &perturbed) >= best - 1e-9 * best.abs());
        }
    }

    #[test]
    fn scaling_residuals_scales_variance(residual in tensor(&[3, 10, 10], -1.0, 1.0), c in 0.5f64..3.0) {
        let scaled = residual.map(|v| c * v);
        for patch in [PatchSize::Square(3), PatchSize::Square(7), PatchSize::WholeImage] {
            let a = update_variance(&residual, patch).unwrap();
            let b = update_variance(&scaled, patch).unwrap();
            for (x, y) in a.values().iter().zip(b.values()) {
                if *x > LAMBDA_FLOOR && *y > LAMBDA_FLOOR {
                    prop_assert!((y - c * c * x).abs() <= 1e-12 * y.abs());
                }
            }
        }
    }

    #[test]
    fn downsample_is_a_projection(x in tensor(&[2, 12, 24], -1.0, 1.0), s in prop::sample::select(vec![2usize, 3, 4])) {
        let mut g = Graph::new();
        let xv = g.leaf(x.clone(), true);
        let d = ops::direct_downsample(&mut g, xv, s).unwrap();
        let c = g.constant(g.value(d).clone());
        let p = ops::mul(&mut g, d, c).unwrap();
        let loss = ops::sum(&mut g, p);
        g.backward(loss).unwrap();
        let adjoint_of_forward = g.grad(xv).unwrap().clone();
        let again = ops::direct_downsample_tensor(&adjoint_of_forward, s).unwrap();
        prop_assert_eq!(again, ops::direct_downsample_tensor(&x, s).unwrap());
    }

    #[test]
    fn blur_preserves_constant_brightness(v in 0.0f64..1.0, spec in kernel_spec()) {
        let x = Tensor::full(&[3, 16, 16], v);
        let y = blur_downsample_tensor(&x, &spec.build(2).unwrap(), 2).unwrap();
        prop_assert!(y.data().iter().all(|p| (p - v).abs() < 1e-12));
    }

    #[test]
    fn degradation_is_linear(x in tensor(&[1, 16, 16], 0.0, 1.0), n in tensor(&[1, 16, 16], -0.1, 0.1), c in -2.0f64..2.0, spec in kernel_spec()) {
        let k = spec.build(2).unwrap();
        let scaled = blur_downsample_tensor(&x.map(|v| c * v), &k, 2).unwrap();
        let base = blur_downsample_tensor(&x, &k, 2).unwrap();
        prop_assert!(scaled.data().iter().zip(base.data()).all(|(a, b)| (a - c * b).abs() < 1e-12));

        let noisy = Tensor::new(vec![1, 16, 16], x.data().iter().zip(n.data()).map(|(a, b)| a + b).collect()).unwrap();
        let lhs = blur_downsample_tensor(&noisy, &k, 2).unwrap();
        let dn = blur_downsample_tensor(&n, &k, 2).unwrap();
        for ((l, b), d) in lhs.data().iter().zip(base.data()).zip(dn.data()) {
            prop_assert!((l - b - d).abs() < 1e-12);
        }
    }

    #[test]
    fn flat_images_cost_nothing(v in 0.0f64..1.0) {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::full(&[3, 8, 8], v), true);
        let p = gradient_prior(&mut g, x, 0.2, 2.0 / 3.0).unwrap();
        prop_assert!(g.value(p).item().abs() < 1e-12);
    }

    #[test]
    fn metrics_are_symmetric(a in tensor(&[3, 20, 20], 0.0, 1.0), b in tensor(&[3, 20, 20], 0.0, 1.0)) {
        prop_assert_eq!(psnr(&a, &b, 2).unwrap(), psnr(&b, &a, 2).unwrap());
        prop_assert!((ssim(&a, &b, 2).unwrap() - ssim(&b, &a, 2).unwrap()).abs() < 1e-12);
        prop_assert!(ssim(&a, &b, 2).unwrap() <= 1.0);
    }

    #[test]
    fn ssim_ignores_common_shift(a in tensor(&[1, 24, 24], 0.0, 1.0), b in tensor(&[1, 24, 24], 0.0, 1.0), dy in 0usize..4, dx in 0usize..4) {
        // Shift both images, then score the region both versions share.
        let shift = |t: &Tensor| Tensor::from_fn(&[1, 24, 24], |i| {
            let (y, x) = (i / 24, i % 24);
            t.data()[((y + 24 - dy) % 24) * 24 + (x + 24 - dx) % 24]
        });
        let window = |t: &Tensor, oy: usize, ox: usize| Tensor::from_fn(&[1, 16, 16], |i| t.data()[(oy + i / 16) * 24 + ox + i % 16]);
        let (sa, sb) = (shift(&a), shift(&b));
        let direct = ssim(&window(&a, 2, 2), &window(&b, 2, 2), 0).unwrap();
        let shifted = ssim(&window(&sa, 2 + dy, 2 + dx), &window(&sb, 2 + dy, 2 + dx), 0).unwrap();
        prop_assert!((direct - shifted).abs() < 1e-12);
    }
}

fn kernel_spec() -> impl Strategy<Value = KernelSpec> {
    prop_oneof![
        Just(KernelSpec::Delta),
        (0.5f64..3.0).prop_map(|sigma| KernelSpec::Isotropic { sigma }),
        (1usize..=6).prop_map(|index| KernelSpec::Bank { index }),
    ]
}

#[test]
fn whole_image_variance_recovers_awgn() {
    let sigma: f64 = 0.02;
    let normal = Normal::new(0.0, sigma).unwrap();
    let mut inside = 0;
    for seed in 0..200 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let r = Tensor::from_fn(&[1, 64, 64], |_| normal.sample(&mut rng));
        let lambda = update_variance(&r, PatchSize::WholeImage).unwrap();
        if (lambda.values()[0] / (sigma * sigma) - 1.0).abs() < 0.1 {
            inside += 1;
        }
    }
    // A chi-square with 4096 degrees of freedom sits within ±10% with
    // probability above 1 − 1e-10.
    assert_eq!(inside, 200);
}

#[test]
fn stronger_noise_lowers_psnr() {
    let a = bsrdm::pattern::test_image(32, 32, 9);
    let mean_psnr = |sigma: f64| {
        let normal = Normal::new(0.0, sigma).unwrap();
        (0..20)
            .map(|seed| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let b = Tensor::new(a.shape().to_vec(), a.data().iter().map(|v| v + normal.sample(&mut rng)).collect()).unwrap();
                psnr(&a, &b, 0).unwrap()
            })
            .sum::<f64>()
            / 20.0
    };
    assert!(mean_psnr(0.05) < mean_psnr(0.02));
}

#[test]
fn tape_replay_is_bitwise_deterministic() {
    use bsrdm::generator::{sample_latent, Architecture, Generator};
    let run = || {
        let gen = Generator::new(Architecture::new(3), 32, 32, 4).unwrap();
        let z = sample_latent(32, 32, 8, 5);
        let mut g = Graph::new();
        let zv = g.leaf(z, true);
        let alpha = gen.register(&mut g, true);
        let x = gen.forward(&mut g, zv, &alpha).unwrap();
        let loss = ops::sum(&mut g, x);
        g.backward(loss).unwrap();
        (g.value(x).clone(), g.grad(zv).unwrap().clone(), g.grad(alpha[0]).unwrap().clone())
    };
    assert_eq!(run(), run());
}
