//! Per-op timing at production shapes.
//! `cargo run -p lnm-core --example bench_ops`

use std::time::Instant;

use lnm_core::nn::{BatchNorm2d, Conv2d, Gelu, Upsample2x};
use lnm_core::rng::component_rng;
use ndarray::{Array2, Array4};
use rand::Rng as _;

fn time<F: FnMut()>(label: &str, reps: usize, mut f: F) {
    let t = Instant::now();
    for _ in 0..reps {
        f();
    }
    println!("{label}: {:.1} ms/rep", t.elapsed().as_secs_f64() * 1e3 / reps as f64);
}

fn main() {
    let mut rng = component_rng(1, "bench");
    let b = 64;
    let base = 16;

    // encoder block shapes (channels_in, channels_out, spatial, stride)
    let shapes = [
        (1, base, 32, 1),
        (base, 2 * base, 32, 2),
        (2 * base, 4 * base, 16, 2),
        (4 * base, 16 * base, 8, 1),
        (16 * base, 4 * base, 8, 1),
        (4 * base, 4 * base, 8, 1),
    ];
    for (ci, co, sp, st) in shapes {
        let mut conv = Conv2d::new(ci, co, 3, st, &mut rng);
        let x = Array4::from_shape_simple_fn((b, ci, sp, sp), || rng.random::<f64>());
        let y = conv.forward(&x);
        let g = Array4::from_shape_simple_fn(y.dim(), || rng.random::<f64>());
        time(&format!("conv {ci}->{co} @{sp} s{st} fwd"), 5, || {
            let _ = conv.forward(&x);
        });
        time(&format!("conv {ci}->{co} @{sp} s{st} bwd"), 5, || {
            let _ = conv.forward(&x);
            let _ = conv.backward(&g);
        });
    }

    let mut bn = BatchNorm2d::new(16 * base);
    let x = Array4::from_shape_simple_fn((b, 16 * base, 8, 8), || rng.random::<f64>());
    time("bn 256ch @8 fwd", 10, || {
        let _ = bn.forward(&x);
    });
    let mut gelu = Gelu::new();
    let big = Array4::from_shape_simple_fn((b, base, 32, 32), || rng.random::<f64>());
    time("gelu 16ch @32 fwd", 10, || {
        let _ = gelu.forward(&big);
    });
    let mut up = Upsample2x::new();
    let small = Array4::from_shape_simple_fn((b, 2 * base, 16, 16), || rng.random::<f64>());
    time("upsample 32ch 16->32", 10, || {
        let _ = up.forward(&small);
    });

    // SSIM loss at batch scale
    let imgs: Vec<(Array2<f64>, Array2<f64>)> = (0..b)
        .map(|_| {
            (
                Array2::from_shape_simple_fn((32, 32), || rng.random::<f64>()),
                Array2::from_shape_simple_fn((32, 32), || rng.random::<f64>()),
            )
        })
        .collect();
    time("ssim_with_grad x64", 5, || {
        for (x, y) in &imgs {
            let _ = lnm_core::vae::ssim_with_grad(x, y);
        }
    });

    // gemm at the heavy shapes
    let a = Array2::from_shape_simple_fn((256, 576), || rng.random::<f64>());
    let c = Array2::from_shape_simple_fn((576, 4096), || rng.random::<f64>());
    time("gemm 256x576x4096", 10, || {
        let _ = lnm_core::nn::gemm::matmul(a.view(), c.view());
    });
}
