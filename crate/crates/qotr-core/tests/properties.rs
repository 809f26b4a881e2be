//! Property tests over the tensor ops and the patch-grid geometry.

use proptest::prelude::*;
use qotr_core::geometry::{
    partition_to_tokens, patch_footprint, ring_index, tokens_to_image, GridSpec,
};
use qotr_core::tensor::Tensor;

fn finite_vec(len: usize) -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(-50.0f64..50.0, len)
}

proptest! {
    #[test]
    fn softmax_rows_sum_to_one(data in finite_vec(24)) {
        let t = Tensor::from_vec(&[4, 6], data).unwrap();
        let s = t.softmax_lastdim().unwrap();
        for row in s.data().chunks_exact(6) {
            let total: f64 = row.iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-6);
            prop_assert!(row.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn matmul_is_associative_on_4x4(a in finite_vec(16), b in finite_vec(16), c in finite_vec(16)) {
        let a = Tensor::from_vec(&[4, 4], a.iter().map(|&v| v as f32 * 0.1).collect()).unwrap();
        let b = Tensor::from_vec(&[4, 4], b.iter().map(|&v| v as f32 * 0.1).collect()).unwrap();
        let c = Tensor::from_vec(&[4, 4], c.iter().map(|&v| v as f32 * 0.1).collect()).unwrap();
        let left = a.matmul(&b).unwrap().matmul(&c).unwrap();
        let right = a.matmul(&b.matmul(&c).unwrap()).unwrap();
        let scale = left
            .data()
            .iter()
            .fold(1.0f32, |m, v| m.max(v.abs()));
        for (l, r) in left.data().iter().zip(right.data()) {
            prop_assert!((l - r).abs() / scale < 1e-5, "{l} vs {r}");
        }
    }

    #[test]
    fn layer_norm_standardizes_nondegenerate_rows(data in finite_vec(32)) {
        // reject near-constant rows: their variance is dominated by eps
        let spread = data.chunks_exact(8).all(|row| {
            let mean: f64 = row.iter().sum::<f64>() / 8.0;
            row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 8.0 > 1e-3
        });
        prop_assume!(spread);
        let t = Tensor::from_vec(&[4, 8], data).unwrap();
        let out = t
            .layer_norm(&Tensor::ones(&[8]), &Tensor::zeros(&[8]), 1e-9)
            .unwrap();
        for row in out.data().chunks_exact(8) {
            let mean: f64 = row.iter().sum::<f64>() / 8.0;
            let var: f64 = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 8.0;
            prop_assert!(mean.abs() <= 1e-6, "mean {mean}");
            prop_assert!((var - 1.0).abs() <= 1e-4, "var {var}");
        }
    }

    #[test]
    fn partition_roundtrip_is_identity(data in finite_vec(3 * 8 * 8)) {
        let spec = GridSpec::new(8, 8, 0, 4, 0);
        let img = Tensor::from_vec(&[3, 8, 8], data).unwrap();
        let tokens = partition_to_tokens(&img, &spec).unwrap();
        let back = tokens_to_image(&tokens, &spec).unwrap();
        prop_assert_eq!(back.data(), img.data());
    }

    #[test]
    fn zero_offset_deformable_equals_conv(
        kernel in finite_vec(2 * 2 * 9),
        image in finite_vec(2 * 6 * 6),
    ) {
        let x3 = Tensor::from_vec(&[2, 6, 6], image).unwrap();
        let w = Tensor::from_vec(&[2, 2, 3, 3], kernel).unwrap();
        let b = Tensor::from_vec(&[2], vec![0.3, -0.7]).unwrap();
        let offsets = Tensor::zeros(&[18, 6, 6]);
        let deform = x3.deformable_conv(&offsets, &w, &b).unwrap();
        let conv = x3
            .reshape(&[1, 2, 6, 6])
            .unwrap()
            .conv2d(&w, &b, 1, 1)
            .unwrap();
        for (d, c) in deform.data().iter().zip(conv.data()) {
            prop_assert!((d - c).abs() <= 1e-5 * (1.0 + c.abs()), "{d} vs {c}");
        }
    }
}

/// token_counts must agree with explicit frame-cell counting for the whole
/// sweep of valid grids.
#[test]
fn token_counts_agree_with_ring_enumeration_sweep() {
    for patch in [4usize, 8, 16] {
        for margin_cells in [1usize, 2, 3] {
            for grid_cells in [2usize, 3, 4] {
                let spec = GridSpec::new(
                    grid_cells * patch,
                    grid_cells * patch,
                    margin_cells * patch,
                    patch,
                    patch / 4,
                );
                let (l, r) = spec.token_counts().unwrap();
                let ring = ring_index(&spec).unwrap();
                assert_eq!(ring.len(), r, "{spec:?}");
                assert_eq!(l, grid_cells * grid_cells);

                // brute-force frame count
                let total = (grid_cells + 2 * margin_cells).pow(2);
                assert_eq!(r, total - grid_cells * grid_cells);
            }
        }
    }
}

/// With o = 0, the footprints of the ring cells plus the center block tile
/// the canvas exactly once.
#[test]
fn zero_overlap_footprints_tile_canvas_once() {
    let spec = GridSpec::new(16, 24, 8, 4, 0);
    let ring = ring_index(&spec).unwrap();
    let (ch, cw) = spec.canvas();
    let mut cover = vec![0u32; ch * cw];
    for &coord in ring.coords() {
        let rect = patch_footprint(&spec, coord);
        for y in rect.y0..rect.y1 {
            for x in rect.x0..rect.x1 {
                cover[y * cw + x] += 1;
            }
        }
    }
    // center block
    for y in spec.margin..spec.margin + spec.height {
        for x in spec.margin..spec.margin + spec.width {
            cover[y * cw + x] += 1;
        }
    }
    assert!(cover.iter().all(|&c| c == 1), "tiling must be exact");
}
