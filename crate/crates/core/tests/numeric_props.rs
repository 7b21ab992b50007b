use std::sync::Arc;

use mgff_core::numeric::{finite_diff_check, Axis, Matrix, ParamStore, Tape, Var};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Matrix> {
    prop::collection::vec(-2.0f64..2.0, rows * cols)
        .prop_map(move |v| Matrix::from_vec(rows, cols, v).unwrap())
}

fn chain() -> impl Strategy<Value = (Matrix, Matrix, Matrix)> {
    (1usize..7, 1usize..7, 1usize..7, 1usize..7)
        .prop_flat_map(|(a, b, c, d)| (matrix(a, b), matrix(b, c), matrix(c, d)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn matmul_is_associative((a, b, c) in chain()) {
        let left = a.matmul(&b).unwrap().matmul(&c).unwrap();
        let right = a.matmul(&b.matmul(&c).unwrap()).unwrap();
        let scale = left.as_slice().iter().chain(right.as_slice()).fold(1.0f64, |m, v| m.max(v.abs()));
        prop_assert!(left.max_abs_diff(&right) / scale <= 1e-9);
    }

    #[test]
    fn concat_then_slice_is_exact(a in matrix(3, 4), b in matrix(3, 2), c in matrix(5, 4)) {
        let cols = Matrix::concat(&a, &b, Axis::Cols).unwrap();
        prop_assert_eq!(cols.slice_cols(0..4), a.clone());
        prop_assert_eq!(cols.slice_cols(4..6), b);
        let rows = Matrix::concat(&a, &c, Axis::Rows).unwrap();
        prop_assert_eq!(rows.slice_rows(0..3), a);
        prop_assert_eq!(rows.slice_rows(3..8), c);
    }

    #[test]
    fn tanh_backward_is_one_minus_square(x in matrix(3, 3)) {
        let mut tape = Tape::new();
        let v = tape.constant(x.clone());
        let y = tape.tanh(v);
        let g = tape.backward(y, &Matrix::filled(3, 3, 1.0), &mut ParamStore::new()).unwrap();
        let expected = x.map(|v| 1.0 - v.tanh() * v.tanh());
        prop_assert!(g.get(v).unwrap().max_abs_diff(&expected) <= 1e-12);
    }
}

/// A small composite touching most ops: an affine layer with batch-norm,
/// broadcast products, slicing, gathering, pooling and a hinge. Returns the
/// scalar output plus the inputs of the two kinked ops (`abs`, `relu`).
fn composite(store: &ParamStore, tape: &mut Tape, x: &Matrix) -> mgff_core::Result<(Var, Var, Var)> {
    let adj = Arc::new(Matrix::from_rows(&[
        [1.0, 1.0, 0.0, 0.0, 0.0],
        [1.0, 1.0, 1.0, 0.0, 0.0],
        [0.0, 1.0, 1.0, 1.0, 0.0],
        [0.0, 0.0, 1.0, 1.0, 1.0],
        [0.0, 0.0, 0.0, 1.0, 1.0],
    ]));
    let x = tape.constant(x.clone());
    let w = tape.param(store, "w")?;
    let b = tape.param(store, "b")?;
    let s = tape.param(store, "s")?;
    let h = tape.matmul(x, w)?;
    let h = tape.add_row(h, b)?;
    let h = tape.propagate(adj, h)?;
    let n = tape.batch_norm(h, 1e-5)?;
    let left = tape.slice_cols(n, 0..2)?;
    let right = tape.slice_cols(h, 2..4)?;
    let gated = tape.sigmoid(right);
    let prod = tape.mul(left, gated)?;
    let prod = tape.mul_row(prod, s)?;
    let cat = tape.concat(prod, gated, Axis::Cols)?;
    let picked = tape.gather_rows(cat, vec![4, 0, 2, 2])?;
    let pooled = tape.block_mean_rows(picked, 2)?;
    let t = tape.tanh(pooled);
    let hinge_in = tape.add_scalar(t, 0.3);
    let hinge = tape.relu(hinge_in);
    let a = tape.abs(pooled);
    let a = tape.sum(a);
    let sq = tape.sum_squares(hinge);
    let mean = tape.mean_over_rows(picked)?;
    let m = tape.sum(mean);
    let m = tape.scale(m, 0.5);
    let total = tape.add(a, sq)?;
    Ok((tape.add(total, m)?, pooled, hinge_in))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn composite_gradients_match_finite_differences(
        w in matrix(3, 4), b in matrix(1, 4), s in matrix(1, 2), x in matrix(5, 3), seed in 0u64..1000,
    ) {
        let mut params = ParamStore::new();
        params.insert("w", w).unwrap();
        params.insert("b", b).unwrap();
        params.insert("s", s).unwrap();
        // Central differences are meaningless across a kink; keep clear of them.
        let mut probe = Tape::new();
        let (_, pooled, hinge_in) = composite(&params, &mut probe, &x).unwrap();
        let margin = |v: Var| probe.value(v).as_slice().iter().fold(f64::INFINITY, |m, e| m.min(e.abs()));
        prop_assume!(margin(pooled) > 1e-3 && margin(hinge_in) > 1e-3);

        let report = finite_diff_check(
            |store, tape: &mut Tape| composite(store, tape, &x).map(|(out, _, _)| out),
            &mut params,
            1e-5,
            usize::MAX,
            &mut ChaCha8Rng::seed_from_u64(seed),
        )
        .unwrap();
        prop_assert!(report.max_relative_error <= 1e-4, "{report:?}");
    }
}
