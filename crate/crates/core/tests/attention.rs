use atp_core::attention::{
    lowrank_attention, multi_head_attention, standard_attention, taylor_dense_attention, AttentionConfig,
    AttentionInput, AttentionWeights, KernelMode, Normalizer,
};
use atp_core::bench::measure;
use atp_core::linalg::exact_truncation;
use atp_core::Matrix;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn exact_rank(l: usize, d: usize, r: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let a: Matrix = Matrix::random_normal(l, r, rng);
    a.matmul(&Matrix::random_normal(r, d, rng)).unwrap()
}

fn normalizer(i: u8) -> Normalizer {
    if i.is_multiple_of(2) {
        Normalizer::RowSum
    } else {
        Normalizer::TaylorDenominator
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn oracle_equivalence_on_exact_truncation(
        l in 1usize..=64, d in 1usize..=32, dp in 1usize..=32, r in 1usize..=32, seed in any::<u64>(), n in any::<u8>(),
    ) {
        let r = r.min(l.min(d));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = exact_rank(l, d, r, &mut rng);
        let f = exact_truncation(&x, r).unwrap();
        prop_assert!(f.orthonormal);
        let w = |rng: &mut ChaCha8Rng| Matrix::random_normal(d, dp, rng).scale(1.0 / (d as f64).sqrt());
        let (wq, wk, wv) = (w(&mut rng), w(&mut rng), w(&mut rng));
        let config = AttentionConfig { normalizer: normalizer(n), ..Default::default() };
        let q = f.reconstruct().matmul(&wq).unwrap();
        let low = lowrank_attention(&q, &f.xp.matmul(&wk).unwrap(), &f.xp.matmul(&wv).unwrap(), &f.u, &config).unwrap();
        let dense = taylor_dense_attention(&q, &x.matmul(&wk).unwrap(), &x.matmul(&wv).unwrap(), &config).unwrap();
        let err = low.output.max_abs_diff(&dense.output).unwrap() / (1.0 + dense.output.max_abs());
        prop_assert!(err <= 1e-8, "{err}");
    }

    #[test]
    fn softmax_rows_are_distributions(l in 1usize..32, n in 1usize..32, dh in 1usize..16, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let q: Matrix = Matrix::random_normal(l, dh, &mut rng).scale(5.0);
        let k = Matrix::random_normal(n, dh, &mut rng);
        let v = Matrix::random_normal(n, 3, &mut rng);
        let config = AttentionConfig { keep_scores: true, ..Default::default() };
        let a = standard_attention(&q, &k, &v, &config).unwrap().scores.unwrap();
        for i in 0..l {
            prop_assert!(a.row(i).iter().all(|p| *p >= 0.0));
            prop_assert!((a.row(i).iter().sum::<f64>() - 1.0).abs() <= 1e-8);
        }
    }

    #[test]
    fn standard_attention_is_permutation_equivariant(l in 1usize..24, dh in 1usize..8, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let q: Matrix = Matrix::random_normal(l, dh, &mut rng);
        let k = Matrix::random_normal(l, dh, &mut rng);
        let v = Matrix::random_normal(l, dh, &mut rng);
        let perm: Vec<usize> = {
            use rand::seq::SliceRandom;
            let mut p: Vec<usize> = (0..l).collect();
            p.shuffle(&mut rng);
            p
        };
        let permute = |m: &Matrix| Matrix::from_fn(m.rows(), m.cols(), |i, j| m.get(perm[i], j));
        let config = AttentionConfig::default();
        let out = standard_attention(&q, &k, &v, &config).unwrap().output;
        let out_p = standard_attention(&permute(&q), &permute(&k), &permute(&v), &config).unwrap().output;
        prop_assert!(out_p.max_abs_diff(&permute(&out)).unwrap() <= 1e-12);
    }

    #[test]
    fn kernel_multiply_counts(l in 1usize..48, r in 1usize..16, dp in 1usize..16, seed in any::<u64>()) {
        let r = r.min(l);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let q: Matrix = Matrix::random_normal(l, dp, &mut rng);
        let k = Matrix::random_normal(l, dp, &mut rng);
        let v = Matrix::random_normal(l, dp, &mut rng);
        let kp = Matrix::random_normal(r, dp, &mut rng);
        let vp = Matrix::random_normal(r, dp, &mut rng);
        let u = exact_truncation(&Matrix::random_normal(l, r, &mut rng), r).unwrap().u;
        let config = AttentionConfig::default();
        let (_, std_ops) = measure(|| standard_attention(&q, &k, &v, &config).unwrap());
        let (_, low_ops) = measure(|| lowrank_attention(&q, &kp, &vp, &u, &config).unwrap());
        prop_assert_eq!(std_ops.multiplies as usize, 2 * l * l * dp);
        prop_assert_eq!(low_ops.multiplies as usize, r * l * dp + l * r * dp);
        prop_assert_eq!(std_ops.peak_score_entries as usize, l * l);
        prop_assert_eq!(low_ops.peak_score_entries as usize, l * r);
    }
}

#[test]
fn multi_head_low_rank_matches_oracle_with_rope() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (l, d, dp, r) = (24, 12, 8, 12);
    let x = exact_rank(l, d, r, &mut rng);
    let f = exact_truncation(&x, r).unwrap();
    let w = |rng: &mut ChaCha8Rng| Matrix::random_normal(d, dp, rng).scale(0.3);
    let weights = AttentionWeights::new(w(&mut rng), w(&mut rng), w(&mut rng), 2).unwrap();
    for rope in [false, true] {
        let config = AttentionConfig { rope, ..Default::default() };
        let low = multi_head_attention(AttentionInput::Factors(&f), &weights, &config, KernelMode::LowRank).unwrap();
        let oracle =
            multi_head_attention(AttentionInput::Factors(&f), &weights, &config, KernelMode::DenseTaylor).unwrap();
        // With r = min(L, d) = d but r < L, rotated keys leave span(U), so only
        // the unrotated case is exact.
        let err = low.output.max_abs_diff(&oracle.output).unwrap();
        if !rope {
            assert!(err <= 1e-10, "{err}");
        }
        assert_eq!(low.output.shape(), (l, dp));
    }
}

#[test]
fn full_rank_rope_is_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (l, d, dp) = (10, 16, 8);
    let x: Matrix = Matrix::random_normal(l, d, &mut rng);
    let f = exact_truncation(&x, l).unwrap();
    let w = |rng: &mut ChaCha8Rng| Matrix::random_normal(d, dp, rng).scale(0.3);
    let weights = AttentionWeights::new(w(&mut rng), w(&mut rng), w(&mut rng), 2).unwrap();
    let config = AttentionConfig { rope: true, ..Default::default() };
    let low = multi_head_attention(AttentionInput::Factors(&f), &weights, &config, KernelMode::LowRank).unwrap();
    let oracle = multi_head_attention(AttentionInput::Factors(&f), &weights, &config, KernelMode::DenseTaylor).unwrap();
    assert!(low.output.max_abs_diff(&oracle.output).unwrap() <= 1e-10);
}
