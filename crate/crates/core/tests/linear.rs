mod common;

use aad_core::linear::{
    build_lag_matrix, cca_classify, cca_fit, lambda_grid, lag_signal, ridge_classify, ridge_fit,
    select_j, select_lambda, CcaDecoder, CcaModel, LagDirection, LagSpec, LdaClassifier,
    NormalEquations, PadSide, RidgeDecoder,
};
use aad_core::stats::corr;
use aad_core::{AadError, Candidate, TrialBundle};
use approx::assert_abs_diff_eq;
use common::{bundle, randn, randn_matrix, rel_err, rng};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use proptest::prelude::*;
use rand::Rng;

// ── lag matrices ──────────────────────────────────────────────────

#[test]
fn single_lag_is_identity() {
    let x = randn_matrix(&mut rng(1), 20, 3);
    assert_eq!(build_lag_matrix(&x, LagSpec::future(1)).unwrap(), x);
    assert_eq!(build_lag_matrix(&x, LagSpec::past(1)).unwrap(), x);
}

#[test]
fn future_lags_hand_example() {
    let m = lag_signal(&[1.0, 2.0, 3.0, 4.0], LagSpec::future(2)).unwrap();
    assert_eq!(m.column(0).as_slice(), &[1.0, 2.0, 3.0, 4.0]);
    assert_eq!(m.column(1).as_slice(), &[2.0, 3.0, 4.0, 0.0]);
}

#[test]
fn past_lags_pad_the_start() {
    let m = lag_signal(&[1.0, 2.0, 3.0, 4.0], LagSpec::past(3)).unwrap();
    assert_eq!(m.column(1).as_slice(), &[0.0, 1.0, 2.0, 3.0]);
    assert_eq!(m.column(2).as_slice(), &[0.0, 0.0, 1.0, 2.0]);
}

#[test]
fn lag_columns_are_channel_major_within_lag() {
    let x = DMatrix::from_row_slice(4, 2, &[1.0, 10.0, 2.0, 20.0, 3.0, 30.0, 4.0, 40.0]);
    let m = build_lag_matrix(&x, LagSpec::future(2)).unwrap();
    assert_eq!(m.row(0).iter().copied().collect::<Vec<_>>(), vec![1.0, 10.0, 2.0, 20.0]);
}

#[test]
fn zero_signal_gives_zero_matrix() {
    let m = build_lag_matrix(&DMatrix::zeros(30, 2), LagSpec::future(5)).unwrap();
    assert!(m.iter().all(|&v| v == 0.0));
}

#[test]
fn too_short_signal_is_a_contract_error() {
    let err = lag_signal(&[1.0, 2.0], LagSpec::future(2)).unwrap_err();
    assert!(matches!(err, AadError::Contract(_)));
}

#[test]
fn mismatched_padding_is_rejected() {
    let spec = LagSpec {
        n_lags: 2,
        direction: LagDirection::Future,
        padding: PadSide::Left,
    };
    assert!(lag_signal(&[1.0, 2.0, 3.0], spec).unwrap_err().is_config());
}

// ── ridge ─────────────────────────────────────────────────────────

/// Solve the stacked least-squares problem [X; √λI]d ≈ [s; 0] by SVD.
fn augmented_oracle(x: &DMatrix<f64>, s: &[f64], lambda: f64) -> Vec<f64> {
    let (t, p) = x.shape();
    let mut a = DMatrix::zeros(t + p, p);
    a.view_mut((0, 0), (t, p)).copy_from(x);
    for i in 0..p {
        a[(t + i, i)] = lambda.sqrt();
    }
    let mut b = DVector::zeros(t + p);
    b.rows_mut(0, t).copy_from_slice(s);
    a.svd(true, true).solve(&b, 1e-300).unwrap().as_slice().to_vec()
}

#[test]
fn ridge_matches_augmented_least_squares() {
    let mut r = rng(2);
    for _ in 0..20 {
        let x = randn_matrix(&mut r, 50, 10);
        let s = randn(&mut r, 50);
        for lambda in [1e-3, 0.5, 1e3] {
            let d = ridge_fit(&x, &s, lambda, LagSpec::future(1)).unwrap();
            let oracle = augmented_oracle(&x, &s, lambda);
            assert!(rel_err(&d.d, &oracle) <= 1e-8, "λ = {lambda}");
        }
    }
}

#[test]
fn huge_lambda_shrinks_to_zero() {
    let mut r = rng(3);
    let x = randn_matrix(&mut r, 100, 6);
    let s = randn(&mut r, 100);
    let d = ridge_fit(&x, &s, 1e12, LagSpec::future(1)).unwrap();
    let xts = x.transpose() * DVector::from_column_slice(&s);
    assert!(DVector::from_column_slice(&d.d).norm() <= 1e-9 * xts.norm());
}

#[test]
fn orthonormal_design_returns_projection() {
    let mut r = rng(4);
    let q = randn_matrix(&mut r, 40, 5).qr().q();
    let s = randn(&mut r, 40);
    let d = ridge_fit(&q, &s, 1e-12, LagSpec::future(1)).unwrap();
    let expect = q.transpose() * DVector::from_column_slice(&s);
    for (a, b) in d.d.iter().zip(expect.iter()) {
        assert_abs_diff_eq!(a, b, epsilon = 1e-8);
    }
}

#[test]
fn ridge_rejects_bad_inputs() {
    let x = DMatrix::from_element(10, 2, 1.0);
    let s = vec![0.0; 10];
    assert!(ridge_fit(&x, &s, 0.0, LagSpec::future(1)).unwrap_err().is_config());
    let mut bad = s.clone();
    bad[3] = f64::NAN;
    assert!(matches!(
        ridge_fit(&x, &bad, 1.0, LagSpec::future(1)),
        Err(AadError::Data(_))
    ));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]
    #[test]
    fn normal_equation_residual_is_tiny(seed in 0u64..10_000, log_lambda in -3.0f64..3.0) {
        let mut r = rng(seed);
        let x = randn_matrix(&mut r, 60, 8);
        let s = randn(&mut r, 60);
        let lambda = 10f64.powf(log_lambda);
        let d = DVector::from_column_slice(&ridge_fit(&x, &s, lambda, LagSpec::future(1)).unwrap().d);
        let xts = x.transpose() * DVector::from_column_slice(&s);
        let res = (x.transpose() * &x + DMatrix::identity(8, 8) * lambda) * d - &xts;
        prop_assert!(res.norm() <= 1e-8 * xts.norm());
    }
}

fn identity_decoder(c: usize) -> RidgeDecoder {
    let mut d = vec![0.0; c];
    d[0] = 1.0;
    RidgeDecoder {
        d,
        lambda: 1.0,
        lag: LagSpec::future(1),
        n_channels: c,
    }
}

#[test]
fn ridge_classify_picks_the_matching_envelope_and_is_symmetric() {
    let mut r = rng(5);
    let eeg = randn_matrix(&mut r, 64, 2);
    let a: Vec<f64> = eeg.column(0).iter().copied().collect();
    let b = randn(&mut r, 64);
    let dec = identity_decoder(2);
    let d = ridge_classify(&dec, &eeg, &a, &b).unwrap();
    assert_eq!((d.choice, d.tie), (Candidate::A, false));
    assert_eq!(ridge_classify(&dec, &eeg, &b, &a).unwrap().choice, Candidate::B);
    // scaling a candidate never changes the decision
    let scaled: Vec<f64> = b.iter().map(|v| v * 7.5).collect();
    assert_eq!(ridge_classify(&dec, &eeg, &scaled, &a).unwrap().choice, Candidate::B);
}

#[test]
fn constant_reconstruction_is_a_flagged_tie() {
    let mut r = rng(6);
    let eeg = randn_matrix(&mut r, 64, 2);
    let dec = RidgeDecoder {
        d: vec![0.0, 0.0],
        ..identity_decoder(2)
    };
    let d = ridge_classify(&dec, &eeg, &randn(&mut r, 64), &randn(&mut r, 64)).unwrap();
    assert_eq!((d.choice, d.tie), (Candidate::A, true));
}

#[test]
fn lambda_grid_has_one_point_per_decade() {
    let g = lambda_grid();
    assert_eq!(g.len(), 15);
    assert_abs_diff_eq!(g[0], 1e-7, epsilon = 1e-22);
    assert_abs_diff_eq!(g[14], 1e7, epsilon = 1e-6);
}

/// EEG channel 0 is the attended envelope plus `noise`·N(0,1).
fn linear_trials(n: usize, noise: f64, seed: u64) -> Vec<TrialBundle> {
    let mut r = rng(seed);
    (0..n)
        .map(|i| {
            let t = 640;
            let s = randn(&mut r, t);
            let other = randn(&mut r, t);
            let mut eeg = randn_matrix(&mut r, t, 3);
            for k in 0..t {
                eeg[(k, 0)] = s[k] + noise * eeg[(k, 0)];
            }
            let att = if r.random::<bool>() { Candidate::A } else { Candidate::B };
            let (a, b) = match att {
                Candidate::A => (s, other),
                Candidate::B => (other, s),
            };
            bundle("S1", &format!("t{i}"), &format!("a{i}"), eeg, a, b, att)
        })
        .collect()
}

#[test]
fn lambda_selection_prefers_small_values_when_all_tie() {
    let trials = linear_trials(10, 0.0, 7);
    let refs: Vec<&TrialBundle> = trials.iter().collect();
    let lambda = select_lambda(&refs, LagSpec::future(4), &lambda_grid()).unwrap();
    assert_eq!(lambda, 1e-7);
    assert!(lambda <= 1e-3);
}

#[test]
fn lambda_selection_needs_five_trials() {
    let trials = linear_trials(4, 0.1, 8);
    let refs: Vec<&TrialBundle> = trials.iter().collect();
    let err = select_lambda(&refs, LagSpec::future(2), &lambda_grid()).unwrap_err();
    assert!(err.is_config());
}

// ── CCA ───────────────────────────────────────────────────────────

fn cov(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows() as f64;
    let center = |m: &DMatrix<f64>| {
        let mut m = m.clone();
        for mut c in m.column_iter_mut() {
            let mu = c.mean();
            c.add_scalar_mut(-mu);
        }
        m
    };
    center(a).transpose() * center(b) / n
}

/// Canonical correlations as square roots of the eigenvalues of
/// L⁻¹ Cxs Css⁻¹ Csx L⁻ᵀ with Cxx = LLᵀ.
fn generalized_eigen_oracle(x: &DMatrix<f64>, s: &DMatrix<f64>) -> Vec<f64> {
    let (cxx, css, cxs) = (cov(x, x), cov(s, s), cov(x, s));
    let l = cxx.cholesky().unwrap().l();
    let linv = l.clone().try_inverse().unwrap();
    let inner = cxs.clone() * css.clone().try_inverse().unwrap() * cxs.transpose();
    let sym = &linv * inner * linv.transpose();
    let sym = (&sym + sym.transpose()) / 2.0;
    let mut ev: Vec<f64> = SymmetricEigen::new(sym)
        .eigenvalues
        .iter()
        .map(|v| v.max(0.0).sqrt())
        .collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    ev
}

#[test]
fn cca_matches_generalized_eigen_oracle() {
    let mut r = rng(9);
    for _ in 0..10 {
        let latent = randn_matrix(&mut r, 200, 2);
        let x = randn_matrix(&mut r, 200, 6) + &latent * randn_matrix(&mut r, 2, 6);
        let s = randn_matrix(&mut r, 200, 4) + &latent * randn_matrix(&mut r, 2, 4);
        let m = cca_fit(&x, &s, 4, LagSpec::future(1), LagSpec::past(1)).unwrap();
        let oracle = generalized_eigen_oracle(&x, &s);
        for (a, b) in m.correlations.iter().zip(&oracle) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-6);
        }
        // ordered and bounded
        for w in m.correlations.windows(2) {
            assert!(w[0] + 1e-12 >= w[1]);
        }
        assert!(m.correlations.iter().all(|&c| (-1e-9..=1.0 + 1e-9).contains(&c)));
        // components uncorrelated on the training data
        let xp = &x * &m.wx;
        for i in 0..4 {
            for j in 0..i {
                let a: Vec<f64> = xp.column(i).iter().copied().collect();
                let b: Vec<f64> = xp.column(j).iter().copied().collect();
                assert!(corr(&a, &b).unwrap().abs() <= 1e-6);
            }
        }
    }
}

#[test]
fn identical_columns_give_unit_correlation() {
    let x = DMatrix::from_vec(500, 1, randn(&mut rng(10), 500));
    let m = cca_fit(&x, &x, 1, LagSpec::future(1), LagSpec::past(1)).unwrap();
    assert_abs_diff_eq!(m.correlations[0], 1.0, epsilon = 1e-8);
}

#[test]
fn independent_noise_has_small_canonical_correlations() {
    let mut r = rng(11);
    let x = randn_matrix(&mut r, 10_000, 6);
    let s = randn_matrix(&mut r, 10_000, 4);
    let m = cca_fit(&x, &s, 4, LagSpec::future(1), LagSpec::past(1)).unwrap();
    assert!(m.correlations.iter().all(|&c| c <= 0.05), "{:?}", m.correlations);
}

/// Channel 0 carries s(t) and channel 1 carries s(t−5). With 3 future EEG
/// lags and 4 past stimulus lags exactly two directions are shared, s(t)
/// through x0(t) and s(t−3) through x1(t+2), with independent noise.
fn two_component_trials(n: usize, noise: f64, seed: u64) -> Vec<TrialBundle> {
    let mut r = rng(seed);
    (0..n)
        .map(|i| {
            let t = 3840;
            let s = randn(&mut r, t);
            let other = randn(&mut r, t);
            let mut eeg = randn_matrix(&mut r, t, 3) * noise;
            for k in 0..t {
                eeg[(k, 0)] += s[k];
                if k >= 5 {
                    eeg[(k, 1)] += s[k - 5];
                }
            }
            let att = if i % 2 == 0 { Candidate::A } else { Candidate::B };
            let (a, b) = match att {
                Candidate::A => (s, other),
                Candidate::B => (other, s),
            };
            bundle("S1", &format!("t{i}"), &format!("a{i}"), eeg, a, b, att)
        })
        .collect()
}

#[test]
fn selected_component_count_matches_latent_structure() {
    let trials = two_component_trials(20, 12.0, 33);
    let refs: Vec<&TrialBundle> = trials.iter().collect();
    let j = select_j(&refs, LagSpec::future(3), LagSpec::past(4)).unwrap();
    assert!((2..=3).contains(&j), "selected J = {j}");
}

#[test]
fn component_count_ties_resolve_to_one() {
    let trials = two_component_trials(10, 0.01, 13);
    let refs: Vec<&TrialBundle> = trials.iter().collect();
    assert_eq!(select_j(&refs, LagSpec::future(3), LagSpec::past(4)).unwrap(), 1);
}

#[test]
fn cca_classification_is_antisymmetric_and_ties_on_identical_candidates() {
    let trials = two_component_trials(10, 1.0, 14);
    let refs: Vec<&TrialBundle> = trials.iter().collect();
    let dec = CcaDecoder::train(&refs, 2, LagSpec::future(4), LagSpec::past(4)).unwrap();
    assert_eq!(dec.lda.bias, 0.0);
    let t = &trials[0];
    let w = 0..320;
    let eeg = t.eeg.rows(0, 320).into_owned();
    let (a, b) = (&t.env_a[w.clone()], &t.env_b[w]);
    let fwd = cca_classify(&dec.model, &dec.lda, &eeg, a, b).unwrap();
    let rev = cca_classify(&dec.model, &dec.lda, &eeg, b, a).unwrap();
    assert_eq!(fwd.choice, t.attended);
    assert_eq!(rev.choice, t.attended.flip());
    let scaled: Vec<f64> = a.iter().map(|v| 3.0 * v).collect();
    assert_eq!(cca_classify(&dec.model, &dec.lda, &eeg, &scaled, b).unwrap(), fwd);
    let same = cca_classify(&dec.model, &dec.lda, &eeg, a, a).unwrap();
    assert_eq!((same.choice, same.tie), (Candidate::A, true));
}

#[test]
fn untrained_lda_is_a_state_error() {
    let trials = two_component_trials(6, 1.0, 15);
    let refs: Vec<&TrialBundle> = trials.iter().collect();
    let model = CcaModel::train(&refs, 2, LagSpec::future(4), LagSpec::past(4)).unwrap();
    let t = &trials[0];
    let err = cca_classify(&model, &LdaClassifier::untrained(), &t.eeg, &t.env_a, &t.env_b);
    assert!(matches!(err, Err(AadError::State(_))));
}

#[test]
fn fisher_lda_separates_shifted_classes() {
    let mut r = rng(16);
    let mut feats = Vec::new();
    let mut labels = Vec::new();
    for i in 0..200 {
        let c = if i % 2 == 0 { Candidate::A } else { Candidate::B };
        let shift = if c == Candidate::A { 2.0 } else { -2.0 };
        feats.push(vec![shift + 0.5 * randn(&mut r, 1)[0], randn(&mut r, 1)[0]]);
        labels.push(c);
    }
    let lda = LdaClassifier::fit(&feats, &labels).unwrap();
    let correct = feats
        .iter()
        .zip(&labels)
        .filter(|(f, &l)| lda.decide(f).unwrap().choice == l)
        .count();
    assert!(correct >= 198);
    assert!(LdaClassifier::fit(&feats[..2], &labels[..2]).unwrap_err().is_config());
}

#[test]
fn normal_equations_accumulate_additively() {
    let mut r = rng(17);
    let (x1, x2) = (randn_matrix(&mut r, 30, 4), randn_matrix(&mut r, 20, 4));
    let (s1, s2) = (randn(&mut r, 30), randn(&mut r, 20));
    let mut a = NormalEquations::zeros(4);
    a.add(&x1, &s1);
    let mut b = NormalEquations::zeros(4);
    b.add(&x2, &s2);
    a.add_assign(&b);
    let stacked = DMatrix::from_fn(50, 4, |i, j| if i < 30 { x1[(i, j)] } else { x2[(i - 30, j)] });
    let s: Vec<f64> = s1.iter().chain(&s2).copied().collect();
    let direct = ridge_fit(&stacked, &s, 0.1, LagSpec::future(1)).unwrap();
    assert!(rel_err(a.solve(0.1).unwrap().as_slice(), &direct.d) < 1e-12);
}
