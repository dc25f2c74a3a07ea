//! Equivalence of the trellis decoders against exhaustive enumeration, and
//! structural consistency of the forward/backward recursions.

use driftcode::app::PriorMatrix;
use driftcode::channel::{transmit, transmit_multi, ChannelParams};
use driftcode::inner::{apply_offset, ConvCodeSpec, InnerCode, OffsetSequence, WatermarkSpec};
use driftcode::multiread::{separate_combine, CombinerConfig};
use driftcode::oracle::{brute_force_app, sequence_likelihood};
use driftcode::trellis::{segment_likelihood, DriftBounds, InnerDecoder};

const I_MAX: usize = 2;

/// Toy scheme: q=2, n=2, k=1, m=1, N_o=3, with drift bounds wide enough to
/// be non-binding (total drift is within [-8, 16] for every event path).
struct Toy {
    code: InnerCode,
    offset: OffsetSequence,
    params: ChannelParams,
    decoder: InnerDecoder,
    n_outer: usize,
}

fn toy(p_i: f64, p_d: f64, p_s: f64, offset_seed: u64) -> Toy {
    let code = InnerCode::Conv(
        ConvCodeSpec::from_octal(2, 1, 2, 1, &["2".into(), "3".into()]).unwrap(),
    );
    let n_outer = 3;
    let params = ChannelParams::new(p_i, p_d, p_s, 2).unwrap();
    let offset = OffsetSequence::generate(offset_seed, code.codeword_len(n_outer), 2).unwrap();
    let bounds = DriftBounds::new(-8, 16, I_MAX).unwrap();
    let decoder = InnerDecoder::new(&code, offset.clone(), params, bounds).unwrap();
    Toy { code, offset, params, decoder, n_outer }
}

fn toy_transmit(toy: &Toy, w: &[u8], seed: u64) -> Vec<u8> {
    let x = apply_offset(&toy.code.encode(w).unwrap(), &toy.offset).unwrap();
    transmit(&x, &toy.params, seed).unwrap().received
}

#[test]
fn single_read_matches_brute_force() {
    let toy = toy(0.1, 0.1, 0.05, 11);
    let prior = PriorMatrix::uniform(toy.n_outer, 2);
    let mut checked = 0;
    for trial in 0..60u64 {
        let w = vec![(trial % 2) as u8, ((trial / 2) % 2) as u8, ((trial / 4) % 2) as u8];
        let y = toy_transmit(&toy, &w, 1000 + trial);
        let Ok(bcjr) = toy.decoder.decode_single(&y, &prior) else {
            continue; // drift outside even the wide interval; not this test's target
        };
        let brute =
            brute_force_app(&[y], &toy.code, &toy.offset, &toy.params, I_MAX, &prior).unwrap();
        let diff = bcjr.app.max_abs_diff(&brute.app);
        assert!(diff < 1e-9, "trial {trial}: max diff {diff}");
        assert!(
            (bcjr.log_evidence - brute.log_evidence).abs() < 1e-9,
            "evidence mismatch at trial {trial}"
        );
        checked += 1;
    }
    assert!(checked >= 55, "only {checked} decodable trials");
}

#[test]
fn joint_two_reads_matches_brute_force() {
    let toy = toy(0.1, 0.1, 0.05, 13);
    let prior = PriorMatrix::uniform(toy.n_outer, 2);
    let mut checked = 0;
    for trial in 0..25u64 {
        let w = vec![(trial % 2) as u8, ((trial / 2) % 2) as u8, ((trial / 4) % 2) as u8];
        let x = apply_offset(&toy.code.encode(&w).unwrap(), &toy.offset).unwrap();
        let ys: Vec<Vec<u8>> = transmit_multi(&x, &toy.params, 2, 500 + trial)
            .unwrap()
            .into_iter()
            .map(|r| r.received)
            .collect();
        let Ok(bcjr) = toy.decoder.decode_joint(&ys, &prior) else {
            continue;
        };
        let brute =
            brute_force_app(&ys, &toy.code, &toy.offset, &toy.params, I_MAX, &prior).unwrap();
        let diff = bcjr.app.max_abs_diff(&brute.app);
        assert!(diff < 1e-9, "trial {trial}: max diff {diff}");
        assert!((bcjr.log_evidence - brute.log_evidence).abs() < 1e-9);
        checked += 1;
    }
    assert!(checked >= 20, "only {checked} decodable trials");
}

#[test]
fn joint_single_read_is_bitwise_single() {
    let toy = toy(0.08, 0.12, 0.02, 17);
    let prior = PriorMatrix::uniform(toy.n_outer, 2);
    for trial in 0..20u64 {
        let y = toy_transmit(&toy, &[1, 0, 1], 300 + trial);
        let single = toy.decoder.decode_single(&y, &prior);
        let joint = toy.decoder.decode_joint(&[y.clone()], &prior);
        match (single, joint) {
            (Ok(s), Ok(j)) => {
                assert_eq!(s.app.max_abs_diff(&j.app), 0.0);
                assert_eq!(s.log_evidence, j.log_evidence);
            }
            (Err(_), Err(_)) => {}
            other => panic!("divergent outcomes: {other:?}"),
        }
    }
}

#[test]
fn noiseless_posteriors_are_indicators() {
    let toy = toy(0.0, 0.0, 0.0, 23);
    let prior = PriorMatrix::uniform(toy.n_outer, 2);
    let w = vec![1u8, 1, 0];
    let y = toy_transmit(&toy, &w, 1);
    let out = toy.decoder.decode_single(&y, &prior).unwrap();
    for (i, &wi) in w.iter().enumerate() {
        assert!((out.app.row(i)[wi as usize] - 1.0).abs() < 1e-12);
    }
}

#[test]
fn duplicate_noiseless_read_does_not_spread_posteriors() {
    // joint decoding of a duplicated clean read concentrates at least as
    // much as the single read: entropy is non-increasing on this instance
    let clean = toy(0.0, 0.0, 0.0, 29);
    let toy = toy(0.1, 0.1, 0.05, 29);
    let prior = PriorMatrix::uniform(toy.n_outer, 2);
    let w = vec![0u8, 1, 1];
    let y = toy_transmit(&clean, &w, 2); // noiseless read
    let single = toy.decoder.decode_single(&y, &prior).unwrap();
    let joint = toy.decoder.decode_joint(&[y.clone(), y.clone()], &prior).unwrap();
    let entropy = |m: &driftcode::AppMatrix| -> f64 {
        (0..m.rows())
            .map(|i| {
                m.row(i)
                    .iter()
                    .filter(|&&p| p > 0.0)
                    .map(|&p| -p * p.log2())
                    .sum::<f64>()
            })
            .sum()
    };
    assert!(entropy(&joint.app) <= entropy(&single.app) + 1e-12);
}

/// Unnormalized reference BCJR built in the test from public pieces
/// (`code.step`, `segment_likelihood`): checks that sum_sigma alpha_i *
/// beta_i is constant over i and that posteriors match the library.
#[test]
fn forward_backward_consistency_reference() {
    let toy = toy(0.1, 0.1, 0.05, 31);
    let prior = PriorMatrix::uniform(toy.n_outer, 2);
    let w = vec![1u8, 0, 0];
    let y = toy_transmit(&toy, &w, 77);

    let n = toy.code.n();
    let steps = toy.n_outer + toy.code.memory();
    let n_states = toy.code.num_states();
    let (d_min, d_max) = (-8i64, 16i64);
    let delta = (d_max - d_min + 1) as usize;
    let idx = |s: usize, d: i64| s * delta + (d - d_min) as usize;

    // gamma(i, s, a, d, d') from first principles
    let gamma = |i: usize, s: usize, a: usize, d: i64, d_new: i64| -> f64 {
        let (_, block) = toy.code.step(s, a as u8);
        let off = &toy.offset.symbols()[(i - 1) * n..i * n];
        let t: Vec<u8> = block.iter().zip(off).map(|(&v, &r)| (v + r) % 2).collect();
        let start = (i as i64 - 1) * n as i64 + d;
        let end = i as i64 * n as i64 + d_new;
        if start < 0 || end < start || end > y.len() as i64 {
            return 0.0;
        }
        let seg = &y[start as usize..end as usize];
        if seg.len() > n * (I_MAX + 1) {
            return 0.0;
        }
        let pa = if i <= toy.n_outer { prior.row(i - 1)[a] } else { 1.0 };
        pa * segment_likelihood(&t, seg, &toy.params, I_MAX).unwrap()
    };

    let size = n_states * delta;
    let mut alphas = vec![vec![0.0f64; size]];
    alphas[0][idx(0, 0)] = 1.0;
    for i in 1..=steps {
        let mut next = vec![0.0f64; size];
        for s in 0..n_states {
            for a in 0..if i <= toy.n_outer { 2 } else { 1 } {
                let (s_next, _) = toy.code.step(s, a as u8);
                for d in d_min..=d_max {
                    let av = alphas[i - 1][idx(s, d)];
                    if av == 0.0 {
                        continue;
                    }
                    for d_new in d_min..=d_max {
                        let g = gamma(i, s, a, d, d_new);
                        if g > 0.0 {
                            next[idx(s_next, d_new)] += av * g;
                        }
                    }
                }
            }
        }
        alphas.push(next);
    }
    let terminal_d = y.len() as i64 - toy.code.codeword_len(toy.n_outer) as i64;
    let evidence = alphas[steps][idx(0, terminal_d)];
    assert!(evidence > 0.0);

    let mut betas = vec![vec![0.0f64; size]; steps + 1];
    betas[steps][idx(0, terminal_d)] = 1.0;
    for i in (1..=steps).rev() {
        for s in 0..n_states {
            for a in 0..if i <= toy.n_outer { 2 } else { 1 } {
                let (s_next, _) = toy.code.step(s, a as u8);
                for d in d_min..=d_max {
                    let mut acc = 0.0;
                    for d_new in d_min..=d_max {
                        let b = betas[i][idx(s_next, d_new)];
                        if b == 0.0 {
                            continue;
                        }
                        acc += gamma(i, s, a, d, d_new) * b;
                    }
                    betas[i - 1][idx(s, d)] += acc;
                }
            }
        }
    }

    // sum_sigma alpha_i(sigma) beta_i(sigma) equals p(y) at every i
    for i in 0..=steps {
        let dot: f64 = alphas[i].iter().zip(&betas[i]).map(|(a, b)| a * b).sum();
        let rel = (dot - evidence).abs() / evidence;
        assert!(rel < 1e-6, "step {i}: {dot} vs {evidence}");
    }

    // posteriors from the reference recursion match the library decoder
    let lib = toy.decoder.decode_single(&y, &prior).unwrap();
    for i in 1..=toy.n_outer {
        let mut row = [0.0f64; 2];
        for s in 0..n_states {
            for (a, slot) in row.iter_mut().enumerate() {
                let (s_next, _) = toy.code.step(s, a as u8);
                for d in d_min..=d_max {
                    let av = alphas[i - 1][idx(s, d)];
                    if av == 0.0 {
                        continue;
                    }
                    for d_new in d_min..=d_max {
                        *slot += av * gamma(i, s, a, d, d_new) * betas[i][idx(s_next, d_new)];
                    }
                }
            }
        }
        let sum = row[0] + row[1];
        for (a, &v) in row.iter().enumerate() {
            assert!((v / sum - lib.app.row(i - 1)[a]).abs() < 1e-9);
        }
        assert!((sum - evidence).abs() / evidence < 1e-9);
    }
    assert!((lib.log_evidence - evidence.ln()).abs() < 1e-9);
}

#[test]
fn memoryless_reduction_matches_substitution_bcjr() {
    // with p_i = p_d = 0 the drift trellis degenerates to a q-ary
    // substitution channel whose exact posteriors have a closed form by
    // enumeration over words with product likelihoods
    let toy = toy(0.0, 0.0, 0.1, 37);
    let prior = PriorMatrix::uniform(toy.n_outer, 2);
    for trial in 0..10u64 {
        let w = vec![(trial % 2) as u8, ((trial / 2) % 2) as u8, 1u8];
        let y = toy_transmit(&toy, &w, 600 + trial);
        assert_eq!(y.len(), 8);
        let lib = toy.decoder.decode_single(&y, &prior).unwrap();
        // closed form: p(y|x) = prod_t q_s(x_t, y_t)
        let mut rows = vec![[0.0f64; 2]; toy.n_outer];
        for widx in 0..8u64 {
            let wv = driftcode::oracle::word_from_index(widx, 3, 2);
            let x = apply_offset(&toy.code.encode(&wv).unwrap(), &toy.offset).unwrap();
            let lik: f64 = x
                .iter()
                .zip(&y)
                .map(|(&t, &r)| toy.params.sub_prob(t, r))
                .product();
            for (i, &wi) in wv.iter().enumerate() {
                rows[i][wi as usize] += lik;
            }
        }
        for i in 0..toy.n_outer {
            let sum = rows[i][0] + rows[i][1];
            for a in 0..2 {
                assert!((rows[i][a] / sum - lib.app.row(i)[a]).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn joint_evidence_decomposes_against_brute_force() {
    let toy = toy(0.1, 0.1, 0.05, 41);
    let prior = PriorMatrix::uniform(toy.n_outer, 2);
    let x = apply_offset(&toy.code.encode(&[1, 0, 1]).unwrap(), &toy.offset).unwrap();
    let ys: Vec<Vec<u8>> = transmit_multi(&x, &toy.params, 2, ebb(1))
        .unwrap()
        .into_iter()
        .map(|r| r.received)
        .collect();
    let joint = toy.decoder.decode_joint(&ys, &prior).unwrap();
    // p(y1, y2) = sum_w prior(w) p(y1|x(w)) p(y2|x(w)) from raw likelihoods
    let mut total = 0.0;
    for widx in 0..8u64 {
        let wv = driftcode::oracle::word_from_index(widx, 3, 2);
        let xw = apply_offset(&toy.code.encode(&wv).unwrap(), &toy.offset).unwrap();
        let mut p = 1.0 / 8.0;
        for y in &ys {
            p *= sequence_likelihood(&xw, y, &toy.params, I_MAX);
        }
        total += p;
    }
    assert!((joint.log_evidence - total.ln()).abs() < 1e-9);
}

fn ebb(x: u64) -> u64 {
    x + 4242
}

#[test]
fn separate_combine_exact_for_memory_zero_inner_on_substitution_channel() {
    // memoryless channel + memory-zero inner stage: the product rule is
    // exact, so combining exact per-read APPs reproduces the exact joint
    let code = InnerCode::Watermark(
        WatermarkSpec::from_codebook(2, 1, 2, vec![vec![0, 0], vec![1, 1]]).unwrap(),
    );
    let n_outer = 3;
    let params = ChannelParams::new(0.0, 0.0, 0.1, 2).unwrap();
    let offset = OffsetSequence::generate(43, code.codeword_len(n_outer), 2).unwrap();
    let bounds = DriftBounds::new(-6, 12, I_MAX).unwrap();
    let decoder = InnerDecoder::new(&code, offset.clone(), params, bounds).unwrap();
    let prior = PriorMatrix::uniform(n_outer, 2);
    let cfg = CombinerConfig::default();
    for trial in 0..40u64 {
        let w = vec![(trial % 2) as u8, ((trial / 2) % 2) as u8, ((trial / 4) % 2) as u8];
        let x = apply_offset(&code.encode(&w).unwrap(), &offset).unwrap();
        let ys: Vec<Vec<u8>> = transmit_multi(&x, &params, 2, 900 + trial)
            .unwrap()
            .into_iter()
            .map(|r| r.received)
            .collect();
        let apps: Vec<_> = ys
            .iter()
            .map(|y| decoder.decode_single(y, &prior).unwrap().app)
            .collect();
        let combined = separate_combine(&apps, &prior, &cfg).unwrap();
        let exact = brute_force_app(&ys, &code, &offset, &params, I_MAX, &prior).unwrap();
        let diff = combined.max_abs_diff(&exact.app);
        assert!(diff < 1e-9, "trial {trial}: diff {diff}");
        // the joint decoder agrees too
        let joint = decoder.decode_joint(&ys, &prior).unwrap();
        assert!(joint.app.max_abs_diff(&exact.app) < 1e-9);
    }
}
