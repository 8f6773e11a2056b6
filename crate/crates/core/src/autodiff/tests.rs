use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn m(rows: usize, cols: usize, data: &[f64]) -> Matrix {
    Matrix::new(rows, cols, data.to_vec()).unwrap()
}

fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::new(
        rows,
        cols,
        (0..rows * cols)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect(),
    )
    .unwrap()
}

#[test]
fn softmax_examples() {
    let mut t = Tape::new();
    let z = t.constant(m(1, 2, &[0.0, 0.0]));
    let p = t.softmax(z, Axis::Cols);
    assert_eq!(t.value(p).as_slice(), &[0.5, 0.5]);

    let z = t.constant(m(1, 2, &[3f64.ln(), 0.0]));
    let p = t.softmax(z, Axis::Cols);
    let v = t.value(p).as_slice();
    assert!((v[0] - 0.75).abs() < 1e-15 && (v[1] - 0.25).abs() < 1e-15);
}

#[test]
fn softmax_survives_large_logits() {
    let mut t = Tape::new();
    let z = t.constant(m(1, 3, &[1000.0, 999.0, -1000.0]));
    let p = t.softmax(z, Axis::Cols);
    let v = t.value(p);
    assert!(v.is_finite());
    assert!((v.as_slice().iter().sum::<f64>() - 1.0).abs() < 1e-12);
}

#[test]
fn max_reduce_over_points() {
    let mut t = Tape::new();
    let x = t.leaf(m(2, 2, &[1.0, 5.0, 4.0, 2.0]));
    let y = t.max_reduce(x, Axis::Rows);
    assert_eq!(t.value(y).as_slice(), &[4.0, 5.0]);
    let s = t.sum(y);
    t.backward(s).unwrap();
    assert_eq!(t.grad(x), &[0.0, 1.0, 1.0, 0.0]);
}

#[test]
fn max_reduce_ties_go_to_lowest_index() {
    let mut t = Tape::new();
    let x = t.leaf(m(3, 1, &[2.0, 2.0, 2.0]));
    let y = t.max_reduce(x, Axis::Rows);
    let s = t.sum(y);
    t.backward(s).unwrap();
    assert_eq!(t.grad(x), &[1.0, 0.0, 0.0]);

    let x = t.leaf(m(1, 3, &[7.0, 7.0, 1.0]));
    let y = t.max_reduce(x, Axis::Cols);
    let s = t.sum(y);
    t.backward(s).unwrap();
    assert_eq!(t.grad(x), &[1.0, 0.0, 0.0]);
}

#[test]
fn sum_gradient_is_ones() {
    let mut t = Tape::new();
    let x = t.leaf(m(2, 3, &[1.0, -2.0, 3.0, 0.5, 0.0, 9.0]));
    let s = t.sum(x);
    t.backward(s).unwrap();
    assert_eq!(t.grad(x), &[1.0; 6]);
}

#[test]
fn relu_mask() {
    let mut t = Tape::new();
    let x = t.leaf(m(1, 2, &[-1.0, 2.0]));
    let r = t.relu(x);
    let s = t.sum(r);
    t.backward(s).unwrap();
    assert_eq!(t.grad(x), &[0.0, 1.0]);
}

/// `KL(q ‖ softmax(z))` with `q` constant has gradient `softmax(z) − q`.
fn kl_from_constant(t: &mut Tape, z: Var, q: &[f64]) -> Var {
    let (rows, cols) = t.shape(z);
    let p = t.softmax(z, Axis::Cols);
    let logp = t.log(p);
    let qm = Matrix::new(
        rows,
        cols,
        (0..rows).flat_map(|_| q.iter().copied()).collect(),
    )
    .unwrap();
    let logq: Vec<f64> = qm.as_slice().iter().map(|v| v.ln()).collect();
    let qv = t.constant(qm);
    let logq = t.constant(Matrix::new(rows, cols, logq).unwrap());
    let diff = t.sub(logq, logp).unwrap();
    let terms = t.mul(qv, diff).unwrap();
    t.sum(terms)
}

/// `KL(softmax(z) ‖ q)` with `q` constant; gradient `p ⊙ (log p − log q − KL)`.
fn kl_to_constant(t: &mut Tape, z: Var, q: &[f64]) -> Var {
    let (rows, cols) = t.shape(z);
    let p = t.softmax(z, Axis::Cols);
    let logp = t.log(p);
    let logq: Vec<f64> = (0..rows).flat_map(|_| q.iter().map(|v| v.ln())).collect();
    let logq = t.constant(Matrix::new(rows, cols, logq).unwrap());
    let diff = t.sub(logp, logq).unwrap();
    let terms = t.mul(p, diff).unwrap();
    t.sum(terms)
}

#[test]
fn softmax_kl_gradients_at_zero_logits() {
    let q = [0.25, 0.75];

    let mut t = Tape::new();
    let z = t.leaf(m(1, 2, &[0.0, 0.0]));
    let out = kl_from_constant(&mut t, z, &q);
    t.backward(out).unwrap();
    let g = t.grad(z);
    assert!((g[0] - 0.25).abs() < 1e-12 && (g[1] + 0.25).abs() < 1e-12);

    // 0.5·(ln 2 − KL) with KL = 0.5 ln 2 + 0.5 ln(2/3).
    let kl = 0.5 * 2f64.ln() + 0.5 * (2.0f64 / 3.0).ln();
    let want = 0.5 * (2f64.ln() - kl);
    let mut t = Tape::new();
    let z = t.leaf(m(1, 2, &[0.0, 0.0]));
    let out = kl_to_constant(&mut t, z, &q);
    t.backward(out).unwrap();
    let g = t.grad(z);
    assert!((g[0] - want).abs() < 1e-12 && (g[1] + want).abs() < 1e-12);
    assert!((want - 0.274_653).abs() < 1e-6);

    let fd = central_difference(
        |p| {
            let mut t = Tape::new();
            let z = t.constant(Matrix::row_vector(p.to_vec())?);
            let o = kl_to_constant(&mut t, z, &q);
            Ok(t.scalar(o))
        },
        &[0.0, 0.0],
        1e-5,
    )
    .unwrap();
    assert!((fd[0] - want).abs() < 1e-9 && (fd[1] + want).abs() < 1e-9);
}

#[test]
fn softmax_kl_structure_at_random_points() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..50 {
        let c = rng.random_range(2..10);
        let z = random(&mut rng, 1, c);
        let w: Vec<f64> = (0..c).map(|_| rng.random_range(0.05..1.0)).collect();
        let total: f64 = w.iter().sum();
        let q: Vec<f64> = w.iter().map(|v| v / total).collect();

        let p = {
            let mut t2 = Tape::new();
            let zc = t2.constant(z.clone());
            let s = t2.softmax(zc, Axis::Cols);
            t2.value(s).as_slice().to_vec()
        };
        let kl: f64 = p.iter().zip(&q).map(|(a, b)| a * (a.ln() - b.ln())).sum();

        let mut t = Tape::new();
        let zv = t.leaf(z.clone());
        let out = kl_from_constant(&mut t, zv, &q);
        t.backward(out).unwrap();
        for ((g, pi), qi) in t.grad(zv).iter().zip(&p).zip(&q) {
            assert!((g - (pi - qi)).abs() < 1e-9);
        }

        let mut t = Tape::new();
        let zv = t.leaf(z);
        let out = kl_to_constant(&mut t, zv, &q);
        t.backward(out).unwrap();
        for ((g, pi), qi) in t.grad(zv).iter().zip(&p).zip(&q) {
            assert!((g - pi * (pi.ln() - qi.ln() - kl)).abs() < 1e-9);
        }
    }
}

#[test]
fn backward_rejects_non_scalar() {
    let mut t = Tape::new();
    let x = t.leaf(m(1, 2, &[1.0, 2.0]));
    assert!(matches!(t.backward(x), Err(Error::InvalidInput(_))));
}

#[test]
fn shape_mismatches_are_errors() {
    let mut t = Tape::new();
    let a = t.leaf(m(2, 3, &[0.0; 6]));
    let b = t.leaf(m(2, 2, &[0.0; 4]));
    assert!(matches!(t.add(a, b), Err(Error::InvalidShape(_))));
    assert!(matches!(t.mul(a, b), Err(Error::InvalidShape(_))));
    assert!(matches!(t.matmul(a, b), Err(Error::InvalidShape(_))));
    assert!(matches!(
        t.concat(&[a, b], Axis::Rows),
        Err(Error::InvalidShape(_))
    ));
    assert!(t.concat(&[a, b], Axis::Cols).is_ok());
    assert!(matches!(
        t.select_rows(a, &[2]),
        Err(Error::InvalidShape(_))
    ));
    assert!(Matrix::new(2, 2, vec![0.0; 3]).is_err());
}

#[test]
fn concat_layouts() {
    let mut t = Tape::new();
    let a = t.leaf(m(2, 1, &[1.0, 2.0]));
    let b = t.leaf(m(2, 2, &[3.0, 4.0, 5.0, 6.0]));
    let c = t.concat(&[a, b], Axis::Cols).unwrap();
    assert_eq!(t.value(c).as_slice(), &[1.0, 3.0, 4.0, 2.0, 5.0, 6.0]);
    let d = t.concat(&[a, a], Axis::Rows).unwrap();
    assert_eq!(t.value(d).shape(), (4, 1));
}

#[test]
fn constants_receive_no_gradient() {
    let mut t = Tape::new();
    let x = t.leaf(m(1, 2, &[1.0, 2.0]));
    let k = t.constant(m(1, 2, &[3.0, 4.0]));
    let y = t.mul(x, k).unwrap();
    let r = t.relu(k);
    let y2 = t.add(y, r).unwrap();
    let s = t.sum(y2);
    t.backward(s).unwrap();
    assert_eq!(t.grad(x), &[3.0, 4.0]);
    assert_eq!(t.grad(k), &[0.0, 0.0]);
}

#[test]
fn gradient_check_on_linear_map_is_exact() {
    let a = [0.3, -1.2, 2.5, 0.7];
    let err = gradient_check(
        |t, p| {
            let x = t.leaf(Matrix::row_vector(p.to_vec())?);
            let av = t.constant(Matrix::row_vector(a.to_vec())?);
            let prod = t.mul(x, av)?;
            Ok((t.sum(prod), vec![x]))
        },
        &[0.1, 0.2, -0.3, 0.4],
        1e-5,
    )
    .unwrap();
    assert!(err <= 1e-10, "{err}");
}

#[test]
fn gradient_check_reports_non_finite_probes() {
    let res = gradient_check(
        |t, p| {
            let x = t.leaf(Matrix::row_vector(p.to_vec())?);
            let e = t.exp(x);
            let e = t.exp(e);
            Ok((t.sum(e), vec![x]))
        },
        &[6.6],
        1.0,
    );
    assert!(matches!(res, Err(Error::NumericalFailure(_))));
    assert!(gradient_check(
        |t, _| Ok((t.constant(Matrix::scalar(0.0)), vec![])),
        &[],
        0.0
    )
    .is_err());
}

/// Two-layer relu network with softmax cross-entropy: 3 → 6 → 2 with biases
/// gives 3·6 + 6 + 6·2 + 2 = 38 parameters; 4 inputs of dimension 3 and an
/// extra 12-entry input scaling vector make 50.
#[test]
fn gradient_check_two_layer_network() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let x = random(&mut rng, 4, 3);
    let labels = [0usize, 1, 1, 0];
    let params: Vec<f64> = (0..50).map(|_| rng.random_range(-0.8..0.8)).collect();

    let err = gradient_check(
        |t, p| {
            let w1 = t.leaf(Matrix::new(3, 6, p[0..18].to_vec())?);
            let b1 = t.leaf(Matrix::new(1, 6, p[18..24].to_vec())?);
            let w2 = t.leaf(Matrix::new(6, 2, p[24..36].to_vec())?);
            let b2 = t.leaf(Matrix::new(1, 2, p[36..38].to_vec())?);
            let s = t.leaf(Matrix::new(4, 3, p[38..50].to_vec())?);
            let xin = t.constant(x.clone());
            let xs = t.mul(xin, s)?;
            let ones = t.constant(Matrix::filled(4, 1, 1.0));
            let h = t.matmul(xs, w1)?;
            let bb = t.matmul(ones, b1)?;
            let h = t.add(h, bb)?;
            let h = t.relu(h);
            let z = t.matmul(h, w2)?;
            let bb = t.matmul(ones, b2)?;
            let z = t.add(z, bb)?;
            let pr = t.softmax(z, Axis::Cols);
            let lp = t.log(pr);
            let mut onehot = Matrix::zeros(4, 2);
            for (i, &l) in labels.iter().enumerate() {
                onehot.set(i, l, 1.0);
            }
            let oh = t.constant(onehot);
            let picked = t.mul(lp, oh)?;
            let total = t.mean(picked);
            let loss = t.scale(total, -2.0);
            Ok((loss, vec![w1, b1, w2, b2, s]))
        },
        &params,
        1e-5,
    )
    .unwrap();
    assert!(err <= 1e-4, "{err}");
}

/// Random inputs for each primitive, resampled away from relu kinks and
/// max ties.
#[test]
fn every_primitive_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let h = 1e-5;
    for trial in 0..20 {
        let a = random(&mut rng, 3, 4);
        let b = random(&mut rng, 3, 4);
        let w = random(&mut rng, 4, 2);
        let weights = random(&mut rng, 3, 4);
        let pos = Matrix::new(3, 4, a.as_slice().iter().map(|v| v.abs() + 0.2).collect()).unwrap();
        let away_from_kink = a.as_slice().iter().all(|v| v.abs() > 1e-3);
        let distinct = {
            let mut s = a.as_slice().to_vec();
            s.sort_by(f64::total_cmp);
            s.windows(2).all(|w| w[1] - w[0] > 1e-3)
        };
        if !(away_from_kink && distinct) {
            continue;
        }

        // Weighted sum makes every output coordinate matter.
        let finish = |t: &mut Tape, y: Var| -> Result<Var> {
            let (r, c) = t.shape(y);
            let wv: Vec<f64> = (0..r * c).map(|i| 0.3 + 0.1 * (i % 7) as f64).collect();
            let wc = t.constant(Matrix::new(r, c, wv)?);
            let p = t.mul(y, wc)?;
            Ok(t.sum(p))
        };

        type Build = Box<dyn Fn(&mut Tape, Var, Var) -> Result<Var>>;
        let wc = w.clone();
        let wt = weights.clone();
        let cases: Vec<(&str, Matrix, Build)> = vec![
            ("add", a.clone(), Box::new(|t, x, y| t.add(x, y))),
            ("sub", a.clone(), Box::new(|t, x, y| t.sub(x, y))),
            ("mul", a.clone(), Box::new(|t, x, y| t.mul(x, y))),
            ("scale", a.clone(), Box::new(|t, x, _| Ok(t.scale(x, -1.7)))),
            (
                "matmul",
                a.clone(),
                Box::new(move |t, x, _| {
                    let wv = t.leaf(wc.clone());
                    t.matmul(x, wv)
                }),
            ),
            ("relu", a.clone(), Box::new(|t, x, _| Ok(t.relu(x)))),
            ("log", pos.clone(), Box::new(|t, x, _| Ok(t.log(x)))),
            ("exp", a.clone(), Box::new(|t, x, _| Ok(t.exp(x)))),
            ("sum", a.clone(), Box::new(|t, x, _| Ok(t.sum(x)))),
            (
                "max_rows",
                a.clone(),
                Box::new(|t, x, _| Ok(t.max_reduce(x, Axis::Rows))),
            ),
            (
                "max_cols",
                a.clone(),
                Box::new(|t, x, _| Ok(t.max_reduce(x, Axis::Cols))),
            ),
            (
                "concat_rows",
                a.clone(),
                Box::new(|t, x, y| t.concat(&[x, y], Axis::Rows)),
            ),
            (
                "concat_cols",
                a.clone(),
                Box::new(|t, x, y| t.concat(&[y, x], Axis::Cols)),
            ),
            (
                "softmax_cols",
                a.clone(),
                Box::new(|t, x, _| Ok(t.softmax(x, Axis::Cols))),
            ),
            (
                "softmax_rows",
                a.clone(),
                Box::new(|t, x, _| Ok(t.softmax(x, Axis::Rows))),
            ),
            (
                "select_rows",
                a.clone(),
                Box::new(|t, x, _| t.select_rows(x, &[2, 0, 2])),
            ),
            (
                "weighted",
                a.clone(),
                Box::new(move |t, x, _| {
                    let k = t.constant(wt.clone());
                    t.mul(x, k)
                }),
            ),
        ];
        for (name, x0, build) in cases {
            let bm = b.clone();
            let n = x0.len();
            let params: Vec<f64> = x0.as_slice().iter().chain(bm.as_slice()).copied().collect();
            let err = gradient_check(
                |t, p| {
                    let x = t.leaf(Matrix::new(3, 4, p[..n].to_vec())?);
                    let y = t.leaf(Matrix::new(3, 4, p[n..].to_vec())?);
                    let out = build(t, x, y)?;
                    let s = finish(t, out)?;
                    Ok((s, vec![x, y]))
                },
                &params,
                h,
            )
            .unwrap();
            assert!(err <= 1e-4, "trial {trial} primitive {name}: {err}");
        }
    }
}

#[test]
fn softmax_rows_sum_to_one_and_are_positive() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..100 {
        let z = Matrix::new(
            4,
            6,
            (0..24).map(|_| rng.random_range(-30.0..30.0)).collect(),
        )
        .unwrap();
        let mut t = Tape::new();
        let zv = t.constant(z);
        let p = t.softmax(zv, Axis::Cols);
        for row in t.value(p).iter_rows() {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(row.iter().all(|&v| v > 0.0));
        }
    }
}

#[test]
fn forward_and_backward_are_deterministic() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let x = random(&mut rng, 5, 3);
        let w = random(&mut rng, 3, 4);
        let mut t = Tape::new();
        let xv = t.constant(x);
        let wv = t.leaf(w);
        let h = t.matmul(xv, wv).unwrap();
        let h = t.relu(h);
        let g = t.max_reduce(h, Axis::Rows);
        let p = t.softmax(g, Axis::Cols);
        let l = t.log(p);
        let s = t.sum(l);
        t.backward(s).unwrap();
        (
            t.scalar(s).to_bits(),
            t.grad(wv).iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
        )
    };
    assert_eq!(run(), run());
}
