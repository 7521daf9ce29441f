use nalgebra::DMatrix;

/// `ln Γ(x)` for `x > 0` (Lanczos, g = 7).
pub fn ln_gamma(x: f64) -> f64 {
    const C: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = C[0];
    let t = x + 7.5;
    for (i, c) in C.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Two-sided tail probability of Student's t with `df` degrees of freedom,
/// by composite Simpson integration of the density over `[0, |t|]`.
pub fn t_two_sided_p(t: f64, df: f64) -> f64 {
    let norm = (ln_gamma((df + 1.0) / 2.0) - ln_gamma(df / 2.0)).exp() / (df * std::f64::consts::PI).sqrt();
    let density = |x: f64| norm * (1.0 + x * x / df).powf(-(df + 1.0) / 2.0);
    let upper = t.abs();
    let m = 20_000;
    let h = upper / m as f64;
    let mut s = density(0.0) + density(upper);
    for i in 1..m {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * density(i as f64 * h);
    }
    let central = s * h / 3.0;
    1.0 - 2.0 * central
}

/// `(t, p)` for the paired differences `d`, computed from scratch.
pub fn paired_t_oracle(d: &[f64]) -> (f64, f64) {
    let n = d.len() as f64;
    let mean = d.iter().sum::<f64>() / n;
    let sd = (d.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)).sqrt();
    let t = mean / (sd / n.sqrt());
    (t, t_two_sided_p(t, n - 1.0))
}

/// kNN by sorting every distance: ties by index, votes by lowest class.
pub fn knn_brute(train: &DMatrix<f64>, labels: &[usize], q: &[f64], k: usize) -> usize {
    let mut order: Vec<(f64, usize)> = (0..train.nrows())
        .map(|i| (super::sq_dist(&super::row(train, i), q), i))
        .collect();
    order.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    let classes = labels.iter().max().unwrap() + 1;
    let mut votes = vec![0; classes];
    for &(_, i) in &order[..k] {
        votes[labels[i]] += 1;
    }
    let top = *votes.iter().max().unwrap();
    votes.iter().position(|&v| v == top).unwrap()
}
