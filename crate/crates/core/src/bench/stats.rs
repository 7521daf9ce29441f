use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TTestOutcome {
    AWins,
    BWins,
    Tie,
}

impl TTestOutcome {
    pub fn mirror(self) -> Self {
        match self {
            TTestOutcome::AWins => TTestOutcome::BWins,
            TTestOutcome::BWins => TTestOutcome::AWins,
            TTestOutcome::Tie => TTestOutcome::Tie,
        }
    }

    /// Points earned by the first method.
    pub fn points(self) -> f64 {
        match self {
            TTestOutcome::AWins => 1.0,
            TTestOutcome::BWins => 0.0,
            TTestOutcome::Tie => 0.5,
        }
    }
}

/// `(t, two-sided p)` of the paired test on `a − b`; `None` when the
/// differences have zero variance.
pub fn paired_t(a: &[f64], b: &[f64]) -> Result<Option<(f64, f64)>> {
    if a.len() != b.len() {
        return Err(Error::shape("paired samples differ in length"));
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::param("paired t-test needs at least two pairs"));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = diffs.iter().sum::<f64>() / n as f64;
    let var = diffs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (n - 1) as f64;
    if var == 0.0 {
        return Ok(None);
    }
    let t = mean / (var / n as f64).sqrt();
    let dist = StudentsT::new(0.0, 1.0, (n - 1) as f64).map_err(|e| Error::param(e.to_string()))?;
    let p = 2.0 * (1.0 - dist.cdf(t.abs()));
    Ok(Some((t, p)))
}

/// Two-sided paired t-test. Zero-variance differences are a tie when the
/// mean is zero and a win for the larger side otherwise.
pub fn ttest_paired(a: &[f64], b: &[f64], alpha: f64) -> Result<TTestOutcome> {
    match paired_t(a, b)? {
        None => {
            let shift = a[0] - b[0];
            Ok(if shift > 0.0 {
                TTestOutcome::AWins
            } else if shift < 0.0 {
                TTestOutcome::BWins
            } else {
                TTestOutcome::Tie
            })
        }
        Some((t, p)) if p < alpha => Ok(if t > 0.0 {
            TTestOutcome::AWins
        } else {
            TTestOutcome::BWins
        }),
        Some(_) => Ok(TTestOutcome::Tie),
    }
}

/// Per-method accuracies over runs, the pairwise test outcomes, and points.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreBoard {
    pub methods: Vec<String>,
    /// `samples[m][r]`: accuracy of method `m` on run `r`; `None` if it failed.
    pub samples: Vec<Vec<Option<f64>>>,
    /// `outcomes[a][b]` from the point of view of `a`; the diagonal is a tie.
    pub outcomes: Vec<Vec<TTestOutcome>>,
    pub points: Vec<f64>,
    pub footnotes: Vec<String>,
}

impl ScoreBoard {
    pub fn score(methods: Vec<String>, samples: Vec<Vec<Option<f64>>>, alpha: f64) -> Result<Self> {
        let m = methods.len();
        if samples.len() != m {
            return Err(Error::shape("one sample row per method required"));
        }
        let mut outcomes = vec![vec![TTestOutcome::Tie; m]; m];
        let mut points = vec![0.0; m];
        let mut footnotes = Vec::new();
        for (i, row) in samples.iter().enumerate() {
            let failed = row.iter().filter(|s| s.is_none()).count();
            if failed > 0 {
                footnotes.push(format!("{}: {failed} run(s) failed and were excluded", methods[i]));
            }
        }
        for a in 0..m {
            for b in a + 1..m {
                let (xa, xb): (Vec<f64>, Vec<f64>) = samples[a]
                    .iter()
                    .zip(&samples[b])
                    .filter_map(|(x, y)| Some(((*x)?, (*y)?)))
                    .unzip();
                let outcome = if xa.len() < 2 {
                    footnotes.push(format!(
                        "{} vs {}: fewer than two paired runs, scored as a tie",
                        methods[a], methods[b]
                    ));
                    TTestOutcome::Tie
                } else {
                    ttest_paired(&xa, &xb, alpha)?
                };
                outcomes[a][b] = outcome;
                outcomes[b][a] = outcome.mirror();
                points[a] += outcome.points();
                points[b] += outcome.mirror().points();
            }
        }
        Ok(ScoreBoard {
            methods,
            samples,
            outcomes,
            points,
            footnotes,
        })
    }

    /// Mean and sample standard deviation over the successful runs.
    pub fn mean_std(&self, method: usize) -> Option<(f64, f64)> {
        let v: Vec<f64> = self.samples[method].iter().flatten().copied().collect();
        if v.is_empty() {
            return None;
        }
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        let std = if v.len() > 1 {
            (v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
        } else {
            0.0
        };
        Some((mean, std))
    }

    pub fn index_of(&self, method: &str) -> Option<usize> {
        self.methods.iter().position(|m| m == method)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_and_constant_shift() {
        let a = [0.9, 0.8, 0.85];
        assert_eq!(ttest_paired(&a, &a, 0.05).unwrap(), TTestOutcome::Tie);
        let b: Vec<f64> = (0..10).map(|i| 0.5 + 0.01 * i as f64).collect();
        let a: Vec<f64> = b.iter().map(|x| x + 0.1).collect();
        // Floating-point noise can leave a tiny variance; the shift still wins.
        assert_eq!(ttest_paired(&a, &b, 0.05).unwrap(), TTestOutcome::AWins);
        assert_eq!(ttest_paired(&b, &a, 0.05).unwrap(), TTestOutcome::BWins);
        assert_eq!(ttest_paired(&[1.1, 1.1], &[1.0, 1.0], 0.05).unwrap(), TTestOutcome::AWins);
    }

    #[test]
    fn scoring_examples() {
        let same = vec![Some(0.9), Some(0.8), Some(0.7)];
        let sb = ScoreBoard::score(vec!["a".into(), "b".into()], vec![same.clone(), same], 0.05).unwrap();
        assert_eq!(sb.points, vec![0.5, 0.5]);

        let names: Vec<String> = (0..7).map(|i| format!("m{i}")).collect();
        let row = vec![Some(0.9), Some(0.8), Some(0.85)];
        let sb = ScoreBoard::score(names, vec![row; 7], 0.05).unwrap();
        assert!(sb.points.iter().all(|&p| p == 3.0));
    }

    #[test]
    fn single_run_is_tie_with_footnote() {
        let sb = ScoreBoard::score(
            vec!["a".into(), "b".into()],
            vec![vec![Some(1.0)], vec![Some(0.0)]],
            0.05,
        )
        .unwrap();
        assert_eq!(sb.outcomes[0][1], TTestOutcome::Tie);
        assert_eq!(sb.footnotes.len(), 1);
    }
}
