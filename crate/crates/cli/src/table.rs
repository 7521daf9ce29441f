use tpsml::bench::ScoreBoard;

fn cell(board: &ScoreBoard, m: usize) -> String {
    match board.mean_std(m) {
        Some((mean, std)) => format!("{:.2} ± {:.2}", 100.0 * mean, 100.0 * std),
        None => "n/a".to_string(),
    }
}

fn method_order(boards: &[(String, ScoreBoard)]) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for (_, b) in boards {
        for m in &b.methods {
            if !out.contains(m) {
                out.push(m.clone());
            }
        }
    }
    out
}

/// Datasets as rows, methods as columns (accuracy in percent, mean ± std
/// over runs), a points row summed over datasets, then footnotes.
pub fn render_text(boards: &[(String, ScoreBoard)]) -> String {
    let methods = method_order(boards);
    let mut rows: Vec<Vec<String>> = vec![std::iter::once("dataset".to_string()).chain(methods.iter().cloned()).collect()];
    let mut totals = vec![0.0; methods.len()];
    for (name, b) in boards {
        let mut row = vec![name.clone()];
        for (j, m) in methods.iter().enumerate() {
            match b.index_of(m) {
                Some(i) => {
                    totals[j] += b.points[i];
                    row.push(format!("{} ({:.1})", cell(b, i), b.points[i]));
                }
                None => row.push("-".to_string()),
            }
        }
        rows.push(row);
    }
    rows.push(
        std::iter::once("points".to_string())
            .chain(totals.iter().map(|p| format!("{p:.1}")))
            .collect(),
    );
    let widths: Vec<usize> = (0..rows[0].len())
        .map(|c| rows.iter().map(|r| r[c].chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for (k, r) in rows.iter().enumerate() {
        let cells: Vec<String> = r
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(c, (v, w))| {
                let pad = w - v.chars().count();
                if c == 0 {
                    format!("{v}{}", " ".repeat(pad))
                } else {
                    format!("{}{v}", " ".repeat(pad))
                }
            })
            .collect();
        out.push_str(cells.join("  ").trim_end());
        out.push('\n');
        if k == 0 || k + 2 == rows.len() {
            out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
            out.push('\n');
        }
    }
    let mut notes = 0;
    for (name, b) in boards {
        for f in &b.footnotes {
            notes += 1;
            out.push_str(&format!("[{notes}] {name}: {f}\n"));
        }
    }
    out
}

/// One line per dataset and method.
pub fn render_csv(boards: &[(String, ScoreBoard)]) -> String {
    let mut out = String::from("dataset,method,mean,std,points,runs,failed_runs\n");
    for (name, b) in boards {
        for (i, m) in b.methods.iter().enumerate() {
            let (mean, std) = b
                .mean_std(i)
                .map_or((String::new(), String::new()), |(a, s)| (format!("{a:.6}"), format!("{s:.6}")));
            let failed = b.samples[i].iter().filter(|s| s.is_none()).count();
            out.push_str(&format!(
                "{name},{m},{mean},{std},{},{},{failed}\n",
                b.points[i],
                b.samples[i].len()
            ));
        }
    }
    out
}
