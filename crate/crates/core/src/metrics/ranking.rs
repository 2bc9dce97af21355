/// Non-interpolated average precision: the mean of the precision values
/// observed at each positive when notes are ranked by descending score.
/// Equal scores keep their input order. Returns `None` when there are no
/// positives.
pub fn average_precision(scores: &[f64], labels: &[u8]) -> Option<f64> {
    assert_eq!(scores.len(), labels.len(), "scores and labels must be paired");
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut hits = 0usize;
    let mut total = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        if labels[i] != 0 {
            hits += 1;
            total += hits as f64 / (rank + 1) as f64;
        }
    }
    (hits > 0).then(|| total / hits as f64)
}

/// Mean AP over the columns that have at least one positive, along with the
/// indices of the columns that were skipped.
pub fn mean_average_precision(scores: &[[f64; 4]], labels: &[[u8; 4]]) -> (Option<f64>, Vec<usize>) {
    let mut aps = Vec::new();
    let mut skipped = Vec::new();
    for k in 0..4 {
        let s: Vec<f64> = scores.iter().map(|r| r[k]).collect();
        let l: Vec<u8> = labels.iter().map(|r| r[k]).collect();
        match average_precision(&s, &l) {
            Some(ap) => aps.push(ap),
            None => skipped.push(k),
        }
    }
    let map = (!aps.is_empty()).then(|| aps.iter().sum::<f64>() / aps.len() as f64);
    (map, skipped)
}
