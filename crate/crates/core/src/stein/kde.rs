use crate::error::{ensure_dim, Error, Result};
use crate::numeric::{sq_dist, Batch};
use crate::target::nearest_row;

/// KDE score at one point.
#[derive(Clone, Debug, PartialEq)]
pub struct KdeScore {
    pub score: Vec<f64>,
    /// Every kernel weight underflowed; `score` points at the nearest reference.
    pub far_from_support: bool,
}

/// Smallest log kernel weight that is still a normal `f64`.
const LOG_UNDERFLOW: f64 = -708.0;

/// Mean-shift score `Σ_i w_i (X_i − x)/σ²` of a Gaussian KDE with bandwidth `σ`.
pub fn kde_score(x: &[f64], refs: &Batch, sigma: f64) -> Result<KdeScore> {
    if refs.is_empty() {
        return Err(Error::InvalidArgument("kde score needs at least one reference".into()));
    }
    if !(sigma > 0.0) {
        return Err(Error::InvalidArgument("kde bandwidth must be positive".into()));
    }
    ensure_dim(x.len(), refs.dim())?;
    let var = sigma * sigma;
    let mut logits: Vec<f64> = refs.iter_rows().map(|r| -sq_dist(x, r) / (2.0 * var)).collect();
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max < LOG_UNDERFLOW {
        let near = refs.row(nearest_row(refs, x));
        return Ok(KdeScore {
            score: near.iter().zip(x).map(|(r, xi)| (r - xi) / var).collect(),
            far_from_support: true,
        });
    }
    crate::numeric::softmax_in_place(&mut logits);
    let mut score = vec![0.0; x.len()];
    for (r, w) in refs.iter_rows().zip(&logits) {
        for ((s, ri), xi) in score.iter_mut().zip(r).zip(x) {
            *s += w * (ri - xi);
        }
    }
    for s in &mut score {
        *s /= var;
    }
    Ok(KdeScore {
        score,
        far_from_support: false,
    })
}

/// KDE scores for every row; returns the scores and the far-from-support count.
pub fn kde_scores(points: &Batch, refs: &Batch, sigma: f64) -> Result<(Batch, usize)> {
    let mut out = Batch::zeros(points.rows(), points.dim());
    let mut far = 0;
    for (i, p) in points.iter_rows().enumerate() {
        let s = kde_score(p, refs, sigma)?;
        far += s.far_from_support as usize;
        out.row_mut(i).copy_from_slice(&s.score);
    }
    Ok((out, far))
}
