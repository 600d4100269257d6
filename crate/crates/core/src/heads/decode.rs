//! Maximum spanning arborescence decoding (Chu-Liu/Edmonds).

use crate::error::{Error, Result};

/// Dense `(n+1)×(n+1)` arc scores; `get(h, d)` scores head `h` → dependent
/// `d`, node 0 being the artificial root. `-∞` marks forbidden arcs.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreMatrix {
    size: usize,
    data: Vec<f32>,
}

impl ScoreMatrix {
    pub fn new(size: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != size * size {
            return Err(Error::Data(format!("{size}×{size} score matrix needs {} values", size * size)));
        }
        Ok(ScoreMatrix { size, data })
    }

    pub fn from_fn(size: usize, f: impl Fn(usize, usize) -> f32) -> Self {
        let data = (0..size * size).map(|i| f(i / size, i % size)).collect();
        ScoreMatrix { size, data }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn words(&self) -> usize {
        self.size - 1
    }

    pub fn get(&self, head: usize, dep: usize) -> f32 {
        self.data[head * self.size + dep]
    }

    pub fn set(&mut self, head: usize, dep: usize, value: f32) {
        self.data[head * self.size + dep] = value;
    }

    /// Forbids self-loops and arcs into the root.
    pub fn mask_invalid(&mut self) {
        for i in 0..self.size {
            self.set(i, i, f32::NEG_INFINITY);
            self.set(i, 0, f32::NEG_INFINITY);
        }
    }

    /// Total score of a head assignment (`heads[d-1]` is the head of `d`).
    pub fn tree_score(&self, heads: &[usize]) -> f64 {
        heads
            .iter()
            .enumerate()
            .map(|(i, &h)| self.get(h, i + 1) as f64)
            .sum()
    }
}

/// Highest-scoring arborescence rooted at 0 in which exactly one word
/// attaches to the root. Returns `heads[d-1]` for words `d = 1..=n`.
///
/// If the unconstrained optimum has several root children, each word is tried
/// as the sole root child and the best result kept; exact ties go to the
/// lowest word index.
pub fn decode_tree(scores: &ScoreMatrix) -> Result<Vec<usize>> {
    let n = scores.words();
    if scores.size() == 0 || n == 0 {
        return Err(Error::Data("cannot decode a tree over zero words".into()));
    }
    let mut masked = scores.clone();
    masked.mask_invalid();
    let heads = unconstrained(&masked);
    if heads.iter().filter(|&&h| h == 0).count() == 1 {
        return Ok(heads);
    }
    let mut best: Option<(f64, Vec<usize>)> = None;
    for root_child in 1..=n {
        let mut constrained = masked.clone();
        for d in 1..=n {
            if d != root_child {
                constrained.set(0, d, f32::NEG_INFINITY);
            }
        }
        let candidate = unconstrained(&constrained);
        let score = masked.tree_score(&candidate);
        if best.as_ref().is_none_or(|(s, _)| score > *s) {
            best = Some((score, candidate));
        }
    }
    Ok(best.expect("n >= 1").1)
}

fn unconstrained(scores: &ScoreMatrix) -> Vec<usize> {
    let n = scores.size();
    let w: Vec<Vec<f64>> = (0..n)
        .map(|h| (0..n).map(|d| scores.get(h, d) as f64).collect())
        .collect();
    let heads = edmonds(&w);
    heads[1..].to_vec()
}

/// Recursive contraction on a dense matrix `w[h][d]`. Returns a head for
/// every node (entry 0 unused).
fn edmonds(w: &[Vec<f64>]) -> Vec<usize> {
    let n = w.len();
    let mut best = vec![0usize; n];
    for d in 1..n {
        let mut h_best = usize::MAX;
        for h in 0..n {
            if h != d && (h_best == usize::MAX || w[h][d] > w[h_best][d]) {
                h_best = h;
            }
        }
        best[d] = h_best;
    }
    let Some(cycle) = find_cycle(&best) else {
        return best;
    };
    let mut cycle = cycle;
    cycle.sort_unstable();
    let in_cycle: Vec<bool> = (0..n).map(|v| cycle.contains(&v)).collect();

    // Contracted graph: the non-cycle nodes in order, then the cycle node.
    let outside: Vec<usize> = (0..n).filter(|&v| !in_cycle[v]).collect();
    let m = outside.len() + 1;
    let c = m - 1;
    let mut cw = vec![vec![f64::NEG_INFINITY; m]; m];
    // Cycle node entered from outside node i, and cycle node heading outside node i.
    let mut enter = vec![cycle[0]; m];
    let mut leave = vec![cycle[0]; m];
    for (i, &u) in outside.iter().enumerate() {
        for (j, &v) in outside.iter().enumerate() {
            cw[i][j] = w[u][v];
        }
        let mut best_in = f64::NEG_INFINITY;
        let mut best_out = f64::NEG_INFINITY;
        for &v in &cycle {
            let gain = w[u][v] - w[best[v]][v];
            if gain > best_in {
                best_in = gain;
                enter[i] = v;
            }
            if w[v][u] > best_out {
                best_out = w[v][u];
                leave[i] = v;
            }
        }
        cw[i][c] = best_in;
        cw[c][i] = best_out;
    }
    let sub = edmonds(&cw);
    let mut heads = best.clone();
    for (j, &v) in outside.iter().enumerate().skip(1) {
        heads[v] = if sub[j] == c { leave[j] } else { outside[sub[j]] };
    }
    let from = sub[c];
    heads[enter[from]] = outside[from];
    heads
}

fn find_cycle(heads: &[usize]) -> Option<Vec<usize>> {
    let n = heads.len();
    let mut state = vec![0u8; n]; // 0 unvisited, 1 on current path, 2 done
    state[0] = 2;
    for start in 1..n {
        let mut path = Vec::new();
        let mut v = start;
        while state[v] == 0 {
            state[v] = 1;
            path.push(v);
            v = heads[v];
        }
        if state[v] == 1 {
            let pos = path.iter().position(|&p| p == v).expect("on path");
            return Some(path[pos..].to_vec());
        }
        path.iter().for_each(|&p| state[p] = 2);
    }
    None
}

/// True when `heads` (1-based ids, 0 = root) form a tree with one root child.
pub fn is_single_root_tree(heads: &[usize]) -> bool {
    let n = heads.len();
    if n == 0 || heads.iter().filter(|&&h| h == 0).count() != 1 {
        return false;
    }
    if heads.iter().enumerate().any(|(i, &h)| h > n || h == i + 1) {
        return false;
    }
    let mut full = vec![0usize];
    full.extend_from_slice(heads);
    find_cycle(&full).is_none()
}
