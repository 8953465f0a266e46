//! Greedy kernel-growing jigsaw solver over boundary SSD.

use super::{Arrangement, AttackError};
use crate::imgio::PatchGrid;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Relation {
    /// `b` sits right of `a`.
    RightOf,
    /// `b` sits below `a`.
    Below,
}

/// Sum of squared differences between the pixel lines facing each other
/// across the seam, with pixels scaled to [0,1].
pub fn edge_dissimilarity(
    a: &[u8],
    b: &[u8],
    relation: Relation,
    patch_size: usize,
    channels: usize,
) -> Result<f64, AttackError> {
    let expected = patch_size * patch_size * channels;
    if a.len() != expected || b.len() != expected {
        return Err(AttackError::Geometry(format!(
            "patches hold {} and {} values, expected {expected}",
            a.len(),
            b.len()
        )));
    }
    Ok(seam(a, b, relation, patch_size, channels))
}

fn seam(a: &[u8], b: &[u8], relation: Relation, p: usize, c: usize) -> f64 {
    let mut total = 0.0;
    for t in 0..p {
        // (index into a, index into b) of the facing pixels
        let (ia, ib) = match relation {
            Relation::RightOf => ((t * p + p - 1) * c, (t * p) * c),
            Relation::Below => (((p - 1) * p + t) * c, t * c),
        };
        for ch in 0..c {
            let d = (f64::from(a[ia + ch]) - f64::from(b[ib + ch])) / 255.0;
            total += d * d;
        }
    }
    total
}

struct Dissimilarity {
    n: usize,
    right: Vec<f64>,
    below: Vec<f64>,
}

impl Dissimilarity {
    fn new(pieces: &[&[u8]], p: usize, c: usize) -> Self {
        let n = pieces.len();
        let mut right = vec![f64::INFINITY; n * n];
        let mut below = vec![f64::INFINITY; n * n];
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    right[i * n + j] = seam(pieces[i], pieces[j], Relation::RightOf, p, c);
                    below[i * n + j] = seam(pieces[i], pieces[j], Relation::Below, p, c);
                }
            }
        }
        Self { n, right, below }
    }

    fn right(&self, a: usize, b: usize) -> f64 {
        self.right[a * self.n + b]
    }

    fn below(&self, a: usize, b: usize) -> f64 {
        self.below[a * self.n + b]
    }
}

// right, below, left, above
const DIRECTIONS: [(i64, i64); 4] = [(0, 1), (1, 0), (0, -1), (-1, 0)];

struct Kernel {
    rows: usize,
    cols: usize,
    /// Virtual board of (2·rows+1) × (2·cols+1) cells, origin at the centre.
    cells: Vec<Option<usize>>,
    order: Vec<(i64, i64)>,
    bounds: (i64, i64, i64, i64),
}

impl Kernel {
    fn new(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            cells: vec![None; (2 * rows + 1) * (2 * cols + 1)],
            order: Vec::new(),
            bounds: (0, 0, 0, 0),
        }
    }

    fn index(&self, (r, c): (i64, i64)) -> Option<usize> {
        let (vr, vc) = (r + self.rows as i64, c + self.cols as i64);
        let (h, w) = (2 * self.rows as i64 + 1, 2 * self.cols as i64 + 1);
        (vr >= 0 && vc >= 0 && vr < h && vc < w).then(|| (vr * w + vc) as usize)
    }

    fn at(&self, pos: (i64, i64)) -> Option<usize> {
        self.index(pos).and_then(|i| self.cells[i])
    }

    fn fits(&self, (r, c): (i64, i64)) -> bool {
        if self.order.is_empty() {
            return true;
        }
        let (r0, r1, c0, c1) = self.bounds;
        let h = r1.max(r) - r0.min(r) + 1;
        let w = c1.max(c) - c0.min(c) + 1;
        h <= self.rows as i64 && w <= self.cols as i64
    }

    fn place(&mut self, pos: (i64, i64), piece: usize) {
        let idx = self.index(pos).expect("placement inside virtual board");
        self.cells[idx] = Some(piece);
        self.bounds = if self.order.is_empty() {
            (pos.0, pos.0, pos.1, pos.1)
        } else {
            let (r0, r1, c0, c1) = self.bounds;
            (r0.min(pos.0), r1.max(pos.0), c0.min(pos.1), c1.max(pos.1))
        };
        self.order.push(pos);
    }

    /// Empty cells next to the kernel that keep it within the board, in
    /// placement order then direction order.
    fn frontier(&self) -> Vec<(i64, i64)> {
        let mut out: Vec<(i64, i64)> = Vec::new();
        for &(r, c) in &self.order {
            for (dr, dc) in DIRECTIONS {
                let pos = (r + dr, c + dc);
                if self.index(pos).is_some() && self.at(pos).is_none() && self.fits(pos) && !out.contains(&pos) {
                    out.push(pos);
                }
            }
        }
        out
    }

    fn score(&self, table: &Dissimilarity, piece: usize, (r, c): (i64, i64)) -> f64 {
        let mut total = 0.0;
        if let Some(q) = self.at((r, c - 1)) {
            total += table.right(q, piece);
        }
        if let Some(q) = self.at((r, c + 1)) {
            total += table.right(piece, q);
        }
        if let Some(q) = self.at((r - 1, c)) {
            total += table.below(q, piece);
        }
        if let Some(q) = self.at((r + 1, c)) {
            total += table.below(piece, q);
        }
        total
    }
}

/// Solves the puzzle formed by the non-hole patches of `grid` on a board of
/// the grid's shape. Returned indices refer to positions in `grid.patches`.
pub fn jigsaw_solve(grid: &PatchGrid) -> Result<Arrangement, AttackError> {
    let pieces: Vec<Option<&[u8]>> = grid.patches.iter().map(|p| p.as_deref()).collect();
    solve_pieces(&pieces, grid.patch_size, grid.channels, grid.rows, grid.cols)
}

/// Greedy kernel growing: seed with the globally most compatible pair, then
/// repeatedly place the unplaced piece whose summed dissimilarity to the
/// filled neighbours of some frontier slot is smallest. Ties go to the lower
/// piece index, then to the earlier frontier slot (relation order right,
/// below, left, above around earlier-placed pieces).
pub fn solve_pieces(
    pieces: &[Option<&[u8]>],
    patch_size: usize,
    channels: usize,
    rows: usize,
    cols: usize,
) -> Result<Arrangement, AttackError> {
    let present: Vec<usize> = (0..pieces.len()).filter(|&i| pieces[i].is_some()).collect();
    if present.len() > rows * cols {
        return Err(AttackError::Geometry(format!(
            "{} pieces do not fit on a {rows}x{cols} board",
            present.len()
        )));
    }
    let expected = patch_size * patch_size * channels;
    let slices: Vec<&[u8]> = present.iter().map(|&i| pieces[i].unwrap()).collect();
    if let Some(bad) = slices.iter().find(|s| s.len() != expected) {
        return Err(AttackError::Geometry(format!("piece holds {} values, expected {expected}", bad.len())));
    }
    let mut result = Arrangement::empty(rows, cols);
    match slices.len() {
        0 => return Ok(result),
        1 => {
            result.placement[0] = Some(present[0]);
            return Ok(result);
        }
        _ => {}
    }
    let table = Dissimilarity::new(&slices, patch_size, channels);
    let n = slices.len();

    let mut best: Option<(f64, usize, usize, Relation)> = None;
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            for (rel, allowed) in [(Relation::RightOf, cols > 1), (Relation::Below, rows > 1)] {
                let d = match rel {
                    Relation::RightOf => table.right(i, j),
                    Relation::Below => table.below(i, j),
                };
                if allowed && best.is_none_or(|b| d < b.0) {
                    best = Some((d, i, j, rel));
                }
            }
        }
    }
    let (_, a, b, rel) = best.expect("at least two pieces on a board with room for them");
    let mut kernel = Kernel::new(rows, cols);
    let mut placed = vec![false; n];
    kernel.place((0, 0), a);
    kernel.place(if rel == Relation::RightOf { (0, 1) } else { (1, 0) }, b);
    placed[a] = true;
    placed[b] = true;

    for _ in 2..n {
        let frontier = kernel.frontier();
        let mut choice: Option<(f64, usize, (i64, i64))> = None;
        for piece in (0..n).filter(|&p| !placed[p]) {
            for &slot in &frontier {
                let s = kernel.score(&table, piece, slot);
                if choice.is_none_or(|c| s < c.0) {
                    choice = Some((s, piece, slot));
                }
            }
        }
        let (_, piece, slot) = choice.ok_or_else(|| AttackError::Geometry("no free slot next to the kernel".into()))?;
        kernel.place(slot, piece);
        placed[piece] = true;
    }

    let (r0, _, c0, _) = kernel.bounds;
    for (k, &(r, c)) in kernel.order.iter().enumerate() {
        let piece = kernel.at((r, c)).expect("placed");
        debug_assert_eq!(kernel.order[k], (r, c));
        let slot = (r - r0) as usize * cols + (c - c0) as usize;
        result.placement[slot] = Some(present[piece]);
    }
    Ok(result)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PuzzleMetrics {
    /// Best-translation fraction of patches in their true slot.
    pub direct: f64,
    /// Fraction of true adjacencies reproduced with the same relation.
    pub neighbor: f64,
}

pub fn puzzle_metrics(found: &Arrangement, truth: &Arrangement) -> Result<PuzzleMetrics, AttackError> {
    if found.rows != truth.rows || found.cols != truth.cols {
        return Err(AttackError::Geometry(format!(
            "found is {}x{} but truth is {}x{}",
            found.rows, found.cols, truth.rows, truth.cols
        )));
    }
    let (rows, cols) = (truth.rows as i64, truth.cols as i64);
    let total = truth.placed();
    let mut best = 0usize;
    for dr in -(rows - 1)..rows {
        for dc in -(cols - 1)..cols {
            let mut hits = 0;
            for r in 0..rows {
                for c in 0..cols {
                    let (tr, tc) = (r + dr, c + dc);
                    if tr < 0 || tc < 0 || tr >= rows || tc >= cols {
                        continue;
                    }
                    if let Some(p) = found.get(r as usize, c as usize) {
                        if truth.get(tr as usize, tc as usize) == Some(p) {
                            hits += 1;
                        }
                    }
                }
            }
            best = best.max(hits);
        }
    }
    let direct = if total == 0 { 1.0 } else { best as f64 / total as f64 };

    let mut position = std::collections::HashMap::new();
    for r in 0..found.rows {
        for c in 0..found.cols {
            if let Some(p) = found.get(r, c) {
                position.insert(p, (r, c));
            }
        }
    }
    let (mut pairs, mut kept) = (0usize, 0usize);
    for r in 0..truth.rows {
        for c in 0..truth.cols {
            let Some(a) = truth.get(r, c) else { continue };
            let neighbours = [
                (c + 1 < truth.cols).then(|| (truth.get(r, c + 1), (0, 1))),
                (r + 1 < truth.rows).then(|| (truth.get(r + 1, c), (1, 0))),
            ];
            for (b, (dr, dc)) in neighbours.into_iter().flatten() {
                let Some(b) = b else { continue };
                pairs += 1;
                if let (Some(&(ra, ca)), Some(&(rb, cb))) = (position.get(&a), position.get(&b)) {
                    if rb == ra + dr && cb == ca + dc {
                        kept += 1;
                    }
                }
            }
        }
    }
    let neighbor = if pairs == 0 { 1.0 } else { kept as f64 / pairs as f64 };
    Ok(PuzzleMetrics { direct, neighbor })
}
