use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use super::system::AffineSystem;
use crate::error::{Error, Result};

/// Relative threshold under which a candidate pivot counts as zero.
pub const PIVOT_TOLERANCE: f64 = 1e-10;
/// Largest residual an equation may leave once reduced to `0 = r`.
pub const CONSISTENCY_TOLERANCE: f64 = 1e-6;
/// Relative residual under which a target functional is in the row space.
pub const MEMBERSHIP_TOLERANCE: f64 = 1e-9;
/// Fill-in entries below this magnitude are rounding noise.
const DROP_TOLERANCE: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Identifiability {
    Determined(f64),
    Undetermined,
}

impl Identifiability {
    pub fn value(self) -> Option<f64> {
        match self {
            Identifiability::Determined(v) => Some(v),
            Identifiability::Undetermined => None,
        }
    }
}

/// Repeated single-unknown elimination: substitute what is known, solve
/// every equation left with exactly one unknown, until nothing changes.
pub fn propagate(system: &AffineSystem) -> Result<BTreeMap<usize, f64>> {
    let mut known: BTreeMap<usize, f64> = BTreeMap::new();
    let mut by_unknown: Vec<Vec<usize>> = vec![Vec::new(); system.unknowns.len()];
    for (ei, eq) in system.equations.iter().enumerate() {
        for &(i, _) in &eq.terms {
            by_unknown[i].push(ei);
        }
    }
    let mut done = vec![false; system.equations.len()];
    let mut queue: Vec<usize> = (0..system.equations.len()).rev().collect();
    while let Some(ei) = queue.pop() {
        if done[ei] {
            continue;
        }
        let eq = &system.equations[ei];
        let scale = eq.terms.iter().fold(0.0_f64, |m, &(_, c)| m.max(c.abs()));
        let mut rest = eq.constant;
        let mut open: Option<(usize, f64)> = None;
        let mut open_count = 0;
        for &(i, c) in &eq.terms {
            if c.abs() <= PIVOT_TOLERANCE * scale {
                continue;
            }
            match known.get(&i) {
                Some(v) => rest -= c * v,
                None => {
                    open_count += 1;
                    open = Some((i, c));
                }
            }
        }
        match (open_count, open) {
            (0, _) => {
                done[ei] = true;
                if rest.abs() > CONSISTENCY_TOLERANCE * eq.constant.abs().max(1.0) {
                    return Err(Error::Contradiction { equation: ei, residual: rest });
                }
            }
            (1, Some((i, c))) => {
                done[ei] = true;
                known.insert(i, rest / c);
                queue.extend(by_unknown[i].iter().copied().filter(|&e| !done[e]));
            }
            _ => {}
        }
    }
    Ok(known)
}

type SparseRow = Vec<(usize, f64)>;

/// `a - f * b` over sorted sparse rows.
fn axpy(a: &[(usize, f64)], f: f64, b: &[(usize, f64)]) -> SparseRow {
    let mut out = Vec::with_capacity(a.len() + b.len());
    let (mut x, mut y) = (0, 0);
    while x < a.len() || y < b.len() {
        let (col, v) = match (a.get(x), b.get(y)) {
            (Some(&(ca, va)), Some(&(cb, vb))) if ca == cb => {
                x += 1;
                y += 1;
                (ca, va - f * vb)
            }
            (Some(&(ca, va)), Some(&(cb, _))) if ca < cb => {
                x += 1;
                (ca, va)
            }
            (Some(&(ca, va)), None) => {
                x += 1;
                (ca, va)
            }
            (_, Some(&(cb, vb))) => {
                y += 1;
                (cb, -f * vb)
            }
            (None, None) => unreachable!(),
        };
        if v.abs() > DROP_TOLERANCE {
            out.push((col, v));
        }
    }
    out
}

/// Reduced row echelon form of the coalition's equations, for row-space
/// membership queries.
///
/// Rows are inserted one at a time and kept fully reduced, with the new
/// pivot chosen as the largest remaining entry of the incoming row.
#[derive(Debug, Clone)]
pub struct Elimination {
    n_unknowns: usize,
    /// Pivot rows, normalized to 1 at their pivot, zero in every other
    /// pivot column.
    rows: Vec<(usize, SparseRow, f64)>,
    pivot_of: Vec<Option<usize>>,
}

impl Elimination {
    pub fn new(system: &AffineSystem) -> Result<Self> {
        let n = system.unknowns.len();
        let mut el = Elimination { n_unknowns: n, rows: Vec::new(), pivot_of: vec![None; n] };
        for (ei, eq) in system.equations.iter().enumerate() {
            let mut merged: BTreeMap<usize, f64> = BTreeMap::new();
            for &(i, c) in &eq.terms {
                *merged.entry(i).or_insert(0.0) += c;
            }
            let row: SparseRow = merged.into_iter().filter(|&(_, c)| c != 0.0).collect();
            el.insert(ei, row, eq.constant)?;
        }
        Ok(el)
    }

    fn insert(&mut self, ei: usize, row: SparseRow, rhs: f64) -> Result<()> {
        let scale = row.iter().fold(0.0_f64, |m, &(_, c)| m.max(c.abs()));
        let (mut r, mut b) = (row.clone(), rhs);
        for &(col, coef) in &row {
            if let Some(p) = self.pivot_of[col] {
                let (_, prow, prhs) = &self.rows[p];
                r = axpy(&r, coef, prow);
                b -= coef * prhs;
            }
        }
        let best = r
            .iter()
            .filter(|&&(c, _)| self.pivot_of[c].is_none())
            .max_by(|x, y| x.1.abs().total_cmp(&y.1.abs()))
            .copied();
        match best {
            Some((col, piv)) if piv.abs() > PIVOT_TOLERANCE * scale => {
                let r: SparseRow = r
                    .into_iter()
                    .filter(|&(c, _)| self.pivot_of[c].is_none())
                    .map(|(c, v)| (c, if c == col { 1.0 } else { v / piv }))
                    .collect();
                let b = b / piv;
                for (_, prow, prhs) in self.rows.iter_mut() {
                    if let Ok(pos) = prow.binary_search_by_key(&col, |&(c, _)| c) {
                        let f = prow[pos].1;
                        let mut next = axpy(prow, f, &r);
                        next.retain(|&(c, _)| c != col);
                        *prow = next;
                        *prhs -= f * b;
                    }
                }
                self.pivot_of[col] = Some(self.rows.len());
                self.rows.push((col, r, b));
                Ok(())
            }
            _ => {
                if b.abs() > CONSISTENCY_TOLERANCE * rhs.abs().max(1.0) {
                    Err(Error::Contradiction { equation: ei, residual: b })
                } else {
                    Ok(())
                }
            }
        }
    }

    pub fn rank(&self) -> usize {
        self.rows.len()
    }

    /// Is the functional `target · unknowns` fixed by the equations, and
    /// if so, to what value.
    pub fn query(&self, target: &[f64]) -> Identifiability {
        assert_eq!(target.len(), self.n_unknowns, "target length must match the unknowns");
        let scale = target.iter().fold(0.0_f64, |m, c| m.max(c.abs())).max(1.0);
        let mut residual: SparseRow =
            target.iter().enumerate().filter(|&(_, &v)| v != 0.0).map(|(c, &v)| (c, v)).collect();
        let mut value = 0.0;
        for (c, &t) in target.iter().enumerate() {
            if t == 0.0 {
                continue;
            }
            if let Some(p) = self.pivot_of[c] {
                let (_, prow, prhs) = &self.rows[p];
                value += t * prhs;
                residual = axpy(&residual, t, prow);
            }
        }
        let worst = residual.iter().fold(0.0_f64, |m, &(_, v)| m.max(v.abs()));
        if worst <= MEMBERSHIP_TOLERANCE * scale {
            Identifiability::Determined(value)
        } else {
            Identifiability::Undetermined
        }
    }
}

/// One-shot row-space test of `target` against `system`.
pub fn identifiability(system: &AffineSystem, target: &[f64]) -> Result<Identifiability> {
    Ok(Elimination::new(system)?.query(target))
}
