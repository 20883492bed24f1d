//! Nested subdomain hierarchies and the (truncated) hierarchical B-spline
//! bases built on them.
//!
//! Subdomains are stored as occupancy masks over the dyadic cell grid of each
//! level. The leaf mesh and per-element extraction matrices (local tensor
//! B-splines of the element's level to global active functions) are built
//! once per basis and used for all evaluation.

use std::collections::HashMap;

use crate::splines::{KnotVector, RefinementMatrix, TensorBasis, MAX_DEGREE};
use crate::{Error, Result, MAX_DIM};

pub const DEFAULT_MAX_DEPTH: usize = 12;

/// Inclusive range of cells on one level's grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct CellBox {
    pub lo: [usize; MAX_DIM],
    pub hi: [usize; MAX_DIM],
}

impl CellBox {
    pub fn new(lo: [usize; MAX_DIM], hi: [usize; MAX_DIM]) -> Self {
        Self { lo, hi }
    }

    pub fn new2(lo: [usize; 2], hi: [usize; 2]) -> Self {
        Self { lo: [lo[0], lo[1], 0], hi: [hi[0], hi[1], 0] }
    }
}

/// Nested sequence of subdomains, level 0 being the whole parametric domain.
#[derive(Clone, Debug, PartialEq)]
pub struct DomainHierarchy {
    dim: usize,
    base: [usize; MAX_DIM],
    max_depth: usize,
    masks: Vec<Vec<bool>>,
}

impl DomainHierarchy {
    /// `base[a]` cells per direction on level 0.
    pub fn new(dim: usize, base: [usize; MAX_DIM], max_depth: usize) -> Result<Self> {
        if !(1..=MAX_DIM).contains(&dim) {
            return Err(Error::DimensionMismatch { expected: MAX_DIM, got: dim });
        }
        let mut b = [1; MAX_DIM];
        for a in 0..dim {
            if base[a] == 0 {
                return Err(Error::InvalidParameter("zero cells in base grid".into()));
            }
            b[a] = base[a];
        }
        Ok(Self { dim, base: b, max_depth, masks: Vec::new() })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn base(&self) -> [usize; MAX_DIM] {
        self.base
    }

    pub fn max_depth(&self) -> usize {
        self.max_depth
    }

    /// Cells per direction on `level`.
    pub fn grid(&self, level: usize) -> [usize; MAX_DIM] {
        let mut g = [1; MAX_DIM];
        for a in 0..self.dim {
            g[a] = self.base[a] << level;
        }
        g
    }

    fn cell_flat(&self, level: usize, c: [usize; MAX_DIM]) -> usize {
        let g = self.grid(level);
        c[0] + g[0] * (c[1] + g[1] * c[2])
    }

    /// Highest level whose subdomain is non-empty.
    pub fn depth(&self) -> usize {
        self.masks.iter().rposition(|m| m.iter().any(|&b| b)).map_or(0, |i| i + 1)
    }

    pub fn contains(&self, level: usize, cell: [usize; MAX_DIM]) -> bool {
        if level == 0 {
            return true;
        }
        match self.masks.get(level - 1) {
            Some(m) => m[self.cell_flat(level, cell)],
            None => false,
        }
    }

    pub fn cells(&self, level: usize) -> Vec<[usize; MAX_DIM]> {
        let g = self.grid(level);
        let mut out = Vec::new();
        for k in 0..g[2] {
            for j in 0..g[1] {
                for i in 0..g[0] {
                    if self.contains(level, [i, j, k]) {
                        out.push([i, j, k]);
                    }
                }
            }
        }
        out
    }

    fn set(&mut self, level: usize, bx: &CellBox) {
        while self.masks.len() < level {
            let l = self.masks.len() + 1;
            let g = self.grid(l);
            self.masks.push(vec![false; g[0] * g[1] * g[2]]);
        }
        let g = self.grid(level);
        let m = &mut self.masks[level - 1];
        for k in bx.lo[2]..=bx.hi[2] {
            for j in bx.lo[1]..=bx.hi[1] {
                for i in bx.lo[0]..=bx.hi[0] {
                    m[i + g[0] * (j + g[1] * k)] = true;
                }
            }
        }
    }

    /// Adds `bx` (grown by one cell per side and clipped to the domain) to
    /// level `level`, then adds its parents on coarser levels to keep the
    /// hierarchy nested.
    pub fn insert_box(&mut self, level: usize, bx: CellBox) -> Result<()> {
        if level == 0 || level > self.max_depth {
            return Err(Error::LevelOutOfRange { level, max: self.max_depth });
        }
        let g = self.grid(level);
        let mut grown = bx;
        for a in 0..MAX_DIM {
            if a >= self.dim {
                if bx.lo[a] != 0 || bx.hi[a] != 0 {
                    return Err(Error::InvalidBox(format!("{bx:?} uses unused direction {a}")));
                }
                continue;
            }
            if bx.lo[a] > bx.hi[a] || bx.hi[a] >= g[a] {
                return Err(Error::InvalidBox(format!("{bx:?} outside the {level}-level grid {g:?}")));
            }
            grown.lo[a] = bx.lo[a].saturating_sub(1);
            grown.hi[a] = (bx.hi[a] + 1).min(g[a] - 1);
        }
        self.set(level, &grown);
        let mut b = grown;
        for l in (1..level).rev() {
            for a in 0..self.dim {
                b.lo[a] /= 2;
                b.hi[a] /= 2;
            }
            self.set(l, &b);
        }
        Ok(())
    }

    /// Same hierarchy on a base grid refined once in every direction.
    pub fn refined(&self) -> Self {
        let mut out = Self { dim: self.dim, base: self.base, max_depth: self.max_depth, masks: Vec::new() };
        for a in 0..self.dim {
            out.base[a] *= 2;
        }
        for (i, m) in self.masks.iter().enumerate() {
            let level = i + 1;
            let g = self.grid(level);
            let ng = out.grid(level);
            let mut nm = vec![false; ng[0] * ng[1] * ng[2]];
            for k in 0..ng[2] {
                for j in 0..ng[1] {
                    for ii in 0..ng[0] {
                        let (pi, pj, pk) = if self.dim == 3 {
                            (ii / 2, j / 2, k / 2)
                        } else if self.dim == 2 {
                            (ii / 2, j / 2, 0)
                        } else {
                            (ii / 2, 0, 0)
                        };
                        nm[ii + ng[0] * (j + ng[1] * k)] = m[pi + g[0] * (pj + g[1] * pk)];
                    }
                }
            }
            out.masks.push(nm);
        }
        out
    }

    /// Hierarchy whose cells are `2^k` times larger per direction. The shift
    /// goes into the base grid as far as it divides; the rest lowers every
    /// level. Each coarse level keeps the coarse cells lying entirely inside
    /// the corresponding fine subdomain whose parent is kept, so every fine
    /// leaf lies inside one coarse leaf.
    pub fn coarsened(&self, k: usize) -> Self {
        if k == 0 {
            return self.clone();
        }
        let s = (0..self.dim).map(|a| self.base[a].trailing_zeros() as usize).min().unwrap().min(k);
        let r = k - s;
        let mut base = self.base;
        for b in base.iter_mut().take(self.dim) {
            *b >>= s;
        }
        let mut out = Self { dim: self.dim, base, max_depth: self.max_depth, masks: Vec::new() };
        let n = 1usize << k;
        let mut sub = [1; MAX_DIM];
        for v in sub.iter_mut().take(self.dim) {
            *v = n;
        }
        for lc in 1..=self.depth().saturating_sub(r) {
            let m = lc + r;
            let g = out.grid(lc);
            let mut mask = vec![false; g[0] * g[1] * g[2]];
            for c2 in 0..g[2] {
                for c1 in 0..g[1] {
                    for c0 in 0..g[0] {
                        let c = [c0, c1, c2];
                        let mut parent = c;
                        for v in parent.iter_mut().take(self.dim) {
                            *v /= 2;
                        }
                        if !out.contains(lc - 1, parent) {
                            continue;
                        }
                        let mut inside = true;
                        'cells: for k2 in 0..sub[2] {
                            for k1 in 0..sub[1] {
                                for k0 in 0..sub[0] {
                                    let mut f = [0; MAX_DIM];
                                    let o = [k0, k1, k2];
                                    for a in 0..self.dim {
                                        f[a] = c[a] * n + o[a];
                                    }
                                    if !self.contains(m, f) {
                                        inside = false;
                                        break 'cells;
                                    }
                                }
                            }
                        }
                        mask[c0 + g[0] * (c1 + g[1] * c2)] = inside;
                    }
                }
            }
            out.masks.push(mask);
        }
        out
    }

    /// Covering of a level's subdomain by disjoint boxes, greedily grown along
    /// the first, then second, then third direction.
    pub fn boxes(&self, level: usize) -> Vec<CellBox> {
        let g = self.grid(level);
        let mut taken = vec![false; g[0] * g[1] * g[2]];
        let idx = |c: [usize; 3]| c[0] + g[0] * (c[1] + g[1] * c[2]);
        let free = |taken: &Vec<bool>, c: [usize; 3]| !taken[idx(c)] && self.contains(level, c);
        let mut out = Vec::new();
        for k in 0..g[2] {
            for j in 0..g[1] {
                for i in 0..g[0] {
                    if !free(&taken, [i, j, k]) {
                        continue;
                    }
                    let mut hi = [i, j, k];
                    while hi[0] + 1 < g[0] && free(&taken, [hi[0] + 1, j, k]) {
                        hi[0] += 1;
                    }
                    'y: while hi[1] + 1 < g[1] {
                        for x in i..=hi[0] {
                            if !free(&taken, [x, hi[1] + 1, k]) {
                                break 'y;
                            }
                        }
                        hi[1] += 1;
                    }
                    'z: while hi[2] + 1 < g[2] {
                        for y in j..=hi[1] {
                            for x in i..=hi[0] {
                                if !free(&taken, [x, y, hi[2] + 1]) {
                                    break 'z;
                                }
                            }
                        }
                        hi[2] += 1;
                    }
                    for z in k..=hi[2] {
                        for y in j..=hi[1] {
                            for x in i..=hi[0] {
                                taken[idx([x, y, z])] = true;
                            }
                        }
                    }
                    out.push(CellBox::new([i, j, k], hi));
                }
            }
        }
        out
    }

    /// One line per box: `level; lo; hi` with cell indices on that level's grid.
    pub fn dump(&self) -> String {
        let mut s = String::new();
        for level in 1..=self.depth() {
            for b in self.boxes(level) {
                let lo: Vec<String> = b.lo[..self.dim].iter().map(|v| v.to_string()).collect();
                let hi: Vec<String> = b.hi[..self.dim].iter().map(|v| v.to_string()).collect();
                s.push_str(&format!("{level}; {}; {}\n", lo.join(" "), hi.join(" ")));
            }
        }
        s
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Truncation {
    /// Truncated hierarchical basis (partition of unity).
    Truncated,
    /// Classical hierarchical basis without truncation.
    Plain,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ActiveFunction {
    pub level: usize,
    pub index: [usize; MAX_DIM],
}

/// Leaf cell of the hierarchical mesh.
#[derive(Clone, Debug)]
pub struct Element {
    /// Dyadic level of the cell itself.
    pub grid_level: usize,
    pub cell: [usize; MAX_DIM],
    /// Level `L` of the B-splines used for extraction; equals `grid_level` or
    /// `grid_level - 1`.
    pub level: usize,
    /// Level-`L` cell containing this element.
    pub parent_cell: [usize; MAX_DIM],
    /// Global ids of the functions non-zero on the element.
    pub funcs: Vec<usize>,
    /// Row-major `funcs.len() x (p+1)^d`; row `a` holds function `funcs[a]`
    /// in the local level-`L` tensor basis.
    pub extraction: Vec<f64>,
    /// Extraction is a permutation: `funcs[k]` is local function `k`.
    pub identity: bool,
}

/// Values and derivatives of an element's functions at a set of points,
/// stored function-major (`f * npts + q`).
#[derive(Clone, Debug, Default)]
pub struct ElementBasisValues {
    pub nfuncs: usize,
    pub npts: usize,
    pub values: Vec<f64>,
    pub grads: Vec<[f64; MAX_DIM]>,
    pub hessians: Vec<[[f64; MAX_DIM]; MAX_DIM]>,
}

/// Hierarchical B-spline basis on a [`DomainHierarchy`].
#[derive(Clone, Debug)]
pub struct HierarchicalBasis {
    degree: usize,
    mode: Truncation,
    domain: DomainHierarchy,
    levels: Vec<TensorBasis>,
    refine: Vec<Vec<RefinementMatrix>>,
    active: Vec<ActiveFunction>,
    active_maps: Vec<HashMap<usize, usize>>,
    elements: Vec<Element>,
    element_map: HashMap<(usize, [usize; MAX_DIM]), usize>,
}

type Combination = Vec<(usize, f64)>;

impl HierarchicalBasis {
    /// Single-level basis of degree `degree` on `base` uniform cells.
    pub fn uniform(dim: usize, degree: usize, base: [usize; MAX_DIM], mode: Truncation) -> Result<Self> {
        Self::new(degree, DomainHierarchy::new(dim, base, DEFAULT_MAX_DEPTH)?, mode)
    }

    pub fn new(degree: usize, domain: DomainHierarchy, mode: Truncation) -> Result<Self> {
        if degree > MAX_DEGREE {
            return Err(Error::InvalidParameter(format!("degree {degree} too high")));
        }
        let dim = domain.dim;
        let nlev = domain.depth() + 1;
        let levels: Vec<TensorBasis> = (0..nlev)
            .map(|l| {
                let g = domain.grid(l);
                TensorBasis::new((0..dim).map(|a| KnotVector::uniform(degree, g[a])).collect())
            })
            .collect::<Result<_>>()?;
        let refine: Vec<Vec<RefinementMatrix>> = (0..nlev.saturating_sub(1))
            .map(|l| {
                levels[l]
                    .dirs()
                    .iter()
                    .zip(levels[l + 1].dirs())
                    .map(|(c, f)| RefinementMatrix::between(c, f))
                    .collect()
            })
            .collect();

        let mut basis = Self {
            degree,
            mode,
            domain,
            levels,
            refine,
            active: Vec::new(),
            active_maps: Vec::new(),
            elements: Vec::new(),
            element_map: HashMap::new(),
        };
        let combos = basis.build_functions();
        basis.build_elements(&combos);
        Ok(basis)
    }

    /// Support of function `idx` on `level` as an inclusive cell box.
    fn support_cells(&self, level: usize, idx: [usize; MAX_DIM]) -> CellBox {
        let g = self.domain.grid(level);
        let p = self.degree;
        let mut b = CellBox::new([0; MAX_DIM], [0; MAX_DIM]);
        for a in 0..self.dim() {
            b.lo[a] = idx[a].saturating_sub(p);
            b.hi[a] = idx[a].min(g[a] - 1);
        }
        b
    }

    fn box_inside(&self, level: usize, b: &CellBox) -> bool {
        if level == 0 {
            return true;
        }
        if level > self.domain.masks.len() {
            return false;
        }
        for k in b.lo[2]..=b.hi[2] {
            for j in b.lo[1]..=b.hi[1] {
                for i in b.lo[0]..=b.hi[0] {
                    if !self.domain.contains(level, [i, j, k]) {
                        return false;
                    }
                }
            }
        }
        true
    }

    /// Selects active functions level by level and returns, for every level
    /// and every level-`l` B-spline touching the level-`l` subdomain, its
    /// combination of active hierarchical functions.
    fn build_functions(&mut self) -> Vec<HashMap<usize, Combination>> {
        let nlev = self.levels.len();
        let p = self.degree;
        let dim = self.dim();
        let mut combos: Vec<HashMap<usize, Combination>> = Vec::with_capacity(nlev);
        for l in 0..nlev {
            let tb = &self.levels[l];
            let sizes = tb.sizes();
            let candidates: Vec<usize> = if l == 0 {
                (0..tb.num_basis()).collect()
            } else {
                let mut c = Vec::new();
                for cell in self.domain.cells(l) {
                    let mut hi = [0; MAX_DIM];
                    for a in 0..dim {
                        hi[a] = p;
                    }
                    for k in 0..=hi[2] {
                        for j in 0..=hi[1] {
                            for i in 0..=hi[0] {
                                let m = [cell[0] + i, cell[1] + j, cell[2] + k];
                                c.push(m[0] + sizes[0] * (m[1] + sizes[1] * m[2]));
                            }
                        }
                    }
                }
                c.sort_unstable();
                c.dedup();
                c
            };
            let mut map = HashMap::new();
            let mut kinds = Vec::with_capacity(candidates.len());
            for &j in &candidates {
                let idx = tb.multi_index(j);
                let sup = self.support_cells(l, idx);
                let inside = self.box_inside(l, &sup);
                let mut fine = sup;
                for a in 0..dim {
                    fine.lo[a] = 2 * sup.lo[a];
                    fine.hi[a] = 2 * sup.hi[a] + 1;
                }
                let inside_next = self.box_inside(l + 1, &fine);
                let active = inside && !inside_next;
                if active {
                    map.insert(j, self.active.len());
                    self.active.push(ActiveFunction { level: l, index: idx });
                }
                kinds.push((active, inside_next));
            }
            let mut level_combos = HashMap::with_capacity(candidates.len());
            for (&j, &(active, inside_next)) in candidates.iter().zip(&kinds) {
                let own = map.get(&j).copied();
                let mut c: Combination = Vec::new();
                let inherit = match self.mode {
                    Truncation::Truncated => !active && !inside_next,
                    Truncation::Plain => true,
                };
                if l > 0 && inherit {
                    let idx = tb.multi_index(j);
                    let coarse = &self.levels[l - 1];
                    let r = &self.refine[l - 1];
                    let rows: Vec<Vec<(usize, f64)>> = (0..dim).map(|a| r[a].row(idx[a]).collect()).collect();
                    let empty = vec![(0usize, 1.0)];
                    let r1 = rows.get(1).unwrap_or(&empty);
                    let r2 = rows.get(2).unwrap_or(&empty);
                    for &(i2, v2) in r2 {
                        for &(i1, v1) in r1 {
                            for &(i0, v0) in &rows[0] {
                                let ci = coarse.flat_index([i0, i1, i2]);
                                if let Some(parent) = combos[l - 1].get(&ci) {
                                    let w = v0 * v1 * v2;
                                    c.extend(parent.iter().map(|&(id, v)| (id, v * w)));
                                }
                            }
                        }
                    }
                }
                if let Some(id) = own {
                    c.push((id, 1.0));
                }
                level_combos.insert(j, merge(c));
            }
            self.active_maps.push(map);
            combos.push(level_combos);
        }
        combos
    }

    fn build_elements(&mut self, combos: &[HashMap<usize, Combination>]) {
        let g0 = self.domain.grid(0);
        for k in 0..g0[2] {
            for j in 0..g0[1] {
                for i in 0..g0[0] {
                    self.visit(0, [i, j, k], combos);
                }
            }
        }
    }

    fn visit(&mut self, g: usize, cell: [usize; MAX_DIM], combos: &[HashMap<usize, Combination>]) {
        let dim = self.dim();
        let children = self.children(cell);
        let subdivide = g + 1 < self.levels.len() && children.iter().any(|c| self.domain.contains(g + 1, *c));
        if subdivide {
            for c in children {
                self.visit(g + 1, c, combos);
            }
            return;
        }
        let (level, parent) = if self.domain.contains(g, cell) {
            (g, cell)
        } else {
            let mut pc = cell;
            for a in 0..dim {
                pc[a] /= 2;
            }
            (g - 1, pc)
        };
        let p = self.degree;
        let tb = &self.levels[level];
        let nloc = (p + 1).pow(dim as u32);
        let mut locals: Vec<&Combination> = Vec::with_capacity(nloc);
        let mut n = [1; MAX_DIM];
        for a in 0..dim {
            n[a] = p + 1;
        }
        for kk in 0..n[2] {
            for jj in 0..n[1] {
                for ii in 0..n[0] {
                    let m = [parent[0] + ii, parent[1] + jj, parent[2] + kk];
                    locals.push(&combos[level][&tb.flat_index(m)]);
                }
            }
        }
        let identity = locals.iter().all(|c| c.len() == 1 && c[0].1 == 1.0);
        let (funcs, extraction) = if identity {
            (locals.iter().map(|c| c[0].0).collect::<Vec<_>>(), Vec::new())
        } else {
            let mut funcs: Vec<usize> = locals.iter().flat_map(|c| c.iter().map(|x| x.0)).collect();
            funcs.sort_unstable();
            funcs.dedup();
            let mut e = vec![0.0; funcs.len() * nloc];
            for (loc, c) in locals.iter().enumerate() {
                for &(id, v) in c.iter() {
                    let row = funcs.binary_search(&id).unwrap();
                    e[row * nloc + loc] += v;
                }
            }
            (funcs, e)
        };
        self.element_map.insert((g, cell), self.elements.len());
        self.elements.push(Element { grid_level: g, cell, level, parent_cell: parent, funcs, extraction, identity });
    }

    fn children(&self, cell: [usize; MAX_DIM]) -> Vec<[usize; MAX_DIM]> {
        let dim = self.dim();
        let mut n = [1; MAX_DIM];
        for a in 0..dim {
            n[a] = 2;
        }
        let mut out = Vec::with_capacity(1 << dim);
        for k in 0..n[2] {
            for j in 0..n[1] {
                for i in 0..n[0] {
                    let mut c = [0; MAX_DIM];
                    let off = [i, j, k];
                    for a in 0..dim {
                        c[a] = 2 * cell[a] + off[a];
                    }
                    out.push(c);
                }
            }
        }
        out
    }

    pub fn dim(&self) -> usize {
        self.domain.dim
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn mode(&self) -> Truncation {
        self.mode
    }

    pub fn domain(&self) -> &DomainHierarchy {
        &self.domain
    }

    pub fn num_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn level_basis(&self, level: usize) -> &TensorBasis {
        &self.levels[level]
    }

    pub fn num_functions(&self) -> usize {
        self.active.len()
    }

    pub fn active(&self) -> &[ActiveFunction] {
        &self.active
    }

    /// Global id of the level-`level` B-spline `index` if it is active.
    pub fn active_id(&self, level: usize, index: [usize; MAX_DIM]) -> Option<usize> {
        let tb = self.levels.get(level)?;
        self.active_maps[level].get(&tb.flat_index(index)).copied()
    }

    /// Characteristic vector of the active functions over all level-`level` B-splines.
    pub fn characteristic(&self, level: usize) -> Vec<bool> {
        match self.levels.get(level) {
            Some(tb) => {
                let mut x = vec![false; tb.num_basis()];
                for &j in self.active_maps[level].keys() {
                    x[j] = true;
                }
                x
            }
            None => Vec::new(),
        }
    }

    pub fn elements(&self) -> &[Element] {
        &self.elements
    }

    pub fn num_elements(&self) -> usize {
        self.elements.len()
    }

    /// Whether function `id` is non-zero somewhere on the boundary.
    pub fn is_boundary(&self, id: usize) -> bool {
        let f = &self.active[id];
        let sizes = self.levels[f.level].sizes();
        (0..self.dim()).any(|a| f.index[a] == 0 || f.index[a] + 1 == sizes[a])
    }

    /// Greville point of the B-spline underlying function `id`.
    pub fn greville_point(&self, id: usize) -> [f64; MAX_DIM] {
        let f = &self.active[id];
        let tb = &self.levels[f.level];
        let mut x = [0.0; MAX_DIM];
        for (a, kv) in tb.dirs().iter().enumerate() {
            let p = kv.degree();
            let k = kv.knots();
            x[a] = if p == 0 {
                0.5 * (k[f.index[a]] + k[f.index[a] + 1])
            } else {
                k[f.index[a] + 1..=f.index[a] + p].iter().sum::<f64>() / p as f64
            };
        }
        x
    }

    /// Parametric bounds of element `e`.
    pub fn element_box(&self, e: usize) -> ([f64; MAX_DIM], [f64; MAX_DIM]) {
        let el = &self.elements[e];
        let g = self.domain.grid(el.grid_level);
        let mut lo = [0.0; MAX_DIM];
        let mut hi = [0.0; MAX_DIM];
        for a in 0..self.dim() {
            lo[a] = el.cell[a] as f64 / g[a] as f64;
            hi[a] = (el.cell[a] + 1) as f64 / g[a] as f64;
        }
        (lo, hi)
    }

    /// Element containing parametric `point` (half-open cells, closed at 1).
    pub fn locate(&self, point: &[f64]) -> Result<usize> {
        let dim = self.dim();
        let mut p = [0.0; MAX_DIM];
        for a in 0..dim {
            if !(0.0..=1.0).contains(&point[a]) {
                return Err(Error::PointOutside(p));
            }
            p[a] = point[a];
        }
        for g in 0..=self.levels.len() {
            let grid = self.domain.grid(g);
            let mut c = [0; MAX_DIM];
            for a in 0..dim {
                c[a] = ((p[a] * grid[a] as f64) as usize).min(grid[a] - 1);
            }
            if let Some(&e) = self.element_map.get(&(g, c)) {
                return Ok(e);
            }
        }
        Err(Error::PointOutside(p))
    }

    /// Element with the given dyadic cell, if it is a leaf.
    pub fn element_at(&self, grid_level: usize, cell: [usize; MAX_DIM]) -> Option<usize> {
        self.element_map.get(&(grid_level, cell)).copied()
    }

    /// Evaluates the functions of element `e` at parametric `points` (inside
    /// or on the boundary of the element) with derivatives up to `nders`.
    pub fn eval_element(&self, e: usize, points: &[[f64; MAX_DIM]], nders: usize, out: &mut ElementBasisValues) {
        let el = &self.elements[e];
        let dim = self.dim();
        let p = self.degree;
        let tb = &self.levels[el.level];
        let nloc = (p + 1).pow(dim as u32);
        let np = points.len();
        let nf = el.funcs.len();
        let mut loc_v = vec![0.0; nloc * np];
        let mut loc_g = vec![[0.0; MAX_DIM]; if nders >= 1 { nloc * np } else { 0 }];
        let mut loc_h = vec![[[0.0; MAX_DIM]; MAX_DIM]; if nders >= 2 { nloc * np } else { 0 }];
        let mut n = [1; MAX_DIM];
        for a in 0..dim {
            n[a] = p + 1;
        }
        // tensor rules repeat coordinates, so univariate values are shared
        let one = [[1.0, 0.0, 0.0]];
        let mut coords: [Vec<f64>; MAX_DIM] = Default::default();
        let mut uni: [Vec<[f64; 3]>; MAX_DIM] = Default::default();
        let mut slot = vec![[0usize; MAX_DIM]; np];
        let mut buf = [[0.0; 3]; MAX_DEGREE + 1];
        for (q, x) in points.iter().enumerate() {
            for a in 0..dim {
                slot[q][a] = match coords[a].iter().position(|&c| c == x[a]) {
                    Some(k) => k,
                    None => {
                        tb.dirs()[a].span_derivatives(el.parent_cell[a] + p, x[a], nders, &mut buf);
                        coords[a].push(x[a]);
                        uni[a].extend_from_slice(&buf[..=p]);
                        coords[a].len() - 1
                    }
                };
            }
        }
        for (q, s) in slot.iter().enumerate() {
            let b: [&[[f64; 3]]; MAX_DIM] =
                std::array::from_fn(|a| if a < dim { &uni[a][s[a] * (p + 1)..(s[a] + 1) * (p + 1)] } else { &one[..] });
            let mut loc = 0;
            for kk in 0..n[2] {
                for jj in 0..n[1] {
                    for ii in 0..n[0] {
                        let f = [b[0][ii], b[1][jj], b[2][kk]];
                        loc_v[loc * np + q] = f[0][0] * f[1][0] * f[2][0];
                        if nders >= 1 {
                            loc_g[loc * np + q] =
                                [f[0][1] * f[1][0] * f[2][0], f[0][0] * f[1][1] * f[2][0], f[0][0] * f[1][0] * f[2][1]];
                        }
                        if nders >= 2 {
                            let h = &mut loc_h[loc * np + q];
                            for r in 0..MAX_DIM {
                                for c in r..MAX_DIM {
                                    let mut v = 1.0;
                                    for (t, ft) in f.iter().enumerate() {
                                        v *= ft[(r == t) as usize + (c == t) as usize];
                                    }
                                    h[r][c] = v;
                                    h[c][r] = v;
                                }
                            }
                        }
                        loc += 1;
                    }
                }
            }
        }
        out.nfuncs = nf;
        out.npts = np;
        if el.identity {
            out.values = loc_v;
            out.grads = loc_g;
            out.hessians = loc_h;
            return;
        }
        out.values = vec![0.0; nf * np];
        out.grads = vec![[0.0; MAX_DIM]; if nders >= 1 { nf * np } else { 0 }];
        out.hessians = vec![[[0.0; MAX_DIM]; MAX_DIM]; if nders >= 2 { nf * np } else { 0 }];
        for f in 0..nf {
            let row = &el.extraction[f * nloc..(f + 1) * nloc];
            for (l, &c) in row.iter().enumerate() {
                if c == 0.0 {
                    continue;
                }
                for q in 0..np {
                    out.values[f * np + q] += c * loc_v[l * np + q];
                    if nders >= 1 {
                        let g = &loc_g[l * np + q];
                        let o = &mut out.grads[f * np + q];
                        for a in 0..dim {
                            o[a] += c * g[a];
                        }
                    }
                    if nders >= 2 {
                        let h = &loc_h[l * np + q];
                        let o = &mut out.hessians[f * np + q];
                        for a in 0..dim {
                            for b in 0..dim {
                                o[a][b] += c * h[a][b];
                            }
                        }
                    }
                }
            }
        }
    }

    /// Non-zero hierarchical functions at `point` with parametric gradients.
    pub fn eval(&self, point: &[f64]) -> Result<(Vec<usize>, Vec<f64>, Vec<[f64; MAX_DIM]>)> {
        let e = self.locate(point)?;
        let mut x = [0.0; MAX_DIM];
        x[..self.dim()].copy_from_slice(&point[..self.dim()]);
        let mut ev = ElementBasisValues::default();
        self.eval_element(e, &[x], 1, &mut ev);
        Ok((self.elements[e].funcs.clone(), ev.values, ev.grads))
    }

    /// Value of the expansion with coefficients `coeffs` at parametric `point`.
    pub fn eval_field(&self, coeffs: &[f64], point: &[f64]) -> Result<f64> {
        let (ids, v, _) = self.eval(point)?;
        Ok(ids.iter().zip(&v).map(|(&i, &b)| coeffs[i] * b).sum())
    }

    /// `(I - X) R C`: refines level-`level` tensor coefficients to level
    /// `level + 1` and discards the coefficients of level-`(level + 1)`
    /// B-splines supported inside the level-`(level + 1)` subdomain.
    pub fn truncate(&self, level: usize, coeffs: &[f64]) -> Result<Vec<f64>> {
        let max = self.domain.max_depth;
        if level >= max {
            return Err(Error::LevelOutOfRange { level, max });
        }
        let dim = self.dim();
        let g = self.domain.grid(level);
        let coarse: Vec<KnotVector> = (0..dim).map(|a| KnotVector::uniform(self.degree, g[a])).collect();
        let coarse = TensorBasis::new(coarse)?;
        if coeffs.len() != coarse.num_basis() {
            return Err(Error::DimensionMismatch { expected: coarse.num_basis(), got: coeffs.len() });
        }
        let (fine, mats) = coarse.dyadic_refine()?;
        let mut out = vec![0.0; fine.num_basis()];
        for (j, o) in out.iter_mut().enumerate() {
            let idx = fine.multi_index(j);
            let sup = self.support_cells(level + 1, idx);
            if self.box_inside(level + 1, &sup) {
                continue;
            }
            let rows: Vec<Vec<(usize, f64)>> = (0..dim).map(|a| mats[a].row(idx[a]).collect()).collect();
            let empty = vec![(0usize, 1.0)];
            let r1 = rows.get(1).unwrap_or(&empty);
            let r2 = rows.get(2).unwrap_or(&empty);
            let mut s = 0.0;
            for &(i2, v2) in r2 {
                for &(i1, v1) in r1 {
                    for &(i0, v0) in &rows[0] {
                        s += v0 * v1 * v2 * coeffs[coarse.flat_index([i0, i1, i2])];
                    }
                }
            }
            *o = s;
        }
        Ok(out)
    }

    /// New basis with `bx` inserted at `level`.
    pub fn insert_box(&self, level: usize, bx: CellBox) -> Result<Self> {
        self.insert_boxes(&[(level, bx)])
    }

    pub fn insert_boxes(&self, boxes: &[(usize, CellBox)]) -> Result<Self> {
        let mut d = self.domain.clone();
        for &(l, b) in boxes {
            d.insert_box(l, b)?;
        }
        Self::new(self.degree, d, self.mode)
    }

    /// Same hierarchy on a dyadically refined base grid.
    pub fn refine_uniform(&self) -> Result<Self> {
        Self::new(self.degree, self.domain.refined(), self.mode)
    }

    /// Same hierarchy with a different degree.
    pub fn with_degree(&self, degree: usize) -> Result<Self> {
        Self::new(degree, self.domain.clone(), self.mode)
    }
}

fn merge(mut c: Combination) -> Combination {
    if c.len() <= 1 {
        return c;
    }
    c.sort_unstable_by_key(|x| x.0);
    let mut out: Combination = Vec::with_capacity(c.len());
    for (id, v) in c {
        match out.last_mut() {
            Some(last) if last.0 == id => last.1 += v,
            _ => out.push((id, v)),
        }
    }
    out
}
