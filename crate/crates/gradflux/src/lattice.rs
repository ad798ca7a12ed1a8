//! Lattice graphs (bipartite torus, box, custom), oriented edges, boundary
//! sets, and the enumeration oracles built on them: connected cuts,
//! isoperimetry profiles, cut counting, box isoperimetry verification,
//! boundary connectivity in the edge-midpoint graph, percolation components
//! and anchored isoperimetry events, axis-parity edge classes.

use sha2::{Digest, Sha256};
use std::io::{BufRead, Write};
use std::path::Path;
use thiserror::Error;

/// Default cap on vertex counts for exhaustive subset enumeration
/// (2^22 subsets with bit tricks stays under a minute).
pub const DEFAULT_ENUM_BUDGET: usize = 22;

#[derive(Debug, Error)]
pub enum LatticeError {
    #[error("graph with {actual} vertices exceeds the budget of {budget}")]
    Size { actual: usize, budget: usize },
    #[error("operation requires {required} graphs, got {actual}")]
    Mode { required: &'static str, actual: &'static str },
    #[error("invalid graph: {0}")]
    Invalid(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error: {0}")]
    Parse(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LatticeKind {
    /// Bipartite torus of side `2L`; boundary is the origin alone.
    Torus { l: usize },
    /// Box `{1..L}^d`; boundary is the outer shell.
    Box { l: usize },
    Custom,
}

/// Finite graph with a fixed edge orientation, a pinned boundary set and
/// boundary values. Immutable after construction.
#[derive(Debug, Clone)]
pub struct LatticeGraph {
    pub dimension: usize,
    pub kind: LatticeKind,
    coords: Vec<Vec<i64>>,
    edges: Vec<(u32, u32)>,
    adjacency: Vec<Vec<(u32, u32)>>,
    boundary: Vec<u32>,
    is_boundary: Vec<bool>,
    boundary_values: Vec<f64>,
}

impl LatticeGraph {
    /// Bipartite torus with vertex set `{-L+1, ..., L}^d`, wrap-around
    /// adjacency modulo `2L`, boundary `{0}` pinned to zero. Edges oriented
    /// lexicographically on (tail index, axis).
    pub fn torus(d: usize, l: usize) -> Result<Self, LatticeError> {
        Self::torus_with_budget(d, l, 1 << 24)
    }

    pub fn torus_with_budget(d: usize, l: usize, max_vertices: usize) -> Result<Self, LatticeError> {
        if d < 2 || l < 2 {
            return Err(LatticeError::Invalid(format!("torus requires d >= 2 and L >= 2, got d={d}, L={l}")));
        }
        let side = 2 * l;
        let n = side.checked_pow(d as u32).ok_or(LatticeError::Size { actual: usize::MAX, budget: max_vertices })?;
        if n > max_vertices {
            return Err(LatticeError::Size { actual: n, budget: max_vertices });
        }
        let mut coords = Vec::with_capacity(n);
        for idx in 0..n {
            coords.push(torus_coords(idx, d, l));
        }
        let mut edges = Vec::with_capacity(d * n);
        for idx in 0..n {
            for axis in 0..d {
                let mut c = coords[idx].clone();
                // step +1 with wrap from L back to -L+1
                c[axis] = if c[axis] == l as i64 { -(l as i64) + 1 } else { c[axis] + 1 };
                let head = torus_index(&c, d, l);
                edges.push((idx as u32, head as u32));
            }
        }
        let origin = torus_index(&vec![0; d], d, l);
        Self::assemble(d, LatticeKind::Torus { l }, coords, edges, vec![origin as u32], vec![0.0])
    }

    /// Box `{1..L}^d` with nearest-neighbor adjacency; the boundary set is
    /// every vertex adjacent in `Z^d` to the outside, pinned to zero. For
    /// `L = 2` the shell is the whole vertex set; such graphs can still be
    /// built for enumeration oracles but cannot be sampled.
    pub fn boxed(d: usize, l: usize) -> Result<Self, LatticeError> {
        Self::boxed_with_budget(d, l, 1 << 24)
    }

    pub fn boxed_with_budget(d: usize, l: usize, max_vertices: usize) -> Result<Self, LatticeError> {
        if d < 2 || l < 2 {
            return Err(LatticeError::Invalid(format!("box requires d >= 2 and L >= 2, got d={d}, L={l}")));
        }
        let n = l.checked_pow(d as u32).ok_or(LatticeError::Size { actual: usize::MAX, budget: max_vertices })?;
        if n > max_vertices {
            return Err(LatticeError::Size { actual: n, budget: max_vertices });
        }
        let mut coords = Vec::with_capacity(n);
        for idx in 0..n {
            coords.push(box_coords(idx, d, l));
        }
        let mut edges = Vec::new();
        let mut boundary = Vec::new();
        for idx in 0..n {
            let c = &coords[idx];
            if c.iter().any(|&x| x == 1 || x == l as i64) {
                boundary.push(idx as u32);
            }
            for axis in 0..d {
                if c[axis] < l as i64 {
                    let mut cc = c.clone();
                    cc[axis] += 1;
                    edges.push((idx as u32, box_index(&cc, d, l) as u32));
                }
            }
        }
        let values = vec![0.0; boundary.len()];
        Self::assemble(d, LatticeKind::Box { l }, coords, edges, boundary, values)
    }

    /// Custom graph from an oriented edge list. `boundary` must be a proper
    /// nonempty subset for the graph to be samplable; enumeration oracles do
    /// not use it.
    pub fn custom(
        n: usize,
        edges: Vec<(u32, u32)>,
        boundary: Vec<u32>,
        boundary_values: Vec<f64>,
    ) -> Result<Self, LatticeError> {
        let coords = (0..n).map(|i| vec![i as i64]).collect();
        Self::assemble(1, LatticeKind::Custom, coords, edges, boundary, boundary_values)
    }

    fn assemble(
        dimension: usize,
        kind: LatticeKind,
        coords: Vec<Vec<i64>>,
        edges: Vec<(u32, u32)>,
        boundary: Vec<u32>,
        boundary_values: Vec<f64>,
    ) -> Result<Self, LatticeError> {
        let n = coords.len();
        if boundary.len() != boundary_values.len() {
            return Err(LatticeError::Invalid("boundary set and values differ in length".into()));
        }
        if boundary.is_empty() {
            return Err(LatticeError::Invalid("boundary set must be nonempty".into()));
        }
        let mut adjacency = vec![Vec::new(); n];
        for (e, &(a, b)) in edges.iter().enumerate() {
            if a as usize >= n || b as usize >= n || a == b {
                return Err(LatticeError::Invalid(format!("bad edge ({a}, {b})")));
            }
            adjacency[a as usize].push((b, e as u32));
            adjacency[b as usize].push((a, e as u32));
        }
        let mut is_boundary = vec![false; n];
        for &v in &boundary {
            if v as usize >= n {
                return Err(LatticeError::Invalid(format!("boundary vertex {v} out of range")));
            }
            is_boundary[v as usize] = true;
        }
        let g = Self { dimension, kind, coords, edges, adjacency, boundary, is_boundary, boundary_values };
        if !g.is_connected() {
            return Err(LatticeError::Invalid("graph must be connected".into()));
        }
        Ok(g)
    }

    pub fn vertex_count(&self) -> usize {
        self.coords.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(u32, u32)] {
        &self.edges
    }

    pub fn coords(&self, v: u32) -> &[i64] {
        &self.coords[v as usize]
    }

    pub fn neighbors(&self, v: u32) -> &[(u32, u32)] {
        &self.adjacency[v as usize]
    }

    pub fn degree(&self, v: u32) -> usize {
        self.adjacency[v as usize].len()
    }

    pub fn boundary_set(&self) -> &[u32] {
        &self.boundary
    }

    pub fn boundary_values(&self) -> &[f64] {
        &self.boundary_values
    }

    pub fn is_pinned(&self, v: u32) -> bool {
        self.is_boundary[v as usize]
    }

    pub fn free_vertices(&self) -> Vec<u32> {
        (0..self.vertex_count() as u32).filter(|&v| !self.is_pinned(v)).collect()
    }

    /// Vertex index of a torus/box lattice coordinate.
    pub fn index_of(&self, coords: &[i64]) -> Option<u32> {
        match self.kind {
            LatticeKind::Torus { l } => Some(torus_index(coords, self.dimension, l) as u32),
            LatticeKind::Box { l } => Some(box_index(coords, self.dimension, l) as u32),
            LatticeKind::Custom => None,
        }
    }

    /// `l^1` distance from the torus origin (with wrap-around).
    pub fn torus_l1_norm(&self, v: u32) -> Option<u64> {
        match self.kind {
            LatticeKind::Torus { l } => {
                let side = 2 * l as i64;
                Some(
                    self.coords[v as usize]
                        .iter()
                        .map(|&c| {
                            let r = c.rem_euclid(side);
                            r.min(side - r) as u64
                        })
                        .sum(),
                )
            }
            _ => None,
        }
    }

    fn is_connected(&self) -> bool {
        let n = self.vertex_count();
        if n == 0 {
            return false;
        }
        let mut seen = vec![false; n];
        let mut stack = vec![0u32];
        seen[0] = true;
        let mut count = 1;
        while let Some(v) = stack.pop() {
            for &(w, _) in &self.adjacency[v as usize] {
                if !seen[w as usize] {
                    seen[w as usize] = true;
                    count += 1;
                    stack.push(w);
                }
            }
        }
        count == n
    }

    /// Edges with exactly one endpoint in `X`.
    pub fn edge_boundary(&self, in_x: &[bool]) -> Vec<u32> {
        self.edges
            .iter()
            .enumerate()
            .filter(|(_, &(a, b))| in_x[a as usize] != in_x[b as usize])
            .map(|(e, _)| e as u32)
            .collect()
    }

    /// Neighbor bitmasks for mask-based enumeration; requires at most 63
    /// vertices.
    pub fn neighbor_masks(&self) -> Vec<u64> {
        let n = self.vertex_count();
        assert!(n <= 63, "mask enumeration requires <= 63 vertices");
        let mut masks = vec![0u64; n];
        for &(a, b) in &self.edges {
            masks[a as usize] |= 1 << b;
            masks[b as usize] |= 1 << a;
        }
        masks
    }

    /// The class `C(G)`: all proper nonempty `X` with both `G|_X` and its
    /// complement connected, by exhaustive scan.
    pub fn connected_cuts(&self, budget: usize) -> Result<Vec<u64>, LatticeError> {
        let n = self.vertex_count();
        if n > budget || n > 63 {
            return Err(LatticeError::Size { actual: n, budget: budget.min(63) });
        }
        let masks = self.neighbor_masks();
        let full = if n == 64 { u64::MAX } else { (1u64 << n) - 1 };
        let mut cuts = Vec::new();
        for x in 1..full {
            if mask_connected(x, &masks) && mask_connected(full & !x, &masks) {
                cuts.push(x);
            }
        }
        Ok(cuts)
    }

    /// `|{X in C(G) : a in X, |X| <= 3|V|/4, |boundary X| = m}|`.
    pub fn count_connected_cuts(&self, a: u32, m: usize, budget: usize) -> Result<u64, LatticeError> {
        let n = self.vertex_count();
        if n > budget || n > 63 {
            return Err(LatticeError::Size { actual: n, budget: budget.min(63) });
        }
        let masks = self.neighbor_masks();
        let full = if n == 64 { u64::MAX } else { (1u64 << n) - 1 };
        let abit = 1u64 << a;
        let limit = 3 * n / 4;
        let mut count = 0u64;
        for x in 1..full {
            if x & abit == 0 || (x.count_ones() as usize) > limit {
                continue;
            }
            if boundary_size(x, &masks) != m {
                continue;
            }
            if mask_connected(x, &masks) && mask_connected(full & !x, &masks) {
                count += 1;
            }
        }
        Ok(count)
    }

    /// Level-indexed isoperimetry bounds around `v`.
    pub fn isoperimetry_profile(
        &self,
        v: u32,
        mode: ProfileMode,
        budget: usize,
    ) -> Result<IsoperimetryProfile, LatticeError> {
        match mode {
            ProfileMode::Exact => self.exact_profile(v, budget),
            ProfileMode::Analytic { percolated } => self.analytic_profile(percolated),
        }
    }

    fn exact_profile(&self, v: u32, budget: usize) -> Result<IsoperimetryProfile, LatticeError> {
        let n = self.vertex_count();
        if n > budget || n > 63 {
            return Err(LatticeError::Size { actual: n, budget: budget.min(63) });
        }
        let level_count = level_count_for(n);
        let masks = self.neighbor_masks();
        let full = if n == 64 { u64::MAX } else { (1u64 << n) - 1 };
        let vbit = 1u64 << v;
        let mut levels = vec![LevelBounds { max_edge_count: None, min_boundary: None }; level_count];
        for x in 1..full {
            if x & vbit == 0 {
                continue;
            }
            let size = x.count_ones() as usize;
            let Some(level) = level_of_size(size, n, level_count) else { continue };
            if !(mask_connected(x, &masks) && mask_connected(full & !x, &masks)) {
                continue;
            }
            let boundary = boundary_size(x, &masks) as f64;
            let inner = inner_edge_count(x, &masks) as f64;
            let slot = &mut levels[level - 1];
            slot.max_edge_count = Some(slot.max_edge_count.unwrap_or(f64::NEG_INFINITY).max(inner + boundary));
            slot.min_boundary = Some(slot.min_boundary.unwrap_or(f64::INFINITY).min(boundary));
        }
        Ok(IsoperimetryProfile { level_count, levels, mode: ProfileMode::Exact })
    }

    /// Analytic profile for torus/box kinds. `M` levels use the degree bound
    /// `2 d ceil(N / 2^i)`; `m` levels use the box isoperimetric inequality
    /// `ceil((N / 2^{i+1})^{(d-1)/d})`, halved for percolated components.
    fn analytic_profile(&self, percolated: bool) -> Result<IsoperimetryProfile, LatticeError> {
        if !matches!(self.kind, LatticeKind::Torus { .. } | LatticeKind::Box { .. }) {
            return Err(LatticeError::Mode { required: "torus or box", actual: "custom" });
        }
        let n = self.vertex_count();
        let d = self.dimension as f64;
        let level_count = level_count_for(n);
        let kappa_m = if percolated { 0.5 } else { 1.0 };
        let levels = (1..=level_count)
            .map(|i| {
                let upper = (n as f64 / 2f64.powi(i as i32)).ceil();
                let lower_size = n as f64 / 2f64.powi(i as i32 + 1);
                LevelBounds {
                    max_edge_count: Some(2.0 * d * upper),
                    min_boundary: Some(kappa_m * lower_size.powf((d - 1.0) / d).ceil()),
                }
            })
            .collect();
        Ok(IsoperimetryProfile {
            level_count,
            levels,
            mode: ProfileMode::Analytic { percolated },
        })
    }

    /// Checks `|boundary X| >= |X|^{(d-1)/d}` over every subset with
    /// `|X| <= 3 N / 4` (all subsets, not only connected ones).
    pub fn verify_box_isoperimetry(&self, budget: usize) -> Result<IsoperimetryReport, LatticeError> {
        if !matches!(self.kind, LatticeKind::Box { .. }) {
            return Err(LatticeError::Mode { required: "box", actual: "other" });
        }
        let n = self.vertex_count();
        if n > budget || n > 63 {
            return Err(LatticeError::Size { actual: n, budget: budget.min(63) });
        }
        let masks = self.neighbor_masks();
        let full = if n == 64 { u64::MAX } else { (1u64 << n) - 1 };
        let exponent = (self.dimension as f64 - 1.0) / self.dimension as f64;
        let limit = 3 * n / 4;
        let mut min_slack = f64::INFINITY;
        let mut witness = 0u64;
        let mut scanned = 0u64;
        for x in 0..=full {
            scanned += 1;
            let size = x.count_ones() as usize;
            if size == 0 || size > limit {
                continue;
            }
            let slack = boundary_size(x, &masks) as f64 - (size as f64).powf(exponent);
            if slack < min_slack {
                min_slack = slack;
                witness = x;
            }
        }
        Ok(IsoperimetryReport { scanned, min_slack, witness, pass: min_slack >= 0.0 })
    }

    /// Whether the boundary of `X` induces a connected subgraph of the
    /// edge-midpoint graph (vertices are lattice edges, adjacent when the
    /// midpoints lie at `l^inf` distance in `(0, 1]`).
    pub fn boundary_connectivity_check(&self, in_x: &[bool]) -> Result<bool, LatticeError> {
        if !matches!(self.kind, LatticeKind::Box { .. }) {
            return Err(LatticeError::Mode { required: "box", actual: "other" });
        }
        let boundary = self.edge_boundary(in_x);
        if boundary.len() <= 1 {
            return Ok(true);
        }
        // Doubled midpoints keep everything in integers: distance in (0, 1]
        // on midpoints is distance in (0, 2] on coordinate sums.
        let mids: Vec<Vec<i64>> = boundary
            .iter()
            .map(|&e| {
                let (a, b) = self.edges[e as usize];
                self.coords[a as usize]
                    .iter()
                    .zip(&self.coords[b as usize])
                    .map(|(&x, &y)| x + y)
                    .collect()
            })
            .collect();
        let k = boundary.len();
        let mut adj = vec![Vec::new(); k];
        for i in 0..k {
            for j in i + 1..k {
                let dist = mids[i]
                    .iter()
                    .zip(&mids[j])
                    .map(|(&x, &y)| (x - y).abs())
                    .max()
                    .unwrap_or(0);
                if dist > 0 && dist <= 2 {
                    adj[i].push(j);
                    adj[j].push(i);
                }
            }
        }
        let mut seen = vec![false; k];
        let mut stack = vec![0usize];
        seen[0] = true;
        let mut count = 1;
        while let Some(i) = stack.pop() {
            for &j in &adj[i] {
                if !seen[j] {
                    seen[j] = true;
                    count += 1;
                    stack.push(j);
                }
            }
        }
        Ok(count == k)
    }

    /// Connected component of `a` in the spanning subgraph `(V, retained)`.
    pub fn percolation_component(&self, retained: &[bool], a: u32) -> Component {
        assert_eq!(retained.len(), self.edge_count());
        let n = self.vertex_count();
        let mut seen = vec![false; n];
        seen[a as usize] = true;
        let mut order = vec![a];
        let mut head = 0;
        while head < order.len() {
            let v = order[head];
            head += 1;
            for &(w, e) in &self.adjacency[v as usize] {
                if retained[e as usize] && !seen[w as usize] {
                    seen[w as usize] = true;
                    order.push(w);
                }
            }
        }
        order.sort_unstable();
        let mut local_index = vec![u32::MAX; n];
        for (i, &v) in order.iter().enumerate() {
            local_index[v as usize] = i as u32;
        }
        let mut local_edges = Vec::new();
        for (e, &(u, w)) in self.edges.iter().enumerate() {
            if retained[e] && seen[u as usize] && seen[w as usize] {
                local_edges.push((local_index[u as usize], local_index[w as usize], e as u32));
            }
        }
        Component { vertices: order, edges: local_edges }
    }

    /// Lemma-style anchored isoperimetry events for the percolated box:
    /// whether `b` joined the component of `a`, and whether every connected
    /// cut of the component containing `a` with at most half the component
    /// satisfies the halved isoperimetric inequality.
    pub fn anchored_isoperimetry_events(
        &self,
        retained: &[bool],
        a: u32,
        b: u32,
        budget: usize,
    ) -> Result<(bool, bool), LatticeError> {
        if !matches!(self.kind, LatticeKind::Box { .. }) {
            return Err(LatticeError::Mode { required: "box", actual: "other" });
        }
        let comp = self.percolation_component(retained, a);
        let event1 = comp.vertices.binary_search(&b).is_ok();
        let k = comp.vertices.len();
        if k > budget || k > 63 {
            return Err(LatticeError::Size { actual: k, budget: budget.min(63) });
        }
        let mut masks = vec![0u64; k];
        for &(u, w, _) in &comp.edges {
            masks[u as usize] |= 1 << w;
            masks[w as usize] |= 1 << u;
        }
        let full = if k == 64 { u64::MAX } else { (1u64 << k) - 1 };
        let a_local = comp.vertices.binary_search(&a).unwrap() as u32;
        let abit = 1u64 << a_local;
        let exponent = (self.dimension as f64 - 1.0) / self.dimension as f64;
        let mut event2 = true;
        if k > 1 {
            for x in 1..full {
                if x & abit == 0 || 2 * (x.count_ones() as usize) > k {
                    continue;
                }
                if !(mask_connected(x, &masks) && mask_connected(full & !x, &masks)) {
                    continue;
                }
                let boundary = boundary_size(x, &masks) as f64;
                if boundary < 0.5 * (x.count_ones() as f64).powf(exponent) {
                    event2 = false;
                    break;
                }
            }
        }
        Ok((event1, event2))
    }

    /// Axis-parity edge classes of the torus: the class of an edge aligned
    /// with axis `j` records the parities of all other coordinates. The
    /// `d 2^{d-1}` classes partition the edge set.
    pub fn axis_parity_classes(&self) -> Result<Vec<AxisParityClass>, LatticeError> {
        if !matches!(self.kind, LatticeKind::Torus { .. }) {
            return Err(LatticeError::Mode { required: "torus", actual: "other" });
        }
        let d = self.dimension;
        let mut classes: Vec<AxisParityClass> = Vec::new();
        let mut slot = vec![usize::MAX; d << d];
        for (e, &(a, b)) in self.edges.iter().enumerate() {
            let ca = &self.coords[a as usize];
            let cb = &self.coords[b as usize];
            let axis = (0..d).find(|&j| ca[j] != cb[j]).expect("parallel edge");
            let mut parity = vec![0u8; d];
            let mut key = axis;
            for j in 0..d {
                if j != axis {
                    parity[j] = ca[j].rem_euclid(2) as u8;
                }
                key = key << 1 | parity[j] as usize;
            }
            let idx = if slot[key] == usize::MAX {
                slot[key] = classes.len();
                classes.push(AxisParityClass { axis, parity, edges: Vec::new() });
                classes.len() - 1
            } else {
                slot[key]
            };
            classes[idx].edges.push(e as u32);
        }
        classes.sort_by(|x, y| (x.axis, &x.parity).cmp(&(y.axis, &y.parity)));
        Ok(classes)
    }

    /// Content hash over structure and boundary data (checkpoint headers).
    pub fn content_hash(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update((self.dimension as u64).to_le_bytes());
        h.update((self.vertex_count() as u64).to_le_bytes());
        for c in &self.coords {
            for &x in c {
                h.update(x.to_le_bytes());
            }
        }
        for &(a, b) in &self.edges {
            h.update(a.to_le_bytes());
            h.update(b.to_le_bytes());
        }
        for (&v, &val) in self.boundary.iter().zip(&self.boundary_values) {
            h.update(v.to_le_bytes());
            h.update(val.to_le_bytes());
        }
        h.finalize().into()
    }

    /// Export in the `# lattice v1` adjacency text format.
    pub fn save(&self, path: &Path) -> Result<(), LatticeError> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(out, "# lattice v1")?;
        writeln!(out, "vertices {}", self.vertex_count())?;
        writeln!(out, "dimension {}", self.dimension)?;
        for &(a, b) in &self.edges {
            writeln!(out, "{a} {b}")?;
        }
        writeln!(out, "coordinates")?;
        for c in &self.coords {
            let parts: Vec<String> = c.iter().map(|x| x.to_string()).collect();
            writeln!(out, "{}", parts.join(" "))?;
        }
        writeln!(out, "boundary")?;
        for (&v, &val) in self.boundary.iter().zip(&self.boundary_values) {
            writeln!(out, "{v} {val}")?;
        }
        Ok(())
    }

    /// Import a custom graph from the `# lattice v1` format.
    pub fn load(path: &Path) -> Result<Self, LatticeError> {
        let file = std::fs::File::open(path)?;
        let mut lines = std::io::BufReader::new(file).lines();
        let header = lines.next().transpose()?.unwrap_or_default();
        if header.trim() != "# lattice v1" {
            return Err(LatticeError::Parse("missing `# lattice v1` header".into()));
        }
        let mut n = 0usize;
        let mut dimension = 1usize;
        let mut edges = Vec::new();
        let mut coords: Vec<Vec<i64>> = Vec::new();
        let mut boundary = Vec::new();
        let mut values = Vec::new();
        #[derive(PartialEq)]
        enum Section {
            Edges,
            Coords,
            Boundary,
        }
        let mut section = Section::Edges;
        for line in lines {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(rest) = line.strip_prefix("vertices ") {
                n = rest.trim().parse().map_err(|_| LatticeError::Parse("bad vertex count".into()))?;
                continue;
            }
            if let Some(rest) = line.strip_prefix("dimension ") {
                dimension = rest.trim().parse().map_err(|_| LatticeError::Parse("bad dimension".into()))?;
                continue;
            }
            match line {
                "coordinates" => {
                    section = Section::Coords;
                    continue;
                }
                "boundary" => {
                    section = Section::Boundary;
                    continue;
                }
                _ => {}
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            match section {
                Section::Edges => {
                    if fields.len() != 2 {
                        return Err(LatticeError::Parse(format!("bad edge line `{line}`")));
                    }
                    let a = fields[0].parse().map_err(|_| LatticeError::Parse("bad tail".into()))?;
                    let b = fields[1].parse().map_err(|_| LatticeError::Parse("bad head".into()))?;
                    edges.push((a, b));
                }
                Section::Coords => {
                    let c: Result<Vec<i64>, _> = fields.iter().map(|f| f.parse()).collect();
                    coords.push(c.map_err(|_| LatticeError::Parse("bad coordinate".into()))?);
                }
                Section::Boundary => {
                    if fields.len() != 2 {
                        return Err(LatticeError::Parse(format!("bad boundary line `{line}`")));
                    }
                    boundary.push(fields[0].parse().map_err(|_| LatticeError::Parse("bad boundary vertex".into()))?);
                    values.push(fields[1].parse().map_err(|_| LatticeError::Parse("bad boundary value".into()))?);
                }
            }
        }
        if coords.is_empty() {
            coords = (0..n).map(|i| vec![i as i64]).collect();
        }
        if coords.len() != n {
            return Err(LatticeError::Parse("coordinate table length mismatch".into()));
        }
        Self::assemble(dimension, LatticeKind::Custom, coords, edges, boundary, values)
    }
}

/// Connected component as original vertex ids plus re-indexed edges
/// `(local tail, local head, original edge id)`.
#[derive(Debug, Clone)]
pub struct Component {
    pub vertices: Vec<u32>,
    pub edges: Vec<(u32, u32, u32)>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ProfileMode {
    Exact,
    Analytic { percolated: bool },
}

#[derive(Debug, Clone, Copy)]
pub struct LevelBounds {
    /// Maximum of `|E(G|_X)| + |boundary X|` over the level, or the analytic
    /// upper bound standing in for it.
    pub max_edge_count: Option<f64>,
    /// Minimum of `|boundary X|` over the level, or the analytic lower bound.
    pub min_boundary: Option<f64>,
}

/// Arrays indexed by dyadic size levels `1..=l` where `2^l <= |V| < 2^{l+1}`;
/// level `i` covers `floor(N/2^{i+1}) < |X| <= floor(N/2^i)`. Undefined
/// levels keep matched `None` pairs.
#[derive(Debug, Clone)]
pub struct IsoperimetryProfile {
    pub level_count: usize,
    pub levels: Vec<LevelBounds>,
    pub mode: ProfileMode,
}

#[derive(Debug, Clone)]
pub struct IsoperimetryReport {
    pub scanned: u64,
    pub min_slack: f64,
    pub witness: u64,
    pub pass: bool,
}

#[derive(Debug, Clone)]
pub struct AxisParityClass {
    pub axis: usize,
    pub parity: Vec<u8>,
    pub edges: Vec<u32>,
}

pub fn level_count_for(n: usize) -> usize {
    let mut l = 0usize;
    while 1usize << (l + 1) <= n {
        l += 1;
    }
    l
}

/// Level of a subset size, if any: `floor(N/2^{i+1}) < size <= floor(N/2^i)`.
pub fn level_of_size(size: usize, n: usize, level_count: usize) -> Option<usize> {
    for i in 1..=level_count {
        if size > n >> (i + 1) && size <= n >> i {
            return Some(i);
        }
    }
    None
}

fn mask_connected(x: u64, masks: &[u64]) -> bool {
    if x == 0 {
        return false;
    }
    let start = 1u64 << x.trailing_zeros();
    let mut seen = start;
    let mut frontier = start;
    while frontier != 0 {
        let mut next = 0u64;
        let mut f = frontier;
        while f != 0 {
            let v = f.trailing_zeros() as usize;
            f &= f - 1;
            next |= masks[v] & x;
        }
        frontier = next & !seen;
        seen |= next;
    }
    seen == x
}

fn boundary_size(x: u64, masks: &[u64]) -> usize {
    let mut count = 0usize;
    let mut f = x;
    while f != 0 {
        let v = f.trailing_zeros() as usize;
        f &= f - 1;
        count += (masks[v] & !x).count_ones() as usize;
    }
    count
}

fn inner_edge_count(x: u64, masks: &[u64]) -> usize {
    let mut twice = 0usize;
    let mut f = x;
    while f != 0 {
        let v = f.trailing_zeros() as usize;
        f &= f - 1;
        twice += (masks[v] & x).count_ones() as usize;
    }
    twice / 2
}

fn torus_coords(idx: usize, d: usize, l: usize) -> Vec<i64> {
    let side = 2 * l;
    let mut rem = idx;
    let mut c = vec![0i64; d];
    for slot in c.iter_mut() {
        *slot = (rem % side) as i64 - (l as i64 - 1);
        rem /= side;
    }
    c
}

fn torus_index(coords: &[i64], d: usize, l: usize) -> usize {
    let side = 2 * l as i64;
    let mut idx = 0usize;
    for j in (0..d).rev() {
        let offset = (coords[j] + l as i64 - 1).rem_euclid(side);
        idx = idx * side as usize + offset as usize;
    }
    idx
}

fn box_coords(idx: usize, d: usize, l: usize) -> Vec<i64> {
    let mut rem = idx;
    let mut c = vec![0i64; d];
    for slot in c.iter_mut() {
        *slot = (rem % l) as i64 + 1;
        rem /= l;
    }
    c
}

fn box_index(coords: &[i64], d: usize, l: usize) -> usize {
    let mut idx = 0usize;
    for j in (0..d).rev() {
        idx = idx * l + (coords[j] - 1) as usize;
    }
    idx
}

/// All connected graphs on `n` labeled vertices, reduced to one canonical
/// representative per isomorphism class (minimal adjacency bitstring over
/// vertex permutations). Feasible for `n <= 7`.
pub fn connected_graphs_up_to_iso(n: usize) -> Vec<Vec<(u32, u32)>> {
    assert!((2..=7).contains(&n));
    let pair_count = n * (n - 1) / 2;
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
    let perms = permutations(n);
    let mut canon_seen = std::collections::HashSet::new();
    let mut result = Vec::new();
    for code in 0u64..(1 << pair_count) {
        let mut adj = vec![0u64; n];
        for (bit, &(i, j)) in pairs.iter().enumerate() {
            if code >> bit & 1 == 1 {
                adj[i] |= 1 << j;
                adj[j] |= 1 << i;
            }
        }
        let full = (1u64 << n) - 1;
        if !mask_connected(full, &adj) {
            continue;
        }
        let mut canon = u64::MAX;
        for perm in &perms {
            let mut relabeled = 0u64;
            for (bit, &(i, j)) in pairs.iter().enumerate() {
                let (pi, pj) = (perm[i], perm[j]);
                let (a, b) = if pi < pj { (pi, pj) } else { (pj, pi) };
                if adj[a] >> b & 1 == 1 {
                    relabeled |= 1 << bit;
                }
            }
            canon = canon.min(relabeled);
        }
        if canon_seen.insert(canon) {
            let mut edges = Vec::new();
            for (bit, &(i, j)) in pairs.iter().enumerate() {
                if canon >> bit & 1 == 1 {
                    edges.push((i as u32, j as u32));
                }
            }
            result.push(edges);
        }
    }
    result
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    let mut items: Vec<usize> = (0..n).collect();
    let mut out = Vec::new();
    heap_permute(&mut items, n, &mut out);
    out
}

fn heap_permute(items: &mut Vec<usize>, k: usize, out: &mut Vec<Vec<usize>>) {
    if k == 1 {
        out.push(items.clone());
        return;
    }
    for i in 0..k {
        heap_permute(items, k - 1, out);
        if k % 2 == 0 {
            items.swap(i, k - 1);
        } else {
            items.swap(0, k - 1);
        }
    }
}
