//! Ground plan of the city.
//!
//! Every method gets a 1x1 plot. Plots of one class form a block, filled
//! row-major from the bottom-left in code-point order of the method name.
//! Blocks and sub-package districts of the same package are packed onto
//! shelves inside their parent district, largest (by method count) first, so
//! the biggest child always sits at the parent's bottom-left corner. Each
//! district keeps a one-cell border, and siblings are separated by a
//! one-cell gap.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::LayoutError;
use crate::model::{MethodId, MethodRegistry};

/// Empty margin inside each district and between siblings, in cells.
pub const BORDER: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Rect {
    pub x: u32,
    pub z: u32,
    pub width: u32,
    pub depth: u32,
}

impl Rect {
    pub fn right(&self) -> u32 {
        self.x + self.width
    }

    pub fn top(&self) -> u32 {
        self.z + self.depth
    }

    /// `true` when `other` lies within this rectangle shrunk by `inset`.
    pub fn contains(&self, other: &Rect, inset: u32) -> bool {
        other.x >= self.x + inset
            && other.z >= self.z + inset
            && other.right() + inset <= self.right()
            && other.top() + inset <= self.top()
    }

    pub fn intersects(&self, other: &Rect) -> bool {
        self.x < other.right() && other.x < self.right() && self.z < other.top() && other.z < self.top()
    }

    fn shifted(self, dx: u32, dz: u32) -> Rect {
        Rect { x: self.x + dx, z: self.z + dz, ..self }
    }
}

/// A method's 1x1 cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Plot {
    pub method: MethodId,
    pub x: u32,
    pub z: u32,
}

impl Plot {
    pub fn rect(&self) -> Rect {
        Rect { x: self.x, z: self.z, width: 1, depth: 1 }
    }
}

/// A class: its methods' plots on a near-square grid.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub class_name: String,
    pub package_path: Vec<String>,
    pub rect: Rect,
    pub plots: Vec<Plot>,
}

/// A package (or sub-package) and everything under it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct District {
    pub package_path: Vec<String>,
    pub rect: Rect,
    /// 0 for top-level districts.
    pub depth: u32,
    pub method_count: usize,
    pub children: Vec<LayoutNode>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayoutNode {
    Block(Block),
    District(District),
}

impl LayoutNode {
    pub fn rect(&self) -> Rect {
        match self {
            LayoutNode::Block(b) => b.rect,
            LayoutNode::District(d) => d.rect,
        }
    }

    pub fn method_count(&self) -> usize {
        match self {
            LayoutNode::Block(b) => b.plots.len(),
            LayoutNode::District(d) => d.method_count,
        }
    }

    /// Sort key name: class name or last package segment.
    pub fn name(&self) -> &str {
        match self {
            LayoutNode::Block(b) => &b.class_name,
            LayoutNode::District(d) => d.package_path.last().map_or("", String::as_str),
        }
    }

    fn shift(&mut self, dx: u32, dz: u32) {
        match self {
            LayoutNode::Block(b) => b.shift(dx, dz),
            LayoutNode::District(d) => d.shift(dx, dz),
        }
    }
}

impl Block {
    fn shift(&mut self, dx: u32, dz: u32) {
        self.rect = self.rect.shifted(dx, dz);
        for plot in &mut self.plots {
            plot.x += dx;
            plot.z += dz;
        }
    }
}

impl District {
    fn shift(&mut self, dx: u32, dz: u32) {
        self.rect = self.rect.shifted(dx, dz);
        for child in &mut self.children {
            child.shift(dx, dz);
        }
    }

    /// This district and all nested districts, depth-first.
    pub fn walk(&self) -> Vec<&District> {
        let mut out = vec![self];
        for child in &self.children {
            if let LayoutNode::District(d) = child {
                out.extend(d.walk());
            }
        }
        out
    }

    /// All blocks under this district, depth-first.
    pub fn blocks(&self) -> Vec<&Block> {
        let mut out = Vec::new();
        for child in &self.children {
            match child {
                LayoutNode::Block(b) => out.push(b),
                LayoutNode::District(d) => out.extend(d.blocks()),
            }
        }
        out
    }
}

/// The whole ground plan for one structure revision.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CityLayout {
    pub rev: u64,
    pub width: u32,
    pub depth: u32,
    pub districts: Vec<District>,
    #[serde(skip)]
    index: BTreeMap<MethodId, Plot>,
}

impl CityLayout {
    /// A city with nothing in it.
    pub fn empty(rev: u64) -> Self {
        CityLayout { rev, width: 0, depth: 0, districts: Vec::new(), index: BTreeMap::new() }
    }

    pub fn plot(&self, method: MethodId) -> Option<&Plot> {
        self.index.get(&method)
    }

    pub fn plots(&self) -> impl Iterator<Item = &Plot> + '_ {
        self.index.values()
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    /// Every district at any depth.
    pub fn all_districts(&self) -> Vec<&District> {
        self.districts.iter().flat_map(District::walk).collect()
    }

    /// Rebuilds the method index, e.g. after deserializing.
    pub fn reindex(&mut self) {
        self.index = self
            .districts
            .iter()
            .flat_map(District::blocks)
            .flat_map(|b| b.plots.iter().map(|p| (p.method, *p)))
            .collect();
    }
}

#[derive(Default)]
struct PackageTree {
    classes: BTreeMap<String, Vec<(String, MethodId)>>,
    packages: BTreeMap<String, PackageTree>,
}

impl PackageTree {
    fn insert(&mut self, path: &[String], class: &str, method: &str, id: MethodId) {
        match path.split_first() {
            None => self.classes.entry(class.to_owned()).or_default().push((method.to_owned(), id)),
            Some((head, rest)) => self.packages.entry(head.clone()).or_default().insert(rest, class, method, id),
        }
    }
}

/// Lays out every method of `registry`. The result depends only on the set
/// of descriptors and the registry revision.
pub fn build_layout(registry: &MethodRegistry) -> Result<CityLayout, LayoutError> {
    if registry.is_empty() {
        return Err(LayoutError::EmptyRegistry);
    }
    let mut root = PackageTree::default();
    for desc in registry.descriptors() {
        root.insert(&desc.package_path, &desc.class_name, &desc.method_name, desc.id);
    }

    let mut tops: Vec<LayoutNode> = Vec::new();
    let default_classes = std::mem::take(&mut root.classes);
    if !default_classes.is_empty() {
        let pkg = PackageTree { classes: default_classes, packages: BTreeMap::new() };
        tops.push(LayoutNode::District(layout_district(&pkg, Vec::new(), 0)));
    }
    for (name, pkg) in &root.packages {
        tops.push(LayoutNode::District(layout_district(pkg, vec![name.clone()], 0)));
    }
    sort_children(&mut tops);
    let (width, depth) = pack(&mut tops, 0);

    let districts: Vec<District> = tops
        .into_iter()
        .map(|n| match n {
            LayoutNode::District(d) => d,
            LayoutNode::Block(_) => unreachable!("top level holds districts only"),
        })
        .collect();
    let mut layout = CityLayout { rev: registry.revision(), width, depth, districts, index: BTreeMap::new() };
    layout.reindex();
    Ok(layout)
}

/// Block for `methods` with origin (0, 0).
fn layout_block(class_name: &str, package_path: &[String], methods: &[(String, MethodId)]) -> Block {
    let mut sorted: Vec<&(String, MethodId)> = methods.iter().collect();
    sorted.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.cmp(&b.1)));
    let n = sorted.len() as u32;
    let cols = ceil_sqrt(n).max(1);
    let rows = n.div_ceil(cols);
    let plots = sorted
        .iter()
        .enumerate()
        .map(|(i, (_, id))| Plot { method: *id, x: i as u32 % cols, z: i as u32 / cols })
        .collect();
    Block {
        class_name: class_name.to_owned(),
        package_path: package_path.to_vec(),
        rect: Rect { x: 0, z: 0, width: cols, depth: rows },
        plots,
    }
}

/// District for `pkg` with origin (0, 0).
fn layout_district(pkg: &PackageTree, path: Vec<String>, depth: u32) -> District {
    let mut children: Vec<LayoutNode> = Vec::new();
    for (class, methods) in &pkg.classes {
        children.push(LayoutNode::Block(layout_block(class, &path, methods)));
    }
    for (name, sub) in &pkg.packages {
        let mut sub_path = path.clone();
        sub_path.push(name.clone());
        children.push(LayoutNode::District(layout_district(sub, sub_path, depth + 1)));
    }
    sort_children(&mut children);
    let (w, d) = pack(&mut children, BORDER);
    let method_count = children.iter().map(LayoutNode::method_count).sum();
    District {
        package_path: path,
        rect: Rect { x: 0, z: 0, width: w + 2 * BORDER, depth: d + 2 * BORDER },
        depth,
        method_count,
        children,
    }
}

/// Descending method count, then name, then districts before blocks.
fn sort_children(children: &mut [LayoutNode]) {
    children.sort_by(|a, b| {
        b.method_count()
            .cmp(&a.method_count())
            .then_with(|| a.name().cmp(b.name()))
            .then_with(|| matches!(a, LayoutNode::Block(_)).cmp(&matches!(b, LayoutNode::Block(_))))
    });
}

/// Shelf-packs `nodes` in order, offset by `(inset, inset)`. Returns the
/// extent of the packed area (without the inset).
fn pack(nodes: &mut [LayoutNode], inset: u32) -> (u32, u32) {
    let area: u64 = nodes.iter().map(|n| u64::from(n.rect().width) * u64::from(n.rect().depth)).sum();
    let widest = nodes.iter().map(|n| n.rect().width).max().unwrap_or(0);
    let cap = shelf_cap(area).max(widest);

    let (mut x, mut z, mut shelf_depth) = (0u32, 0u32, 0u32);
    let (mut width, mut depth) = (0u32, 0u32);
    for node in nodes.iter_mut() {
        let r = node.rect();
        if x > 0 && x + r.width > cap {
            z += shelf_depth + BORDER;
            x = 0;
            shelf_depth = 0;
        }
        node.shift(x + inset, z + inset);
        width = width.max(x + r.width);
        shelf_depth = shelf_depth.max(r.depth);
        depth = depth.max(z + shelf_depth);
        x += r.width + BORDER;
    }
    (width, depth)
}

/// `ceil(ceil(sqrt(area)) * 1.2)`.
fn shelf_cap(area: u64) -> u32 {
    let side = u64::from(ceil_sqrt(u32::try_from(area).unwrap_or(u32::MAX)));
    (side * 12).div_ceil(10) as u32
}

fn ceil_sqrt(n: u32) -> u32 {
    let n = u64::from(n);
    let mut r = (n as f64).sqrt() as u64;
    while r * r < n {
        r += 1;
    }
    while r > 0 && (r - 1) * (r - 1) >= n {
        r -= 1;
    }
    r as u32
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct PlotMove {
    pub method: MethodId,
    pub from: Plot,
    pub to: Plot,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DistrictMove {
    pub package_path: Vec<String>,
    pub from: Rect,
    pub to: Rect,
}

/// Differences between two layout revisions. Districts are matched by
/// package path, plots by method id.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct StructureDelta {
    pub from_rev: u64,
    pub to_rev: u64,
    pub added_plots: Vec<Plot>,
    pub removed_plots: Vec<Plot>,
    pub moved_plots: Vec<PlotMove>,
    pub added_districts: Vec<Vec<String>>,
    pub removed_districts: Vec<Vec<String>>,
    pub moved_districts: Vec<DistrictMove>,
}

impl StructureDelta {
    pub fn is_empty(&self) -> bool {
        self.added_plots.is_empty()
            && self.removed_plots.is_empty()
            && self.moved_plots.is_empty()
            && self.added_districts.is_empty()
            && self.removed_districts.is_empty()
            && self.moved_districts.is_empty()
    }
}

pub fn diff_layout(old: &CityLayout, new: &CityLayout) -> StructureDelta {
    let mut delta = StructureDelta { from_rev: old.rev, to_rev: new.rev, ..Default::default() };
    for (id, before) in &old.index {
        match new.index.get(id) {
            None => delta.removed_plots.push(*before),
            Some(after) if after != before => {
                delta.moved_plots.push(PlotMove { method: *id, from: *before, to: *after })
            }
            Some(_) => {}
        }
    }
    delta.added_plots = new.index.iter().filter(|(id, _)| !old.index.contains_key(id)).map(|(_, p)| *p).collect();

    let rects = |layout: &CityLayout| -> BTreeMap<Vec<String>, Rect> {
        layout.all_districts().into_iter().map(|d| (d.package_path.clone(), d.rect)).collect()
    };
    let (before, after) = (rects(old), rects(new));
    let paths: BTreeSet<&Vec<String>> = before.keys().chain(after.keys()).collect();
    for path in paths {
        match (before.get(path), after.get(path)) {
            (Some(_), None) => delta.removed_districts.push(path.clone()),
            (None, Some(_)) => delta.added_districts.push(path.clone()),
            (Some(a), Some(b)) if a != b => {
                delta.moved_districts.push(DistrictMove { package_path: path.clone(), from: *a, to: *b })
            }
            _ => {}
        }
    }
    delta
}
