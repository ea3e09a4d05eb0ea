//! Formal concept analysis over binarized records.
//!
//! Attributes are packed into a `u64`, so a context holds at most 64 of
//! them. Objects are stored as their attribute masks; extents are
//! [`ObjSet`] bitsets. Concepts are enumerated with NextClosure in lectic
//! order (attribute 0 is the most significant position), and the
//! Duquenne–Guigues basis is built with the same enumeration over the
//! implication-closure operator.

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Dataset;
use crate::prob::argmax;
use crate::shadow_tree::Predictor;

/// Hard limit imposed by the `u64` attribute mask.
pub const MAX_ATTRIBUTES: usize = 64;

pub type AttrSet = u64;

#[derive(Debug, Error)]
pub enum FcaError {
    #[error("{got} attributes exceed the cap of {cap}; use coarser bins or fewer features")]
    TooManyAttributes { got: usize, cap: usize },
    #[error("more than {0} concepts; use coarser bins or fewer records")]
    TooManyConcepts(usize),
    #[error("duplicate attribute name `{0}`")]
    DuplicateAttribute(String),
    #[error("bin spec: {0}")]
    BadBins(String),
    #[error("feature {feature} value {value} is not finite")]
    NonFinite { feature: usize, value: f64 },
    #[error("record intent uses attributes outside the lattice's {0} attributes")]
    UnknownAttributes(usize),
    #[error("record has {got} features, bins expect at least {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("labels: {0}")]
    Labels(String),
    #[error("cxt line {line}: {message}")]
    Cxt { line: usize, message: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

fn full_mask(m: usize) -> AttrSet {
    if m == 64 {
        u64::MAX
    } else {
        (1u64 << m) - 1
    }
}

/// Fixed-size object bitset.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ObjSet {
    len: usize,
    words: Vec<u64>,
}

impl ObjSet {
    pub fn empty(len: usize) -> Self {
        ObjSet {
            len,
            words: vec![0; len.div_ceil(64)],
        }
    }

    pub fn full(len: usize) -> Self {
        let mut s = ObjSet::empty(len);
        for i in 0..len {
            s.insert(i);
        }
        s
    }

    pub fn insert(&mut self, i: usize) {
        self.words[i / 64] |= 1 << (i % 64);
    }

    pub fn contains(&self, i: usize) -> bool {
        self.words[i / 64] >> (i % 64) & 1 == 1
    }

    pub fn count(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn universe(&self) -> usize {
        self.len
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len).filter(|&i| self.contains(i))
    }

    pub fn is_subset(&self, other: &ObjSet) -> bool {
        self.words.iter().zip(&other.words).all(|(a, b)| a & !b == 0)
    }
}

/// Binary object × attribute relation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FormalContext {
    pub objects: Vec<String>,
    pub attributes: Vec<String>,
    /// Attribute mask per object.
    pub rows: Vec<AttrSet>,
}

impl FormalContext {
    pub fn new(
        objects: Vec<String>,
        attributes: Vec<String>,
        rows: Vec<AttrSet>,
    ) -> Result<Self, FcaError> {
        if attributes.len() > MAX_ATTRIBUTES {
            return Err(FcaError::TooManyAttributes {
                got: attributes.len(),
                cap: MAX_ATTRIBUTES,
            });
        }
        let mut seen = std::collections::HashSet::new();
        for a in &attributes {
            if !seen.insert(a) {
                return Err(FcaError::DuplicateAttribute(a.clone()));
            }
        }
        if objects.len() != rows.len() {
            return Err(FcaError::Labels(format!(
                "{} object names for {} rows",
                objects.len(),
                rows.len()
            )));
        }
        let full = full_mask(attributes.len());
        let rows = rows.into_iter().map(|r| r & full).collect();
        Ok(FormalContext {
            objects,
            attributes,
            rows,
        })
    }

    /// Context with objects named `o0..`.
    pub fn from_rows(attributes: Vec<String>, rows: Vec<AttrSet>) -> Result<Self, FcaError> {
        let objects = (0..rows.len()).map(|i| format!("o{i}")).collect();
        FormalContext::new(objects, attributes, rows)
    }

    pub fn object_count(&self) -> usize {
        self.rows.len()
    }

    pub fn attribute_count(&self) -> usize {
        self.attributes.len()
    }

    pub fn all_attributes(&self) -> AttrSet {
        full_mask(self.attribute_count())
    }

    pub fn has(&self, object: usize, attribute: usize) -> bool {
        self.rows[object] >> attribute & 1 == 1
    }

    /// Attributes shared by every object in `extent`.
    pub fn prime_objects(&self, extent: &ObjSet) -> AttrSet {
        extent
            .iter()
            .fold(self.all_attributes(), |acc, g| acc & self.rows[g])
    }

    /// Objects having every attribute in `intent`.
    pub fn prime_attrs(&self, intent: AttrSet) -> ObjSet {
        let mut e = ObjSet::empty(self.object_count());
        for (g, &row) in self.rows.iter().enumerate() {
            if row & intent == intent {
                e.insert(g);
            }
        }
        e
    }

    /// `intent''` without materialising the extent.
    pub fn closure(&self, intent: AttrSet) -> AttrSet {
        self.rows
            .iter()
            .filter(|&&row| row & intent == intent)
            .fold(self.all_attributes(), |acc, &row| acc & row)
    }

    /// Number of objects having every attribute in `intent`.
    pub fn support(&self, intent: AttrSet) -> usize {
        self.rows.iter().filter(|&&row| row & intent == intent).count()
    }

    /// Restriction to the objects in `keep`, in order.
    pub fn restrict(&self, keep: &[usize]) -> FormalContext {
        FormalContext {
            objects: keep.iter().map(|&i| self.objects[i].clone()).collect(),
            attributes: self.attributes.clone(),
            rows: keep.iter().map(|&i| self.rows[i]).collect(),
        }
    }

    pub fn attr_names(&self, set: AttrSet) -> Vec<&str> {
        (0..self.attribute_count())
            .filter(|&a| set >> a & 1 == 1)
            .map(|a| self.attributes[a].as_str())
            .collect()
    }

    /// Burmeister `.cxt` text.
    pub fn write_cxt<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "B\n")?;
        writeln!(w, "{}", self.object_count())?;
        writeln!(w, "{}\n", self.attribute_count())?;
        for o in &self.objects {
            writeln!(w, "{o}")?;
        }
        for a in &self.attributes {
            writeln!(w, "{a}")?;
        }
        for g in 0..self.object_count() {
            let line: String = (0..self.attribute_count())
                .map(|m| if self.has(g, m) { 'X' } else { '.' })
                .collect();
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    pub fn to_cxt(&self) -> String {
        let mut buf = Vec::new();
        self.write_cxt(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("names are valid UTF-8")
    }

    /// Parses Burmeister `.cxt` text.
    pub fn read_cxt<R: BufRead>(r: R) -> Result<FormalContext, FcaError> {
        let mut lines = r.lines().enumerate().map(|(i, l)| (i + 1, l));
        let mut next = |skip_blank: bool| -> Result<(usize, String), FcaError> {
            loop {
                match lines.next() {
                    Some((n, l)) => {
                        let l = l?;
                        let l = l.trim_end_matches('\r').to_string();
                        if skip_blank && l.trim().is_empty() {
                            continue;
                        }
                        return Ok((n, l));
                    }
                    None => {
                        return Err(FcaError::Cxt {
                            line: 0,
                            message: "unexpected end of file".into(),
                        })
                    }
                }
            }
        };
        let (n, head) = next(true)?;
        if head.trim() != "B" {
            return Err(FcaError::Cxt {
                line: n,
                message: format!("expected `B`, found `{head}`"),
            });
        }
        let mut count = |what: &str| -> Result<usize, FcaError> {
            let (n, l) = next(true)?;
            l.trim().parse().map_err(|_| FcaError::Cxt {
                line: n,
                message: format!("bad {what} count `{l}`"),
            })
        };
        let g = count("object")?;
        let m = count("attribute")?;
        let mut objects = Vec::with_capacity(g);
        for i in 0..g {
            objects.push(next(i == 0)?.1);
        }
        let mut attributes = Vec::with_capacity(m);
        for _ in 0..m {
            attributes.push(next(false)?.1);
        }
        let mut rows = Vec::with_capacity(g);
        for _ in 0..g {
            let (n, l) = next(false)?;
            let l = l.trim();
            if l.chars().count() != m {
                return Err(FcaError::Cxt {
                    line: n,
                    message: format!("expected {m} incidence marks, found {}", l.chars().count()),
                });
            }
            let mut row = 0u64;
            for (a, ch) in l.chars().enumerate() {
                match ch {
                    'X' | 'x' => row |= 1 << a,
                    '.' => {}
                    c => {
                        return Err(FcaError::Cxt {
                            line: n,
                            message: format!("unexpected incidence mark `{c}`"),
                        })
                    }
                }
            }
            rows.push(row);
        }
        FormalContext::new(objects, attributes, rows)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Concept {
    pub extent: ObjSet,
    pub intent: AttrSet,
}

/// Limits for concept enumeration.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FcaLimits {
    pub max_attributes: usize,
    pub max_concepts: Option<usize>,
}

impl Default for FcaLimits {
    fn default() -> Self {
        FcaLimits {
            max_attributes: MAX_ATTRIBUTES,
            max_concepts: None,
        }
    }
}

impl FcaLimits {
    fn check(&self, ctx: &FormalContext) -> Result<(), FcaError> {
        let cap = self.max_attributes.min(MAX_ATTRIBUTES);
        if ctx.attribute_count() > cap {
            return Err(FcaError::TooManyAttributes {
                got: ctx.attribute_count(),
                cap,
            });
        }
        Ok(())
    }
}

/// Position `i` in lectic order is bit `m - 1 - i`, so attribute 0 is the
/// most significant. These helpers work on attribute indices directly.
fn lectic_next<F: Fn(AttrSet) -> AttrSet>(a: AttrSet, m: usize, close: &F) -> Option<AttrSet> {
    for i in (0..m).rev() {
        let bit = 1u64 << i;
        if a & bit != 0 {
            continue;
        }
        let lower = bit - 1; // attributes < i
        let b = close((a & lower) | bit);
        if (b & !a) & lower == 0 {
            return Some(b);
        }
    }
    None
}

/// All concepts of `ctx` in lectic order of their intents.
pub fn concepts(ctx: &FormalContext) -> Result<Vec<Concept>, FcaError> {
    concepts_with(ctx, &FcaLimits::default())
}

pub fn concepts_with(ctx: &FormalContext, limits: &FcaLimits) -> Result<Vec<Concept>, FcaError> {
    limits.check(ctx)?;
    let m = ctx.attribute_count();
    let close = |a| ctx.closure(a);
    let mut out = Vec::new();
    let mut a = close(0);
    loop {
        if limits.max_concepts.is_some_and(|cap| out.len() >= cap) {
            return Err(FcaError::TooManyConcepts(limits.max_concepts.unwrap_or(0)));
        }
        out.push(Concept {
            extent: ctx.prime_attrs(a),
            intent: a,
        });
        match lectic_next(a, m, &close) {
            Some(b) => a = b,
            None => break,
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Implication {
    pub premise: AttrSet,
    pub conclusion: AttrSet,
    /// Objects having the premise.
    pub support: usize,
}

impl Implication {
    pub fn render(&self, ctx: &FormalContext) -> String {
        format!(
            "{{{}}} -> {{{}}} [support={}]",
            ctx.attr_names(self.premise).join(", "),
            ctx.attr_names(self.conclusion).join(", "),
            self.support
        )
    }
}

/// Closure of `a` under `basis`: repeatedly add conclusions of implications
/// whose premise is contained in `a`.
pub fn implication_closure(basis: &[Implication], mut a: AttrSet) -> AttrSet {
    loop {
        let before = a;
        for imp in basis {
            if imp.premise & a == imp.premise {
                a |= imp.conclusion;
            }
        }
        if a == before {
            return a;
        }
    }
}

/// Like [`implication_closure`] but only fires implications whose premise is
/// a proper subset of the current set.
fn pseudo_closure(basis: &[Implication], mut a: AttrSet) -> AttrSet {
    loop {
        let before = a;
        for imp in basis {
            if imp.premise & a == imp.premise && imp.premise != a {
                a |= imp.conclusion;
            }
        }
        if a == before {
            return a;
        }
    }
}

/// Duquenne–Guigues basis, in lectic order of premises. Conclusions exclude
/// premise attributes.
pub fn implications(ctx: &FormalContext) -> Result<Vec<Implication>, FcaError> {
    implications_with(ctx, &FcaLimits::default())
}

pub fn implications_with(
    ctx: &FormalContext,
    limits: &FcaLimits,
) -> Result<Vec<Implication>, FcaError> {
    limits.check(ctx)?;
    let m = ctx.attribute_count();
    let mut basis: Vec<Implication> = Vec::new();
    let mut a: AttrSet = 0;
    let mut visited = 0usize;
    loop {
        visited += 1;
        if limits.max_concepts.is_some_and(|cap| visited > 2 * cap) {
            return Err(FcaError::TooManyConcepts(limits.max_concepts.unwrap_or(0)));
        }
        let closed = ctx.closure(a);
        if closed != a {
            basis.push(Implication {
                premise: a,
                conclusion: closed & !a,
                support: ctx.support(a),
            });
        }
        let next = {
            let b = &basis;
            lectic_next(a, m, &|x| pseudo_closure(b, x))
        };
        match next {
            Some(b) => a = b,
            None => break,
        }
    }
    Ok(basis)
}

/// Implications one per line.
pub fn implications_text(ctx: &FormalContext, basis: &[Implication]) -> String {
    basis.iter().map(|i| i.render(ctx) + "\n").collect()
}

// ---------------------------------------------------------------------------
// Binarization

/// Cut points for one feature. Bin `k` (1-based) holds values in
/// `[cuts[k-2], cuts[k-1])`; values equal to a cut go to the higher bin.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureBins {
    pub feature: usize,
    pub name: String,
    pub cuts: Vec<f64>,
}

impl FeatureBins {
    pub fn bin_count(&self) -> usize {
        self.cuts.len() + 1
    }

    /// Zero-based bin of `v`.
    pub fn bin_of(&self, v: f64) -> usize {
        self.cuts.iter().take_while(|&&c| c <= v).count()
    }

    pub fn attribute_names(&self) -> impl Iterator<Item = String> + '_ {
        (1..=self.bin_count()).map(move |k| format!("{}{k}", self.name))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinSpec {
    pub features: Vec<FeatureBins>,
}

impl BinSpec {
    pub fn validate(&self) -> Result<(), FcaError> {
        for f in &self.features {
            if f.cuts.iter().any(|c| !c.is_finite()) {
                return Err(FcaError::BadBins(format!("`{}` has a non-finite cut", f.name)));
            }
            if f.cuts.windows(2).any(|w| w[0] >= w[1]) {
                return Err(FcaError::BadBins(format!(
                    "`{}` cuts are not strictly increasing",
                    f.name
                )));
            }
        }
        Ok(())
    }

    pub fn attribute_names(&self) -> Vec<String> {
        self.features
            .iter()
            .flat_map(|f| f.attribute_names().collect::<Vec<_>>())
            .collect()
    }

    pub fn attribute_count(&self) -> usize {
        self.features.iter().map(FeatureBins::bin_count).sum()
    }

    /// Feature index of each attribute, in attribute order.
    pub fn attribute_features(&self) -> Vec<usize> {
        self.features
            .iter()
            .flat_map(|f| std::iter::repeat_n(f.feature, f.bin_count()))
            .collect()
    }

    pub fn max_feature(&self) -> Option<usize> {
        self.features.iter().map(|f| f.feature).max()
    }

    /// Attribute mask of one record.
    pub fn intent_of(&self, r: &[f64]) -> Result<AttrSet, FcaError> {
        if let Some(mf) = self.max_feature() {
            if r.len() <= mf {
                return Err(FcaError::DimensionMismatch {
                    expected: mf + 1,
                    got: r.len(),
                });
            }
        }
        let mut mask = 0u64;
        let mut offset = 0;
        for f in &self.features {
            let v = r[f.feature];
            if !v.is_finite() {
                return Err(FcaError::NonFinite {
                    feature: f.feature,
                    value: v,
                });
            }
            mask |= 1 << (offset + f.bin_of(v));
            offset += f.bin_count();
        }
        Ok(mask)
    }

    /// Cuts at the empirical tertiles of each column. Columns with at most
    /// three distinct values get midpoint cuts between those values.
    pub fn tertiles(data: &Dataset) -> BinSpec {
        let features = (0..data.feature_count())
            .map(|j| {
                let mut v: Vec<f64> = data.column(j).filter(|x| x.is_finite()).collect();
                v.sort_by(f64::total_cmp);
                let mut distinct = v.clone();
                distinct.dedup();
                let cuts = if distinct.len() <= 3 {
                    distinct
                        .windows(2)
                        .map(|w| crate::shadow_tree::midpoint(w[0], w[1]))
                        .collect()
                } else {
                    let mut c = vec![v[v.len() / 3], v[2 * v.len() / 3]];
                    c.dedup();
                    // A cut at the minimum would leave bin 1 empty.
                    c.retain(|&x| x > distinct[0]);
                    c
                };
                FeatureBins {
                    feature: j,
                    name: data.feature_names[j].clone(),
                    cuts,
                }
            })
            .collect();
        BinSpec { features }
    }

    /// Replaces cuts for named features, keeping the rest.
    pub fn with_cuts(mut self, name: &str, cuts: Vec<f64>) -> BinSpec {
        for f in &mut self.features {
            if f.name == name {
                f.cuts = cuts.clone();
            }
        }
        self
    }

    /// Applies `map(feature, value)` to every cut, for moving cuts into a
    /// scaled feature space. `map` must be increasing in `value`.
    pub fn map_cuts<F: Fn(usize, f64) -> f64>(&self, map: F) -> BinSpec {
        BinSpec {
            features: self
                .features
                .iter()
                .map(|f| FeatureBins {
                    cuts: f.cuts.iter().map(|&c| map(f.feature, c)).collect(),
                    ..f.clone()
                })
                .collect(),
        }
    }
}

/// Raw-unit cut points for the diabetes features.
pub const DIABETES_CUTS: &[(&str, &[f64])] = &[
    ("Insulin", &[16.0, 166.0]),
    ("Glucose", &[140.0, 200.0]),
    ("Age", &[20.0, 60.0]),
    ("BloodPressure", &[60.0, 90.0]),
];

/// Tertile cuts from `data`, overridden by [`DIABETES_CUTS`] where a feature
/// name matches. Cuts are in raw units.
pub fn diabetes_bins(data: &Dataset) -> BinSpec {
    DIABETES_CUTS
        .iter()
        .fold(BinSpec::tertiles(data), |spec, (name, cuts)| {
            spec.with_cuts(name, cuts.to_vec())
        })
}

/// Context of binarized records. With `include_class_attrs`, attributes
/// `Class0..Class{k-1}` follow the bin attributes.
pub fn binarize(
    data: &Dataset,
    spec: &BinSpec,
    include_class_attrs: bool,
) -> Result<FormalContext, FcaError> {
    spec.validate()?;
    let mut attributes = spec.attribute_names();
    let offset = attributes.len();
    if include_class_attrs {
        attributes.extend((0..data.class_count()).map(|c| format!("Class{c}")));
    }
    if attributes.len() > MAX_ATTRIBUTES {
        return Err(FcaError::TooManyAttributes {
            got: attributes.len(),
            cap: MAX_ATTRIBUTES,
        });
    }
    let rows = data
        .rows
        .iter()
        .zip(&data.labels)
        .map(|(r, &l)| {
            let mut mask = spec.intent_of(r)?;
            if include_class_attrs {
                mask |= 1 << (offset + l);
            }
            Ok(mask)
        })
        .collect::<Result<Vec<_>, FcaError>>()?;
    FormalContext::from_rows(attributes, rows)
}

// ---------------------------------------------------------------------------
// Class lattices and prediction

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassLattice {
    pub class: usize,
    pub object_count: usize,
    pub attribute_count: usize,
    pub concepts: Vec<Concept>,
}

/// One lattice per class over the objects with that label.
pub fn class_lattices(
    ctx: &FormalContext,
    labels: &[usize],
    classes: usize,
    limits: &FcaLimits,
) -> Result<Vec<ClassLattice>, FcaError> {
    if labels.len() != ctx.object_count() {
        return Err(FcaError::Labels(format!(
            "{} labels for {} objects",
            labels.len(),
            ctx.object_count()
        )));
    }
    if let Some(&l) = labels.iter().find(|&&l| l >= classes) {
        return Err(FcaError::Labels(format!("label {l} out of range for {classes} classes")));
    }
    (0..classes)
        .into_par_iter()
        .map(|c| {
            let keep: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
            let sub = ctx.restrict(&keep);
            Ok(ClassLattice {
                class: c,
                object_count: keep.len(),
                attribute_count: ctx.attribute_count(),
                concepts: concepts_with(&sub, limits)?,
            })
        })
        .collect()
}

/// Best support-weighted intent overlap of `intent` with any concept of
/// the lattice that has a non-empty intent.
pub fn lattice_score(lattice: &ClassLattice, intent: AttrSet) -> f64 {
    if lattice.object_count == 0 {
        return 0.0;
    }
    let g = lattice.object_count as f64;
    lattice
        .concepts
        .iter()
        .filter(|c| c.intent != 0)
        .map(|c| {
            let overlap = (c.intent & intent).count_ones() as f64 / c.intent.count_ones() as f64;
            overlap * (c.extent.count() as f64 / g)
        })
        .fold(0.0, f64::max)
}

/// Predicted class (lowest index on ties) and per-class scores.
pub fn fca_predict(
    lattices: &[ClassLattice],
    intent: AttrSet,
) -> Result<(usize, Vec<f64>), FcaError> {
    let m = lattices.first().map_or(0, |l| l.attribute_count);
    if intent & !full_mask(m) != 0 {
        return Err(FcaError::UnknownAttributes(m));
    }
    let scores: Vec<f64> = lattices.iter().map(|l| lattice_score(l, intent)).collect();
    Ok((argmax(&scores), scores))
}

/// Bin spec plus per-class lattices, usable as a record classifier.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FcaModel {
    pub bins: BinSpec,
    pub attributes: Vec<String>,
    pub lattices: Vec<ClassLattice>,
}

impl FcaModel {
    pub fn fit(data: &Dataset, bins: BinSpec, limits: &FcaLimits) -> Result<FcaModel, FcaError> {
        let ctx = binarize(data, &bins, false)?;
        let lattices = class_lattices(&ctx, &data.labels, data.class_count(), limits)?;
        Ok(FcaModel {
            bins,
            attributes: ctx.attributes,
            lattices,
        })
    }

    pub fn predict(&self, r: &[f64]) -> Result<usize, FcaError> {
        Ok(fca_predict(&self.lattices, self.bins.intent_of(r)?)?.0)
    }

    pub fn concept_counts(&self) -> Vec<usize> {
        self.lattices.iter().map(|l| l.concepts.len()).collect()
    }
}

impl Predictor for FcaModel {
    type Error = FcaError;
    fn predict_record(&self, r: &[f64]) -> Result<usize, FcaError> {
        self.predict(r)
    }
}

// ---------------------------------------------------------------------------
// Importance

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImportanceRow {
    pub feature: String,
    /// Percentage per class.
    pub per_class: Vec<f64>,
    pub average: f64,
}

/// For each feature and class: percentage of the class lattice's concepts
/// with non-empty intent whose intent mentions a bin of that feature. Rows
/// are sorted by descending average, then by feature order.
pub fn fca_importance(
    lattices: &[ClassLattice],
    bins: &BinSpec,
) -> Vec<ImportanceRow> {
    let mut offset = 0;
    let mut rows: Vec<(usize, ImportanceRow)> = Vec::new();
    for (pos, f) in bins.features.iter().enumerate() {
        let mask = full_mask(f.bin_count()) << offset;
        offset += f.bin_count();
        let per_class: Vec<f64> = lattices
            .iter()
            .map(|l| {
                let nonempty: Vec<&Concept> =
                    l.concepts.iter().filter(|c| c.intent != 0).collect();
                if nonempty.is_empty() {
                    0.0
                } else {
                    let hit = nonempty.iter().filter(|c| c.intent & mask != 0).count();
                    100.0 * hit as f64 / nonempty.len() as f64
                }
            })
            .collect();
        let average = if per_class.is_empty() {
            0.0
        } else {
            per_class.iter().sum::<f64>() / per_class.len() as f64
        };
        rows.push((
            pos,
            ImportanceRow {
                feature: f.name.clone(),
                per_class,
                average,
            },
        ));
    }
    rows.sort_by(|a, b| b.1.average.total_cmp(&a.1.average).then(a.0.cmp(&b.0)));
    rows.into_iter().map(|(_, r)| r).collect()
}

pub fn importance_text(rows: &[ImportanceRow], class_names: &[String]) -> String {
    let width = rows.iter().map(|r| r.feature.len()).max().unwrap_or(7).max(7);
    let mut s = format!("{:<width$}", "feature");
    for c in class_names {
        let _ = write!(s, " {:>10}", c);
    }
    let _ = writeln!(s, " {:>10}", "average");
    for r in rows {
        let _ = write!(s, "{:<width$}", r.feature);
        for v in &r.per_class {
            let _ = write!(s, " {:>10.2}", v);
        }
        let _ = writeln!(s, " {:>10.2}", r.average);
    }
    s
}

pub fn importance_csv(rows: &[ImportanceRow], class_names: &[String]) -> String {
    let mut s = String::from("feature");
    for c in class_names {
        let _ = write!(s, ",{c}");
    }
    s.push_str(",average\n");
    for r in rows {
        s.push_str(&r.feature);
        for v in &r.per_class {
            let _ = write!(s, ",{v:?}");
        }
        let _ = writeln!(s, ",{:?}", r.average);
    }
    s
}
