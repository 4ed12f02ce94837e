//! Single-file model container. The byte layout is described in `FORMAT.md` at the
//! repository root.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use crate::cascade::{CascadeConfig, CascadeLevel, CascadeModel, LevelRecord, ScanConfig, ScanningModel, StopReason, QUARTET};
use crate::embed::FeatureSource;
use crate::error::{Error, Result};
use crate::explain::GlobalWeights;
use crate::forest::{Forest, ForestConfig, ForestKind, Node, Tree, TreeConfig};
use crate::hierarchy::{check_threshold, FeatureSpec, PipelineModel};
use crate::scalar::Scalar;

pub const MAGIC: [u8; 4] = *b"HMDF";
pub const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 16;
const ENTRY_LEN: usize = 32;
const NONE: u64 = u64::MAX;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    Forest = 1,
    Cascade = 2,
    Pipeline = 3,
    GlobalWeights = 4,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Forest => "forest",
            ModelKind::Cascade => "cascade",
            ModelKind::Pipeline => "pipeline",
            ModelKind::GlobalWeights => "global-weights",
        }
    }

    fn from_tag(tag: u32) -> Result<Self> {
        Ok(match tag {
            1 => ModelKind::Forest,
            2 => ModelKind::Cascade,
            3 => ModelKind::Pipeline,
            4 => ModelKind::GlobalWeights,
            t => return Err(Error::Format(format!("unknown model kind {t}"))),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum StoredModel<F> {
    Forest(Forest<F>),
    Cascade(CascadeModel<F>),
    Pipeline(PipelineModel<F>),
    GlobalWeights(GlobalWeights<F>),
}

impl<F: Scalar> StoredModel<F> {
    pub fn kind(&self) -> ModelKind {
        match self {
            StoredModel::Forest(_) => ModelKind::Forest,
            StoredModel::Cascade(_) => ModelKind::Cascade,
            StoredModel::Pipeline(_) => ModelKind::Pipeline,
            StoredModel::GlobalWeights(_) => ModelKind::GlobalWeights,
        }
    }

    fn mismatch(&self, want: ModelKind) -> Error {
        Error::Format(format!("expected a {} model, found a {}", want.name(), self.kind().name()))
    }

    pub fn into_forest(self) -> Result<Forest<F>> {
        match self {
            StoredModel::Forest(m) => Ok(m),
            other => Err(other.mismatch(ModelKind::Forest)),
        }
    }

    pub fn into_cascade(self) -> Result<CascadeModel<F>> {
        match self {
            StoredModel::Cascade(m) => Ok(m),
            other => Err(other.mismatch(ModelKind::Cascade)),
        }
    }

    pub fn into_pipeline(self) -> Result<PipelineModel<F>> {
        match self {
            StoredModel::Pipeline(m) => Ok(m),
            other => Err(other.mismatch(ModelKind::Pipeline)),
        }
    }

    pub fn into_global_weights(self) -> Result<GlobalWeights<F>> {
        match self {
            StoredModel::GlobalWeights(m) => Ok(m),
            other => Err(other.mismatch(ModelKind::GlobalWeights)),
        }
    }

    /// Human-readable `key=value` description stored next to the binary payload.
    pub fn config_text(&self) -> String {
        let mut out = format!("format_version={FORMAT_VERSION}\nkind={}\n", self.kind().name());
        match self {
            StoredModel::Forest(f) => out.push_str(&forest_kv(f)),
            StoredModel::Cascade(c) => out.push_str(&cascade_kv(c)),
            StoredModel::Pipeline(p) => {
                let _ = writeln!(out, "amp_threshold={}", p.amp_threshold);
                let t: Vec<String> = p.label_thresholds.iter().map(ToString::to_string).collect();
                let _ = writeln!(out, "label_thresholds={}", t.join(","));
                let _ = writeln!(out, "labels={}", p.label_names.join(","));
                let _ = writeln!(out, "input_dim={}", p.features.input_dim);
                let _ = writeln!(out, "feature_subset={}", p.features.subset.as_ref().map_or(0, Vec::len));
                out.push_str("[binary]\n");
                out.push_str(&cascade_kv(&p.binary));
                out.push_str("[multilabel]\n");
                out.push_str(&cascade_kv(&p.multilabel));
            }
            StoredModel::GlobalWeights(g) => {
                let _ = writeln!(out, "features={}", g.weights.len());
                let _ = writeln!(out, "instances={}", g.n_instances);
            }
        }
        out
    }
}

fn forest_kv<F: Scalar>(f: &Forest<F>) -> String {
    let c = &f.config;
    let mut out = String::new();
    let _ = writeln!(out, "forest_kind={}", c.kind().name());
    let _ = writeln!(out, "trees={}", c.n_trees);
    let _ = writeln!(out, "bootstrap={}", c.bootstrap);
    let _ = writeln!(out, "min_samples_leaf={}", c.tree.min_samples_leaf);
    let _ = writeln!(out, "seed={}", c.seed);
    let _ = writeln!(out, "n_features={}", f.n_features);
    let _ = writeln!(out, "n_labels={}", f.n_labels);
    out
}

fn cascade_kv<F: Scalar>(c: &CascadeModel<F>) -> String {
    let mut out = c.config.to_kv();
    let _ = writeln!(out, "levels={}", c.levels.len());
    let _ = writeln!(out, "best_layer={}", c.best_layer);
    let _ = writeln!(out, "input_dim={}", c.input_dim);
    let _ = writeln!(out, "n_labels={}", c.n_labels);
    out
}

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn usize(&mut self, v: usize) {
        self.u64(v as u64);
    }

    fn opt(&mut self, v: Option<usize>) {
        self.u64(v.map_or(NONE, |x| x as u64));
    }

    fn bool(&mut self, v: bool) {
        self.u8(u8::from(v));
    }

    fn real<F: Scalar>(&mut self, v: F) {
        self.buf.extend_from_slice(&v.to_f64_exact().to_le_bytes());
    }

    fn reals<F: Scalar>(&mut self, v: &[F]) {
        self.usize(v.len());
        for &x in v {
            self.real(x);
        }
    }

    fn str(&mut self, s: &str) {
        self.usize(s.len());
        self.buf.extend_from_slice(s.as_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| corrupt("model payload is truncated"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn usize(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| corrupt("size field out of range"))
    }

    /// A count of items that each occupy at least `min_bytes`, checked against what is left.
    fn count(&mut self, min_bytes: usize) -> Result<usize> {
        let n = self.usize()?;
        if n.saturating_mul(min_bytes) > self.buf.len() - self.pos {
            return Err(corrupt("model payload is truncated"));
        }
        Ok(n)
    }

    fn opt(&mut self) -> Result<Option<usize>> {
        let v = self.u64()?;
        if v == NONE {
            Ok(None)
        } else {
            usize::try_from(v).map(Some).map_err(|_| corrupt("size field out of range"))
        }
    }

    fn bool(&mut self) -> Result<bool> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            b => Err(corrupt(format!("invalid flag byte {b}"))),
        }
    }

    fn real<F: Scalar>(&mut self) -> Result<F> {
        let v = f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes"));
        Ok(F::from_f64_lossy(v))
    }

    fn reals<F: Scalar>(&mut self) -> Result<Vec<F>> {
        let n = self.count(8)?;
        (0..n).map(|_| self.real()).collect()
    }

    fn str(&mut self) -> Result<String> {
        let n = self.count(1)?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| corrupt("invalid UTF-8 string"))
    }

    fn finish(&self) -> Result<()> {
        if self.pos == self.buf.len() {
            Ok(())
        } else {
            Err(corrupt("trailing bytes after model payload"))
        }
    }
}

fn put_forest<F: Scalar>(w: &mut Writer, f: &Forest<F>) {
    let c = &f.config;
    w.u8(match c.kind() {
        ForestKind::Random => 0,
        ForestKind::CompletelyRandom => 1,
    });
    w.usize(c.tree.min_samples_leaf);
    w.opt(c.tree.max_depth);
    w.opt(c.tree.max_features);
    w.usize(c.n_trees);
    w.bool(c.bootstrap);
    w.u64(c.seed);
    w.usize(f.n_features);
    w.usize(f.n_labels);
    w.usize(f.trees.len());
    for t in &f.trees {
        w.usize(t.nodes.len());
        for node in &t.nodes {
            match node {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    w.u8(0);
                    w.usize(*feature);
                    w.real(*threshold);
                    w.usize(*left);
                    w.usize(*right);
                }
                Node::Leaf { distribution, samples } => {
                    w.u8(1);
                    w.usize(*samples);
                    for &p in distribution {
                        w.real(p);
                    }
                }
            }
        }
    }
}

fn get_forest<F: Scalar>(r: &mut Reader) -> Result<Forest<F>> {
    let kind = match r.u8()? {
        0 => ForestKind::Random,
        1 => ForestKind::CompletelyRandom,
        k => return Err(corrupt(format!("unknown forest kind {k}"))),
    };
    let tree = TreeConfig {
        kind,
        min_samples_leaf: r.usize()?,
        max_depth: r.opt()?,
        max_features: r.opt()?,
    };
    let config = ForestConfig {
        tree,
        n_trees: r.usize()?,
        bootstrap: r.bool()?,
        seed: r.u64()?,
    };
    let n_features = r.usize()?;
    let n_labels = r.usize()?;
    let n_trees = r.count(8)?;
    if n_trees == 0 || n_trees != config.n_trees {
        return Err(corrupt(format!(
            "forest declares {} trees but stores {n_trees}",
            config.n_trees
        )));
    }
    if n_features == 0 || n_labels == 0 {
        return Err(corrupt("forest has no features or no labels"));
    }
    let mut trees = Vec::with_capacity(n_trees);
    for _ in 0..n_trees {
        let n_nodes = r.count(9)?;
        if n_nodes == 0 {
            return Err(corrupt("tree has no nodes"));
        }
        let mut nodes = Vec::with_capacity(n_nodes);
        for id in 0..n_nodes {
            let node = match r.u8()? {
                0 => {
                    let (feature, threshold, left, right) = (r.usize()?, r.real::<F>()?, r.usize()?, r.usize()?);
                    if feature >= n_features {
                        return Err(corrupt(format!("split feature {feature} out of range")));
                    }
                    if left <= id || right <= id || left >= n_nodes || right >= n_nodes || left == right {
                        return Err(corrupt(format!("node {id} has child indices out of range")));
                    }
                    if !threshold.is_finite() {
                        return Err(corrupt("non-finite split threshold"));
                    }
                    Node::Split {
                        feature,
                        threshold,
                        left,
                        right,
                    }
                }
                1 => {
                    let samples = r.usize()?;
                    let distribution: Vec<F> = (0..n_labels).map(|_| r.real()).collect::<Result<_>>()?;
                    if distribution.iter().any(|p| !(*p >= F::zero() && *p <= F::one())) {
                        return Err(corrupt("leaf distribution outside [0, 1]"));
                    }
                    Node::Leaf { distribution, samples }
                }
                t => return Err(corrupt(format!("unknown node tag {t}"))),
            };
            nodes.push(node);
        }
        trees.push(Tree::from_parts(nodes, n_features, n_labels));
    }
    Ok(Forest::from_parts(config, trees, n_features, n_labels))
}

fn put_quartet<F: Scalar>(w: &mut Writer, forests: &[Forest<F>]) {
    for f in forests {
        put_forest(w, f);
    }
}

fn get_quartet<F: Scalar>(r: &mut Reader, n_features: usize, n_labels: usize) -> Result<Vec<Forest<F>>> {
    let forests = (0..QUARTET).map(|_| get_forest(r)).collect::<Result<Vec<Forest<F>>>>()?;
    if forests.iter().any(|f| f.n_features != n_features || f.n_labels != n_labels) {
        return Err(corrupt(format!(
            "forest shape differs from the expected {n_features} features × {n_labels} labels"
        )));
    }
    Ok(forests)
}

fn put_cascade<F: Scalar>(w: &mut Writer, m: &CascadeModel<F>) {
    let c = &m.config;
    w.usize(c.max_layers);
    w.usize(c.patience);
    w.usize(c.k_inner);
    w.usize(c.n_trees);
    w.opt(c.max_depth);
    w.bool(c.scan.is_some());
    if let Some(s) = &c.scan {
        w.usize(s.window);
        w.usize(s.stride);
        w.usize(s.n_trees);
    }
    w.u64(c.seed);
    w.usize(m.input_dim);
    w.usize(m.n_labels);
    w.bool(m.scanner.is_some());
    if let Some(s) = &m.scanner {
        w.usize(s.window);
        w.usize(s.stride);
        put_quartet(w, &s.forests);
    }
    w.usize(m.levels.len());
    for level in &m.levels {
        put_quartet(w, &level.forests);
        for &c in &level.log_confidence {
            w.real(c);
        }
        for &b in &level.reused {
            w.bool(b);
        }
    }
    w.usize(m.best_layer);
    for rec in &m.history {
        w.real(rec.measure);
        w.u8(match rec.stop {
            None => 0,
            Some(StopReason::MaxLayers) => 1,
            Some(StopReason::Patience) => 2,
        });
    }
}

fn get_cascade<F: Scalar>(r: &mut Reader) -> Result<CascadeModel<F>> {
    let max_layers = r.usize()?;
    let patience = r.usize()?;
    let k_inner = r.usize()?;
    let n_trees = r.usize()?;
    let max_depth = r.opt()?;
    let scan = if r.bool()? {
        Some(ScanConfig {
            window: r.usize()?,
            stride: r.usize()?,
            n_trees: r.usize()?,
        })
    } else {
        None
    };
    let config = CascadeConfig {
        max_layers,
        patience,
        k_inner,
        n_trees,
        max_depth,
        scan,
        seed: r.u64()?,
    };
    config.validate().map_err(|e| corrupt(format!("stored cascade config: {e}")))?;
    let input_dim = r.usize()?;
    let n_labels = r.usize()?;
    if n_labels == 0 || input_dim == 0 {
        return Err(corrupt("cascade has no inputs or no labels"));
    }

    let scanner = if r.bool()? {
        let (window, stride) = (r.usize()?, r.usize()?);
        if config.scan.as_ref().map(|s| (s.window, s.stride)) != Some((window, stride)) {
            return Err(corrupt("scanner geometry differs from the cascade config"));
        }
        crate::cascade::window_count(input_dim, window, stride).map_err(|e| corrupt(e.to_string()))?;
        Some(ScanningModel {
            window,
            stride,
            input_dim,
            n_labels,
            forests: get_quartet(r, window, n_labels)?,
        })
    } else {
        None
    };
    if scanner.is_some() != config.scan.is_some() {
        return Err(corrupt("scanner presence differs from the cascade config"));
    }
    let feature_dim = scanner.as_ref().map_or(input_dim, ScanningModel::output_dim);

    let n_levels = r.count(1)?;
    if n_levels == 0 || n_levels > config.max_layers {
        return Err(corrupt(format!(
            "{n_levels} levels outside 1..={}",
            config.max_layers
        )));
    }
    let mut levels = Vec::with_capacity(n_levels);
    for t in 0..n_levels {
        let dim = if t == 0 { feature_dim } else { feature_dim + QUARTET * n_labels };
        let forests = get_quartet(r, dim, n_labels)?;
        let log_confidence = (0..n_labels).map(|_| r.real()).collect::<Result<Vec<F>>>()?;
        let reused = (0..n_labels).map(|_| r.bool()).collect::<Result<Vec<bool>>>()?;
        if t == 0 && reused.iter().any(|&b| b) {
            return Err(corrupt("first level cannot reuse a previous representation"));
        }
        levels.push(CascadeLevel {
            forests,
            log_confidence,
            reused,
        });
    }
    let best_layer = r.usize()?;
    if best_layer == 0 || best_layer > n_levels {
        return Err(corrupt(format!("best layer {best_layer} outside 1..={n_levels}")));
    }
    let history = (0..n_levels)
        .map(|_| {
            let measure = r.real()?;
            let stop = match r.u8()? {
                0 => None,
                1 => Some(StopReason::MaxLayers),
                2 => Some(StopReason::Patience),
                s => return Err(corrupt(format!("unknown stop reason {s}"))),
            };
            Ok(LevelRecord { measure, stop })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CascadeModel {
        config,
        scanner,
        levels,
        best_layer,
        history,
        input_dim,
        n_labels,
    })
}

fn put_pipeline<F: Scalar>(w: &mut Writer, p: &PipelineModel<F>) {
    put_cascade(w, &p.binary);
    put_cascade(w, &p.multilabel);
    w.real(p.amp_threshold);
    w.reals(&p.label_thresholds);
    w.usize(p.label_names.len());
    for name in &p.label_names {
        w.str(name);
    }
    match p.features.source {
        FeatureSource::EmbeddingFile => w.u8(0),
        FeatureSource::OneHot { max_len } => {
            w.u8(1);
            w.usize(max_len);
        }
    }
    w.usize(p.features.input_dim);
    w.bool(p.features.subset.is_some());
    if let Some(idx) = &p.features.subset {
        w.usize(idx.len());
        for &j in idx {
            w.usize(j);
        }
    }
}

fn get_pipeline<F: Scalar>(r: &mut Reader) -> Result<PipelineModel<F>> {
    let binary = get_cascade(r)?;
    let multilabel = get_cascade(r)?;
    let amp_threshold = r.real()?;
    let label_thresholds: Vec<F> = r.reals()?;
    let n_names = r.count(8)?;
    let label_names = (0..n_names).map(|_| r.str()).collect::<Result<Vec<_>>>()?;
    let source = match r.u8()? {
        0 => FeatureSource::EmbeddingFile,
        1 => FeatureSource::OneHot { max_len: r.usize()? },
        s => return Err(corrupt(format!("unknown feature source {s}"))),
    };
    let input_dim = r.usize()?;
    let subset = if r.bool()? {
        let n = r.count(8)?;
        Some((0..n).map(|_| r.usize()).collect::<Result<Vec<_>>>()?)
    } else {
        None
    };
    let features = FeatureSpec {
        source,
        input_dim,
        subset,
    };

    for t in std::iter::once(amp_threshold).chain(label_thresholds.iter().copied()) {
        check_threshold(t).map_err(|e| corrupt(e.to_string()))?;
    }
    let l = multilabel.n_labels;
    if label_thresholds.len() != l || label_names.len() != l {
        return Err(corrupt("label names or thresholds disagree with the activity stage"));
    }
    if binary.n_labels != 2 {
        return Err(corrupt("binary stage must have two class columns"));
    }
    if features.subset.as_ref().is_some_and(|idx| idx.iter().any(|&j| j >= input_dim)) {
        return Err(corrupt("feature subset index out of range"));
    }
    let dim = features.model_dim();
    if binary.input_dim != dim || multilabel.input_dim != dim {
        return Err(corrupt("stage input widths disagree with the feature spec"));
    }
    Ok(PipelineModel {
        binary,
        multilabel,
        amp_threshold,
        label_thresholds,
        label_names,
        features,
    })
}

fn encode_model<F: Scalar>(model: &StoredModel<F>) -> Result<Vec<u8>> {
    let mut w = Writer { buf: Vec::new() };
    match model {
        StoredModel::Forest(f) => {
            if f.trees.is_empty() {
                return Err(Error::InvalidArgument("forest has no trees".into()));
            }
            put_forest(&mut w, f);
        }
        StoredModel::Cascade(c) => {
            if c.levels.is_empty() {
                return Err(Error::InvalidArgument("cascade has no levels".into()));
            }
            put_cascade(&mut w, c);
        }
        StoredModel::Pipeline(p) => put_pipeline(&mut w, p),
        StoredModel::GlobalWeights(g) => {
            w.usize(g.n_instances);
            w.reals(&g.weights);
        }
    }
    Ok(w.buf)
}

fn decode_model<F: Scalar>(kind: ModelKind, bytes: &[u8]) -> Result<StoredModel<F>> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let model = match kind {
        ModelKind::Forest => StoredModel::Forest(get_forest(&mut r)?),
        ModelKind::Cascade => StoredModel::Cascade(get_cascade(&mut r)?),
        ModelKind::Pipeline => StoredModel::Pipeline(get_pipeline(&mut r)?),
        ModelKind::GlobalWeights => {
            let n_instances = r.usize()?;
            StoredModel::GlobalWeights(GlobalWeights {
                weights: r.reals()?,
                n_instances,
            })
        }
    };
    r.finish()?;
    Ok(model)
}

/// Serializes `model` into a complete container.
pub fn to_bytes<F: Scalar>(model: &StoredModel<F>) -> Result<Vec<u8>> {
    let sections: [(&[u8; 8], Vec<u8>); 2] = [
        (b"config\0\0", model.config_text().into_bytes()),
        (b"model\0\0\0", encode_model(model)?),
    ];
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(model.kind() as u32).to_le_bytes());
    out.extend_from_slice(&(sections.len() as u32).to_le_bytes());
    let mut offset = (HEADER_LEN + ENTRY_LEN * sections.len()) as u64;
    for (name, payload) in &sections {
        out.extend_from_slice(*name);
        out.extend_from_slice(&offset.to_le_bytes());
        out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
        out.extend_from_slice(&crc32fast::hash(payload).to_le_bytes());
        out.extend_from_slice(&0u32.to_le_bytes());
        offset += payload.len() as u64;
    }
    for (_, payload) in &sections {
        out.extend_from_slice(payload);
    }
    Ok(out)
}

fn le_u32(b: &[u8]) -> u32 {
    u32::from_le_bytes(b.try_into().expect("4 bytes"))
}

fn le_u64(b: &[u8]) -> u64 {
    u64::from_le_bytes(b.try_into().expect("8 bytes"))
}

/// Sections of a container as `(name, payload)`, each checksum-verified.
pub fn sections(bytes: &[u8]) -> Result<(ModelKind, Vec<(String, &[u8])>)> {
    if bytes.len() < HEADER_LEN {
        return Err(corrupt("file is shorter than the container header"));
    }
    if bytes[..4] != MAGIC {
        return Err(corrupt("not a model container (bad magic)"));
    }
    let version = le_u32(&bytes[4..8]);
    if version != FORMAT_VERSION {
        return Err(Error::Version(version));
    }
    let kind = ModelKind::from_tag(le_u32(&bytes[8..12]))?;
    let count = le_u32(&bytes[12..16]) as usize;
    let table_end = count
        .checked_mul(ENTRY_LEN)
        .and_then(|t| t.checked_add(HEADER_LEN))
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| corrupt("section table is truncated"))?;
    let mut out = Vec::with_capacity(count);
    for e in bytes[HEADER_LEN..table_end].chunks_exact(ENTRY_LEN) {
        let name: String = e[..8]
            .iter()
            .take_while(|&&b| b != 0)
            .map(|&b| b as char)
            .collect();
        let offset = le_u64(&e[8..16]);
        let len = le_u64(&e[16..24]);
        let crc = le_u32(&e[24..28]);
        let range = usize::try_from(offset)
            .ok()
            .zip(usize::try_from(len).ok())
            .and_then(|(o, l)| Some(o..o.checked_add(l)?))
            .filter(|r| r.start >= table_end && r.end <= bytes.len())
            .ok_or_else(|| corrupt(format!("section '{name}' lies outside the file (truncated?)")))?;
        let payload = &bytes[range];
        if crc32fast::hash(payload) != crc {
            return Err(Error::Checksum(name));
        }
        out.push((name, payload));
    }
    Ok((kind, out))
}

/// Parses and validates a container.
pub fn from_bytes<F: Scalar>(bytes: &[u8]) -> Result<StoredModel<F>> {
    let (kind, secs) = sections(bytes)?;
    let payload = secs
        .iter()
        .find(|(n, _)| n == "model")
        .map(|(_, p)| *p)
        .ok_or_else(|| corrupt("container has no model section"))?;
    decode_model(kind, payload)
}

/// Writes `model` to `path` through a temporary file in the same directory.
pub fn save<F: Scalar>(model: &StoredModel<F>, path: &Path) -> Result<()> {
    let bytes = to_bytes(model)?;
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::InvalidArgument(format!("'{}' is not a file path", path.display())))?;
    let tmp = path.with_file_name(format!(
        ".{}.tmp{}",
        file_name.to_string_lossy(),
        std::process::id()
    ));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    Ok(result?)
}

pub fn load<F: Scalar>(path: &Path) -> Result<StoredModel<F>> {
    from_bytes(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::{LabelMatrix, Matrix};
    use crate::rng::rng_from;
    use rand::Rng as _;

    fn data(n: usize, d: usize) -> (Matrix<f64>, LabelMatrix) {
        let mut rng = rng_from(2);
        let x = Matrix::from_vec(n, d, (0..n * d).map(|_| rng.random()).collect()).unwrap();
        let y: Vec<Vec<bool>> = (0..n).map(|i| vec![x.get(i, 0) > 0.5, x.get(i, 1) > 0.3]).collect();
        (x, LabelMatrix::from_rows(&y).unwrap())
    }

    fn forest() -> Forest<f64> {
        let (x, y) = data(40, 4);
        Forest::fit(&x, &y, &ForestConfig::new(ForestKind::Random, 3, 1)).unwrap()
    }

    #[test]
    fn forest_round_trip_and_header() {
        let m = StoredModel::Forest(forest());
        let bytes = to_bytes(&m).unwrap();
        assert_eq!(&bytes[..4], b"HMDF");
        assert_eq!(le_u32(&bytes[4..8]), 1);
        assert_eq!(from_bytes::<f64>(&bytes).unwrap(), m);
        let (_, secs) = sections(&bytes).unwrap();
        let names: Vec<&str> = secs.iter().map(|(n, _)| n.as_str()).collect();
        assert_eq!(names, vec!["config", "model"]);
        assert!(std::str::from_utf8(secs[0].1).unwrap().contains("kind=forest"));
    }

    #[test]
    fn corruption_is_detected() {
        let bytes = to_bytes(&StoredModel::Forest(forest())).unwrap();
        let mut flipped = bytes.clone();
        let last = flipped.len() - 3;
        flipped[last] ^= 0x40;
        assert!(matches!(from_bytes::<f64>(&flipped), Err(Error::Checksum(_))));

        let mut future = bytes.clone();
        future[4..8].copy_from_slice(&2u32.to_le_bytes());
        assert!(matches!(from_bytes::<f64>(&future), Err(Error::Version(2))));

        for cut in [3, 20, bytes.len() / 2, bytes.len() - 1] {
            assert!(matches!(from_bytes::<f64>(&bytes[..cut]), Err(Error::Format(_))), "cut {cut}");
        }
        let mut magic = bytes;
        magic[0] = b'X';
        assert!(matches!(from_bytes::<f64>(&magic), Err(Error::Format(_))));
    }

    /// Rewrites the model payload and its checksum so structural checks are reached.
    fn patch_model(bytes: &[u8], f: impl FnOnce(&mut Vec<u8>)) -> Vec<u8> {
        let entry = HEADER_LEN + ENTRY_LEN;
        let offset = le_u64(&bytes[entry + 8..entry + 16]) as usize;
        let mut payload = bytes[offset..].to_vec();
        f(&mut payload);
        let mut out = bytes[..offset].to_vec();
        out[entry + 16..entry + 24].copy_from_slice(&(payload.len() as u64).to_le_bytes());
        out[entry + 24..entry + 28].copy_from_slice(&crc32fast::hash(&payload).to_le_bytes());
        out.extend_from_slice(&payload);
        out
    }

    #[test]
    fn structural_errors() {
        let f = forest();
        let bytes = to_bytes(&StoredModel::Forest(f.clone())).unwrap();
        // first node of the first tree: header is 1+8+8+8+8+1+8 config, 3×8 shape, 8 node count
        let node0 = 1 + 8 * 4 + 1 + 8 + 24 + 8;
        assert!(matches!(f.trees[0].nodes[0], Node::Split { .. }));
        let bad_child = patch_model(&bytes, |p| {
            let left = node0 + 1 + 8 + 8;
            p[left..left + 8].copy_from_slice(&0u64.to_le_bytes());
        });
        assert!(matches!(from_bytes::<f64>(&bad_child), Err(Error::Format(_))));
        let bad_feature = patch_model(&bytes, |p| {
            p[node0 + 1..node0 + 9].copy_from_slice(&99u64.to_le_bytes());
        });
        assert!(matches!(from_bytes::<f64>(&bad_feature), Err(Error::Format(_))));
        let truncated = patch_model(&bytes, |p| p.truncate(p.len() - 5));
        assert!(matches!(from_bytes::<f64>(&truncated), Err(Error::Format(_))));
        let trailing = patch_model(&bytes, |p| p.push(0));
        assert!(matches!(from_bytes::<f64>(&trailing), Err(Error::Format(_))));
    }

    #[test]
    fn kind_accessors() {
        let m = StoredModel::Forest(forest());
        assert!(m.clone().into_cascade().is_err());
        assert!(m.into_forest().is_ok());
        let g = StoredModel::GlobalWeights(GlobalWeights {
            weights: vec![0.5, -1.25],
            n_instances: 3,
        });
        let back = from_bytes::<f64>(&to_bytes(&g).unwrap()).unwrap();
        assert_eq!(back, g);
    }

    #[test]
    fn save_is_atomic_and_loads() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.hmdf");
        let m = StoredModel::Forest(forest());
        save(&m, &path).unwrap();
        assert_eq!(load::<f64>(&path).unwrap(), m);
        let entries: Vec<_> = fs::read_dir(dir.path()).unwrap().collect();
        assert_eq!(entries.len(), 1);
        assert!(load::<f64>(&dir.path().join("missing")).is_err());
    }

    #[test]
    fn f32_models_round_trip() {
        let (x, y) = data(30, 3);
        let x32 = Matrix::from_vec(30, 3, x.as_slice().iter().map(|&v| v as f32).collect()).unwrap();
        let f = Forest::<f32>::fit(&x32, &y, &ForestConfig::new(ForestKind::CompletelyRandom, 2, 0)).unwrap();
        let m = StoredModel::Forest(f);
        assert_eq!(from_bytes::<f32>(&to_bytes(&m).unwrap()).unwrap(), m);
    }
}
