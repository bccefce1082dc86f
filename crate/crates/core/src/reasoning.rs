//! Exemplar pool, traversability table and the pluggable VLM backend.
//!
//! The mock backend is the normative semantics: a class-conditional mean of
//! the grounded exemplars, falling back to the configured prior.

use std::collections::VecDeque;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::global::{mock_plan, MarkedAerialImage, NavigationObjective};
use crate::proprio::{Exemplar, Tau};
use crate::world::{patch_descriptor, LabelId, PatchDescriptor, PatchSource, TerrainClass, WorldGrid};

/// Per-label FIFO buffers of exemplars.
#[derive(Debug, Clone, PartialEq)]
pub struct ExemplarPool {
    labels: Vec<String>,
    buffers: Vec<VecDeque<Exemplar>>,
    capacity: usize,
}

impl ExemplarPool {
    pub fn new(classes: &[TerrainClass], capacity: usize) -> Self {
        Self {
            labels: classes.iter().map(|c| c.label.clone()).collect(),
            buffers: vec![VecDeque::with_capacity(capacity); classes.len()],
            capacity,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn label_id(&self, label: &str) -> Option<LabelId> {
        self.labels.iter().position(|l| l == label)
    }

    /// Appends to the exemplar's label buffer, evicting the oldest when full.
    pub fn update(&mut self, exemplar: Exemplar) -> Result<()> {
        let id = self
            .label_id(&exemplar.label)
            .ok_or_else(|| Error::UnknownLabel(exemplar.label.clone()))?;
        let buf = &mut self.buffers[id];
        if buf.len() == self.capacity {
            buf.pop_front();
        }
        buf.push_back(exemplar);
        Ok(())
    }

    /// Oldest first.
    pub fn buffer(&self, id: LabelId) -> &VecDeque<Exemplar> {
        &self.buffers[id]
    }

    pub fn len(&self) -> usize {
        self.buffers.iter().map(VecDeque::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Most recent first, at most `limit`.
    pub fn recent(&self, id: LabelId, limit: usize) -> impl Iterator<Item = &Exemplar> {
        self.buffers[id].iter().rev().take(limit)
    }
}

pub fn update_pool(pool: &mut ExemplarPool, exemplar: Exemplar) -> Result<()> {
    pool.update(exemplar)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Prior,
    Grounded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableEntry {
    pub label: String,
    pub tau: Tau,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraversabilityTable {
    pub entries: Vec<TableEntry>,
    pub last_update: f64,
}

impl TraversabilityTable {
    pub fn from_priors(classes: &[TerrainClass]) -> Self {
        Self {
            entries: classes
                .iter()
                .map(|c| TableEntry {
                    label: c.label.clone(),
                    tau: Tau::new(c.prior_tau),
                    provenance: Provenance::Prior,
                })
                .collect(),
            last_update: 0.0,
        }
    }

    pub fn tau(&self, id: LabelId) -> Tau {
        self.entries[id].tau
    }

    pub fn taus(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.tau.value()).collect()
    }

    pub fn label_id(&self, label: &str) -> Option<LabelId> {
        self.entries.iter().position(|e| e.label == label)
    }

    pub fn grounded_count(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.provenance == Provenance::Grounded)
            .count()
    }

    /// Overwrites a value. Provenance never moves back from grounded to prior.
    pub fn set(&mut self, id: LabelId, tau: Tau, provenance: Provenance) {
        let e = &mut self.entries[id];
        e.tau = tau;
        if provenance == Provenance::Grounded {
            e.provenance = Provenance::Grounded;
        }
    }
}

/// What an estimate is asked about.
#[derive(Debug, Clone, PartialEq)]
pub enum Query {
    Label(String),
    Patch(PatchDescriptor),
}

impl Query {
    pub fn resolve(&self, classes: &[TerrainClass]) -> Result<LabelId> {
        match self {
            Query::Label(l) => classes
                .iter()
                .position(|c| &c.label == l)
                .ok_or_else(|| Error::UnknownLabel(l.clone())),
            Query::Patch(p) => Ok(p.majority_label()),
        }
    }
}

/// Text scaffolding for in-context estimation queries.
///
/// Placeholders: `{index}`, `{label}`, `{tau}`, `{histogram}`, `{rgb}`,
/// `{weather}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub system: String,
    pub exemplar_format: String,
    pub query_format: String,
    pub weather: String,
}

impl PromptTemplate {
    pub fn with_weather(weather: impl Into<String>) -> Self {
        Self {
            system: "You estimate terrain traversability for a ground robot. \
                     Traversability tau is in [0, 1]: 0 is firm and safe, 1 is impassable. \
                     Measured examples from the robot's own sensors follow."
                .into(),
            exemplar_format:
                "Example {index}: terrain={label}; tau={tau}; histogram={histogram}; rgb={rgb}"
                    .into(),
            query_format: "Query: terrain={label}; histogram={histogram}; rgb={rgb}. \
                           Weather: {weather}. Reply with a fenced JSON object {\"tau\": <number>}."
                .into(),
            weather: weather.into(),
        }
    }

    fn fill(fmt: &str, fields: &[(&str, String)]) -> String {
        let mut s = fmt.to_string();
        for (k, v) in fields {
            s = s.replace(&format!("{{{k}}}"), v);
        }
        s
    }

    /// Serializes the exemplar lines for a query, most recent first.
    pub fn exemplar_lines<'a>(
        &self,
        exemplars: impl Iterator<Item = &'a Exemplar>,
    ) -> Vec<String> {
        exemplars
            .enumerate()
            .map(|(i, e)| {
                Self::fill(
                    &self.exemplar_format,
                    &[
                        ("index", (i + 1).to_string()),
                        ("label", e.label.clone()),
                        ("tau", format!("{:.2}", e.tau_shifted.value())),
                        ("histogram", fmt_hist(&e.aerial.class_histogram)),
                        ("rgb", fmt_rgb(&e.aerial.mean_appearance)),
                    ],
                )
            })
            .collect()
    }

    pub fn query_line(&self, label: &str, patch: Option<&PatchDescriptor>) -> String {
        Self::fill(
            &self.query_format,
            &[
                ("label", label.to_string()),
                (
                    "histogram",
                    patch.map_or_else(|| "n/a".into(), |p| fmt_hist(&p.class_histogram)),
                ),
                (
                    "rgb",
                    patch.map_or_else(|| "n/a".into(), |p| fmt_rgb(&p.mean_appearance)),
                ),
                ("weather", self.weather.clone()),
            ],
        )
    }

    /// Full text prompt: system text, exemplars of the queried class (most
    /// recent first, up to the pool capacity), then the query.
    pub fn render(
        &self,
        pool: &ExemplarPool,
        query: &Query,
        classes: &[TerrainClass],
    ) -> Result<String> {
        let id = query.resolve(classes)?;
        let mut out = String::new();
        writeln!(out, "{}", self.system).unwrap();
        for line in self.exemplar_lines(pool.recent(id, pool.capacity())) {
            writeln!(out, "{line}").unwrap();
        }
        let patch = match query {
            Query::Patch(p) => Some(p),
            Query::Label(_) => None,
        };
        write!(out, "{}", self.query_line(&classes[id].label, patch)).unwrap();
        Ok(out)
    }
}

fn fmt_hist(h: &[f64]) -> String {
    let parts: Vec<String> = h.iter().map(|f| format!("{f:.2}")).collect();
    format!("[{}]", parts.join(","))
}

fn fmt_rgb(c: &[f64; 3]) -> String {
    format!("({:.0},{:.0},{:.0})", c[0], c[1], c[2])
}

/// Recovers the `tau=` values from a rendered prompt, in order.
pub fn parse_prompt_taus(prompt: &str) -> Vec<f64> {
    prompt
        .lines()
        .filter(|l| l.starts_with("Example "))
        .filter_map(|l| {
            let rest = &l[l.find("tau=")? + 4..];
            let end = rest.find(';').unwrap_or(rest.len());
            rest[..end].trim().parse().ok()
        })
        .collect()
}

/// Extracts the first fenced JSON object from a model reply.
pub fn extract_fenced_json(reply: &str) -> Result<serde_json::Value> {
    let start = reply
        .find("```")
        .ok_or_else(|| Error::Backend("reply has no fenced block".into()))?;
    let after = &reply[start + 3..];
    let body_start = after.find('\n').map_or(0, |i| i + 1);
    let tag = after[..body_start].trim();
    if !(tag.is_empty() || tag.eq_ignore_ascii_case("json")) {
        return Err(Error::Backend(format!("unexpected fence tag `{tag}`")));
    }
    let body = &after[body_start..];
    let end = body
        .find("```")
        .ok_or_else(|| Error::Backend("unterminated fenced block".into()))?;
    let v: serde_json::Value = serde_json::from_str(body[..end].trim())
        .map_err(|e| Error::Backend(format!("fenced block is not JSON: {e}")))?;
    if !v.is_object() {
        return Err(Error::Backend("fenced JSON is not an object".into()));
    }
    Ok(v)
}

pub fn parse_tau_reply(reply: &str) -> Result<f64> {
    let v = extract_fenced_json(reply)?;
    v.get("tau")
        .and_then(serde_json::Value::as_f64)
        .filter(|t| t.is_finite())
        .ok_or_else(|| Error::Backend("reply lacks numeric `tau`".into()))
}

pub fn parse_label_reply(reply: &str) -> Result<String> {
    let v = extract_fenced_json(reply)?;
    v.get("label")
        .and_then(serde_json::Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| Error::Backend("reply lacks string `label`".into()))
}

pub fn parse_waypoints_reply(reply: &str) -> Result<Vec<usize>> {
    let v = extract_fenced_json(reply)?;
    let arr = v
        .get("waypoints")
        .and_then(serde_json::Value::as_array)
        .ok_or_else(|| Error::Backend("reply lacks `waypoints` array".into()))?;
    arr.iter()
        .map(|x| {
            x.as_u64()
                .map(|n| n as usize)
                .ok_or_else(|| Error::Backend("waypoint id is not an integer".into()))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Mock,
    Remote,
}

/// Inputs to one traversability estimate.
pub struct EstimateRequest<'a> {
    pub prompt: &'a PromptTemplate,
    pub pool: &'a ExemplarPool,
    pub query: &'a Query,
    pub classes: &'a [TerrainClass],
}

/// The three capabilities every reasoning backend provides.
pub trait VlmBackend: Send {
    fn kind(&self) -> BackendKind;

    /// Zero-shot terrain label for a patch.
    fn classify(&mut self, patch: &PatchDescriptor, classes: &[TerrainClass]) -> Result<String>;

    /// In-context traversability estimate for the query.
    fn estimate(&mut self, req: &EstimateRequest<'_>) -> Result<f64>;

    /// Ordered marker ids from the current position to the goal.
    fn select_waypoints(
        &mut self,
        marked: &MarkedAerialImage,
        objective: &NavigationObjective,
    ) -> Result<Vec<usize>>;
}

/// Deterministic stand-in for the remote models.
#[derive(Debug, Clone)]
pub struct MockBackend {
    p_err: f64,
    rng: ChaCha8Rng,
}

impl MockBackend {
    pub fn new(p_err: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1);
        Self { p_err, rng }
    }
}

/// Other class with the closest appearance colour; ties go to the lower id.
pub fn nearest_other_class(id: LabelId, classes: &[TerrainClass]) -> LabelId {
    let c = classes[id].appearance;
    let dist = |o: &TerrainClass| -> i32 {
        c.iter()
            .zip(&o.appearance)
            .map(|(&a, &b)| (a as i32 - b as i32).pow(2))
            .sum()
    };
    classes
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != id)
        .min_by_key(|(_, o)| dist(o))
        .map_or(id, |(i, _)| i)
}

impl VlmBackend for MockBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::Mock
    }

    fn classify(&mut self, patch: &PatchDescriptor, classes: &[TerrainClass]) -> Result<String> {
        let truth = patch.majority_label();
        // always draw so the stream advances identically whatever p_err is
        let draw: f64 = self.rng.random();
        let id = if draw < self.p_err {
            nearest_other_class(truth, classes)
        } else {
            truth
        };
        Ok(classes[id].label.clone())
    }

    fn estimate(&mut self, req: &EstimateRequest<'_>) -> Result<f64> {
        let id = req.query.resolve(req.classes)?;
        let buf = req.pool.buffer(id);
        if buf.is_empty() {
            return Ok(req.classes[id].prior_tau);
        }
        let sum: f64 = buf.iter().map(|e| e.tau_shifted.value()).sum();
        Ok(sum / buf.len() as f64)
    }

    fn select_waypoints(
        &mut self,
        marked: &MarkedAerialImage,
        objective: &NavigationObjective,
    ) -> Result<Vec<usize>> {
        mock_plan(&marked.graph, &marked.taus, objective, marked.start_id, marked.goal_id)
    }
}

/// A patch of the grid whose majority is `id`, scanning a lattice at `size`
/// spacing in row-major order.
fn representative_patch(
    grid: &WorldGrid,
    classes: &[TerrainClass],
    id: LabelId,
    size: f64,
) -> Option<PatchDescriptor> {
    let nx = (grid.width_m() / size).ceil() as usize;
    let ny = (grid.height_m() / size).ceil() as usize;
    (0..ny)
        .flat_map(|r| (0..nx).map(move |c| (c, r)))
        .filter_map(|(c, r)| {
            let center = crate::world::Point::new((c as f64 + 0.5) * size, (r as f64 + 0.5) * size);
            patch_descriptor(grid, classes, center, size, PatchSource::Aerial).ok()
        })
        .find(|p| p.majority_label() == id)
}

/// Initial per-class table. Each class's representative aerial patch is
/// classified and then estimated with an empty pool; any label outside the
/// class set or any backend failure discards the backend answers in favour
/// of the configured priors.
pub fn init_terrain_classes(
    backend: &mut dyn VlmBackend,
    grid: &WorldGrid,
    classes: &[TerrainClass],
    weather: &str,
) -> TraversabilityTable {
    let priors = TraversabilityTable::from_priors(classes);
    let prompt = PromptTemplate::with_weather(weather);
    let empty = ExemplarPool::new(classes, 1);
    let mut table = priors.clone();
    for (id, class) in classes.iter().enumerate() {
        if let Some(patch) = representative_patch(grid, classes, id, 5.0) {
            match backend.classify(&patch, classes) {
                Ok(label) if classes.iter().any(|c| c.label == label) => {}
                Ok(label) => {
                    log::warn!("backend proposed unknown terrain `{label}`; using priors");
                    return priors;
                }
                Err(e) => {
                    log::warn!("terrain classification failed ({e}); using priors");
                    return priors;
                }
            }
        }
        let query = Query::Label(class.label.clone());
        let req = EstimateRequest {
            prompt: &prompt,
            pool: &empty,
            query: &query,
            classes,
        };
        match backend.estimate(&req) {
            Ok(t) => table.set(id, Tau::new(t), Provenance::Prior),
            Err(e) => {
                log::warn!("prior estimate failed ({e}); using priors");
                return priors;
            }
        }
    }
    table
}

/// One estimate with fallback to the table's current value on backend failure.
/// Returns the value and whether it is grounded in exemplars.
pub fn estimate_traversability(
    backend: &mut dyn VlmBackend,
    prompt: &PromptTemplate,
    pool: &ExemplarPool,
    query: &Query,
    table: &TraversabilityTable,
    classes: &[TerrainClass],
) -> Result<(Tau, Provenance)> {
    let id = query.resolve(classes)?;
    let provenance = if pool.buffer(id).is_empty() {
        Provenance::Prior
    } else {
        Provenance::Grounded
    };
    let req = EstimateRequest {
        prompt,
        pool,
        query,
        classes,
    };
    match backend.estimate(&req) {
        Ok(t) => Ok((Tau::new(t), provenance)),
        Err(e) => {
            log::warn!("estimate for `{}` failed ({e}); keeping {}", classes[id].label, table.tau(id).value());
            Ok((table.tau(id), table.entries[id].provenance))
        }
    }
}

/// Re-estimates every label that has exemplars; others stay as they are.
pub fn refresh_table(
    table: &mut TraversabilityTable,
    backend: &mut dyn VlmBackend,
    prompt: &PromptTemplate,
    pool: &ExemplarPool,
    classes: &[TerrainClass],
    t: f64,
) {
    let mut touched = false;
    for (id, class) in classes.iter().enumerate() {
        if pool.buffer(id).is_empty() {
            continue;
        }
        let query = Query::Label(class.label.clone());
        if let Ok((tau, prov)) = estimate_traversability(backend, prompt, pool, &query, table, classes) {
            table.set(id, tau, prov);
            touched = true;
        }
    }
    if touched {
        table.last_update = t;
    }
}
