//! Model catalog and stochastic request arrivals.
//!
//! A catalog row describes one served DNN model: its latency SLO, the
//! synthetic cost-model coefficients, and its memory footprint. Requests
//! arrive as a merged Poisson stream labelled by a mix vector, so per-model
//! streams are themselves independent Poisson processes (thinning).

use rand::Rng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::time::{ms_to_us, secs_to_us, Micros};
use crate::{Error, Result};

/// What a request carries as payload descriptor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputType {
    Image,
    Text,
}

/// Per-model description driving the simulator: SLO, synthetic batch cost
/// and memory coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelProfile {
    pub name: String,
    /// Latency service-level objective, ms.
    pub slo_ms: f64,
    /// Fixed per-batch launch cost, ms.
    pub base_latency_ms: f64,
    /// Marginal cost per batched request, ms.
    pub per_item_cost_ms: f64,
    /// Per-instance resident weight memory, MB.
    pub weight_mem_mb: f64,
    /// Activation memory per batched request, MB.
    pub act_mem_per_item_mb: f64,
    /// Flattened input descriptor size.
    pub input_dim: u64,
    /// Payload kind; informational. Defaults to image when absent.
    #[serde(default = "default_input_type")]
    pub input_type: InputType,
}

fn default_input_type() -> InputType {
    InputType::Image
}

impl ModelProfile {
    fn validate(&self) -> Result<()> {
        let bad = |message: &str| {
            Err(Error::InvalidProfile {
                model: self.name.clone(),
                message: message.to_string(),
            })
        };
        if self.name.is_empty() {
            return bad("empty name");
        }
        if !(self.slo_ms > 0.0) {
            return bad("non-positive slo_ms");
        }
        if !(self.base_latency_ms > 0.0) {
            return bad("non-positive base_latency_ms");
        }
        if self.per_item_cost_ms < 0.0 {
            return bad("negative per_item_cost_ms");
        }
        if !(self.weight_mem_mb > 0.0) {
            return bad("non-positive weight_mem_mb");
        }
        if self.act_mem_per_item_mb < 0.0 {
            return bad("negative act_mem_per_item_mb");
        }
        if self.input_dim == 0 {
            return bad("zero input_dim");
        }
        Ok(())
    }
}

/// One inference request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Request {
    pub id: u64,
    /// Index into the catalog.
    pub model: usize,
    pub input_type: InputType,
    pub input_shape: Vec<u64>,
    pub slo_ms: f64,
    pub arrival_us: Micros,
}

impl Request {
    pub fn slo_us(&self) -> Micros {
        ms_to_us(self.slo_ms)
    }

    pub fn deadline_us(&self) -> Micros {
        self.arrival_us + self.slo_us()
    }
}

/// A validated, ordered model catalog.
#[derive(Debug, Clone, PartialEq)]
pub struct Catalog {
    profiles: Vec<ModelProfile>,
}

impl Catalog {
    pub fn new(profiles: Vec<ModelProfile>) -> Result<Self> {
        if profiles.is_empty() {
            return Err(Error::EmptyCatalog);
        }
        for p in &profiles {
            p.validate()?;
        }
        for (i, p) in profiles.iter().enumerate() {
            if profiles[..i].iter().any(|q| q.name == p.name) {
                return Err(Error::DuplicateModel(p.name.clone()));
            }
        }
        Ok(Catalog { profiles })
    }

    pub fn len(&self) -> usize {
        self.profiles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.profiles.is_empty()
    }

    pub fn profiles(&self) -> &[ModelProfile] {
        &self.profiles
    }

    pub fn profile(&self, idx: usize) -> &ModelProfile {
        &self.profiles[idx]
    }

    pub fn index_of(&self, name: &str) -> Result<usize> {
        self.profiles
            .iter()
            .position(|p| p.name == name)
            .ok_or_else(|| Error::UnknownModel(name.to_string()))
    }

    pub fn max_slo_ms(&self) -> f64 {
        self.profiles.iter().map(|p| p.slo_ms).fold(0.0, f64::max)
    }

    pub fn max_input_dim(&self) -> u64 {
        self.profiles.iter().map(|p| p.input_dim).max().unwrap_or(1)
    }
}

#[derive(Debug, Deserialize)]
struct RawCatalogFile {
    #[serde(default)]
    model: Vec<toml::Value>,
}

/// Parse and validate a catalog document (TOML, one `[[model]]` section per
/// model). Field and entry names are reported on failure.
pub fn load_catalog(text: &str) -> Result<Catalog> {
    let raw: RawCatalogFile = toml::from_str(text)?;
    if raw.model.is_empty() {
        return Err(Error::EmptyCatalog);
    }
    let mut profiles = Vec::with_capacity(raw.model.len());
    for (i, entry) in raw.model.into_iter().enumerate() {
        let name = entry
            .get("name")
            .and_then(|v| v.as_str())
            .map(str::to_string)
            .unwrap_or_else(|| format!("#{i}"));
        for field in [
            "name",
            "slo_ms",
            "base_latency_ms",
            "per_item_cost_ms",
            "weight_mem_mb",
            "act_mem_per_item_mb",
            "input_dim",
        ] {
            if entry.get(field).is_none() {
                return Err(Error::MissingField {
                    model: name,
                    field: field.to_string(),
                });
            }
        }
        let profile: ModelProfile =
            entry
                .try_into()
                .map_err(|e: toml::de::Error| Error::InvalidProfile {
                    model: name.clone(),
                    message: e.to_string(),
                })?;
        profiles.push(profile);
    }
    Catalog::new(profiles)
}

/// Poisson arrival process over a catalog.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrivalProcess {
    /// Aggregate arrival rate, requests/second.
    pub rate: f64,
    /// Probability of each catalog model; must sum to 1.
    pub mix: Vec<f64>,
    pub seed: u64,
    /// Trace horizon, seconds.
    pub horizon_secs: f64,
}

impl ArrivalProcess {
    pub fn uniform(rate: f64, n_models: usize, seed: u64, horizon_secs: f64) -> Self {
        ArrivalProcess {
            rate,
            mix: vec![1.0 / n_models as f64; n_models],
            seed,
            horizon_secs,
        }
    }

    fn validate(&self, catalog: &Catalog) -> Result<()> {
        let err = |m: &str| Err(Error::InvalidArrivalProcess(m.to_string()));
        if !(self.rate > 0.0) {
            return err("rate must be > 0");
        }
        if !(self.horizon_secs > 0.0) {
            return err("horizon must be > 0");
        }
        if self.mix.len() != catalog.len() {
            return err("mix length must match catalog");
        }
        if self.mix.iter().any(|w| *w < 0.0) {
            return err("mix entries must be >= 0");
        }
        let total: f64 = self.mix.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return err("mix must sum to 1");
        }
        Ok(())
    }
}

/// Streaming arrival generator; the trace-producing [`generate_arrivals`]
/// and the simulator's on-demand feed share this one code path.
pub struct ArrivalGen {
    rng: ChaCha12Rng,
    rate: f64,
    mix_cdf: Vec<f64>,
    horizon_us: Micros,
    next_id: u64,
    clock_us: Micros,
    shapes: Vec<Vec<u64>>,
    slos: Vec<f64>,
    input_types: Vec<InputType>,
    done: bool,
}

impl ArrivalGen {
    pub fn new(proc: &ArrivalProcess, catalog: &Catalog, rng: ChaCha12Rng) -> Result<Self> {
        proc.validate(catalog)?;
        let mut acc = 0.0;
        let mix_cdf = proc
            .mix
            .iter()
            .map(|w| {
                acc += w;
                acc
            })
            .collect();
        Ok(ArrivalGen {
            rng,
            rate: proc.rate,
            mix_cdf,
            horizon_us: secs_to_us(proc.horizon_secs),
            next_id: 0,
            clock_us: 0,
            shapes: catalog
                .profiles()
                .iter()
                .map(|p| vec![p.input_dim])
                .collect(),
            slos: catalog.profiles().iter().map(|p| p.slo_ms).collect(),
            input_types: catalog.profiles().iter().map(|p| p.input_type).collect(),
            done: false,
        })
    }

    fn sample_model(&mut self) -> usize {
        let u: f64 = self.rng.gen();
        self.mix_cdf
            .iter()
            .position(|c| u < *c)
            .unwrap_or(self.mix_cdf.len() - 1)
    }
}

impl Iterator for ArrivalGen {
    type Item = Request;

    fn next(&mut self) -> Option<Request> {
        if self.done {
            return None;
        }
        // Exponential gap with mean 1/rate seconds; inverse-CDF keeps the
        // draw count per request fixed at two.
        let u: f64 = self.rng.gen::<f64>().max(f64::MIN_POSITIVE);
        let gap_secs = -u.ln() / self.rate;
        self.clock_us += secs_to_us(gap_secs).max(0);
        if self.clock_us >= self.horizon_us {
            self.done = true;
            return None;
        }
        let model = self.sample_model();
        let r = Request {
            id: self.next_id,
            model,
            input_type: self.input_types[model],
            input_shape: self.shapes[model].clone(),
            slo_ms: self.slos[model],
            arrival_us: self.clock_us,
        };
        self.next_id += 1;
        Some(r)
    }
}

/// Generate the full arrival trace for `proc`. Identical inputs produce a
/// bit-identical trace.
pub fn generate_arrivals(proc: &ArrivalProcess, catalog: &Catalog) -> Result<Vec<Request>> {
    let rng = crate::rng::stream(proc.seed, "arrivals");
    Ok(ArrivalGen::new(proc, catalog, rng)?.collect())
}

/// The scheduling time slot for a batch: the sum of the batch's SLOs over
/// the number of concurrent instances, in ms.
pub fn scheduling_slot(batch: &[Request], m_c: u32) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if m_c == 0 {
        return Err(Error::ZeroConcurrency);
    }
    Ok(batch.iter().map(|r| r.slo_ms).sum::<f64>() / f64::from(m_c))
}

/// Trace-export record, one line per request.
#[derive(Debug, Serialize, Deserialize)]
pub struct TraceRecord {
    pub id: u64,
    pub model: String,
    pub arrival_us: Micros,
    pub slo_ms: f64,
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn test_catalog() -> Catalog {
        load_catalog(crate::config::DEFAULT_CATALOG_TOML).unwrap()
    }

    fn req(slo_ms: f64, arrival_us: Micros) -> Request {
        Request {
            id: 0,
            model: 0,
            input_type: InputType::Image,
            input_shape: vec![1],
            slo_ms,
            arrival_us,
        }
    }

    #[test]
    fn default_catalog_has_paper_slos() {
        let cat = test_catalog();
        let slo = |n: &str| cat.profile(cat.index_of(n).unwrap()).slo_ms;
        assert_eq!(cat.len(), 6);
        assert_eq!(slo("yolo"), 138.0);
        assert_eq!(slo("mob"), 86.0);
        assert_eq!(slo("res"), 58.0);
        assert_eq!(slo("eff"), 93.0);
        assert_eq!(slo("inc"), 66.0);
        assert_eq!(slo("bert"), 114.0);
    }

    #[test]
    fn empty_catalog_rejected() {
        assert!(matches!(load_catalog(""), Err(Error::EmptyCatalog)));
    }

    #[test]
    fn duplicate_name_rejected() {
        let doc = r#"
            [[model]]
            name = "res"
            slo_ms = 58.0
            base_latency_ms = 1.0
            per_item_cost_ms = 0.1
            weight_mem_mb = 10.0
            act_mem_per_item_mb = 1.0
            input_dim = 4

            [[model]]
            name = "res"
            slo_ms = 58.0
            base_latency_ms = 1.0
            per_item_cost_ms = 0.1
            weight_mem_mb = 10.0
            act_mem_per_item_mb = 1.0
            input_dim = 4
        "#;
        assert!(matches!(load_catalog(doc), Err(Error::DuplicateModel(n)) if n == "res"));
    }

    #[test]
    fn missing_field_names_entry() {
        let doc = r#"
            [[model]]
            name = "res"
            slo_ms = 58.0
        "#;
        match load_catalog(doc) {
            Err(Error::MissingField { model, field }) => {
                assert_eq!(model, "res");
                assert_eq!(field, "base_latency_ms");
            }
            other => panic!("expected missing-field error, got {other:?}"),
        }
    }

    #[test]
    fn non_positive_slo_rejected() {
        let doc = r#"
            [[model]]
            name = "bad"
            slo_ms = 0.0
            base_latency_ms = 1.0
            per_item_cost_ms = 0.1
            weight_mem_mb = 10.0
            act_mem_per_item_mb = 1.0
            input_dim = 4
        "#;
        assert!(matches!(
            load_catalog(doc),
            Err(Error::InvalidProfile { model, .. }) if model == "bad"
        ));
    }

    #[test]
    fn arrival_count_matches_rate() {
        // 30 rps over 100 s: six-sigma band around Poisson(3000).
        let cat = test_catalog();
        let proc = ArrivalProcess::uniform(30.0, cat.len(), 7, 100.0);
        let trace = generate_arrivals(&proc, &cat).unwrap();
        assert!(
            (2550..=3450).contains(&trace.len()),
            "count {} outside band",
            trace.len()
        );
    }

    #[test]
    fn arrivals_monotone_and_labelled() {
        let cat = test_catalog();
        let proc = ArrivalProcess::uniform(30.0, cat.len(), 11, 20.0);
        let trace = generate_arrivals(&proc, &cat).unwrap();
        for w in trace.windows(2) {
            assert!(w[0].arrival_us <= w[1].arrival_us);
            assert_eq!(w[0].id + 1, w[1].id);
        }
        for r in &trace {
            assert_eq!(r.slo_ms, cat.profile(r.model).slo_ms);
        }
    }

    #[test]
    fn vanishing_horizon_is_usually_empty_never_errors() {
        let cat = test_catalog();
        let proc = ArrivalProcess::uniform(30.0, cat.len(), 3, 0.0001);
        let trace = generate_arrivals(&proc, &cat).unwrap();
        assert!(trace.len() <= 2);
    }

    #[test]
    fn same_seed_same_trace() {
        let cat = test_catalog();
        let proc = ArrivalProcess::uniform(30.0, cat.len(), 42, 10.0);
        let a = generate_arrivals(&proc, &cat).unwrap();
        let b = generate_arrivals(&proc, &cat).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn bad_process_rejected() {
        let cat = test_catalog();
        let mut proc = ArrivalProcess::uniform(30.0, cat.len(), 1, 10.0);
        proc.rate = 0.0;
        assert!(generate_arrivals(&proc, &cat).is_err());
        let mut proc = ArrivalProcess::uniform(30.0, cat.len(), 1, 10.0);
        proc.horizon_secs = -1.0;
        assert!(generate_arrivals(&proc, &cat).is_err());
        let mut proc = ArrivalProcess::uniform(30.0, cat.len(), 1, 10.0);
        proc.mix[0] += 0.5;
        assert!(generate_arrivals(&proc, &cat).is_err());
    }

    #[test]
    fn mean_gap_close_to_inverse_rate() {
        let cat = test_catalog();
        let proc = ArrivalProcess::uniform(50.0, cat.len(), 9, 400.0);
        let trace = generate_arrivals(&proc, &cat).unwrap();
        assert!(trace.len() > 10_000);
        let span = trace.last().unwrap().arrival_us - trace[0].arrival_us;
        let mean_gap_s = crate::time::us_to_ms(span) / 1000.0 / (trace.len() - 1) as f64;
        let expect = 1.0 / 50.0;
        assert!(
            (mean_gap_s - expect).abs() / expect < 0.05,
            "mean gap {mean_gap_s} vs {expect}"
        );
    }

    #[test]
    fn slot_examples() {
        let b100: Vec<Request> = (0..4).map(|i| req(100.0, i)).collect();
        assert_eq!(scheduling_slot(&b100, 2).unwrap(), 200.0);
        assert_eq!(scheduling_slot(&[req(58.0, 0)], 1).unwrap(), 58.0);
        let mixed = vec![req(138.0, 0), req(86.0, 1), req(58.0, 2)];
        assert_eq!(scheduling_slot(&mixed, 3).unwrap(), 94.0);
    }

    #[test]
    fn slot_halves_exactly_when_concurrency_doubles() {
        let batch: Vec<Request> = (0..7).map(|i| req(37.5 + i as f64, i as i64)).collect();
        for m in [1u32, 2, 4] {
            let a = scheduling_slot(&batch, m).unwrap();
            let b = scheduling_slot(&batch, 2 * m).unwrap();
            assert_eq!(a / 2.0, b);
        }
        let sum: f64 = batch.iter().map(|r| r.slo_ms).sum();
        assert_eq!(scheduling_slot(&batch, 1).unwrap(), sum);
    }

    #[test]
    fn slot_errors() {
        assert!(scheduling_slot(&[], 1).is_err());
        assert!(scheduling_slot(&[req(58.0, 0)], 0).is_err());
    }
}
