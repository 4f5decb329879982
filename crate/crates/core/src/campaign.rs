//! Monte Carlo fault-injection campaigns.
//!
//! For every sweep point the campaign injects M independent faults, measures
//! the faulty Bayesian accuracy on an evaluation subset, classifies the fault
//! as benign or critical and records a full (no early stop) test session.
//! Fault-free control sessions give the false-positive rate. Verdicts at any
//! positive query length are replayed from the recorded sessions.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detector::{
    fit_profile, fit_profile_averaged, record_session, run_test_session, Decision, Device, TestKit, UncertaintyProfile,
    ESTIMATION_INFERENCES,
};
use crate::engine::{BinaryNetwork, DropoutBank, Sharing};
use crate::error::{Error, Result};
use crate::faults::{inject, FaultContext, FaultKind, FaultLocation, FaultSpec};
use crate::inference::DEFAULT_PASSES;
use crate::tensor::{mean, population_std, RngStream};
use crate::trainer::{evaluate_accuracy, Sample};

// Top-level stream labels under the master seed.
const SWEEP_STREAM: u64 = 1;
const CONTROL_STREAM: u64 = 2;
const ACCURACY_STREAM: u64 = 3;
const REFIT_STREAM: u64 = 4;
const ESTIMATION_CONTROL_STREAM: u64 = 5;
const ESTIMATION_FIT_STREAM: u64 = 6;

// Slack on the criticality threshold so that an accuracy drop equal to the
// threshold up to float noise stays benign.
const DROP_SLACK: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub name: String,
    pub fault: FaultSpec,
    /// Fault rates, or sigmas for the Gaussian kinds.
    pub values: Vec<f64>,
    /// Run this sweep on a device whose dropout modules are shared differently.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sharing: Option<Sharing>,
}

impl SweepConfig {
    pub fn new(name: &str, fault: FaultSpec, values: &[f64]) -> Self {
        SweepConfig { name: name.to_string(), fault, values: values.to_vec(), sharing: None }
    }

    pub fn shared(mut self, sharing: Sharing) -> Self {
        self.sharing = Some(sharing);
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CampaignConfig {
    /// Artifact paths, resolved by the command-line front end.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kit: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dataset: Option<PathBuf>,
    pub sweeps: Vec<SweepConfig>,
    pub injections: usize,
    pub eval_subset: usize,
    pub accuracy_passes: usize,
    pub delta_acc: f64,
    pub query_length: usize,
    pub passes: usize,
    pub l_values: Vec<usize>,
    /// Fault-free sessions per device variant; defaults to `injections`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub control_sessions: Option<usize>,
    /// Also measure the false-positive rate of the estimation-based detector.
    pub estimation_controls: bool,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
}

impl Default for CampaignConfig {
    fn default() -> Self {
        CampaignConfig {
            model: None,
            kit: None,
            dataset: None,
            sweeps: reference_sweeps(),
            injections: 100,
            eval_subset: 200,
            accuracy_passes: DEFAULT_PASSES,
            delta_acc: 0.01,
            query_length: crate::detector::DEFAULT_QUERY_LENGTH,
            passes: DEFAULT_PASSES,
            l_values: (1..=10).collect(),
            control_sessions: None,
            estimation_controls: false,
            seed: 1,
            threads: None,
        }
    }
}

/// Fault families and grids mirroring the accuracy, coverage and
/// zero-uncertainty experiments.
pub fn reference_sweeps() -> Vec<SweepConfig> {
    use FaultKind::*;
    use FaultLocation::*;
    let rates = [0.0, 0.05, 0.10, 0.20, 0.30];
    let sigmas = [0.0, 0.05, 0.1, 0.2, 0.3];
    let module_rates = [0.0, 0.05, 0.10, 0.20];
    vec![
        SweepConfig::new("weight_stuck_at_0", FaultSpec::with_rate(WeightCells, StuckAt0, 0.0), &rates),
        SweepConfig::new("weight_stuck_at_1", FaultSpec::with_rate(WeightCells, StuckAt1, 0.0), &rates),
        SweepConfig::new("weight_bit_flip", FaultSpec::with_rate(WeightCells, BitFlip, 0.0), &rates),
        SweepConfig::new("buffer_stuck_at_0", FaultSpec::with_rate(BufferMemory, StuckAt0, 0.0), &rates),
        SweepConfig::new("buffer_bit_flip", FaultSpec::with_rate(BufferMemory, BitFlip, 0.0), &rates),
        SweepConfig::new(
            "mac_multiplicative",
            FaultSpec::with_sigma(MacConductance, MultiplicativeGaussian, 0.0),
            &sigmas,
        ),
        SweepConfig::new("mac_additive", FaultSpec::with_sigma(MacConductance, AdditiveGaussian, 0.0), &sigmas),
        SweepConfig::new("dropout_stuck_at_0", FaultSpec::with_rate(DropoutModule, StuckAt0, 0.0), &module_rates),
        SweepConfig::new("dropout_stuck_at_1", FaultSpec::with_rate(DropoutModule, StuckAt1, 0.0), &module_rates),
        SweepConfig::new("dropout_bit_flip", FaultSpec::with_rate(DropoutModule, BitFlip, 0.0), &module_rates),
        SweepConfig::new(
            "dropout_prob_variation",
            FaultSpec::with_sigma(DropoutModule, DropProbVariation, 0.0),
            &sigmas,
        ),
        SweepConfig::new("global_dropout_stuck_at_0", FaultSpec::with_rate(DropoutModule, StuckAt0, 0.0), &[1.0])
            .shared(Sharing::GlobalShared),
        SweepConfig::new("global_dropout_stuck_at_1", FaultSpec::with_rate(DropoutModule, StuckAt1, 0.0), &[1.0])
            .shared(Sharing::GlobalShared),
    ]
}

impl CampaignConfig {
    pub fn controls(&self) -> usize {
        self.control_sessions.unwrap_or(self.injections)
    }

    pub fn validate(&self, kit_size: usize) -> Result<()> {
        if self.injections == 0 {
            return Err(Error::Config("injections per point must be at least 1".into()));
        }
        if !(self.delta_acc > 0.0 && self.delta_acc.is_finite()) {
            return Err(Error::Config(format!("delta_acc must be > 0, got {}", self.delta_acc)));
        }
        if self.eval_subset == 0 || self.accuracy_passes == 0 || self.passes < 2 || self.controls() == 0 {
            return Err(Error::Config(
                "eval_subset, accuracy_passes and control sessions must be positive, passes >= 2".into(),
            ));
        }
        if self.threads == Some(0) {
            return Err(Error::Config("threads must be at least 1".into()));
        }
        for &l in self.l_values.iter().chain([&self.query_length]) {
            if l == 0 || l > kit_size {
                return Err(Error::spec(format!("positive query length {l} outside 1..={kit_size}")));
            }
        }
        for s in &self.sweeps {
            for &v in &s.values {
                s.fault.at(v).validate().map_err(|e| Error::Config(format!("sweep {}: {e}", s.name)))?;
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum FaultClass {
    Benign,
    Critical,
}

/// Critical when the accuracy drop strictly exceeds `delta_acc`.
pub fn classify_fault(acc_clean: f64, acc_faulty: f64, delta_acc: f64) -> FaultClass {
    if acc_clean - acc_faulty > delta_acc + DROP_SLACK {
        FaultClass::Critical
    } else {
        FaultClass::Benign
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InjectionRecord {
    pub sweep: usize,
    pub point: usize,
    pub injection: usize,
    pub accuracy: f64,
    pub class: FaultClass,
    /// Indices (in query order) of positive test queries.
    pub positive_queries: Vec<usize>,
}

impl InjectionRecord {
    pub fn faulty_at(&self, query_length: usize) -> bool {
        self.positive_queries.len() >= query_length
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointResult {
    pub sweep: String,
    pub location: FaultLocation,
    pub kind: FaultKind,
    pub value: f64,
    pub sharing: Sharing,
    pub clean_accuracy: f64,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
    pub min_accuracy: f64,
    pub max_accuracy: f64,
    pub benign: usize,
    pub critical: usize,
    pub detected_benign: usize,
    pub detected_critical: usize,
    /// None when no injection of that class occurred.
    pub coverage_critical: Option<f64>,
    pub coverage_benign: Option<f64>,
    pub fpr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlResult {
    pub sharing: Sharing,
    pub profile: UncertaintyProfile,
    pub clean_accuracy: f64,
    pub sessions: usize,
    /// Positive count of each fault-free session.
    pub positives: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub estimation: Option<EstimationControl>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimationControl {
    pub inferences: usize,
    pub profile: UncertaintyProfile,
    pub positives: Vec<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FprPoint {
    pub query_length: usize,
    pub fpr: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub query_length: usize,
    pub tpr_critical: Option<f64>,
    pub tpr_benign: Option<f64>,
    pub fpr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepInfo {
    pub name: String,
    pub sharing: Sharing,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CampaignResult {
    pub seed: u64,
    pub sweeps: Vec<SweepInfo>,
    pub l_values: Vec<usize>,
    pub injections: usize,
    pub query_length: usize,
    pub test_vectors: usize,
    pub passes: usize,
    pub delta_acc: f64,
    pub points: Vec<PointResult>,
    pub controls: Vec<ControlResult>,
    pub records: Vec<InjectionRecord>,
}

impl CampaignResult {
    pub fn control(&self, sharing: Sharing) -> Option<&ControlResult> {
        self.controls.iter().find(|c| c.sharing == sharing)
    }

    pub fn sweep_records(&self, sweep: usize) -> Vec<&InjectionRecord> {
        self.records.iter().filter(|r| r.sweep == sweep).collect()
    }
}

/// Fraction of sessions with at least `query_length` positives.
pub fn fpr_from_counts(positives: &[usize], query_length: usize) -> f64 {
    if positives.is_empty() {
        return 0.0;
    }
    positives.iter().filter(|&&c| c >= query_length).count() as f64 / positives.len() as f64
}

fn rate(hit: usize, total: usize) -> Option<f64> {
    (total > 0).then(|| hit as f64 / total as f64)
}

/// Re-threshold recorded sessions at each L.
pub fn roc_sweep(
    records: &[&InjectionRecord],
    control_positives: &[usize],
    n_queries: usize,
    l_values: &[usize],
) -> Result<Vec<RocPoint>> {
    l_values
        .iter()
        .map(|&l| {
            if l == 0 || l > n_queries {
                return Err(Error::spec(format!("positive query length {l} outside 1..={n_queries}")));
            }
            let count = |class: FaultClass| {
                let of: Vec<_> = records.iter().filter(|r| r.class == class).collect();
                rate(of.iter().filter(|r| r.faulty_at(l)).count(), of.len())
            };
            Ok(RocPoint {
                query_length: l,
                tpr_critical: count(FaultClass::Critical),
                tpr_benign: count(FaultClass::Benign),
                fpr: fpr_from_counts(control_positives, l),
            })
        })
        .collect()
}

/// Fraction of `trials` fault-free live sessions (trial `c` uses
/// `stream.derive(c)`) that end Faulty.
pub fn estimate_fpr(
    device: &Device<'_>,
    kit: &TestKit,
    query_length: usize,
    passes: usize,
    trials: usize,
    stream: &RngStream,
) -> Result<f64> {
    if trials == 0 {
        return Err(Error::contract("FPR estimation needs at least one trial"));
    }
    let faulty = (0..trials as u64)
        .into_par_iter()
        .map(|c| run_test_session(device, &kit.vectors, &kit.profile, query_length, passes, &stream.derive(c)))
        .collect::<Result<Vec<_>>>()?
        .iter()
        .filter(|v| v.decision == Decision::Faulty)
        .count();
    Ok(faulty as f64 / trials as f64)
}

struct Variant {
    sharing: Sharing,
    net: BinaryNetwork,
    profile: UncertaintyProfile,
    clean_accuracy: f64,
}

fn positive_count(
    device: &Device<'_>,
    kit: &TestKit,
    profile: &UncertaintyProfile,
    passes: usize,
    inferences: usize,
    stream: &RngStream,
) -> Result<usize> {
    let rec = record_session(device, &kit.vectors, profile, passes, inferences, stream)?;
    Ok(rec.iter().filter(|q| q.positive).count())
}

/// Run every sweep of `cfg` against `net` with the stored test kit.
pub fn run_campaign(
    net: &BinaryNetwork,
    kit: &TestKit,
    eval: &[Sample],
    cfg: &CampaignConfig,
) -> Result<CampaignResult> {
    kit.validate()?;
    cfg.validate(kit.vectors.len())?;
    if eval.is_empty() {
        return Err(Error::Config("campaign needs a non-empty evaluation split".into()));
    }
    match cfg.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?
            .install(|| campaign_body(net, kit, eval, cfg)),
        None => campaign_body(net, kit, eval, cfg),
    }
}

fn campaign_body(net: &BinaryNetwork, kit: &TestKit, eval: &[Sample], cfg: &CampaignConfig) -> Result<CampaignResult> {
    let master = RngStream::new(cfg.seed);
    let subset = &eval[..cfg.eval_subset.min(eval.len())];
    let acc_stream = master.derive(ACCURACY_STREAM);

    // One device variant per distinct sharing scope; the kit's own scope first.
    let mut scopes = vec![kit.sharing];
    for s in &cfg.sweeps {
        let sh = s.sharing.unwrap_or(kit.sharing);
        if !scopes.contains(&sh) {
            scopes.push(sh);
        }
    }
    let clean_ctx = FaultContext::clean();
    let mut variants = Vec::new();
    let mut controls = Vec::new();
    for (vi, &sharing) in scopes.iter().enumerate() {
        let vnet = net.with_sharing(sharing);
        let bank = DropoutBank::new(&vnet);
        let device = Device::new(&vnet, &bank, &clean_ctx);
        let profile = if sharing == kit.sharing {
            kit.profile.clone()
        } else {
            fit_profile(
                &device,
                &kit.vectors,
                kit.fit_repetitions,
                cfg.passes,
                &master.derive(REFIT_STREAM).derive(vi as u64),
            )?
        };
        let clean_accuracy = evaluate_accuracy(&vnet, subset, cfg.accuracy_passes, &bank, &clean_ctx, &acc_stream)?;
        let ctl = master.derive(CONTROL_STREAM);
        let positives = (0..cfg.controls() as u64)
            .into_par_iter()
            .map(|c| positive_count(&device, kit, &profile, cfg.passes, 1, &ctl.derive(c)))
            .collect::<Result<Vec<_>>>()?;
        let estimation = if cfg.estimation_controls {
            let eprofile = fit_profile_averaged(
                &device,
                &kit.vectors,
                kit.fit_repetitions,
                cfg.passes,
                ESTIMATION_INFERENCES,
                &master.derive(ESTIMATION_FIT_STREAM).derive(vi as u64),
            )?;
            let ectl = master.derive(ESTIMATION_CONTROL_STREAM);
            let positives = (0..cfg.controls() as u64)
                .into_par_iter()
                .map(|c| positive_count(&device, kit, &eprofile, cfg.passes, ESTIMATION_INFERENCES, &ectl.derive(c)))
                .collect::<Result<Vec<_>>>()?;
            Some(EstimationControl { inferences: ESTIMATION_INFERENCES, profile: eprofile, positives })
        } else {
            None
        };
        controls.push(ControlResult {
            sharing,
            profile: profile.clone(),
            clean_accuracy,
            sessions: cfg.controls(),
            positives,
            estimation,
        });
        variants.push(Variant { sharing, net: vnet, profile, clean_accuracy });
    }

    let mut jobs = Vec::new();
    for (si, s) in cfg.sweeps.iter().enumerate() {
        for pi in 0..s.values.len() {
            for m in 0..cfg.injections {
                jobs.push((si, pi, m));
            }
        }
    }
    let sweep_root = master.derive(SWEEP_STREAM);
    let records = jobs
        .par_iter()
        .map(|&(si, pi, m)| {
            let sweep = &cfg.sweeps[si];
            let variant = variants.iter().find(|v| v.sharing == sweep.sharing.unwrap_or(kit.sharing)).unwrap();
            let inj = sweep_root.derive(si as u64).derive(pi as u64).derive(m as u64);
            let mut bank = DropoutBank::new(&variant.net);
            let ctx = inject(&variant.net, &mut bank, &sweep.fault.at(sweep.values[pi]), &mut inj.derive(0))?;
            let accuracy = evaluate_accuracy(&variant.net, subset, cfg.accuracy_passes, &bank, &ctx, &acc_stream)?;
            let device = Device::new(&variant.net, &bank, &ctx);
            let rec = record_session(&device, &kit.vectors, &variant.profile, cfg.passes, 1, &inj.derive(2))?;
            Ok(InjectionRecord {
                sweep: si,
                point: pi,
                injection: m,
                accuracy,
                class: classify_fault(variant.clean_accuracy, accuracy, cfg.delta_acc),
                positive_queries: rec.iter().enumerate().filter(|(_, q)| q.positive).map(|(k, _)| k).collect(),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut by_point: BTreeMap<(usize, usize), Vec<&InjectionRecord>> = BTreeMap::new();
    for r in &records {
        by_point.entry((r.sweep, r.point)).or_default().push(r);
    }
    let mut points = Vec::new();
    for ((si, pi), recs) in by_point {
        let sweep = &cfg.sweeps[si];
        let sharing = sweep.sharing.unwrap_or(kit.sharing);
        let control = controls.iter().find(|c| c.sharing == sharing).unwrap();
        let accs: Vec<f64> = recs.iter().map(|r| r.accuracy).collect();
        let of = |class| recs.iter().filter(|r| r.class == class).count();
        let det = |class| recs.iter().filter(|r| r.class == class && r.faulty_at(cfg.query_length)).count();
        let (benign, critical) = (of(FaultClass::Benign), of(FaultClass::Critical));
        let (detected_benign, detected_critical) = (det(FaultClass::Benign), det(FaultClass::Critical));
        points.push(PointResult {
            sweep: sweep.name.clone(),
            location: sweep.fault.location,
            kind: sweep.fault.kind,
            value: sweep.values[pi],
            sharing,
            clean_accuracy: control.clean_accuracy,
            mean_accuracy: mean(&accs),
            std_accuracy: population_std(&accs),
            min_accuracy: accs.iter().copied().fold(f64::INFINITY, f64::min),
            max_accuracy: accs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            benign,
            critical,
            detected_benign,
            detected_critical,
            coverage_critical: rate(detected_critical, critical),
            coverage_benign: rate(detected_benign, benign),
            fpr: fpr_from_counts(&control.positives, cfg.query_length),
        });
    }

    Ok(CampaignResult {
        seed: cfg.seed,
        sweeps: cfg
            .sweeps
            .iter()
            .map(|s| SweepInfo { name: s.name.clone(), sharing: s.sharing.unwrap_or(kit.sharing) })
            .collect(),
        l_values: cfg.l_values.clone(),
        injections: cfg.injections,
        query_length: cfg.query_length,
        test_vectors: kit.vectors.len(),
        passes: cfg.passes,
        delta_acc: cfg.delta_acc,
        points,
        controls,
        records,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

fn sharing_name(s: Sharing) -> &'static str {
    match s {
        Sharing::PerColumn => "per_column",
        Sharing::LayerShared => "layer_shared",
        Sharing::GlobalShared => "global_shared",
    }
}

pub const ACCURACY_HEADER: &str =
    "sweep,location,kind,value,sharing,clean_accuracy,mean_accuracy,std_accuracy,min_accuracy,max_accuracy";
pub const COVERAGE_HEADER: &str =
    "sweep,value,injections,benign,critical,detected_benign,detected_critical,coverage_critical,coverage_benign,fpr";
pub const FPR_HEADER: &str = "sharing,detector,inferences_per_query,L,fpr";
pub const ROC_HEADER: &str = "sweep,L,tpr_critical,tpr_benign,fpr";

pub fn accuracy_csv(res: &CampaignResult) -> String {
    let mut out = format!("{ACCURACY_HEADER}\n");
    for p in &res.points {
        writeln!(
            out,
            "{},{:?},{:?},{:.6},{},{:.6},{:.6},{:.6},{:.6},{:.6}",
            p.sweep,
            p.location,
            p.kind,
            p.value,
            sharing_name(p.sharing),
            p.clean_accuracy,
            p.mean_accuracy,
            p.std_accuracy,
            p.min_accuracy,
            p.max_accuracy
        )
        .unwrap();
    }
    out
}

pub fn coverage_csv(res: &CampaignResult) -> String {
    let mut out = format!("{COVERAGE_HEADER}\n");
    for p in &res.points {
        writeln!(
            out,
            "{},{:.6},{},{},{},{},{},{},{},{:.6}",
            p.sweep,
            p.value,
            p.benign + p.critical,
            p.benign,
            p.critical,
            p.detected_benign,
            p.detected_critical,
            opt(p.coverage_critical),
            opt(p.coverage_benign),
            p.fpr
        )
        .unwrap();
    }
    out
}

pub fn fpr_csv(res: &CampaignResult) -> String {
    let l_values = &res.l_values;
    let mut out = format!("{FPR_HEADER}\n");
    for c in &res.controls {
        for &l in l_values {
            writeln!(out, "{},vote,1,{l},{:.6}", sharing_name(c.sharing), fpr_from_counts(&c.positives, l)).unwrap();
        }
        if let Some(e) = &c.estimation {
            for &l in l_values {
                writeln!(
                    out,
                    "{},estimation,{},{l},{:.6}",
                    sharing_name(c.sharing),
                    e.inferences,
                    fpr_from_counts(&e.positives, l)
                )
                .unwrap();
            }
        }
    }
    out
}

/// ROC rows per sweep (against that sweep's control sessions) plus an
/// `all` block over every injection on the kit's own device.
pub fn roc_table(res: &CampaignResult, l_values: &[usize]) -> Result<Vec<(String, Vec<RocPoint>)>> {
    let missing = || Error::spec("campaign result lacks control sessions");
    let mut table = Vec::new();
    for (si, s) in res.sweeps.iter().enumerate() {
        let control = res.control(s.sharing).ok_or_else(missing)?;
        table
            .push((s.name.clone(), roc_sweep(&res.sweep_records(si), &control.positives, res.test_vectors, l_values)?));
    }
    let home = res.controls.first().ok_or_else(missing)?;
    let all: Vec<&InjectionRecord> =
        res.records.iter().filter(|r| res.sweeps[r.sweep].sharing == home.sharing).collect();
    table.push(("all".to_string(), roc_sweep(&all, &home.positives, res.test_vectors, l_values)?));
    Ok(table)
}

pub fn roc_csv(table: &[(String, Vec<RocPoint>)]) -> String {
    let mut out = format!("{ROC_HEADER}\n");
    for (name, pts) in table {
        for p in pts {
            writeln!(out, "{name},{},{},{},{:.6}", p.query_length, opt(p.tpr_critical), opt(p.tpr_benign), p.fpr)
                .unwrap();
        }
    }
    out
}

#[derive(Serialize)]
struct Summary<'a> {
    seed: u64,
    injections: usize,
    query_length: usize,
    test_vectors: usize,
    passes: usize,
    delta_acc: f64,
    points: &'a [PointResult],
    fpr: Vec<SummaryFpr>,
    roc: Vec<SummaryRoc<'a>>,
}

#[derive(Serialize)]
struct SummaryFpr {
    sharing: Sharing,
    profile: UncertaintyProfile,
    clean_accuracy: f64,
    vote: Vec<FprPoint>,
    #[serde(skip_serializing_if = "Option::is_none")]
    estimation: Option<Vec<FprPoint>>,
}

#[derive(Serialize)]
struct SummaryRoc<'a> {
    sweep: &'a str,
    points: &'a [RocPoint],
}

fn fpr_points(positives: &[usize], l_values: &[usize]) -> Vec<FprPoint> {
    l_values.iter().map(|&l| FprPoint { query_length: l, fpr: fpr_from_counts(positives, l) }).collect()
}

pub fn summary_json(res: &CampaignResult) -> Result<String> {
    let table = roc_table(res, &res.l_values)?;
    let summary = Summary {
        seed: res.seed,
        injections: res.injections,
        query_length: res.query_length,
        test_vectors: res.test_vectors,
        passes: res.passes,
        delta_acc: res.delta_acc,
        points: &res.points,
        fpr: res
            .controls
            .iter()
            .map(|c| SummaryFpr {
                sharing: c.sharing,
                profile: c.profile.clone(),
                clean_accuracy: c.clean_accuracy,
                vote: fpr_points(&c.positives, &res.l_values),
                estimation: c.estimation.as_ref().map(|e| fpr_points(&e.positives, &res.l_values)),
            })
            .collect(),
        roc: table.iter().map(|(n, p)| SummaryRoc { sweep: n, points: p }).collect(),
    };
    Ok(serde_json::to_string_pretty(&summary).expect("summary serializes") + "\n")
}

pub const RECORDS_FILE: &str = "records.json";
pub const REPORT_FILES: [&str; 6] =
    ["accuracy_sweep.csv", "coverage.csv", "fpr.csv", "roc.csv", "summary.json", RECORDS_FILE];

/// Write every report into `dir`; returns the paths in `REPORT_FILES` order.
/// `records.json` holds the whole result so ROC can be replayed later.
pub fn write_reports(res: &CampaignResult, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|source| Error::Io { path: dir.display().to_string(), source })?;
    let table = roc_table(res, &res.l_values)?;
    let bodies = [
        accuracy_csv(res),
        coverage_csv(res),
        fpr_csv(res),
        roc_csv(&table),
        summary_json(res)?,
        serde_json::to_string(res).expect("records serialize") + "\n",
    ];
    let mut paths = Vec::new();
    for (name, body) in REPORT_FILES.iter().zip(bodies) {
        let path = dir.join(name);
        fs::write(&path, body).map_err(|source| Error::Io { path: path.display().to_string(), source })?;
        paths.push(path);
    }
    Ok(paths)
}
