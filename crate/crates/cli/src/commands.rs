//! Subcommand bodies. Each one fills an `Artifacts` directory; the caller adds
//! the manifest and commits.

use std::fmt::Write as _;
use std::path::Path;

use hbmlab_campaign::bypass::{run_bypass_campaign, BypassSpec};
use hbmlab_campaign::csv::{self, RunLabel};
use hbmlab_campaign::ecc::word_histogram;
use hbmlab_campaign::run::fit_population;
use hbmlab_campaign::{run_ber, run_hc, CampaignError, CampaignSpec, Experiment};
use hbmlab_core::calibrate::{fit_profile, parse_anchors, rowhammer_anchors};
use hbmlab_core::timing::{format_time_ns, parse_trace};
use hbmlab_core::{
    validate_trace, BlackBox, CalibrationError, Command, Device, DeviceError, Event, ProbePort, RefreshMode,
};
use hbmlab_probe::retention::RetentionParams;
use hbmlab_probe::{findings_csv, infer_trr, ProbeError, SideChannel, TrrFindings, TrrProbeParams};

use crate::config::{profile_text, CampaignSection, ParseError, RunConfig};
use crate::output::Artifacts;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Characterization {
    Ber,
    Hcfirst,
    Hcnth,
    Rowpress,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Action {
    Simulate { trace: std::path::PathBuf },
    Characterize(Characterization),
    Probe,
    Bypass,
    EccHist,
    FitProfile { anchors: Option<std::path::PathBuf> },
    ValidateTrace { trace: std::path::PathBuf },
}

impl Action {
    pub fn name(&self) -> String {
        match self {
            Action::Simulate { .. } => "simulate".into(),
            Action::Characterize(c) => format!("characterize {}", format!("{c:?}").to_lowercase()),
            Action::Probe => "probe".into(),
            Action::Bypass => "bypass".into(),
            Action::EccHist => "ecc-hist".into(),
            Action::FitProfile { .. } => "fit-profile".into(),
            Action::ValidateTrace { .. } => "validate-trace".into(),
        }
    }
}

/// Why a run failed, by exit status.
#[derive(Debug, Clone, PartialEq)]
pub enum Failure {
    Config(String),
    Campaign(String),
    Timing(String),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Config(_) => 2,
            Failure::Campaign(_) => 3,
            Failure::Timing(_) => 4,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Config(m) => write!(f, "config error: {m}"),
            Failure::Campaign(m) => write!(f, "campaign error: {m}"),
            Failure::Timing(m) => write!(f, "timing violation: {m}"),
        }
    }
}

impl From<ParseError> for Failure {
    fn from(e: ParseError) -> Self {
        Failure::Config(e.to_string())
    }
}

impl From<DeviceError> for Failure {
    fn from(e: DeviceError) -> Self {
        match e {
            DeviceError::Timing(_) => Failure::Timing(e.to_string()),
            _ => Failure::Campaign(e.to_string()),
        }
    }
}

impl From<CampaignError> for Failure {
    fn from(e: CampaignError) -> Self {
        match e {
            CampaignError::Device(d) => d.into(),
            // the campaign spec is part of the run config
            CampaignError::Config(_) | CampaignError::Spec(_) | CampaignError::RetentionWindow { .. } => {
                Failure::Config(e.to_string())
            }
            CampaignError::Synthesis(_) | CampaignError::Io(_) => Failure::Campaign(e.to_string()),
        }
    }
}

impl From<ProbeError> for Failure {
    fn from(e: ProbeError) -> Self {
        match e {
            ProbeError::Device(d) => d.into(),
            ProbeError::Parameter(_) => Failure::Config(e.to_string()),
            _ => Failure::Campaign(e.to_string()),
        }
    }
}

impl From<CalibrationError> for Failure {
    fn from(e: CalibrationError) -> Self {
        match e {
            CalibrationError::Infeasible(_) => Failure::Campaign(e.to_string()),
            _ => Failure::Config(e.to_string()),
        }
    }
}

impl From<hbmlab_core::ConfigError> for Failure {
    fn from(e: hbmlab_core::ConfigError) -> Self {
        Failure::Config(e.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Campaign(format!("i/o: {e}"))
    }
}

fn read_input(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| Failure::Config(format!("cannot read {}: {e}", path.display())))
}

fn load_trace(path: &Path) -> Result<Vec<Command>, Failure> {
    parse_trace(&read_input(path)?).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))
}

pub fn campaign_spec(cfg: &RunConfig, experiment: Experiment) -> CampaignSpec {
    let mut s = CampaignSpec::defaults(experiment, &cfg.device.geometry, cfg.scale, cfg.seed);
    cfg.campaign.apply(&mut s);
    s
}

fn label(spec: &CampaignSpec) -> RunLabel {
    RunLabel { seed: spec.seed, chip: spec.chip }
}

pub fn execute(action: &Action, cfg: &RunConfig, art: &mut Artifacts) -> Result<(), Failure> {
    match action {
        Action::Simulate { trace } => simulate(cfg, &load_trace(trace)?, art),
        Action::ValidateTrace { trace } => validate(cfg, &load_trace(trace)?, art),
        Action::Characterize(kind) => characterize(cfg, *kind, art),
        Action::Probe => probe(cfg, art),
        Action::Bypass => bypass(cfg, art),
        Action::EccHist => ecc_hist(cfg, art),
        Action::FitProfile { anchors } => fit(cfg, anchors.as_deref(), art),
    }
}

fn simulate(cfg: &RunConfig, trace: &[Command], art: &mut Artifacts) -> Result<(), Failure> {
    let mut dev = Device::new(cfg.device.clone())?;
    let mut s = String::from("index,time_ns,event,channel,pch,bank,row,value\n");
    for (i, &cmd) in trace.iter().enumerate() {
        let t = format_time_ns(cmd.time_ps);
        let events = dev.issue(cmd).map_err(|e| match e {
            DeviceError::Timing(v) => Failure::Timing(format!("trace command {}: {v}", i + 1)),
            e => Failure::Campaign(format!("trace command {}: {e}", i + 1)),
        })?;
        for ev in events {
            let (name, b, row, value) = match ev {
                Event::Activated { bank, row } => ("act", bank, row.to_string(), String::new()),
                Event::Closed { bank, row, t_on_ns, .. } => ("pre", bank, row.to_string(), csv::fmt_float(t_on_ns)),
                Event::Read { bank, row, data } => {
                    let ones: u32 = data.iter().map(|w| w.count_ones()).sum();
                    ("rd_ones", bank, row.to_string(), ones.to_string())
                }
                Event::Refreshed { channel, pseudo_channel, rows } => (
                    "ref_rows",
                    hbmlab_core::BankId::new(channel, pseudo_channel, 0),
                    String::new(),
                    rows.len().to_string(),
                ),
                Event::TrrRefresh { bank, victims } => ("trr_victims", bank, String::new(), victims.len().to_string()),
                Event::Violation(v) => ("violation", cmd.bank, cmd.row.to_string(), v.parameter.to_string()),
            };
            let _ = writeln!(s, "{},{t},{name},{},{},{},{row},{value}", i + 1, b.channel, b.pseudo_channel, b.bank);
        }
    }
    art.write("events.csv", &s)?;
    Ok(())
}

fn validate(cfg: &RunConfig, trace: &[Command], art: &mut Artifacts) -> Result<(), Failure> {
    let violations = validate_trace(trace, &cfg.device.timing, &cfg.device.geometry);
    if cfg.device.strict_timing {
        if let Some(first) = violations.first() {
            for v in &violations {
                eprintln!("{v}");
            }
            return Err(Failure::Timing(format!("{} violation(s), first: {first}", violations.len())));
        }
    }
    let mut s = String::from("command,time_ns,parameter,detail\n");
    for v in &violations {
        let detail = v.detail.replace(',', ";");
        let _ = writeln!(s, "{},{},{},{}", v.index, csv::fmt_float(v.time_ns), v.parameter, detail);
    }
    art.write("violations.csv", &s)?;
    Ok(())
}

fn characterize(cfg: &RunConfig, kind: Characterization, art: &mut Artifacts) -> Result<(), Failure> {
    let ber = |exp: Experiment, art: &mut Artifacts| -> Result<(), Failure> {
        let spec = campaign_spec(cfg, exp);
        let recs = run_ber(&cfg.device, &spec, cfg.jobs)?;
        art.write("ber.csv", &csv::ber_csv(label(&spec), &recs))?;
        art.write("ber_raw.csv", &csv::ber_raw_csv(label(&spec), &recs))?;
        Ok(())
    };
    let hc = |exp: Experiment, art: &mut Artifacts| -> Result<(), Failure> {
        let spec = campaign_spec(cfg, exp);
        let recs = run_hc(&cfg.device, &spec, cfg.jobs)?;
        art.write("hc.csv", &csv::hc_csv(label(&spec), &recs))?;
        art.write("hc_raw.csv", &csv::hc_raw_csv(label(&spec), &recs))?;
        Ok(())
    };
    match kind {
        Characterization::Ber => ber(Experiment::Ber, art),
        Characterization::Hcfirst => hc(Experiment::Hcfirst, art),
        Characterization::Hcnth => hc(Experiment::Hcnth, art),
        Characterization::Rowpress => {
            ber(Experiment::RowpressBer, art)?;
            hc(Experiment::RowpressHcfirst, art)
        }
    }
}

fn bypass(cfg: &RunConfig, art: &mut Artifacts) -> Result<(), Failure> {
    let c = &cfg.campaign;
    let mut spec = BypassSpec::defaults(&cfg.device.timing);
    if let Some(v) = &c.dummies {
        spec.dummies = v.clone();
    }
    if let Some(v) = &c.agg_hc {
        spec.agg_hc = v.clone();
    }
    if let Some(v) = c.victims {
        spec.victims = v;
    }
    if let Some(v) = c.intervals {
        spec.intervals = v;
    }
    if let Some(p) = c.patterns.as_ref().and_then(|p| p.first()) {
        spec.pattern = *p;
    }
    let recs = run_bypass_campaign(&cfg.device, &spec, cfg.jobs)?;
    art.write("bypass.csv", &csv::bypass_csv(&recs))?;
    Ok(())
}

fn ecc_hist(cfg: &RunConfig, art: &mut Artifacts) -> Result<(), Failure> {
    let spec = campaign_spec(cfg, Experiment::EccHist);
    let recs = run_ber(&cfg.device, &spec, cfg.jobs)?;
    let word_bits = cfg.campaign.word_bits.unwrap_or(64);
    let maps = recs.iter().flat_map(|r| r.flip_maps.iter().map(Vec::as_slice));
    let hist = word_histogram(maps, cfg.device.geometry.row_size_bits, word_bits)?;
    art.write("ecc.csv", &csv::ecc_csv(&hist))?;
    art.write("ber.csv", &csv::ber_csv(label(&spec), &recs))?;
    Ok(())
}

fn fit(cfg: &RunConfig, anchors: Option<&Path>, art: &mut Artifacts) -> Result<(), Failure> {
    let anchors = match anchors {
        Some(p) => parse_anchors(&read_input(p)?).map_err(|e| Failure::Config(format!("{}: {e}", p.display())))?,
        None => rowhammer_anchors(),
    };
    let spec = campaign_spec(cfg, Experiment::Hcfirst);
    let pop = fit_population(&cfg.device, &spec);
    let report = fit_profile(&anchors, &cfg.device.profile, &pop)?;
    let mut s = String::from("anchor,target,achieved,tolerance,ok\n");
    for o in &report.outcomes {
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            o.name,
            csv::fmt_float(o.target),
            csv::fmt_float(o.achieved),
            csv::fmt_float(o.tolerance),
            o.ok()
        );
    }
    art.write("fit.csv", &s)?;
    art.write("profile.toml", &profile_text(&report.profile))?;
    Ok(())
}

/// Builds the probe target and hands out nothing but its command surface.
fn probe(cfg: &RunConfig, art: &mut Artifacts) -> Result<(), Failure> {
    let mut dev_cfg = cfg.device.clone();
    dev_cfg.refresh = RefreshMode::Disabled;
    let mut dev = Device::new(dev_cfg)?;
    let findings = probe_black_box(&mut BlackBox::new(&mut dev), &cfg.campaign)?;
    art.write("findings.csv", &findings_csv(&findings))?;
    art.write("findings.txt", &findings.to_string())?;
    Ok(())
}

const PROBE_BANKS: u32 = 4;

/// TRR inference over a port; sees the campaign section and nothing else.
pub fn probe_black_box<P: ProbePort>(port: &mut P, campaign: &CampaignSection) -> Result<TrrFindings, Failure> {
    let rows = port.geometry().rows_per_bank;
    let [start, count] = campaign.probe_rows.unwrap_or([rows / 4, 1536.min(rows / 2)]);
    if count == 0 || start.checked_add(count).map_or(true, |end| end > rows) {
        return Err(Failure::Config(format!("probe_rows [{start}, {count}] exceed the bank of {rows} rows")));
    }
    let banks = PROBE_BANKS.min(port.geometry().banks_per_pseudo_channel);
    let params = RetentionParams { cap_ms: 64, ..RetentionParams::default() };
    let side = SideChannel::survey(port, 0, 0, banks, start..start + count, &params)?;
    Ok(infer_trr(port, &side, &TrrProbeParams::default())?)
}
