//! Run configuration: `[section]` headers with line-oriented `key = value`
//! entries. Values use TOML literal syntax (`17`, `0.25`, `"paper"`, `[1, 2]`,
//! `{ scheme = "group_swap", group = 1 }`).
//!
//! Sections: `run` (seed, out, jobs, scale, trr_hidden), `device`, `timing`,
//! `profile` (inline keys, or a single `file = "path"`), `trr` and `campaign`.
//! Only the seed is mandatory.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};

use serde::de::{self, DeserializeOwned, Deserializer, Visitor};
use serde::{Deserialize, Serialize};

use hbmlab_campaign::{CampaignSpec, Scale};
use hbmlab_core::{DataPattern, DeviceConfig, FaultProfile, RefreshMode, RowMapping, SubarrayLayout, TimingParams, TrrConfig};

pub const SECTIONS: [&str; 6] = ["run", "device", "timing", "profile", "trr", "campaign"];

/// A parse or validation failure. `line` is `None` for command-line overrides
/// and whole-file problems.
#[derive(Debug, Clone, PartialEq)]
pub struct ParseError {
    pub file: Option<PathBuf>,
    pub line: Option<usize>,
    pub msg: String,
}

impl ParseError {
    fn at(line: Option<usize>, msg: impl Into<String>) -> Self {
        Self { file: None, line, msg: msg.into() }
    }
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(p) = &self.file {
            write!(f, "{}: ", p.display())?;
        }
        match self.line {
            Some(l) => write!(f, "line {l}: {}", self.msg),
            None => write!(f, "{}", self.msg),
        }
    }
}

impl std::error::Error for ParseError {}

#[derive(Debug, Clone, PartialEq)]
struct Entry {
    key: String,
    value: toml::Value,
    /// `None` for overrides from the command line.
    line: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
struct Section {
    name: String,
    line: Option<usize>,
    entries: Vec<Entry>,
}

fn strip_comment(line: &str) -> &str {
    let mut quoted = false;
    for (i, c) in line.char_indices() {
        match c {
            '"' => quoted = !quoted,
            '#' if !quoted => return &line[..i],
            _ => {}
        }
    }
    line
}

fn parse_value(raw: &str) -> Result<toml::Value, String> {
    let mut t: toml::Table = toml::from_str(&format!("v = {raw}")).map_err(|e| e.message().to_string())?;
    t.remove("v").ok_or_else(|| "missing value".to_string())
}

fn valid_key(k: &str) -> bool {
    !k.is_empty() && k.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
}

fn tokenize(text: &str) -> Result<Vec<Section>, ParseError> {
    let mut sections: Vec<Section> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let n = Some(i + 1);
        let line = strip_comment(raw).trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            let name = name.trim();
            if !SECTIONS.contains(&name) {
                return Err(ParseError::at(n, format!("unknown section [{name}]")));
            }
            if sections.iter().any(|s| s.name == name) {
                return Err(ParseError::at(n, format!("duplicate section [{name}]")));
            }
            sections.push(Section { name: name.to_string(), line: n, entries: Vec::new() });
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(ParseError::at(n, "expected `[section]` or `key = value`"));
        };
        let key = key.trim();
        if !valid_key(key) {
            return Err(ParseError::at(n, format!("invalid key `{key}`")));
        }
        let Some(sec) = sections.last_mut() else {
            return Err(ParseError::at(n, format!("key `{key}` outside any section")));
        };
        if sec.entries.iter().any(|e| e.key == key) {
            return Err(ParseError::at(n, format!("duplicate key `{key}` in [{}]", sec.name)));
        }
        let value = parse_value(value.trim()).map_err(|m| ParseError::at(n, format!("value of `{key}`: {m}")))?;
        sec.entries.push(Entry { key: key.to_string(), value, line: n });
    }
    Ok(sections)
}

/// Field names of a derived struct, read off its `Deserialize` impl.
fn field_names<T: DeserializeOwned>() -> &'static [&'static str] {
    struct Probe<'a>(&'a mut &'static [&'static str]);

    impl<'de> Deserializer<'de> for Probe<'_> {
        type Error = de::value::Error;

        fn deserialize_any<V: Visitor<'de>>(self, _: V) -> Result<V::Value, Self::Error> {
            Err(de::Error::custom("not a struct"))
        }

        fn deserialize_struct<V: Visitor<'de>>(
            self,
            _: &'static str,
            fields: &'static [&'static str],
            _: V,
        ) -> Result<V::Value, Self::Error> {
            *self.0 = fields;
            Err(de::Error::custom("probed"))
        }

        serde::forward_to_deserialize_any! {
            bool i8 i16 i32 i64 i128 u8 u16 u32 u64 u128 f32 f64 char str string
            bytes byte_buf option unit unit_struct newtype_struct seq tuple
            tuple_struct map enum identifier ignored_any
        }
    }

    let mut fields: &'static [&'static str] = &[];
    let _ = T::deserialize(Probe(&mut fields));
    fields
}

fn to_table<T: Serialize>(v: &T) -> toml::Table {
    toml::Table::try_from(v).expect("config structs serialize to tables")
}

/// Applies a section's entries on top of `base`, one key at a time so that a
/// bad value is reported at its own line. Returns the keys left at default.
fn apply_section<T: Serialize + DeserializeOwned>(
    base: &T,
    section: Option<&Section>,
) -> Result<(T, Vec<String>), ParseError> {
    let known = field_names::<T>();
    let mut table = to_table(base);
    let mut set = BTreeSet::new();
    if let Some(sec) = section {
        for e in &sec.entries {
            if !known.contains(&e.key.as_str()) {
                return Err(ParseError::at(e.line, format!("unknown key `{}` in [{}]", e.key, sec.name)));
            }
            table.insert(e.key.clone(), e.value.clone());
            T::deserialize(table.clone())
                .map_err(|err| ParseError::at(e.line, format!("`{}`: {}", e.key, err.message())))?;
            set.insert(e.key.as_str());
        }
    }
    let defaulted = known
        .iter()
        .filter(|k| !set.contains(*k) && table.contains_key(**k))
        .map(|k| k.to_string())
        .collect();
    let value = T::deserialize(table).map_err(|e| ParseError::at(section.and_then(|s| s.line), e.message().to_string()))?;
    Ok((value, defaulted))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RunSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    out: PathBuf,
    jobs: usize,
    scale: Scale,
    trr_hidden: bool,
}

impl Default for RunSection {
    fn default() -> Self {
        Self { seed: None, out: PathBuf::from("out"), jobs: 1, scale: Scale::Desk, trr_hidden: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DeviceSection {
    channels: u32,
    pseudo_channels_per_channel: u32,
    banks_per_pseudo_channel: u32,
    rows_per_bank: u32,
    row_size_bits: u32,
    mapping: RowMapping,
    /// Subarray sizes; absent selects the default layout for the bank size.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    layout: Option<Vec<u32>>,
    refresh: RefreshMode,
    strict_timing: bool,
}

impl DeviceSection {
    fn from_config(c: &DeviceConfig) -> Self {
        Self {
            channels: c.geometry.channels,
            pseudo_channels_per_channel: c.geometry.pseudo_channels_per_channel,
            banks_per_pseudo_channel: c.geometry.banks_per_pseudo_channel,
            rows_per_bank: c.geometry.rows_per_bank,
            row_size_bits: c.geometry.row_size_bits,
            mapping: c.mapping,
            layout: c.layout.as_ref().map(|l| l.sizes.clone()),
            refresh: c.refresh,
            strict_timing: c.strict_timing,
        }
    }

    fn apply(&self, c: &mut DeviceConfig) {
        c.geometry.channels = self.channels;
        c.geometry.pseudo_channels_per_channel = self.pseudo_channels_per_channel;
        c.geometry.banks_per_pseudo_channel = self.banks_per_pseudo_channel;
        c.geometry.rows_per_bank = self.rows_per_bank;
        c.geometry.row_size_bits = self.row_size_bits;
        c.mapping = self.mapping;
        c.layout = self.layout.clone().map(SubarrayLayout::new);
        c.refresh = self.refresh;
        c.strict_timing = self.strict_timing;
    }
}

/// Campaign overrides; anything absent keeps the per-experiment default.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CampaignSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub repetitions: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub patterns: Option<Vec<DataPattern>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hammer_counts: Option<Vec<u64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub taggon_ns: Option<Vec<f64>>,
    /// Rows per selected bank.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rows: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub channels: Option<Vec<u32>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pseudo_channels: Option<Vec<u32>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub banks: Option<Vec<u32>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nth: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub search_cap: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub retention_subtraction: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub chip: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dummies: Option<Vec<u32>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub agg_hc: Option<Vec<u32>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub victims: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub intervals: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub word_bits: Option<u32>,
    /// First row and row count surveyed by `probe`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub probe_rows: Option<[u32; 2]>,
}

impl CampaignSection {
    pub fn apply(&self, s: &mut CampaignSpec) {
        if let Some(v) = self.repetitions {
            s.repetitions = v;
        }
        if let Some(v) = &self.patterns {
            s.patterns = v.clone();
        }
        if let Some(v) = &self.hammer_counts {
            s.hammer_counts = v.clone();
        }
        if let Some(v) = &self.taggon_ns {
            s.taggon_ns = v.clone();
        }
        if let Some(v) = self.rows {
            s.rows.rows_per_bank = v;
        }
        if let Some(v) = &self.channels {
            s.rows.channels = v.clone();
        }
        if let Some(v) = &self.pseudo_channels {
            s.rows.pseudo_channels = v.clone();
        }
        if let Some(v) = &self.banks {
            s.rows.banks = v.clone();
        }
        if let Some(v) = self.nth {
            s.nth = v;
        }
        if let Some(v) = self.search_cap {
            s.search.cap = v;
            s.search.start = s.search.start.min(v);
        }
        if let Some(v) = self.retention_subtraction {
            s.retention_subtraction = v;
        }
        if let Some(v) = self.chip {
            s.chip = v;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ProfileSource {
    Inline,
    /// Resolved path of a file holding a `[profile]` section.
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Device, timing, profile and TRR; `device.seed` equals `seed`.
    pub device: DeviceConfig,
    pub profile_source: ProfileSource,
    pub campaign: CampaignSection,
    pub seed: u64,
    pub out: PathBuf,
    pub jobs: usize,
    pub scale: Scale,
    pub trr_hidden: bool,
}

/// A parsed config and the `section.key` names that took their default.
#[derive(Debug, Clone)]
pub struct Parsed {
    pub config: RunConfig,
    pub defaulted: Vec<String>,
}

/// A `section.key = value` override from the command line.
pub fn parse_override(s: &str) -> Result<(String, String, toml::Value), ParseError> {
    let bad = |m: String| ParseError::at(None, m);
    let (path, raw) = s.split_once('=').ok_or_else(|| bad(format!("override `{s}` lacks `=`")))?;
    let (sec, key) = path
        .trim()
        .split_once('.')
        .ok_or_else(|| bad(format!("override `{s}` must name section.key")))?;
    if !SECTIONS.contains(&sec) {
        return Err(bad(format!("unknown section [{sec}] in override `{s}`")));
    }
    if !valid_key(key) {
        return Err(bad(format!("invalid key `{key}` in override `{s}`")));
    }
    let value = parse_value(raw.trim()).map_err(|m| bad(format!("override `{s}`: {m}")))?;
    Ok((sec.to_string(), key.to_string(), value))
}

fn merge_overrides(sections: &mut Vec<Section>, overrides: &[(String, String, toml::Value)]) {
    for (sec, key, value) in overrides {
        let i = match sections.iter().position(|s| &s.name == sec) {
            Some(i) => i,
            None => {
                sections.push(Section { name: sec.clone(), line: None, entries: Vec::new() });
                sections.len() - 1
            }
        };
        let s = &mut sections[i];
        let e = Entry { key: key.clone(), value: value.clone(), line: None };
        match s.entries.iter_mut().find(|x| &x.key == key) {
            Some(x) => *x = e,
            None => s.entries.push(e),
        }
    }
}

fn section_line(sections: &[Section], name: &str) -> Option<usize> {
    sections.iter().find(|s| s.name == name).and_then(|s| s.line)
}

fn load_profile_file(path: &Path) -> Result<FaultProfile, ParseError> {
    let with_file = |mut e: ParseError| {
        e.file = Some(path.to_path_buf());
        e
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| ParseError::at(None, format!("cannot read profile file {}: {e}", path.display())))?;
    let sections = tokenize(&text).map_err(with_file)?;
    if let Some(s) = sections.iter().find(|s| s.name != "profile") {
        return Err(with_file(ParseError::at(s.line, format!("profile files hold only [profile], found [{}]", s.name))));
    }
    let sec = sections.first();
    if let Some(e) = sec.and_then(|s| s.entries.iter().find(|e| e.key == "file")) {
        return Err(with_file(ParseError::at(e.line, "profile files cannot point at other files")));
    }
    let (p, _) = apply_section(&FaultProfile::default(), sec).map_err(with_file)?;
    p.validate()
        .map_err(|e| with_file(ParseError::at(sec.and_then(|s| s.line), e.to_string())))?;
    Ok(p)
}

/// Parses config text. `base_dir` resolves a relative profile file path.
pub fn parse_config(
    text: &str,
    base_dir: &Path,
    overrides: &[(String, String, toml::Value)],
) -> Result<Parsed, ParseError> {
    let mut sections = tokenize(text)?;
    merge_overrides(&mut sections, overrides);
    let get = |name: &str| sections.iter().find(|s| s.name == name);
    let mut defaulted = Vec::new();
    let mut note = |sec: &str, keys: Vec<String>| defaulted.extend(keys.into_iter().map(|k| format!("{sec}.{k}")));

    let (run, d) = apply_section(&RunSection::default(), get("run"))?;
    note("run", d);
    let seed = match (run.seed, get("run")) {
        (Some(s), _) => s,
        (None, Some(s)) if s.line.is_some() => return Err(ParseError::at(s.line, "missing key `seed` in [run]")),
        (None, _) => return Err(ParseError::at(None, "missing section [run]: a seed is mandatory")),
    };
    if run.jobs == 0 {
        return Err(ParseError::at(section_line(&sections, "run"), "jobs must be at least 1"));
    }

    let mut device = DeviceConfig { seed, ..DeviceConfig::default() };
    let (dev, d) = apply_section(&DeviceSection::from_config(&device), get("device"))?;
    note("device", d);
    dev.apply(&mut device);

    let (timing, d) = apply_section(&TimingParams::default(), get("timing"))?;
    note("timing", d);
    device.timing = timing;

    let profile_sec = get("profile");
    let file_entry = profile_sec.and_then(|s| s.entries.iter().find(|e| e.key == "file"));
    let profile_source = match file_entry {
        Some(e) => {
            if profile_sec.is_some_and(|s| s.entries.len() > 1) {
                return Err(ParseError::at(
                    e.line,
                    "exactly one profile source: `file` excludes inline profile keys",
                ));
            }
            let Some(p) = e.value.as_str() else {
                return Err(ParseError::at(e.line, "`file` must be a string"));
            };
            let path = base_dir.join(p);
            device.profile = load_profile_file(&path)?;
            ProfileSource::File(path)
        }
        None => {
            let (p, d) = apply_section(&FaultProfile::default(), profile_sec)?;
            note("profile", d);
            device.profile = p;
            ProfileSource::Inline
        }
    };

    let (trr, d) = apply_section(&TrrConfig::default(), get("trr"))?;
    note("trr", d);
    device.trr = trr;

    let (campaign, _) = apply_section(&CampaignSection::default(), get("campaign"))?;

    device.validate().map_err(|e| {
        use hbmlab_core::ConfigError as C;
        let sec = match e {
            C::Geometry(_) | C::Layout(_) | C::Mapping(_) => "device",
            C::Timing(_) => "timing",
            C::Profile(_) => "profile",
            C::Trr(_) => "trr",
        };
        ParseError::at(section_line(&sections, sec), e.to_string())
    })?;

    let config = RunConfig {
        device,
        profile_source,
        campaign,
        seed,
        out: run.out,
        jobs: run.jobs,
        scale: run.scale,
        trr_hidden: run.trr_hidden,
    };
    Ok(Parsed { config, defaulted })
}

pub fn parse_config_file(path: &Path, overrides: &[(String, String, toml::Value)]) -> Result<Parsed, ParseError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ParseError::at(None, format!("cannot read config {}: {e}", path.display())))?;
    let dir = path.parent().unwrap_or(Path::new("."));
    parse_config(&text, dir, overrides).map_err(|mut e| {
        e.file.get_or_insert_with(|| path.to_path_buf());
        e
    })
}

/// How `serialize` writes the config.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Emit {
    /// Write the profile values even when they came from a file.
    pub inline_profile: bool,
    /// Leave out the `[trr]` section.
    pub hide_trr: bool,
    /// Leave out `out` and `jobs`, which never change results.
    pub results_only: bool,
}

fn emit_section(out: &mut String, name: &str, table: &toml::Table) {
    out.push_str(&format!("[{name}]\n"));
    for (k, v) in table {
        out.push_str(&format!("{k} = {v}\n"));
    }
    out.push('\n');
}

/// Canonical text of a config; parsing it back yields the same config.
pub fn serialize(cfg: &RunConfig, emit: Emit) -> String {
    let mut s = String::new();
    let run = RunSection {
        seed: Some(cfg.seed),
        out: cfg.out.clone(),
        jobs: cfg.jobs,
        scale: cfg.scale,
        trr_hidden: cfg.trr_hidden,
    };
    let mut run = to_table(&run);
    if emit.results_only {
        run.remove("out");
        run.remove("jobs");
    }
    emit_section(&mut s, "run", &run);
    emit_section(&mut s, "device", &to_table(&DeviceSection::from_config(&cfg.device)));
    emit_section(&mut s, "timing", &to_table(&cfg.device.timing));
    match (&cfg.profile_source, emit.inline_profile) {
        (ProfileSource::File(p), false) => {
            let mut t = toml::Table::new();
            t.insert("file".into(), toml::Value::String(p.display().to_string()));
            emit_section(&mut s, "profile", &t);
        }
        _ => emit_section(&mut s, "profile", &to_table(&cfg.device.profile)),
    }
    if !emit.hide_trr {
        emit_section(&mut s, "trr", &to_table(&cfg.device.trr));
    }
    emit_section(&mut s, "campaign", &to_table(&cfg.campaign));
    s
}

/// A profile as a standalone `[profile]` file.
pub fn profile_text(p: &FaultProfile) -> String {
    let mut s = String::new();
    emit_section(&mut s, "profile", &to_table(p));
    s
}

/// Values of the defaulted keys as they appear in the canonical text.
pub fn default_values(cfg: &RunConfig, defaulted: &[String], emit: Emit) -> BTreeMap<String, String> {
    let text = serialize(cfg, Emit { inline_profile: true, ..emit });
    let mut out = BTreeMap::new();
    let mut sec = "";
    for line in text.lines() {
        if let Some(n) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            sec = n;
        } else if let Some((k, v)) = line.split_once(" = ") {
            let name = format!("{sec}.{k}");
            if defaulted.contains(&name) {
                out.insert(name, v.to_string());
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<RunConfig, ParseError> {
        parse_config(text, Path::new("."), &[]).map(|p| p.config)
    }

    #[test]
    fn seed_only_takes_every_default() {
        let p = parse_config("[run]\nseed = 7\n", Path::new("."), &[]).unwrap();
        let c = p.config;
        assert_eq!(c.seed, 7);
        assert_eq!(c.device, DeviceConfig { seed: 7, ..DeviceConfig::default() });
        assert_eq!(c.jobs, 1);
        assert_eq!(c.scale, Scale::Desk);
        assert!(p.defaulted.contains(&"trr.period".to_string()));
        assert!(p.defaulted.contains(&"timing.tRAS_ns".to_string()));
        assert!(!p.defaulted.iter().any(|k| k == "run.seed"));
    }

    #[test]
    fn seed_is_mandatory() {
        let e = parse("").unwrap_err();
        assert!(e.msg.contains("missing section [run]"), "{e}");
        let e = parse("\n[run]\njobs = 2\n").unwrap_err();
        assert_eq!(e.line, Some(2));
        assert!(e.msg.contains("seed"));
    }

    #[test]
    fn duplicate_key_has_its_line() {
        let e = parse("[run]\nseed = 1\n\n[trr]\nperiod = 17\nperiod = 5\n").unwrap_err();
        assert_eq!(e.line, Some(6));
        assert!(e.msg.contains("duplicate key `period`"), "{e}");
    }

    #[test]
    fn unknown_key_and_section() {
        let e = parse("[run]\nseed = 1\n[trr]\nperiodd = 3\n").unwrap_err();
        assert_eq!((e.line, e.msg.contains("unknown key `periodd`")), (Some(4), true), "{e}");
        let e = parse("[run]\nseed = 1\n[bogus]\n").unwrap_err();
        assert_eq!(e.line, Some(3));
        let e = parse("seed = 1\n").unwrap_err();
        assert_eq!(e.line, Some(1));
        assert!(e.msg.contains("outside any section"));
    }

    #[test]
    fn bad_values_and_invariants_have_lines() {
        let e = parse("[run]\nseed = 1\n[trr]\nperiod = \"x\"\n").unwrap_err();
        assert_eq!(e.line, Some(4), "{e}");
        let e = parse("[run]\nseed = 1\n[trr]\nperiod = \n").unwrap_err();
        assert_eq!(e.line, Some(4), "{e}");
        let e = parse("[run]\nseed = 1\n[timing]\ntRC_ns = 10.0\n").unwrap_err();
        assert_eq!(e.line, Some(3), "{e}");
        let e = parse("[run]\nseed = 1\njobs = 0\n").unwrap_err();
        assert_eq!(e.line, Some(1), "{e}");
    }

    #[test]
    fn trr_period_round_trips() {
        let c = parse("[run]\nseed = 3\n[trr]\nperiod = 17 # every 17th REF\n").unwrap();
        assert_eq!(c.device.trr.period, 17);
        let text = serialize(&c, Emit::default());
        assert!(text.contains("period = 17\n"), "{text}");
        assert_eq!(parse(&text).unwrap(), c);
    }

    #[test]
    fn full_round_trip() {
        let text = "[run]\nseed = 9\njobs = 4\nscale = \"paper\"\ntrr_hidden = true\n\
                    [device]\nrows_per_bank = 1600\nlayout = [832, 768]\n\
                    mapping = { scheme = \"group_swap\", group = 1 }\nrefresh = \"manual\"\n\
                    [profile]\nhc_log_sigma = 0.2\ntail_knots = [[-9.0, -1.0], [-3.0, 0.0], [0.0, 5.0]]\n\
                    [trr]\nperiod = 5\nvictim_span = 2\n\
                    [campaign]\npatterns = [\"Rowstripe1\"]\ntaggon_ns = [29.0, 3900.0]\nprobe_rows = [100, 64]\n";
        let c = parse(text).unwrap();
        assert_eq!(c.device.mapping, RowMapping::GroupSwap { group: 1 });
        assert_eq!(c.device.layout().sizes, vec![832, 768]);
        assert_eq!(c.campaign.patterns, Some(vec![DataPattern::Rowstripe1]));
        let again = parse(&serialize(&c, Emit::default())).unwrap();
        assert_eq!(again, c);
    }

    #[test]
    fn profile_file_is_exclusive() {
        let dir = std::env::temp_dir().join(format!("hbmlab-cfg-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let p = FaultProfile { hc_log_sigma: 0.3, ..FaultProfile::default() };
        std::fs::write(dir.join("p.profile"), profile_text(&p)).unwrap();
        let c = parse_config("[run]\nseed = 1\n[profile]\nfile = \"p.profile\"\n", &dir, &[]).unwrap().config;
        assert_eq!(c.device.profile, p);
        assert_eq!(c.profile_source, ProfileSource::File(dir.join("p.profile")));
        let again = parse_config(&serialize(&c, Emit::default()), &dir, &[]).unwrap().config;
        assert_eq!(again, c);
        let e = parse_config("[run]\nseed = 1\n[profile]\nhc_log_sigma = 0.1\nfile = \"p.profile\"\n", &dir, &[])
            .unwrap_err();
        assert_eq!(e.line, Some(5));
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn overrides_replace_file_values() {
        let ov = vec![
            parse_override("trr.period=5").unwrap(),
            parse_override("run.seed = 11").unwrap(),
        ];
        let c = parse_config("[run]\nseed = 1\n[trr]\nperiod = 17\n", Path::new("."), &ov).unwrap().config;
        assert_eq!((c.seed, c.device.trr.period, c.device.seed), (11, 5, 11));
        // overrides alone can supply the seed
        let c = parse_config("", Path::new("."), &ov[1..]).unwrap().config;
        assert_eq!(c.seed, 11);
        assert!(parse_override("period=5").is_err());
        let e = parse_config("", Path::new("."), &[parse_override("trr.nope=1").unwrap()]).unwrap_err();
        assert_eq!(e.line, None);
    }

    #[test]
    fn hidden_trr_is_not_serialized() {
        let c = parse("[run]\nseed = 1\n").unwrap();
        let t = serialize(&c, Emit { hide_trr: true, ..Emit::default() });
        assert!(!t.contains("[trr]") && !t.contains("\nperiod =") && !t.contains("sampler_slots"));
    }

    #[test]
    fn defaults_are_listed_with_values() {
        let p = parse_config("[run]\nseed = 1\n[trr]\nperiod = 9\n", Path::new("."), &[]).unwrap();
        let d = default_values(&p.config, &p.defaulted, Emit::default());
        assert_eq!(d.get("trr.sampler_slots").map(String::as_str), Some("4"));
        assert!(!d.contains_key("trr.period"));
        assert_eq!(d.get("run.jobs").map(String::as_str), Some("1"));
    }
}
