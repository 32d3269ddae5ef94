//! Scenario description and its line-oriented text format.
//!
//! ```text
//! # comment
//! feeder_rate = 100Mbps
//! scheme = csfq1-tbm
//!
//! [subscriber]
//! id = 0
//! group = 1
//! token_rate = 2.5Mbps
//! bucket_size = 1MB
//! source = udp
//! packet_length = 1000B
//! period = 0.5ms
//! start_time = 0s
//! ```
//!
//! Numbers are exact decimals with an optional unit: rates in `bps`, `kbps`,
//! `Mbps`, `Gbps`; sizes in `B`, `kB`, `MB`, `GB`, `KiB`, `MiB`; times in
//! `s`, `ms`, `us`, `ns`. A bare number means bits/s, bytes or seconds.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use crate::time::SimTime;
use crate::traffic::TcpConfig;

/// One-way access-side propagation delay (feeder plus distribution/UNI).
pub const ACCESS_DELAY: SimTime = SimTime::from_micros(100);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Scheme {
    DrrTbm,
    Csfq1Tbm,
    Csfq2Tbm,
}

impl Scheme {
    pub const ALL: [Scheme; 3] = [Scheme::DrrTbm, Scheme::Csfq1Tbm, Scheme::Csfq2Tbm];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::DrrTbm => "drr-tbm",
            Scheme::Csfq1Tbm => "csfq1-tbm",
            Scheme::Csfq2Tbm => "csfq2-tbm",
        }
    }

    pub fn is_csfq(self) -> bool {
        matches!(self, Scheme::Csfq1Tbm | Scheme::Csfq2Tbm)
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Scheme::ALL
            .into_iter()
            .find(|scheme| scheme.name() == s)
            .ok_or_else(|| format!("invalid scheme `{s}`; expected one of drr-tbm, csfq1-tbm, csfq2-tbm"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SourceSpec {
    Udp { packet_length: u32, period: SimTime },
    /// Greedy TCP; segment size comes from the scenario-wide TCP settings.
    Tcp,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubscriberSpec {
    pub id: u16,
    pub group: String,
    pub token_rate: u64,
    pub bucket_size: u64,
    pub source: SourceSpec,
    pub start_time: SimTime,
}

impl SubscriberSpec {
    /// Dimensionless weight: token rate in Mb/s.
    pub fn weight(&self) -> f64 {
        self.token_rate as f64 / 1e6
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSpec {
    pub feeder_rate: u64,
    pub distribution_rate: u64,
    pub uni_rate: u64,
    pub backbone_rate: u64,
    pub rtt: SimTime,
    pub horizon: SimTime,
    pub scheme: Scheme,
    pub csfq_fifo: u64,
    pub drr_conformant_queue: u64,
    pub drr_queue: u64,
    pub amendment_threshold: u64,
    pub amendment_factor: f64,
    pub k: SimTime,
    pub k_alpha: SimTime,
    pub repetitions: u32,
    pub seed: u64,
    pub resolution: SimTime,
    pub tcp_segment: u32,
    pub tcp_ack: u32,
    pub tcp_initial_cwnd: f64,
    pub tcp_max_window: Option<u64>,
    pub tcp_min_rto: SimTime,
    pub tcp_start_jitter: SimTime,
    pub subscribers: Vec<SubscriberSpec>,
}

impl ScenarioSpec {
    /// 16 subscribers in four groups behind a 100 Mb/s shared feeder:
    /// groups 1-3 receive 16 Mb/s CBR UDP from 0, 60 and 120 s with token
    /// rates 2.5, 5 and 7.5 Mb/s; group 4 receives greedy TCP from 180 s with
    /// token rate 10 Mb/s. All buckets hold 1 MB.
    pub fn reference(scheme: Scheme) -> Self {
        let groups: [(&str, u64, Option<u64>); 4] = [
            ("1", 2_500_000, Some(0)),
            ("2", 5_000_000, Some(60)),
            ("3", 7_500_000, Some(120)),
            ("4", 10_000_000, None),
        ];
        let mut subscribers = Vec::new();
        for (group, token_rate, udp_start) in groups {
            for _ in 0..4 {
                let (source, start) = match udp_start {
                    Some(start) => (
                        SourceSpec::Udp {
                            packet_length: 1000,
                            period: SimTime::from_micros(500),
                        },
                        SimTime::from_secs(start),
                    ),
                    None => (SourceSpec::Tcp, SimTime::from_secs(180)),
                };
                subscribers.push(SubscriberSpec {
                    id: subscribers.len() as u16,
                    group: group.to_string(),
                    token_rate,
                    bucket_size: 1_000_000,
                    source,
                    start_time: start,
                });
            }
        }
        ScenarioSpec {
            feeder_rate: 100_000_000,
            distribution_rate: 100_000_000,
            uni_rate: 100_000_000,
            backbone_rate: 10_000_000_000,
            rtt: SimTime::from_millis(10),
            horizon: SimTime::from_secs(240),
            scheme,
            csfq_fifo: 16_000_000,
            drr_conformant_queue: 1_000_000,
            drr_queue: 1_000_000,
            amendment_threshold: 64_000,
            amendment_factor: 0.09,
            k: SimTime::from_millis(100),
            k_alpha: SimTime::from_millis(200),
            repetitions: 10,
            seed: 1,
            resolution: SimTime::from_millis(100),
            tcp_segment: 1000,
            tcp_ack: 64,
            tcp_initial_cwnd: 1.0,
            tcp_max_window: Some(128),
            tcp_min_rto: SimTime::from_millis(200),
            tcp_start_jitter: SimTime::ZERO,
            subscribers,
        }
    }

    pub fn weights(&self) -> Vec<f64> {
        self.subscribers.iter().map(SubscriberSpec::weight).collect()
    }

    pub fn tcp_config(&self) -> TcpConfig {
        TcpConfig {
            segment_length: self.tcp_segment,
            ack_length: self.tcp_ack,
            initial_cwnd: self.tcp_initial_cwnd,
            max_window: self.tcp_max_window.map_or(1e9, |w| w as f64),
            min_rto: self.tcp_min_rto,
            ..TcpConfig::default()
        }
    }

    /// Rate of the distribution-switch port plus UNI hop.
    pub fn delivery_rate(&self) -> u64 {
        self.distribution_rate.min(self.uni_rate)
    }

    /// Propagation on the backbone; the remaining one-way budget is
    /// [`ACCESS_DELAY`], and the reverse path is a pure delay of `rtt / 2`.
    pub fn backbone_delay(&self) -> SimTime {
        SimTime::from_nanos(self.rtt.as_nanos() / 2).saturating_sub(ACCESS_DELAY)
    }

    pub fn reverse_delay(&self) -> SimTime {
        self.rtt - SimTime::from_nanos(self.rtt.as_nanos() / 2)
    }

    /// Groups in order of first appearance.
    pub fn groups(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for s in &self.subscribers {
            if !out.contains(&s.group) {
                out.push(s.group.clone());
            }
        }
        out
    }

    pub fn validate(&self) -> Result<(), ScenarioErrors> {
        let mut errs = Vec::new();
        let mut err = |m: String| errs.push(ScenarioError { line: None, message: m });
        for (name, v) in [
            ("feeder_rate", self.feeder_rate),
            ("distribution_rate", self.distribution_rate),
            ("uni_rate", self.uni_rate),
            ("backbone_rate", self.backbone_rate),
        ] {
            if v == 0 {
                err(format!("{name}: non-positive rate"));
            }
        }
        if self.rtt.as_nanos() / 2 <= ACCESS_DELAY.as_nanos() {
            err(format!("rtt: must exceed {}", SimTime::from_nanos(2 * ACCESS_DELAY.as_nanos())));
        }
        if self.k == SimTime::ZERO || self.k_alpha == SimTime::ZERO {
            err("k and k_alpha must be positive".into());
        }
        if self.resolution == SimTime::ZERO {
            err("resolution must be positive".into());
        }
        if !(0.0..1.0).contains(&self.amendment_factor) {
            err("amendment_factor must lie in [0, 1)".into());
        }
        if self.repetitions == 0 {
            err("repetitions must be at least 1".into());
        }
        if self.tcp_segment == 0 || self.tcp_ack == 0 {
            err("tcp_segment and tcp_ack must be positive".into());
        }
        if !(self.tcp_initial_cwnd >= 1.0) {
            err("tcp_initial_cwnd must be at least 1".into());
        }
        if self.subscribers.is_empty() {
            err("no [subscriber] blocks".into());
        }
        if self.subscribers.len() > u16::MAX as usize {
            err("too many subscribers".into());
        }
        let mut seen = BTreeSet::new();
        for s in &self.subscribers {
            if !seen.insert(s.id) {
                err(format!("duplicate subscriber id {}", s.id));
            }
            if s.token_rate == 0 {
                err(format!("subscriber {}: token_rate: non-positive rate", s.id));
            }
            let max_len = match s.source {
                SourceSpec::Udp { packet_length, period } => {
                    if packet_length == 0 {
                        err(format!("subscriber {}: packet_length must be positive", s.id));
                    }
                    if period == SimTime::ZERO {
                        err(format!("subscriber {}: period must be positive", s.id));
                    }
                    packet_length as u64
                }
                SourceSpec::Tcp => self.tcp_segment as u64,
            };
            if s.bucket_size <= max_len {
                err(format!("subscriber {}: bucket_size must exceed the packet length", s.id));
            }
            if s.start_time >= self.horizon {
                err(format!("subscriber {}: start_time must precede the horizon", s.id));
            }
        }
        if seen.len() == self.subscribers.len()
            && seen.iter().enumerate().any(|(i, id)| *id as usize != i)
        {
            err("subscriber ids must be 0..N-1".into());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(ScenarioErrors(errs))
        }
    }

    /// Stable text form; [`parse_scenario`] reads it back to an equal spec.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(&v);
            out.push('\n');
        };
        kv("feeder_rate", fmt_rate(self.feeder_rate));
        kv("distribution_rate", fmt_rate(self.distribution_rate));
        kv("uni_rate", fmt_rate(self.uni_rate));
        kv("backbone_rate", fmt_rate(self.backbone_rate));
        kv("rtt", fmt_time(self.rtt));
        kv("horizon", fmt_time(self.horizon));
        kv("scheme", self.scheme.name().to_string());
        kv("csfq_fifo", fmt_size(self.csfq_fifo));
        kv("drr_conformant_queue", fmt_size(self.drr_conformant_queue));
        kv("drr_queue", fmt_size(self.drr_queue));
        kv("amendment_threshold", fmt_size(self.amendment_threshold));
        kv("amendment_factor", format!("{}", self.amendment_factor));
        kv("k", fmt_time(self.k));
        kv("k_alpha", fmt_time(self.k_alpha));
        kv("repetitions", self.repetitions.to_string());
        kv("seed", self.seed.to_string());
        kv("resolution", fmt_time(self.resolution));
        kv("tcp_segment", fmt_size(self.tcp_segment as u64));
        kv("tcp_ack", fmt_size(self.tcp_ack as u64));
        kv("tcp_initial_cwnd", format!("{}", self.tcp_initial_cwnd));
        if let Some(w) = self.tcp_max_window {
            kv("tcp_max_window", w.to_string());
        }
        kv("tcp_min_rto", fmt_time(self.tcp_min_rto));
        kv("tcp_start_jitter", fmt_time(self.tcp_start_jitter));
        for s in &self.subscribers {
            out.push_str("\n[subscriber]\n");
            let mut kv = |k: &str, v: String| {
                out.push_str(k);
                out.push_str(" = ");
                out.push_str(&v);
                out.push('\n');
            };
            kv("id", s.id.to_string());
            kv("group", s.group.clone());
            kv("token_rate", fmt_rate(s.token_rate));
            kv("bucket_size", fmt_size(s.bucket_size));
            match &s.source {
                SourceSpec::Udp { packet_length, period } => {
                    kv("source", "udp".into());
                    kv("packet_length", fmt_size(*packet_length as u64));
                    kv("period", fmt_time(*period));
                }
                SourceSpec::Tcp => kv("source", "tcp".into()),
            }
            kv("start_time", fmt_time(s.start_time));
        }
        out
    }

    /// FNV-1a hash of the scenario text with the seed and repetition count
    /// blanked, so all repetitions of one experiment share a digest.
    pub fn digest(&self) -> String {
        let mut canonical = self.clone();
        canonical.seed = 0;
        canonical.repetitions = 1;
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in canonical.to_text().bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        format!("{h:016x}")
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScenarioError {
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ScenarioError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "line {l}: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScenarioErrors(pub Vec<ScenarioError>);

impl fmt::Display for ScenarioErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, e) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str("\n")?;
            }
            write!(f, "{e}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ScenarioErrors {}

const RATE_UNITS: &[(&str, u64)] = &[
    ("Gbps", 1_000_000_000),
    ("Gb/s", 1_000_000_000),
    ("Mbps", 1_000_000),
    ("Mb/s", 1_000_000),
    ("kbps", 1_000),
    ("kb/s", 1_000),
    ("Kbps", 1_000),
    ("bps", 1),
    ("b/s", 1),
    ("", 1),
];

const SIZE_UNITS: &[(&str, u64)] = &[
    ("GB", 1_000_000_000),
    ("MiB", 1 << 20),
    ("MB", 1_000_000),
    ("KiB", 1 << 10),
    ("kB", 1_000),
    ("KB", 1_000),
    ("B", 1),
    ("", 1),
];

const TIME_UNITS: &[(&str, u64)] = &[
    ("s", 1_000_000_000),
    ("ms", 1_000_000),
    ("us", 1_000),
    ("ns", 1),
    ("", 1_000_000_000),
];

/// Parses `<decimal><unit>` exactly into an integer multiple of the base unit.
fn parse_quantity(text: &str, units: &[(&str, u64)], what: &str) -> Result<u64, String> {
    let text = text.trim();
    let split = text
        .find(|c: char| !(c.is_ascii_digit() || c == '.' || c == '_'))
        .unwrap_or(text.len());
    let (num, unit) = (text[..split].replace('_', ""), text[split..].trim());
    let mult = units
        .iter()
        .find(|(u, _)| *u == unit)
        .map(|(_, m)| *m)
        .ok_or_else(|| format!("unknown {what} unit `{unit}` in `{text}`"))?;
    let (int_part, frac_part) = match num.split_once('.') {
        Some((i, f)) => (i, f),
        None => (num.as_str(), ""),
    };
    if int_part.is_empty() && frac_part.is_empty() {
        return Err(format!("expected a {what}, got `{text}`"));
    }
    let digits = format!("{int_part}{frac_part}");
    if digits.len() > 30 {
        return Err(format!("{what} `{text}` out of range"));
    }
    let mantissa: u128 = digits
        .parse()
        .map_err(|_| format!("expected a {what}, got `{text}`"))?;
    let scale = 10u128.pow(frac_part.len() as u32);
    let scaled = mantissa * mult as u128;
    if !scaled.is_multiple_of(scale) {
        return Err(format!("{what} `{text}` is not a whole number of base units"));
    }
    u64::try_from(scaled / scale).map_err(|_| format!("{what} `{text}` out of range"))
}

pub fn parse_rate(text: &str) -> Result<u64, String> {
    parse_quantity(text, RATE_UNITS, "rate")
}

pub fn parse_size(text: &str) -> Result<u64, String> {
    parse_quantity(text, SIZE_UNITS, "size")
}

pub fn parse_time(text: &str) -> Result<SimTime, String> {
    parse_quantity(text, TIME_UNITS, "time").map(SimTime::from_nanos)
}

/// Largest unit that represents `value` exactly with at most nine decimals.
fn fmt_quantity(value: u64, units: &[(&str, u64)]) -> String {
    for (name, mult) in units {
        let mult = *mult;
        if value < mult && value != 0 {
            continue;
        }
        let int = value / mult;
        let rem = value % mult;
        if rem == 0 {
            return format!("{int}{name}");
        }
        for digits in 1..=9u32 {
            let scaled = rem as u128 * 10u128.pow(digits);
            if scaled.is_multiple_of(mult as u128) {
                let frac = scaled / mult as u128;
                return format!("{int}.{frac:0width$}{name}", width = digits as usize);
            }
        }
    }
    value.to_string()
}

fn fmt_rate(v: u64) -> String {
    fmt_quantity(v, &[("Gbps", 1_000_000_000), ("Mbps", 1_000_000), ("kbps", 1_000), ("bps", 1)])
}

fn fmt_size(v: u64) -> String {
    fmt_quantity(v, &[("GB", 1_000_000_000), ("MB", 1_000_000), ("kB", 1_000), ("B", 1)])
}

fn fmt_time(t: SimTime) -> String {
    fmt_quantity(t.as_nanos(), &[("s", 1_000_000_000), ("ms", 1_000_000), ("us", 1_000), ("ns", 1)])
}

#[derive(Default)]
struct PendingSubscriber {
    line: usize,
    id: Option<u16>,
    group: Option<String>,
    token_rate: Option<u64>,
    bucket_size: Option<u64>,
    source: Option<String>,
    packet_length: Option<u32>,
    period: Option<SimTime>,
    start_time: Option<SimTime>,
}

const GLOBAL_KEYS: &[&str] = &[
    "feeder_rate",
    "distribution_rate",
    "uni_rate",
    "backbone_rate",
    "rtt",
    "horizon",
    "scheme",
    "csfq_fifo",
    "drr_conformant_queue",
    "drr_queue",
    "amendment_threshold",
    "amendment_factor",
    "k",
    "k_alpha",
    "repetitions",
    "seed",
    "resolution",
    "tcp_segment",
    "tcp_ack",
    "tcp_initial_cwnd",
    "tcp_max_window",
    "tcp_min_rto",
    "tcp_start_jitter",
];

const REQUIRED_KEYS: &[&str] = &[
    "feeder_rate",
    "distribution_rate",
    "uni_rate",
    "backbone_rate",
    "rtt",
    "horizon",
    "scheme",
];

/// Parses and validates a scenario. All problems found are reported, each
/// anchored to its line where one exists.
pub fn parse_scenario(text: &str) -> Result<ScenarioSpec, ScenarioErrors> {
    let mut errs: Vec<ScenarioError> = Vec::new();
    let mut spec = ScenarioSpec::reference(Scheme::DrrTbm);
    spec.subscribers.clear();
    let mut seen_global = BTreeSet::new();
    let mut pending: Vec<PendingSubscriber> = Vec::new();

    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let mut fail = |m: String| errs.push(ScenarioError { line: Some(line), message: m });
        if content.starts_with('[') {
            if content == "[subscriber]" {
                pending.push(PendingSubscriber {
                    line,
                    ..Default::default()
                });
            } else {
                fail(format!("unknown section `{content}`"));
            }
            continue;
        }
        let Some((key, value)) = content.split_once('=') else {
            fail(format!("expected `key = value`, got `{content}`"));
            continue;
        };
        let (key, value) = (key.trim(), value.trim());

        if let Some(sub) = pending.last_mut() {
            let dup = match key {
                "id" => sub.id.replace(value.parse().unwrap_or(u16::MAX)).is_some(),
                "group" => sub.group.replace(value.to_string()).is_some(),
                "token_rate" => match parse_rate(value) {
                    Ok(v) => sub.token_rate.replace(v).is_some(),
                    Err(e) => {
                        fail(e);
                        false
                    }
                },
                "bucket_size" => match parse_size(value) {
                    Ok(v) => sub.bucket_size.replace(v).is_some(),
                    Err(e) => {
                        fail(e);
                        false
                    }
                },
                "source" => {
                    if value != "udp" && value != "tcp" {
                        fail(format!("invalid source `{value}`; expected udp or tcp"));
                    }
                    sub.source.replace(value.to_string()).is_some()
                }
                "packet_length" => match parse_size(value).and_then(|v| {
                    u32::try_from(v).map_err(|_| format!("packet_length `{value}` out of range"))
                }) {
                    Ok(v) => sub.packet_length.replace(v).is_some(),
                    Err(e) => {
                        fail(e);
                        false
                    }
                },
                "period" => match parse_time(value) {
                    Ok(v) => sub.period.replace(v).is_some(),
                    Err(e) => {
                        fail(e);
                        false
                    }
                },
                "start_time" => match parse_time(value) {
                    Ok(v) => sub.start_time.replace(v).is_some(),
                    Err(e) => {
                        fail(e);
                        false
                    }
                },
                _ => {
                    fail(format!("unknown subscriber key `{key}`"));
                    false
                }
            };
            if key == "id" && value.parse::<u16>().is_err() {
                fail(format!("invalid subscriber id `{value}`"));
            }
            if dup {
                fail(format!("duplicate key `{key}`"));
            }
            continue;
        }

        if !GLOBAL_KEYS.contains(&key) {
            fail(format!("unknown key `{key}`"));
            continue;
        }
        if !seen_global.insert(key.to_string()) {
            fail(format!("duplicate key `{key}`"));
            continue;
        }
        let res: Result<(), String> = (|| {
            match key {
                "feeder_rate" => spec.feeder_rate = parse_rate(value)?,
                "distribution_rate" => spec.distribution_rate = parse_rate(value)?,
                "uni_rate" => spec.uni_rate = parse_rate(value)?,
                "backbone_rate" => spec.backbone_rate = parse_rate(value)?,
                "rtt" => spec.rtt = parse_time(value)?,
                "horizon" => spec.horizon = parse_time(value)?,
                "scheme" => spec.scheme = value.parse()?,
                "csfq_fifo" => spec.csfq_fifo = parse_size(value)?,
                "drr_conformant_queue" => spec.drr_conformant_queue = parse_size(value)?,
                "drr_queue" => spec.drr_queue = parse_size(value)?,
                "amendment_threshold" => spec.amendment_threshold = parse_size(value)?,
                "amendment_factor" => spec.amendment_factor = parse_fraction(value)?,
                "k" => spec.k = parse_time(value)?,
                "k_alpha" => spec.k_alpha = parse_time(value)?,
                "repetitions" => spec.repetitions = parse_int(value)?,
                "seed" => spec.seed = parse_int(value)?,
                "resolution" => spec.resolution = parse_time(value)?,
                "tcp_segment" => spec.tcp_segment = parse_size(value)?.try_into().map_err(|_| "tcp_segment out of range")?,
                "tcp_ack" => spec.tcp_ack = parse_size(value)?.try_into().map_err(|_| "tcp_ack out of range")?,
                "tcp_initial_cwnd" => spec.tcp_initial_cwnd = parse_fraction(value)?,
                "tcp_max_window" => spec.tcp_max_window = Some(parse_int(value)?),
                "tcp_min_rto" => spec.tcp_min_rto = parse_time(value)?,
                "tcp_start_jitter" => spec.tcp_start_jitter = parse_time(value)?,
                _ => unreachable!(),
            }
            Ok(())
        })();
        if let Err(e) = res {
            fail(format!("{key}: {e}"));
        }
    }

    for key in REQUIRED_KEYS {
        if !seen_global.contains(*key) {
            errs.push(ScenarioError {
                line: None,
                message: format!("missing: {key}"),
            });
        }
    }

    for p in pending {
        let mut missing = |k: &str| {
            errs.push(ScenarioError {
                line: Some(p.line),
                message: format!("subscriber missing: {k}"),
            })
        };
        let source = match p.source.as_deref() {
            Some("udp") => match (p.packet_length, p.period) {
                (Some(packet_length), Some(period)) => Some(SourceSpec::Udp { packet_length, period }),
                (pl, pe) => {
                    if pl.is_none() {
                        missing("packet_length");
                    }
                    if pe.is_none() {
                        missing("period");
                    }
                    None
                }
            },
            Some("tcp") => Some(SourceSpec::Tcp),
            Some(_) => None,
            None => {
                missing("source");
                None
            }
        };
        if p.id.is_none() {
            missing("id");
        }
        if p.group.is_none() {
            missing("group");
        }
        if p.token_rate.is_none() {
            missing("token_rate");
        }
        if p.bucket_size.is_none() {
            missing("bucket_size");
        }
        if let (Some(id), Some(group), Some(token_rate), Some(bucket_size), Some(source)) =
            (p.id, p.group, p.token_rate, p.bucket_size, source)
        {
            spec.subscribers.push(SubscriberSpec {
                id,
                group,
                token_rate,
                bucket_size,
                source,
                start_time: p.start_time.unwrap_or(SimTime::ZERO),
            });
        }
    }

    if !errs.is_empty() {
        return Err(ScenarioErrors(errs));
    }
    spec.subscribers.sort_by_key(|s| s.id);
    spec.validate()?;
    Ok(spec)
}

fn parse_int<T: FromStr>(value: &str) -> Result<T, String> {
    value.replace('_', "").parse().map_err(|_| format!("expected an integer, got `{value}`"))
}

fn parse_fraction(value: &str) -> Result<f64, String> {
    let v: f64 = value.parse().map_err(|_| format!("expected a number, got `{value}`"))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("expected a finite number, got `{value}`"))
    }
}
