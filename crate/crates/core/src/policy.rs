//! Transmission policies and threshold extraction.
//!
//! Orientation: a threshold rule stays silent on a closed interval of the
//! error axis and transmits outside it. The symmetric rule with threshold
//! `tau` transmits iff `|e| > tau`.

use std::fmt;
use std::io::{BufRead, BufReader, Read, Write};
use std::str::FromStr;

use crate::channel::ChannelFsm;
use crate::error::{Error, Result};
use crate::quadrature::{ErrorGrid, PartialMoments};

/// Decision rule for one (stage, channel state) pair.
#[derive(Debug, Clone, PartialEq)]
pub enum StageRule {
    Never,
    Always,
    /// Transmit iff `|e| > tau`.
    Symmetric { tau: f64 },
    /// Transmit iff `e < lo` or `e > hi`.
    Interval { lo: f64, hi: f64 },
    /// Transmit indicator per grid point, nearest-point lookup.
    Gridded { grid: ErrorGrid, transmit: Vec<bool> },
}

impl StageRule {
    pub fn transmits(&self, e: f64) -> bool {
        match self {
            Self::Never => false,
            Self::Always => true,
            Self::Symmetric { tau } => e.abs() > *tau,
            Self::Interval { lo, hi } => e < *lo || e > *hi,
            Self::Gridded { grid, transmit } => transmit[grid.nearest(e)],
        }
    }

    pub fn is_symmetric(&self) -> bool {
        match self {
            Self::Never | Self::Always | Self::Symmetric { .. } => true,
            Self::Interval { lo, hi } => *lo == -*hi,
            Self::Gridded { transmit, .. } => transmit.iter().eq(transmit.iter().rev()),
        }
    }

    pub fn kind(&self) -> RuleKind {
        match self {
            Self::Never => RuleKind::Never,
            Self::Always => RuleKind::Always,
            Self::Symmetric { .. } => RuleKind::SymmetricThreshold,
            Self::Interval { .. } => RuleKind::IntervalPair,
            Self::Gridded { .. } => RuleKind::Gridded,
        }
    }

    /// Silent interval `[lo, hi]` of a threshold rule; `None` for gridded rules.
    ///
    /// `Always` reports the degenerate `(0, 0)`; `Never` reports the whole line.
    pub fn silent_interval(&self) -> Option<(f64, f64)> {
        match *self {
            Self::Never => Some((f64::NEG_INFINITY, f64::INFINITY)),
            Self::Always => Some((0.0, 0.0)),
            Self::Symmetric { tau } => Some((-tau, tau)),
            Self::Interval { lo, hi } => Some((lo, hi)),
            Self::Gridded { .. } => None,
        }
    }

    /// Symmetric threshold, `+inf` for `Never` and `0` for `Always`.
    pub fn tau(&self) -> Option<f64> {
        match *self {
            Self::Never => Some(f64::INFINITY),
            Self::Always => Some(0.0),
            Self::Symmetric { tau } => Some(tau),
            Self::Interval { lo, hi } if lo == -hi => Some(hi),
            _ => None,
        }
    }

    /// Unnormalised moments of `N(0, sigma2)` over the silent and the
    /// transmit regions of this rule.
    pub fn region_moments(&self, sigma2: f64) -> (PartialMoments, PartialMoments) {
        let full = PartialMoments::on(sigma2, f64::NEG_INFINITY, f64::INFINITY);
        match *self {
            Self::Never => (full, PartialMoments::default()),
            Self::Always => (PartialMoments::default(), full),
            Self::Symmetric { tau } => (
                PartialMoments::on(sigma2, -tau, tau),
                PartialMoments::outside(sigma2, -tau, tau),
            ),
            Self::Interval { lo, hi } => (
                PartialMoments::on(sigma2, lo, hi),
                PartialMoments::outside(sigma2, lo, hi),
            ),
            Self::Gridded { ref grid, ref transmit } => {
                let d = grid.spacing();
                let mut silent = PartialMoments::default();
                let mut attempted = PartialMoments::default();
                for (i, &t) in transmit.iter().enumerate() {
                    let x = grid.point(i);
                    let lo = if i == 0 { f64::NEG_INFINITY } else { x - d / 2.0 };
                    let hi = if i + 1 == transmit.len() { f64::INFINITY } else { x + d / 2.0 };
                    let cell = PartialMoments::on(sigma2, lo, hi);
                    if t {
                        attempted = attempted + cell;
                    } else {
                        silent = silent + cell;
                    }
                }
                (silent, attempted)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RuleKind {
    Never,
    Always,
    SymmetricThreshold,
    IntervalPair,
    Gridded,
}

impl fmt::Display for RuleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Never => "never",
            Self::Always => "always",
            Self::SymmetricThreshold => "symmetric_threshold",
            Self::IntervalPair => "interval_pair",
            Self::Gridded => "gridded",
        })
    }
}

impl FromStr for RuleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "never" => Self::Never,
            "always" => Self::Always,
            "symmetric_threshold" => Self::SymmetricThreshold,
            "interval_pair" => Self::IntervalPair,
            "gridded" => Self::Gridded,
            other => return Err(Error::PolicyFormat(format!("unknown rule kind {other:?}"))),
        })
    }
}

/// Stage bookkeeping a policy was synthesised for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Timing {
    /// Error-recursion stages: stage 1 starts from the known initial error and
    /// each stage feeds `a e + w` to the next; the stage after the last
    /// controlled one is charged without a decision.
    Recursive,
    /// Independent white-noise stages with conditional-mean estimates.
    Memoryless,
}

impl fmt::Display for Timing {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Recursive => "recursive",
            Self::Memoryless => "memoryless",
        })
    }
}

impl FromStr for Timing {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "recursive" => Ok(Self::Recursive),
            "memoryless" => Ok(Self::Memoryless),
            other => Err(Error::PolicyFormat(format!("unknown timing {other:?}"))),
        }
    }
}

/// Per-(stage, channel state) decision rules. Stages are numbered from 1;
/// asking about a stage past the last stored one yields silence.
#[derive(Debug, Clone, PartialEq)]
pub struct TransmitPolicy {
    timing: Timing,
    rules: Vec<Vec<StageRule>>,
}

impl TransmitPolicy {
    /// Builds a policy, forcing `Never` at states where the channel forbids
    /// transmission.
    pub fn for_channel(fsm: &ChannelFsm, timing: Timing, mut rules: Vec<Vec<StageRule>>) -> Result<Self> {
        for stage in &mut rules {
            if stage.len() != fsm.num_states() {
                return Err(Error::PolicyMismatch {
                    policy: stage.len(),
                    channel: fsm.num_states(),
                });
            }
            for (q, rule) in stage.iter_mut().enumerate() {
                if !fsm.transmit_allowed(q) {
                    *rule = StageRule::Never;
                }
            }
        }
        Ok(Self { timing, rules })
    }

    /// The same rule at every state for `stages` stages.
    pub fn uniform(fsm: &ChannelFsm, timing: Timing, stages: usize, rule: StageRule) -> Self {
        let rules = vec![vec![rule; fsm.num_states()]; stages];
        Self::for_channel(fsm, timing, rules).expect("sized from the channel")
    }

    pub fn timing(&self) -> Timing {
        self.timing
    }

    pub fn stages(&self) -> usize {
        self.rules.len()
    }

    pub fn num_states(&self) -> usize {
        self.rules.first().map_or(0, Vec::len)
    }

    pub fn rule(&self, n: usize, q: usize) -> Option<&StageRule> {
        self.rules.get(n.checked_sub(1)?)?.get(q)
    }

    pub fn rules(&self) -> &[Vec<StageRule>] {
        &self.rules
    }

    /// Transmit decision at stage `n` (from 1), channel state `q`, error `e`.
    pub fn decide(&self, n: usize, q: usize, e: f64) -> bool {
        self.rule(n, q).is_some_and(|r| r.transmits(e))
    }

    /// Whether every rule is invariant under `e -> -e`.
    pub fn is_symmetric(&self) -> bool {
        self.rules.iter().flatten().all(StageRule::is_symmetric)
    }
}

/// Outcome of reading a threshold rule off a transmit indicator.
#[derive(Debug, Clone, PartialEq)]
pub enum Extraction {
    Threshold(StageRule),
    /// The silent set is an interval but not centred (symmetric request only).
    Asymmetric { lo: f64, hi: f64 },
    /// `e1 < e2 < e3` with silence at `e1`, `e3` and transmission at `e2`.
    NotThreshold { witness: (f64, f64, f64) },
}

impl Extraction {
    pub fn rule(&self) -> Option<&StageRule> {
        match self {
            Self::Threshold(rule) => Some(rule),
            _ => None,
        }
    }
}

/// Recovers a threshold rule from a transmit indicator sampled on `grid`.
///
/// Boundaries are placed halfway between neighbouring grid points; a silent
/// run touching the grid edge is taken as unbounded. With `symmetric`, the
/// silent run must be centred on zero to within one grid spacing.
pub fn extract_threshold(grid: &ErrorGrid, transmit: &[bool], symmetric: bool) -> Extraction {
    assert_eq!(transmit.len(), grid.num_points(), "indicator does not match grid");
    let n = transmit.len();
    let Some(first) = transmit.iter().position(|&t| !t) else {
        return Extraction::Threshold(StageRule::Always);
    };
    let last = transmit.iter().rposition(|&t| !t).expect("has a silent point");
    if let Some(j) = (first..=last).find(|&j| transmit[j]) {
        return Extraction::NotThreshold {
            witness: (grid.point(first), grid.point(j), grid.point(last)),
        };
    }
    if first == 0 && last == n - 1 {
        return Extraction::Threshold(StageRule::Never);
    }
    let d = grid.spacing();
    let lo = if first == 0 { f64::NEG_INFINITY } else { grid.point(first) - d / 2.0 };
    let hi = if last == n - 1 { f64::INFINITY } else { grid.point(last) + d / 2.0 };
    if !symmetric {
        return Extraction::Threshold(StageRule::Interval { lo, hi });
    }
    let c = grid.center() as i64;
    let offset = first as i64 + last as i64 - 2 * c;
    if lo.is_infinite() || hi.is_infinite() || offset.abs() > 1 {
        return Extraction::Asymmetric { lo, hi };
    }
    Extraction::Threshold(StageRule::Symmetric { tau: (hi - lo) / 2.0 })
}

/// One row of the threshold policy CSV.
#[derive(Debug, Clone, PartialEq)]
struct PolicyRow {
    n: usize,
    q: usize,
    kind: RuleKind,
    tau_lo: f64,
    tau_hi: f64,
}

/// Header line carrying provenance and shape; rows follow.
fn header_line(policy: &TransmitPolicy, provenance: &str) -> String {
    format!(
        "# provenance={provenance} timing={} stages={} states={}",
        policy.timing(),
        policy.stages(),
        policy.num_states()
    )
}

/// Writes the threshold table `(n, q, kind, tau_lo, tau_hi)` and, for any
/// gridded rules, the per-grid-point table `(n, q, e, transmit)`.
pub fn write_policy_csv<W: Write, G: Write>(
    policy: &TransmitPolicy,
    provenance: &str,
    main: W,
    mut gridded: Option<G>,
) -> Result<()> {
    let mut main = main;
    writeln!(main, "{}", header_line(policy, provenance))?;
    let mut w = csv::Writer::from_writer(main);
    w.write_record(["n", "q", "kind", "tau_lo", "tau_hi"])?;
    let mut gw = match gridded.as_mut() {
        Some(g) => {
            writeln!(g, "{}", header_line(policy, provenance))?;
            let mut gw = csv::Writer::from_writer(g);
            gw.write_record(["n", "q", "e", "transmit"])?;
            Some(gw)
        }
        None => None,
    };
    for (stage, rules) in policy.rules().iter().enumerate() {
        let n = stage + 1;
        for (q, rule) in rules.iter().enumerate() {
            let (lo, hi) = rule.silent_interval().unwrap_or((f64::NAN, f64::NAN));
            w.write_record([
                n.to_string(),
                q.to_string(),
                rule.kind().to_string(),
                lo.to_string(),
                hi.to_string(),
            ])?;
            if let StageRule::Gridded { grid, transmit } = rule {
                let gw = gw.as_mut().ok_or_else(|| {
                    Error::PolicyFormat("gridded rule needs a grid output".into())
                })?;
                for (i, &t) in transmit.iter().enumerate() {
                    gw.write_record([
                        n.to_string(),
                        q.to_string(),
                        grid.point(i).to_string(),
                        u8::from(t).to_string(),
                    ])?;
                }
            }
        }
    }
    w.flush()?;
    if let Some(mut gw) = gw {
        gw.flush()?;
    }
    Ok(())
}

/// Provenance and shape read back from a policy file header.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyHeader {
    pub provenance: String,
    pub timing: Timing,
    pub stages: usize,
    pub states: usize,
}

fn parse_header(line: &str) -> Result<PolicyHeader> {
    let body = line
        .strip_prefix('#')
        .ok_or_else(|| Error::PolicyFormat("missing header comment".into()))?;
    let mut provenance = None;
    let mut timing = None;
    let mut stages = None;
    let mut states = None;
    for token in body.split_whitespace() {
        let (key, value) = token
            .split_once('=')
            .ok_or_else(|| Error::PolicyFormat(format!("bad header token {token:?}")))?;
        let bad = |_| Error::PolicyFormat(format!("bad header value {token:?}"));
        match key {
            "provenance" => provenance = Some(value.to_string()),
            "timing" => timing = Some(value.parse()?),
            "stages" => stages = Some(value.parse().map_err(bad)?),
            "states" => states = Some(value.parse().map_err(bad)?),
            _ => {}
        }
    }
    let missing = |k: &str| Error::PolicyFormat(format!("header lacks {k}"));
    Ok(PolicyHeader {
        provenance: provenance.ok_or_else(|| missing("provenance"))?,
        timing: timing.ok_or_else(|| missing("timing"))?,
        stages: stages.ok_or_else(|| missing("stages"))?,
        states: states.ok_or_else(|| missing("states"))?,
    })
}

fn split_header<R: Read>(reader: R) -> Result<(PolicyHeader, BufReader<R>)> {
    let mut reader = BufReader::new(reader);
    let mut line = String::new();
    reader.read_line(&mut line)?;
    Ok((parse_header(line.trim_end())?, reader))
}

fn field<T: FromStr>(record: &csv::StringRecord, i: usize) -> Result<T> {
    let raw = record
        .get(i)
        .ok_or_else(|| Error::PolicyFormat(format!("row {record:?} has too few fields")))?;
    raw.parse()
        .map_err(|_| Error::PolicyFormat(format!("cannot parse {raw:?} in row {record:?}")))
}

/// Reads a policy written by [`write_policy_csv`].
pub fn read_policy_csv<R: Read, G: Read>(main: R, gridded: Option<G>) -> Result<(PolicyHeader, TransmitPolicy)> {
    let (header, reader) = split_header(main)?;
    let mut rules = vec![vec![StageRule::Never; header.states]; header.stages];
    let mut seen = vec![vec![false; header.states]; header.stages];
    let mut wants_grid = Vec::new();
    for record in csv::Reader::from_reader(reader).records() {
        let record = record?;
        let row = PolicyRow {
            n: field(&record, 0)?,
            q: field(&record, 1)?,
            kind: field(&record, 2)?,
            tau_lo: field(&record, 3)?,
            tau_hi: field(&record, 4)?,
        };
        if row.n == 0 || row.n > header.stages || row.q >= header.states {
            return Err(Error::PolicyFormat(format!("row ({}, {}) out of range", row.n, row.q)));
        }
        let rule = match row.kind {
            RuleKind::Never => StageRule::Never,
            RuleKind::Always => StageRule::Always,
            RuleKind::SymmetricThreshold => StageRule::Symmetric { tau: row.tau_hi },
            RuleKind::IntervalPair => StageRule::Interval { lo: row.tau_lo, hi: row.tau_hi },
            RuleKind::Gridded => {
                wants_grid.push((row.n, row.q));
                StageRule::Never
            }
        };
        rules[row.n - 1][row.q] = rule;
        seen[row.n - 1][row.q] = true;
    }
    if seen.iter().flatten().any(|s| !s) {
        return Err(Error::PolicyFormat("policy table is missing (stage, state) rows".into()));
    }
    if !wants_grid.is_empty() {
        let g = gridded.ok_or_else(|| Error::PolicyFormat("gridded rules need the grid table".into()))?;
        let (_, reader) = split_header(g)?;
        let mut points: Vec<Vec<Vec<(f64, bool)>>> = vec![vec![Vec::new(); header.states]; header.stages];
        for record in csv::Reader::from_reader(reader).records() {
            let record = record?;
            let n: usize = field(&record, 0)?;
            let q: usize = field(&record, 1)?;
            let e: f64 = field(&record, 2)?;
            let t: u8 = field(&record, 3)?;
            if n == 0 || n > header.stages || q >= header.states {
                return Err(Error::PolicyFormat(format!("grid row ({n}, {q}) out of range")));
            }
            points[n - 1][q].push((e, t != 0));
        }
        for (n, q) in wants_grid {
            let pts = &points[n - 1][q];
            let (first, last) = match (pts.first(), pts.last()) {
                (Some(f), Some(l)) => (f.0, l.0),
                _ => return Err(Error::PolicyFormat(format!("no grid rows for ({n}, {q})"))),
            };
            if first != -last {
                return Err(Error::PolicyFormat(format!("grid for ({n}, {q}) is not symmetric")));
            }
            let grid = ErrorGrid::new(last, pts.len())?;
            rules[n - 1][q] = StageRule::Gridded {
                grid,
                transmit: pts.iter().map(|p| p.1).collect(),
            };
        }
    }
    let policy = TransmitPolicy { timing: header.timing, rules };
    Ok((header, policy))
}
