//! Random command traces on a miniature device, replayed from scratch by a
//! brute-force model that knows only the per-cell parameters. Shared by the
//! core property test and the acceptance harness.
#![allow(dead_code)]

use hbmlab_core::cell::Orientation;
use hbmlab_core::profile::{byte_word, DataPattern};
use hbmlab_core::timing::ps_to_ns;
use hbmlab_core::*;
use proptest::prelude::*;

pub const BITS: u32 = 256;
pub const BANK: BankId = BankId { channel: 0, pseudo_channel: 0, bank: 0 };

#[derive(Debug, Clone)]
pub enum Op {
    Hammer { row: u32, count: u32, t_on_ns: u64 },
    Read { row: u32 },
    Ref,
    Wait { us: u64 },
}

#[derive(Debug, Clone)]
pub struct Case {
    pub seed: u64,
    pub rows: u32,
    pub mapping: RowMapping,
    pub split: Option<u32>,
    pub median_ln: Option<f64>,
    pub retention_p: f64,
    pub trr: bool,
    pub trial: u64,
    pub fills: Vec<(u32, u8)>,
    pub ops: Vec<Op>,
}

const BYTES: [u8; 6] = [0x00, 0xFF, 0xAA, 0x55, 0x33, 0xCC];

fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        6 => (0u32..64, 1u32..80, prop::sample::select(vec![29u64, 36, 100, 1000, 3900, 35100]))
            .prop_map(|(row, count, t_on_ns)| Op::Hammer { row, count, t_on_ns }),
        2 => (0u32..64).prop_map(|row| Op::Read { row }),
        2 => Just(Op::Ref),
        1 => prop::sample::select(vec![1u64, 100, 10_000, 70_000, 200_000]).prop_map(|us| Op::Wait { us }),
    ]
}

pub fn case() -> impl Strategy<Value = Case> {
    (
        any::<u64>(),
        16u32..=64,
        0usize..3,
        any::<bool>(),
        prop::sample::select(vec![Some(40f64.ln()), Some(400f64.ln()), None]),
        prop::sample::select(vec![0.0, 1.63e-5, 0.01]),
        any::<bool>(),
        0u64..5,
        prop::collection::vec((0u32..64, 0usize..BYTES.len()), 0..24),
        prop::collection::vec(op(), 1..60),
    )
        .prop_map(|(seed, rows, m, split, median_ln, retention_p, trr, trial, fills, ops)| Case {
            seed,
            rows,
            mapping: [RowMapping::Identity, RowMapping::GroupSwap { group: 1 }, RowMapping::GroupSwap { group: 2 }][m],
            split: split.then_some(rows / 2 + 1),
            median_ln,
            retention_p,
            trr,
            trial,
            fills: fills.into_iter().map(|(r, b)| (r % rows, BYTES[b])).collect(),
            ops: ops
                .into_iter()
                .map(|o| match o {
                    Op::Hammer { row, count, t_on_ns } => Op::Hammer { row: row % rows, count, t_on_ns },
                    Op::Read { row } => Op::Read { row: row % rows },
                    o => o,
                })
                .collect(),
        })
}

pub fn config(c: &Case) -> DeviceConfig {
    let mut cfg = DeviceConfig::miniature(c.rows, BITS);
    cfg.seed = c.seed;
    cfg.mapping = c.mapping;
    cfg.layout = c.split.map(|s| SubarrayLayout::new(vec![s, c.rows - s]));
    if let Some(m) = c.median_ln {
        cfg.profile.hc_log_median = m;
    }
    cfg.profile.retention_geometric_p = c.retention_p;
    cfg.trr = if c.trr { TrrConfig { period: 3, ..TrrConfig::default() } } else { TrrConfig::disabled() };
    cfg
}

/// Legal explicit trace for the ops, starting at `t0`.
fn trace(cfg: &DeviceConfig, ops: &[Op], t0: u64) -> (Vec<Command>, u64) {
    let tp = &cfg.timing;
    let (rc, rp, rcd, ras, rfc) = (tp.rc_ps(), tp.rp_ps(), tp.rcd_ps(), tp.ras_ps(), tp.rfc_ps());
    let mut out = Vec::new();
    let mut t = t0;
    let (mut last_act, mut last_pre, mut busy) = (None::<u64>, None::<u64>, 0u64);
    let next_act = |t: u64, last_act: Option<u64>, last_pre: Option<u64>, busy: u64| {
        t.max(last_act.map_or(0, |a| a + rc)).max(last_pre.map_or(0, |p| p + rp)).max(busy)
    };
    for op in ops {
        match *op {
            Op::Hammer { row, count, t_on_ns } => {
                let t_on = (t_on_ns * 1000).max(ras);
                for _ in 0..count {
                    let a = next_act(t, last_act, last_pre, busy);
                    out.push(Command::act(a, BANK, row));
                    out.push(Command::pre(a + t_on, BANK, row));
                    (last_act, last_pre, t) = (Some(a), Some(a + t_on), a + t_on);
                }
            }
            Op::Read { row } => {
                let a = next_act(t, last_act, last_pre, busy);
                out.push(Command::act(a, BANK, row));
                out.push(Command::rd(a + rcd, BANK, row));
                out.push(Command::pre(a + ras, BANK, row));
                (last_act, last_pre, t) = (Some(a), Some(a + ras), a + ras);
            }
            Op::Ref => {
                let r = t.max(last_pre.map_or(0, |p| p + rp)).max(busy);
                out.push(Command::refresh(r, 0, 0));
                busy = r + rfc;
                t = r;
            }
            Op::Wait { us } => t += us * 1_000_000,
        }
    }
    (out, t)
}

struct Oracle {
    cfg: DeviceConfig,
    model: FaultModel,
    layout: SubarrayLayout,
    cells: Vec<Vec<CellFaultState>>,
    min_threshold: Vec<f64>,
    min_retention_ps: Vec<f64>,
    data: Vec<Vec<u64>>,
    tag: Vec<u8>,
    exposure: Vec<f64>,
    restored: Vec<u64>,
    ptr: u32,
    open: Option<(u32, u64)>,
}

impl Oracle {
    fn new(cfg: &DeviceConfig) -> Self {
        let n = cfg.geometry.rows_per_bank;
        let model = FaultModel::new(cfg.profile.clone(), cfg.geometry.clone(), cfg.layout(), cfg.mapping, cfg.seed).unwrap();
        let cells: Vec<Vec<CellFaultState>> =
            (0..n).map(|r| (0..BITS).map(|b| model.cell_at(BANK, r, b)).collect()).collect();
        let min_threshold = cells.iter().map(|c| c.iter().map(|x| x.hc_threshold).fold(f64::INFINITY, f64::min)).collect();
        let min_retention_ps = cells
            .iter()
            .map(|c| c.iter().map(|x| x.retention_time_ms * 1e9).fold(f64::INFINITY, f64::min))
            .collect();
        let words = (BITS / 64) as usize;
        Self {
            cfg: cfg.clone(),
            layout: cfg.layout(),
            model,
            cells,
            min_threshold,
            min_retention_ps,
            data: vec![vec![0; words]; n as usize],
            tag: vec![0; n as usize],
            exposure: vec![0.0; n as usize],
            restored: vec![0; n as usize],
            ptr: 0,
            open: None,
        }
    }

    fn phys(&self, row: u32) -> u32 {
        self.cfg.mapping.to_physical(row, self.cfg.geometry.rows_per_bank).unwrap()
    }

    fn neighbours(&self, p: u32, d: u32) -> Vec<u32> {
        let n = self.cfg.geometry.rows_per_bank;
        let sa = |r: u32| self.layout.subarray_of(r).unwrap().index;
        [p.checked_sub(d), p.checked_add(d)]
            .into_iter()
            .flatten()
            .filter(|&v| v < n && sa(v) == sa(p))
            .collect()
    }

    fn pattern(&self, p: u32) -> Option<DataPattern> {
        let v = self.tag[p as usize];
        let pat = DataPattern::from_victim_byte(v)?;
        self.neighbours(p, 1).iter().any(|&n| self.tag[n as usize] == !v).then_some(pat)
    }

    /// Bits of `p` that read back flipped at `t`.
    fn flips(&self, p: u32, t: u64, trial: u64) -> Vec<u64> {
        let i = p as usize;
        let mut out = vec![0u64; self.data[i].len()];
        let e = self.exposure[i];
        let eff = if e > 0.0 {
            e * self.model.coupling(BANK, p, self.pattern(p)) / self.model.jitter(BANK, p, trial)
        } else {
            0.0
        };
        let elapsed = t.saturating_sub(self.restored[i]) as f64;
        if eff < self.min_threshold[i] && self.min_retention_ps[i] >= elapsed {
            return out;
        }
        for (bit, c) in self.cells[i].iter().enumerate() {
            let stored = self.data[i][bit / 64] >> (bit % 64) & 1 == 1;
            let charged = stored == (c.orientation == Orientation::TrueCell);
            if charged && (eff >= c.hc_threshold || c.retention_time_ms * 1e9 < elapsed) {
                out[bit / 64] |= 1 << (bit % 64);
            }
        }
        out
    }

    fn read(&self, p: u32, t: u64, trial: u64) -> Vec<u64> {
        let f = self.flips(p, t, trial);
        self.data[p as usize].iter().zip(&f).map(|(d, m)| d ^ m).collect()
    }

    fn restore(&mut self, p: u32, t: u64, trial: u64) {
        self.data[p as usize] = self.read(p, t, trial);
        self.exposure[p as usize] = 0.0;
        self.restored[p as usize] = t;
    }

    fn disturb(&mut self, p: u32, m: f64) {
        for (d, &w) in self.cfg.profile.blast_weights.clone().iter().enumerate() {
            if w > 0.0 {
                for v in self.neighbours(p, d as u32 + 1) {
                    self.exposure[v as usize] += w * m;
                }
            }
        }
    }

    fn write(&mut self, row: u32, byte: u8, t: u64) {
        let p = self.phys(row);
        self.data[p as usize] = vec![byte_word(byte); (BITS / 64) as usize];
        self.tag[p as usize] = byte;
        self.exposure[p as usize] = 0.0;
        self.restored[p as usize] = t;
        self.disturb(p, 1.0);
    }
}

pub fn run(c: &Case) -> Result<(), TestCaseError> {
    let cfg = config(c);
    let mut dev = Device::new(cfg.clone()).unwrap();
    dev.set_trial(c.trial);
    let mut oracle = Oracle::new(&cfg);
    for &(row, byte) in &c.fills {
        dev.fill_row(BANK, row, byte).unwrap();
        let t = dev.bank_state(BANK).last_act_ps.unwrap();
        oracle.write(row, byte, t);
    }
    let (trace, t_end) = trace(&cfg, &c.ops, dev.now_ps() + 1_000_000);
    let n = cfg.geometry.rows_per_bank;
    let per_ref = cfg.timing.rows_per_ref(n);
    for cmd in &trace {
        let t = cmd.time_ps;
        // strict timing: an illegal generated command would fail here
        let events = dev.issue(*cmd).unwrap();
        match cmd.kind {
            CommandKind::Act => {
                let p = oracle.phys(cmd.row);
                oracle.restore(p, t, c.trial);
                oracle.open = Some((p, t));
            }
            CommandKind::Pre => {
                let (p, a) = oracle.open.take().unwrap();
                let t_on_ns = ps_to_ns((t - a).max(cfg.timing.ras_ps())).max(cfg.profile.taggon_anchors[0][0]);
                let m = cfg.profile.taggon_multiplier(t_on_ns).unwrap();
                oracle.disturb(p, m);
            }
            CommandKind::Rd => {
                let got = events.iter().find_map(|e| match e {
                    Event::Read { data, .. } => Some(data.clone()),
                    _ => None,
                });
                let want = oracle.read(oracle.phys(cmd.row), t, c.trial);
                prop_assert_eq!(got, Some(want), "read of row {} at {} ns", cmd.row, ps_to_ns(t));
            }
            CommandKind::Wr => {}
            CommandKind::Ref => {
                for i in 0..per_ref {
                    let r = (oracle.ptr + i) % n;
                    oracle.restore(r, t, c.trial);
                }
                oracle.ptr = (oracle.ptr + per_ref) % n;
                // which rows TRR picks is its own business; the accounting after it is not
                for e in &events {
                    if let Event::TrrRefresh { victims, .. } = e {
                        for &v in victims {
                            oracle.restore(v, t, c.trial);
                        }
                    }
                }
            }
        }
    }
    dev.wait_until(t_end);
    for row in 0..n {
        let p = oracle.phys(row);
        let want_e = oracle.exposure[p as usize];
        let got_e = dev.exposure(BANK, row).unwrap();
        prop_assert!((got_e - want_e).abs() <= 1e-9 * want_e.max(1.0), "exposure of row {row}: {got_e} vs {want_e}");
        prop_assert_eq!(dev.peek_row(BANK, row).unwrap(), oracle.read(p, t_end, c.trial), "row {} at end", row);
    }
    Ok(())
}
