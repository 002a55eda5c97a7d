use std::io::{self, Write};

use serde::{Deserialize, Serialize};

/// What happened on the channel in one slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelOutcome {
    Idle,
    PrimarySuccess,
    SecondarySuccess { user: usize },
    Collision,
}

impl ChannelOutcome {
    pub fn label(&self) -> &'static str {
        match self {
            ChannelOutcome::Idle => "idle",
            ChannelOutcome::PrimarySuccess => "primary_success",
            ChannelOutcome::SecondarySuccess { .. } => "secondary_success",
            ChannelOutcome::Collision => "collision",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotRecord {
    pub slot: u64,
    /// Primary state `y_p`: true when it has a packet.
    pub primary_on: bool,
    pub secondary_transmitters: u32,
    pub outcome: ChannelOutcome,
}

impl SlotRecord {
    /// Transmitters including the primary.
    pub fn transmitters(&self) -> u32 {
        self.secondary_transmitters + u32::from(self.primary_on)
    }
}

pub const TRACE_HEADER: &str = "slot,y_p,transmitters,outcome";

/// Streams slot records as CSV with `TRACE_HEADER` columns.
pub struct TraceWriter<W: Write> {
    out: W,
}

impl<W: Write> TraceWriter<W> {
    pub fn new(mut out: W) -> io::Result<Self> {
        writeln!(out, "{TRACE_HEADER}")?;
        Ok(Self { out })
    }

    pub fn write(&mut self, rec: &SlotRecord) -> io::Result<()> {
        writeln!(
            self.out,
            "{},{},{},{}",
            rec.slot,
            if rec.primary_on { "on" } else { "off" },
            rec.transmitters(),
            rec.outcome.label()
        )
    }

    pub fn finish(mut self) -> io::Result<W> {
        self.out.flush()?;
        Ok(self.out)
    }
}

/// Structural properties of a slot trace.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TraceCheck {
    pub slots: u64,
    pub off_periods: u64,
    /// Slots right after a primary success in which a secondary transmitted.
    pub non_intrusion_violations: u64,
    /// Off periods opening with anything but an idle slot.
    pub off_periods_not_idle: u64,
    /// Slots whose outcome is inconsistent with the transmitter count.
    pub inconsistent_slots: u64,
}

impl TraceCheck {
    pub fn is_clean(&self) -> bool {
        self.non_intrusion_violations == 0 && self.off_periods_not_idle == 0 && self.inconsistent_slots == 0
    }
}

pub fn check_trace<'a>(records: impl IntoIterator<Item = &'a SlotRecord>) -> TraceCheck {
    let mut check = TraceCheck::default();
    let mut prev: Option<&SlotRecord> = None;
    for rec in records {
        check.slots += 1;
        let consistent = match rec.outcome {
            ChannelOutcome::Idle => rec.transmitters() == 0,
            ChannelOutcome::PrimarySuccess => rec.primary_on && rec.secondary_transmitters == 0,
            ChannelOutcome::SecondarySuccess { .. } => !rec.primary_on && rec.secondary_transmitters == 1,
            ChannelOutcome::Collision => rec.transmitters() >= 2,
        };
        if !consistent {
            check.inconsistent_slots += 1;
        }
        if let Some(p) = prev {
            if p.outcome == ChannelOutcome::PrimarySuccess && rec.secondary_transmitters > 0 {
                check.non_intrusion_violations += 1;
            }
            if p.primary_on && !rec.primary_on {
                check.off_periods += 1;
                if rec.outcome != ChannelOutcome::Idle {
                    check.off_periods_not_idle += 1;
                }
            }
        }
        prev = Some(rec);
    }
    check
}
