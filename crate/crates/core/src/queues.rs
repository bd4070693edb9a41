//! Master (CPU-side) and slave (MMAE-side) task queues.
//!
//! Entry life cycle, as seen through the MTQ fields:
//!
//! ```text
//!  FREE --alloc--> PENDING --start--> RUNNING --report ok--> DONE_OK --MA_STATE/MA_CLEAR--> FREE
//!                     |                  \--report exc--> DONE_EXC --MA_CLEAR--> FREE
//!                     \--param fault--> DONE_EXC
//! ```

use std::collections::VecDeque;

use crate::isa::Task;

/// Value written to `Rd` when MA_CFG finds no free entry.
pub const ALLOC_FAILURE: u64 = u64::MAX;

pub const STATUS_DONE: u64 = 1;
pub const STATUS_EXCEPTION: u64 = 1 << 1;
pub const STATUS_TYPE_SHIFT: u32 = 4;
pub const STATUS_REUSE: u64 = 1 << 63;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, PartialOrd, Ord)]
pub enum ExceptionType {
    #[default]
    None = 0,
    ParamFault = 1,
    FloatingPoint = 2,
    PageFault = 3,
    DataAbort = 4,
}

impl ExceptionType {
    pub fn from_code(c: u64) -> Option<Self> {
        Some(match c {
            0 => ExceptionType::None,
            1 => ExceptionType::ParamFault,
            2 => ExceptionType::FloatingPoint,
            3 => ExceptionType::PageFault,
            4 => ExceptionType::DataAbort,
            _ => return None,
        })
    }
}

pub type Maid = usize;
pub type Asid = u16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct MtqEntry {
    pub valid: bool,
    pub done: bool,
    pub asid: Asid,
    pub exception_en: bool,
    pub exception_type: ExceptionType,
    /// The paired STQ entry has been activated.
    pub started: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EntryState {
    Free,
    Pending,
    Running,
    DoneOk,
    DoneExc,
}

impl MtqEntry {
    pub fn state(&self) -> EntryState {
        match (self.valid, self.done, self.exception_en, self.started) {
            (false, _, _, _) => EntryState::Free,
            (true, false, _, false) => EntryState::Pending,
            (true, false, _, true) => EntryState::Running,
            (true, true, false, _) => EntryState::DoneOk,
            (true, true, true, _) => EntryState::DoneExc,
        }
    }

    /// Field-level invariants that must hold in every reachable state.
    pub fn is_consistent(&self) -> bool {
        let free_ok = self.valid || (!self.done && !self.exception_en && !self.started);
        let exc_ok = !self.exception_en || self.done;
        let type_ok = (self.exception_type != ExceptionType::None) == self.exception_en;
        free_ok && exc_ok && type_ok
    }
}

/// Whether `from -> to` is one of the legal entry transitions.
pub fn legal_transition(from: EntryState, to: EntryState) -> bool {
    use EntryState::*;
    matches!(
        (from, to),
        (Free, Pending)
            | (Pending, Running)
            | (Pending, DoneExc)
            | (Running, DoneOk)
            | (Running, DoneExc)
            | (DoneOk, Free)
            | (DoneExc, Free)
    )
}

/// 64-bit status word returned by MA_READ / MA_STATE.
///
/// bit 0 = done, bit 1 = exception_en, bits 7:4 = exception type,
/// bit 63 = the entry no longer belongs to the caller.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StatusWord(pub u64);

impl StatusWord {
    pub fn from_entry(e: &MtqEntry) -> Self {
        let mut w = 0;
        if e.done {
            w |= STATUS_DONE;
        }
        if e.exception_en {
            w |= STATUS_EXCEPTION;
        }
        w |= (e.exception_type as u64) << STATUS_TYPE_SHIFT;
        StatusWord(w)
    }

    /// The caller's task finished and its entry was released (possibly reused).
    pub fn reused() -> Self {
        StatusWord(STATUS_REUSE | STATUS_DONE)
    }

    pub fn done(self) -> bool {
        self.0 & STATUS_DONE != 0
    }

    pub fn exception(self) -> bool {
        self.0 & STATUS_EXCEPTION != 0
    }

    pub fn exception_type(self) -> ExceptionType {
        ExceptionType::from_code((self.0 >> STATUS_TYPE_SHIFT) & 0xF).unwrap_or(ExceptionType::None)
    }

    pub fn reuse(self) -> bool {
        self.0 & STATUS_REUSE != 0
    }
}

/// Per-core master task queue.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MasterTaskQueue {
    entries: Vec<MtqEntry>,
}

impl MasterTaskQueue {
    pub fn new(depth: usize) -> Self {
        Self {
            entries: vec![MtqEntry::default(); depth],
        }
    }

    pub fn depth(&self) -> usize {
        self.entries.len()
    }

    pub fn entry(&self, maid: Maid) -> Option<&MtqEntry> {
        self.entries.get(maid)
    }

    pub fn entries(&self) -> &[MtqEntry] {
        &self.entries
    }

    pub fn state(&self, maid: Maid) -> EntryState {
        self.entries[maid].state()
    }

    /// Allocates the lowest-index free entry. A task that failed validation
    /// is recorded as finished with a `ParamFault` right away.
    pub fn alloc(&mut self, asid: Asid, param_fault: bool) -> Option<Maid> {
        let maid = self.entries.iter().position(|e| !e.valid)?;
        let e = &mut self.entries[maid];
        *e = MtqEntry {
            valid: true,
            asid,
            ..MtqEntry::default()
        };
        if param_fault {
            e.done = true;
            e.exception_en = true;
            e.exception_type = ExceptionType::ParamFault;
        }
        Some(maid)
    }

    pub fn mark_started(&mut self, maid: Maid) {
        let e = &mut self.entries[maid];
        debug_assert_eq!(e.state(), EntryState::Pending);
        e.started = true;
    }

    /// Applies a completion report from the paired STQ entry.
    pub fn complete(&mut self, maid: Maid, outcome: ExceptionType) {
        let e = &mut self.entries[maid];
        debug_assert_eq!(e.state(), EntryState::Running);
        e.done = true;
        e.exception_en = outcome != ExceptionType::None;
        e.exception_type = outcome;
    }

    /// MA_READ (`release = false`) and MA_STATE (`release = true`).
    pub fn query(&mut self, maid: Maid, caller: Asid, release: bool) -> StatusWord {
        let Some(e) = self.entries.get_mut(maid) else {
            return StatusWord::reused();
        };
        if !e.valid || e.asid != caller {
            return StatusWord::reused();
        }
        let status = StatusWord::from_entry(e);
        if release && e.state() == EntryState::DoneOk {
            *e = MtqEntry::default();
        }
        status
    }

    /// MA_CLEAR. Frees a finished entry and zeroes its exception fields.
    /// Entries whose task is still pending or running are left untouched,
    /// since the engine still owns the paired STQ entry.
    pub fn clear(&mut self, maid: Maid) {
        if let Some(e) = self.entries.get_mut(maid) {
            if matches!(e.state(), EntryState::DoneOk | EntryState::DoneExc) {
                *e = MtqEntry::default();
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum StqPhase {
    #[default]
    Idle,
    Buffered,
    Active,
    Reporting,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct StqEntry {
    pub phase: StqPhase,
    pub task: Option<Task>,
    pub asid: Asid,
}

/// Per-MMAE slave task queue; buffered entries start in FIFO order.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SlaveTaskQueue {
    entries: Vec<StqEntry>,
    fifo: VecDeque<Maid>,
    active: Option<Maid>,
}

impl SlaveTaskQueue {
    pub fn new(depth: usize) -> Self {
        Self {
            entries: vec![StqEntry::default(); depth],
            fifo: VecDeque::new(),
            active: None,
        }
    }

    pub fn entry(&self, maid: Maid) -> &StqEntry {
        &self.entries[maid]
    }

    pub fn active(&self) -> Option<Maid> {
        self.active
    }

    pub fn active_count(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.phase == StqPhase::Active)
            .count()
    }

    pub fn buffered(&self) -> usize {
        self.fifo.len()
    }

    /// Buffers the parameters sent for `maid`.
    pub fn receive(&mut self, maid: Maid, asid: Asid, task: Task) {
        let e = &mut self.entries[maid];
        debug_assert_eq!(e.phase, StqPhase::Idle, "STQ entry {maid} reused while busy");
        *e = StqEntry {
            phase: StqPhase::Buffered,
            task: Some(task),
            asid,
        };
        self.fifo.push_back(maid);
    }

    /// Activates the oldest buffered entry when nothing is active.
    pub fn start_next(&mut self) -> Option<(Maid, Task, Asid)> {
        if self.active.is_some() {
            return None;
        }
        let maid = self.fifo.pop_front()?;
        let e = &mut self.entries[maid];
        e.phase = StqPhase::Active;
        self.active = Some(maid);
        Some((maid, e.task.expect("buffered entry has a task"), e.asid))
    }

    /// The active task finished; its status is on the way to the MTQ.
    pub fn begin_report(&mut self, maid: Maid) {
        debug_assert_eq!(self.active, Some(maid));
        self.entries[maid].phase = StqPhase::Reporting;
        self.active = None;
    }

    /// The MTQ acknowledged the report; the entry can be reused.
    pub fn finish_report(&mut self, maid: Maid) {
        self.entries[maid] = StqEntry::default();
    }
}
