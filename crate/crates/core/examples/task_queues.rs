//! Walks master and slave task-queue entries through their life cycle,
//! including a parameter fault and an exception report.

use maco::isa::{Task, TransferDescriptor};
use maco::queues::{ExceptionType, MasterTaskQueue, SlaveTaskQueue};

fn main() {
    let mut mtq = MasterTaskQueue::new(4);
    let mut stq = SlaveTaskQueue::new(4);
    let task = Task::Transfer(TransferDescriptor::Init { dst: 0x1000, len: 4096 });
    let asid = 7;

    let ok = mtq.alloc(asid, false).unwrap();
    stq.receive(ok, asid, task);
    let bad = mtq.alloc(asid, true).unwrap();
    let failing = mtq.alloc(asid, false).unwrap();
    stq.receive(failing, asid, task);
    println!("after MA_CFG x3: {:?}", (0..4).map(|i| mtq.state(i)).collect::<Vec<_>>());

    for outcome in [ExceptionType::None, ExceptionType::PageFault] {
        let (maid, _, _) = stq.start_next().unwrap();
        mtq.mark_started(maid);
        println!("running MAID {maid}: {:?}", mtq.state(maid));
        stq.begin_report(maid);
        mtq.complete(maid, outcome);
        stq.finish_report(maid);
    }

    for maid in [ok, bad, failing] {
        let s = mtq.query(maid, asid, false);
        println!(
            "MA_READ {maid}: done {} exception {} type {:?}",
            s.done(),
            s.exception(),
            s.exception_type()
        );
    }

    // a done, clean entry is released by MA_STATE; exceptions need MA_CLEAR
    mtq.query(ok, asid, true);
    mtq.clear(bad);
    mtq.clear(failing);
    println!("after release: {:?}", (0..4).map(|i| mtq.state(i)).collect::<Vec<_>>());
    // the next owner's query of a reused entry reports it as gone
    let again = mtq.alloc(9, false).unwrap();
    println!("reallocated MAID {again}; old owner sees reuse: {}", mtq.query(again, asid, false).reuse());
}
