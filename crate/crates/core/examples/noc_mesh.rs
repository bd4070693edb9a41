//! X-then-Y routes on the 4x4 mesh, idle latency, and what contention on a
//! shared link does to delivery times.

use maco::noc::{hop_count, MessageClass, Mesh, NocConfig, NocMessage};

fn main() {
    let cfg = NocConfig::default();
    let mut mesh = Mesh::new(cfg);
    let (src, dst) = (mesh.coord(0), mesh.coord(14));
    println!("route {src:?} -> {dst:?}: {:?}", mesh.route_xy(src, dst).unwrap());

    let line = NocMessage { src, dst, bytes: 72, class: MessageClass::Response };
    let t = mesh.send(&line, 0);
    println!("one 72 B message over {} hops: {t} cycles", hop_count(src, dst));

    // eight nodes of row 0 and 1 all read from node 3
    let mut mesh = Mesh::new(cfg);
    let mut last = 0;
    for s in [0usize, 1, 2, 4, 5, 6, 7, 8] {
        let m = NocMessage { src: mesh.coord(3), dst: mesh.coord(s), bytes: 520, class: MessageClass::Response };
        last = last.max(mesh.send(&m, 0));
    }
    println!("8 granules out of node 3 at once: last delivered at cycle {last}");
    let inj = mesh.link_stats(3, maco::noc::Port::Inject);
    println!(
        "node 3 injection link: {} B in {} busy cycles ({:.1} B/cycle)",
        inj.bytes,
        inj.busy_cycles,
        inj.throughput()
    );
}
