//! Predicts the pages a tile transfer will touch, the sequence the
//! per-engine translation buffer walks ahead of the DMA.

use maco::translation::{predict_page_heads, TileAccessDescriptor};

fn main() {
    // one row of 1024 doubles starting at 0x10000 covers two 4 KB pages
    let row = TileAccessDescriptor {
        base: 0x10000,
        element_size: 8,
        cols: 1024,
        r0: 0,
        c0: 0,
        tr: 1,
        tc: 1024,
        page_size: 4096,
    };
    println!("one row: {:x?}", predict_page_heads(&row));

    // a 64x64 FP32 block out of a 1024-column matrix: each row sits on its own page
    let block = TileAccessDescriptor { element_size: 4, r0: 128, c0: 512, tr: 64, tc: 64, ..row };
    let heads = predict_page_heads(&block);
    println!("64x64 block at (128, 512): {} pages, first {:x?}", heads.len(), &heads[..4]);

    // larger pages collapse the sequence
    for page_size in [4096u64, 65536, 2 << 20] {
        let d = TileAccessDescriptor { page_size, ..block };
        println!("{:>8} B pages: {:>3} heads", page_size, predict_page_heads(&d).len());
    }
}
