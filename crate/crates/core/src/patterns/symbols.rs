//! Resolution-independent symbol bank shared by the symbol pattern generator
//! and the synthetic dataset.

type Shape = fn(f64, f64) -> bool;

fn centered(u: f64, v: f64) -> (f64, f64) {
    (u - 0.5, v - 0.5)
}

const BANK: [(&str, Shape); 12] = [
    ("cross", |u, v| {
        let (x, y) = centered(u, v);
        x.abs() < 0.125 || y.abs() < 0.125
    }),
    ("square", |u, v| {
        let (x, y) = centered(u, v);
        let d = x.abs().max(y.abs());
        (0.25..0.42).contains(&d)
    }),
    ("circle", |u, v| {
        let (x, y) = centered(u, v);
        let r = (x * x + y * y).sqrt();
        (0.22..0.4).contains(&r)
    }),
    ("triangle", |u, v| {
        let (x, _) = centered(u, v);
        v > 0.15 && v < 0.85 && x.abs() < (v - 0.15) * 0.6
    }),
    ("hbars", |_, v| ((v * 4.0).floor() as i64) % 2 == 0),
    ("vbars", |u, _| ((u * 4.0).floor() as i64) % 2 == 1),
    ("checker", |u, v| (((u * 4.0).floor() + (v * 4.0).floor()) as i64) % 2 == 0),
    ("saltire", |u, v| (u - v).abs() < 0.12 || (u + v - 1.0).abs() < 0.12),
    ("disc", |u, v| {
        let (x, y) = centered(u, v);
        x * x + y * y < 0.09
    }),
    ("frame", |u, v| {
        let (x, y) = centered(u, v);
        x.abs().max(y.abs()) > 0.38
    }),
    ("left", |u, v| u < 0.5 && v > 0.1 && v < 0.9),
    ("corners", |u, v| {
        let (x, y) = centered(u, v);
        x.abs() > 0.2 && y.abs() > 0.2
    }),
];

pub fn bank_size() -> usize {
    BANK.len()
}

pub fn symbol_name(index: usize) -> &'static str {
    BANK[index].0
}

/// Bank symbol `index` rasterized at pixel centres on a `side x side` grid.
pub fn render_symbol(index: usize, side: usize) -> Vec<u8> {
    let shape = BANK[index].1;
    let mut bits = Vec::with_capacity(side * side);
    for r in 0..side {
        let v = (r as f64 + 0.5) / side as f64;
        for c in 0..side {
            let u = (c as f64 + 0.5) / side as f64;
            bits.push(u8::from(shape(u, v)));
        }
    }
    bits
}
