//! Built-in 16x16 digit bitmaps.

pub const GLYPH_SIDE: usize = 16;

#[rustfmt::skip]
pub const DIGITS: [[&str; GLYPH_SIDE]; 10] = [
    [
        "................",
        ".....######.....",
        "....########....",
        "...###....###...",
        "...##......##...",
        "...##......##...",
        "...##......##...",
        "...##......##...",
        "...##......##...",
        "...##......##...",
        "...##......##...",
        "...##......##...",
        "...###....###...",
        "....########....",
        ".....######.....",
        "................",
    ],
    [
        "................",
        ".......##.......",
        "......###.......",
        ".....####.......",
        "....##.##.......",
        ".......##.......",
        ".......##.......",
        ".......##.......",
        ".......##.......",
        ".......##.......",
        ".......##.......",
        ".......##.......",
        ".......##.......",
        "....########....",
        "....########....",
        "................",
    ],
    [
        "................",
        ".....######.....",
        "....########....",
        "...##......##...",
        "...........##...",
        "...........##...",
        "..........###...",
        ".........###....",
        "........###.....",
        ".......###......",
        "......###.......",
        ".....###........",
        "....###.........",
        "...##########...",
        "...##########...",
        "................",
    ],
    [
        "................",
        "....########....",
        "...##########...",
        "...........##...",
        "...........##...",
        "...........##...",
        "......######....",
        "......######....",
        "...........##...",
        "...........##...",
        "...........##...",
        "...........##...",
        "...##......##...",
        "...##########...",
        "....########....",
        "................",
    ],
    [
        "................",
        "..........##....",
        ".........###....",
        "........####....",
        ".......##.##....",
        "......##..##....",
        ".....##...##....",
        "....##....##....",
        "...##.....##....",
        "...############.",
        "...############.",
        "..........##....",
        "..........##....",
        "..........##....",
        "..........##....",
        "................",
    ],
    [
        "................",
        "...##########...",
        "...##########...",
        "...##...........",
        "...##...........",
        "...##...........",
        "...#########....",
        "...##########...",
        "...........##...",
        "...........##...",
        "...........##...",
        "...........##...",
        "...##......##...",
        "...##########...",
        "....########....",
        "................",
    ],
    [
        "................",
        ".....#######....",
        "....########....",
        "...###..........",
        "...##...........",
        "...##...........",
        "...#########....",
        "...##########...",
        "...###....###...",
        "...##......##...",
        "...##......##...",
        "...##......##...",
        "...###....###...",
        "....########....",
        ".....######.....",
        "................",
    ],
    [
        "................",
        "...##########...",
        "...##########...",
        "...........##...",
        "..........###...",
        "..........##....",
        ".........###....",
        ".........##.....",
        "........###.....",
        "........##......",
        ".......###......",
        ".......##.......",
        ".......##.......",
        ".......##.......",
        ".......##.......",
        "................",
    ],
    [
        "................",
        ".....######.....",
        "....########....",
        "...##......##...",
        "...##......##...",
        "...##......##...",
        "....########....",
        "....########....",
        "...##......##...",
        "...##......##...",
        "...##......##...",
        "...##......##...",
        "...##......##...",
        "....########....",
        ".....######.....",
        "................",
    ],
    [
        "................",
        ".....######.....",
        "....########....",
        "...###....###...",
        "...##......##...",
        "...##......##...",
        "...###....###...",
        "....#########...",
        ".....########...",
        "...........##...",
        "...........##...",
        "...........##...",
        "..........###...",
        "....########....",
        "....#######.....",
        "................",
    ],
];

/// Digit `digit` resampled (nearest neighbour) to `side x side`.
pub fn render_digit(digit: usize, side: usize) -> Vec<u8> {
    let glyph = &DIGITS[digit];
    let mut bits = Vec::with_capacity(side * side);
    for r in 0..side {
        let sr = ((2 * r + 1) * GLYPH_SIDE) / (2 * side);
        let row = glyph[sr].as_bytes();
        for c in 0..side {
            let sc = ((2 * c + 1) * GLYPH_SIDE) / (2 * side);
            bits.push(u8::from(row[sc] == b'#'));
        }
    }
    bits
}
