//! Embedded bitmap font. Each symbol is drawn on a 5x7 grid and expanded
//! into a binary `GLYPH_W x GLYPH_H` bitmap with a fixed margin.

pub const GLYPH_W: usize = 24;
pub const GLYPH_H: usize = 32;

const CELL: usize = 4;
const MARGIN_X: usize = (GLYPH_W - 5 * CELL) / 2;
const MARGIN_Y: usize = (GLYPH_H - 7 * CELL) / 2;

#[rustfmt::skip]
const FONT: &[(char, [&str; 7])] = &[
    ('0', [".###.", "#...#", "#..##", "#.#.#", "##..#", "#...#", ".###."]),
    ('1', ["..#..", ".##..", "..#..", "..#..", "..#..", "..#..", ".###."]),
    ('2', [".###.", "#...#", "....#", "...#.", "..#..", ".#...", "#####"]),
    ('3', ["#####", "...#.", "..#..", "...#.", "....#", "#...#", ".###."]),
    ('4', ["...#.", "..##.", ".#.#.", "#..#.", "#####", "...#.", "...#."]),
    ('5', ["#####", "#....", "####.", "....#", "....#", "#...#", ".###."]),
    ('6', ["..##.", ".#...", "#....", "####.", "#...#", "#...#", ".###."]),
    ('7', ["#####", "....#", "...#.", "..#..", ".#...", ".#...", ".#..."]),
    ('8', [".###.", "#...#", "#...#", ".###.", "#...#", "#...#", ".###."]),
    ('9', [".###.", "#...#", "#...#", ".####", "....#", "...#.", ".##.."]),
    ('a', [".....", ".....", ".###.", "....#", ".####", "#...#", ".####"]),
    ('b', ["#....", "#....", "#.##.", "##..#", "#...#", "#...#", "####."]),
    ('c', [".....", ".....", ".###.", "#....", "#....", "#...#", ".###."]),
    ('d', ["....#", "....#", ".##.#", "#..##", "#...#", "#...#", ".####"]),
    ('e', [".....", ".....", ".###.", "#...#", "#####", "#....", ".###."]),
    ('f', ["..##.", ".#..#", ".#...", "###..", ".#...", ".#...", ".#..."]),
    ('g', [".....", ".####", "#...#", "#...#", ".####", "....#", ".###."]),
    ('h', ["#....", "#....", "#.##.", "##..#", "#...#", "#...#", "#...#"]),
    ('i', ["..#..", ".....", ".##..", "..#..", "..#..", "..#..", ".###."]),
    ('j', ["...#.", ".....", "..##.", "...#.", "...#.", "#..#.", ".##.."]),
    ('k', ["#....", "#....", "#..#.", "#.#..", "##...", "#.#..", "#..#."]),
    ('l', [".##..", "..#..", "..#..", "..#..", "..#..", "..#..", ".###."]),
    ('m', [".....", ".....", "##.#.", "#.#.#", "#.#.#", "#...#", "#...#"]),
    ('n', [".....", ".....", "#.##.", "##..#", "#...#", "#...#", "#...#"]),
    ('o', [".....", ".....", ".###.", "#...#", "#...#", "#...#", ".###."]),
    ('p', [".....", ".....", "####.", "#...#", "####.", "#....", "#...."]),
    ('q', [".....", ".....", ".##.#", "#..##", ".####", "....#", "....#"]),
    ('r', [".....", ".....", "#.##.", "##..#", "#....", "#....", "#...."]),
    ('s', [".....", ".....", ".###.", "#....", ".###.", "....#", "####."]),
    ('t', [".#...", ".#...", "###..", ".#...", ".#...", ".#..#", "..##."]),
    ('u', [".....", ".....", "#...#", "#...#", "#...#", "#..##", ".##.#"]),
    ('v', [".....", ".....", "#...#", "#...#", "#...#", ".#.#.", "..#.."]),
    ('w', [".....", ".....", "#...#", "#...#", "#.#.#", "#.#.#", ".#.#."]),
    ('x', [".....", ".....", "#...#", ".#.#.", "..#..", ".#.#.", "#...#"]),
    ('y', [".....", ".....", "#...#", "#...#", ".####", "....#", ".###."]),
    ('z', [".....", ".....", "#####", "...#.", "..#..", ".#...", "#####"]),
];

/// Binary glyph bitmap, row-major, `true` = ink.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Glyph {
    bits: Vec<bool>,
}

impl Glyph {
    fn from_rows(rows: &[&str; 7]) -> Self {
        let mut bits = vec![false; GLYPH_W * GLYPH_H];
        for (r, row) in rows.iter().enumerate() {
            for (c, ch) in row.chars().enumerate() {
                if ch != '#' {
                    continue;
                }
                for dy in 0..CELL {
                    for dx in 0..CELL {
                        let y = MARGIN_Y + r * CELL + dy;
                        let x = MARGIN_X + c * CELL + dx;
                        bits[y * GLYPH_W + x] = true;
                    }
                }
            }
        }
        Self { bits }
    }

    pub fn ink(&self, x: usize, y: usize) -> bool {
        self.bits[y * GLYPH_W + x]
    }

    pub fn ink_count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// Coverage at a continuous glyph coordinate; 0 outside the bitmap.
    pub fn sample_bilinear(&self, x: f64, y: f64) -> f64 {
        let x0 = x.floor();
        let y0 = y.floor();
        let fx = x - x0;
        let fy = y - y0;
        let at = |xi: f64, yi: f64| -> f64 {
            if xi < 0.0 || yi < 0.0 || xi >= GLYPH_W as f64 || yi >= GLYPH_H as f64 {
                0.0
            } else if self.ink(xi as usize, yi as usize) {
                1.0
            } else {
                0.0
            }
        };
        let top = at(x0, y0) * (1.0 - fx) + at(x0 + 1.0, y0) * fx;
        let bottom = at(x0, y0 + 1.0) * (1.0 - fx) + at(x0 + 1.0, y0 + 1.0) * fx;
        top * (1.0 - fy) + bottom * fy
    }
}

/// Lookup from symbol to bitmap.
#[derive(Debug, Clone)]
pub struct GlyphAtlas {
    glyphs: Vec<(char, Glyph)>,
}

impl GlyphAtlas {
    pub fn builtin() -> Self {
        Self {
            glyphs: FONT.iter().map(|(c, rows)| (*c, Glyph::from_rows(rows))).collect(),
        }
    }

    pub fn get(&self, c: char) -> Option<&Glyph> {
        self.glyphs.iter().find(|(s, _)| *s == c).map(|(_, g)| g)
    }

    pub fn symbols(&self) -> impl Iterator<Item = char> + '_ {
        self.glyphs.iter().map(|(c, _)| *c)
    }
}
