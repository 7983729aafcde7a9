//! 8-connected component labeling on binary grids.

use alloc::vec;
use alloc::vec::Vec;

use crate::Grid;

/// Connected regions of a binary grid.
#[derive(Debug, Clone)]
pub struct Components {
    /// Per-pixel region index (`0` = background, regions are `1..=count`).
    pub labels: Grid<u32>,
    /// Pixel area of region `i + 1`.
    pub areas: Vec<usize>,
}

impl Components {
    pub fn count(&self) -> usize {
        self.areas.len()
    }

    /// Mask of the largest region (lowest index on ties).
    pub fn largest(&self) -> Option<Grid<u8>> {
        let (best, _) = self
            .areas
            .iter()
            .enumerate()
            .fold((None, 0usize), |(bi, ba), (i, &a)| if a > ba { (Some(i), a) } else { (bi, ba) });
        let id = best? as u32 + 1;
        Some(self.labels.map(|&l| u8::from(l == id)))
    }
}

/// Labels 8-connected regions of nonzero cells, in raster order of their
/// first pixel.
pub fn label(mask: &Grid<u8>) -> Components {
    let (h, w) = mask.dims();
    let mut labels = Grid::filled(h, w, 0u32);
    let mut areas = Vec::new();
    let mut stack = Vec::new();
    for sy in 0..h {
        for sx in 0..w {
            if *mask.get(sy, sx) == 0 || *labels.get(sy, sx) != 0 {
                continue;
            }
            let id = areas.len() as u32 + 1;
            let mut area = 0usize;
            labels.set(sy, sx, id);
            stack.push((sy, sx));
            while let Some((y, x)) = stack.pop() {
                area += 1;
                for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        let ny = y as i64 + dy;
                        let nx = x as i64 + dx;
                        if ny < 0 || nx < 0 || ny >= h as i64 || nx >= w as i64 {
                            continue;
                        }
                        let (ny, nx) = (ny as usize, nx as usize);
                        if *mask.get(ny, nx) != 0 && *labels.get(ny, nx) == 0 {
                            labels.set(ny, nx, id);
                            stack.push((ny, nx));
                        }
                    }
                }
            }
            areas.push(area);
        }
    }
    Components { labels, areas }
}

/// Fills background holes: background cells not 4-connected to the border
/// become foreground.
pub fn fill_holes(mask: &Grid<u8>) -> Grid<u8> {
    let (h, w) = mask.dims();
    let mut outside = vec![false; h * w];
    let mut stack = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let border = y == 0 || x == 0 || y + 1 == h || x + 1 == w;
            if border && *mask.get(y, x) == 0 && !outside[y * w + x] {
                outside[y * w + x] = true;
                stack.push((y, x));
            }
        }
    }
    while let Some((y, x)) = stack.pop() {
        let neighbours = [
            (y.wrapping_sub(1), x),
            (y + 1, x),
            (y, x.wrapping_sub(1)),
            (y, x + 1),
        ];
        for (ny, nx) in neighbours {
            if ny < h && nx < w && *mask.get(ny, nx) == 0 && !outside[ny * w + nx] {
                outside[ny * w + nx] = true;
                stack.push((ny, nx));
            }
        }
    }
    Grid::from_fn(h, w, |y, x| u8::from(!outside[y * w + x]))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(rows: &[&str]) -> Grid<u8> {
        Grid::from_fn(rows.len(), rows[0].len(), |y, x| u8::from(rows[y].as_bytes()[x] == b'#'))
    }

    #[test]
    fn diagonal_pixels_are_connected() {
        let c = label(&grid(&["#..", ".#.", "..#"]));
        assert_eq!(c.count(), 1);
        assert_eq!(c.areas, vec![3]);
    }

    #[test]
    fn separate_regions() {
        let c = label(&grid(&["##..#", "##..#", ".....", "...##"]));
        assert_eq!(c.areas, vec![4, 2, 2]);
        assert_eq!(c.largest().unwrap().count_nonzero(), 4);
    }

    #[test]
    fn holes_are_filled() {
        let m = grid(&[".....", ".###.", ".#.#.", ".###.", "....."]);
        let f = fill_holes(&m);
        assert_eq!(*f.get(2, 2), 1);
        assert_eq!(*f.get(0, 0), 0);
        assert_eq!(f.count_nonzero(), 9);
    }
}
