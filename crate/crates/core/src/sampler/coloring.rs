//! Proper edge coloring of bipartite multigraphs with `max degree` colors.

const FREE: u32 = u32::MAX;

/// Colors `edges` (left vertex, right vertex) with `colors` colors so that no
/// two edges sharing a vertex get the same color. Every vertex degree must
/// be at most `colors`.
pub(crate) fn color_bipartite(left: usize, right: usize, edges: &[(usize, usize)], colors: usize) -> Vec<usize> {
    let n = left + right;
    // at[v * colors + k] = edge with color k at vertex v.
    let mut at = vec![FREE; n * colors];
    let mut color = vec![usize::MAX; edges.len()];
    let ends = |e: usize| (edges[e].0, left + edges[e].1);
    let free_color = |at: &[u32], v: usize| {
        (0..colors)
            .find(|&k| at[v * colors + k] == FREE)
            .expect("vertex degree exceeds color count")
    };

    for e in 0..edges.len() {
        let (u, v) = ends(e);
        let alpha = free_color(&at, u);
        if at[v * colors + alpha] != FREE {
            let beta = free_color(&at, v);
            // Walk the alpha/beta alternating path from v and swap its colors.
            let mut path = Vec::new();
            let mut x = v;
            let mut want = alpha;
            loop {
                let f = at[x * colors + want];
                if f == FREE {
                    break;
                }
                let f = f as usize;
                path.push(f);
                let (a, b) = ends(f);
                x = if a == x { b } else { a };
                want = if want == alpha { beta } else { alpha };
            }
            for &f in &path {
                let (a, b) = ends(f);
                at[a * colors + color[f]] = FREE;
                at[b * colors + color[f]] = FREE;
            }
            for &f in &path {
                let (a, b) = ends(f);
                let k = if color[f] == alpha { beta } else { alpha };
                color[f] = k;
                at[a * colors + k] = f as u32;
                at[b * colors + k] = f as u32;
            }
        }
        color[e] = alpha;
        at[u * colors + alpha] = e as u32;
        at[v * colors + alpha] = e as u32;
    }
    color
}
