use std::io::{BufRead, Read, Write};

use super::{BoundaryKind, EdgeRule, Mesh};
use crate::error::{AfemError, Result};

const TEXT_HEADER: &str = "afemkit-mesh v1";
const BINARY_MAGIC: &[u8; 8] = b"AFKMESH1";

fn marker_code(b: Option<BoundaryKind>) -> u8 {
    match b {
        None => 0,
        Some(BoundaryKind::Dirichlet) => 1,
        Some(BoundaryKind::Neumann) => 2,
    }
}

fn marker_kind(code: u64) -> Result<Option<BoundaryKind>> {
    match code {
        0 => Ok(None),
        1 => Ok(Some(BoundaryKind::Dirichlet)),
        2 => Ok(Some(BoundaryKind::Neumann)),
        c => Err(AfemError::Parse(format!("unknown boundary marker {c}"))),
    }
}

/// Compact vertex numbering plus per-triangle markers (edge opposite local vertex i).
fn flatten(mesh: &Mesh) -> (Vec<[f64; 2]>, Vec<([usize; 3], [u8; 3])>) {
    let mut local = vec![usize::MAX; mesh.global_vertex_count()];
    let pts: Vec<[f64; 2]> = mesh
        .vertices()
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            local[v as usize] = i;
            mesh.point(v)
        })
        .collect();
    let tris = (0..mesh.n_elements())
        .map(|t| {
            let v = mesh.triangle(t).v.map(|x| local[x as usize]);
            let e = mesh.triangle_edges(t);
            (v, e.map(|e| marker_code(mesh.edge_boundary(e))))
        })
        .collect();
    (pts, tris)
}

fn unflatten(pts: &[[f64; 2]], tris: &[([usize; 3], [u8; 3])]) -> Result<Mesh> {
    let mut boundary = Vec::new();
    let mut cells = Vec::with_capacity(tris.len());
    for (v, marks) in tris {
        for i in 0..3 {
            if let Some(k) = marker_kind(marks[i] as u64)? {
                boundary.push(([v[(i + 1) % 3], v[(i + 2) % 3]], k));
            }
        }
        cells.push(*v);
    }
    Mesh::initial(pts, &cells, &boundary, EdgeRule::AsGiven)
}

/// Writes the plain-text mesh format. Vertex order in each triangle keeps the
/// refinement edge, so reading the file back reproduces the same bisection tree.
pub fn write_text<W: Write>(mesh: &Mesh, mut w: W) -> Result<()> {
    let (pts, tris) = flatten(mesh);
    writeln!(w, "{TEXT_HEADER}")?;
    writeln!(w, "{}", pts.len())?;
    for p in &pts {
        writeln!(w, "{:?} {:?}", p[0], p[1])?;
    }
    writeln!(w, "{}", tris.len())?;
    for (v, m) in &tris {
        writeln!(w, "{} {} {} {} {} {}", v[0], v[1], v[2], m[0], m[1], m[2])?;
    }
    Ok(())
}

pub fn read_text<R: BufRead>(r: R) -> Result<Mesh> {
    let mut lines = r
        .lines()
        .map(|l| l.map_err(AfemError::from))
        .filter(|l| !matches!(l, Ok(s) if s.trim().is_empty() || s.trim_start().starts_with('#')));
    let mut next = |what: &str| -> Result<String> {
        lines.next().unwrap_or_else(|| {
            Err(AfemError::Parse(format!(
                "unexpected end of file, expected {what}"
            )))
        })
    };
    let header = next("header")?;
    if header.trim() != TEXT_HEADER {
        return Err(AfemError::Parse(format!("bad header {header:?}")));
    }
    let count = |s: String| -> Result<usize> {
        s.trim()
            .parse()
            .map_err(|_| AfemError::Parse(format!("bad count {s:?}")))
    };
    let nv = count(next("vertex count")?)?;
    let mut pts = Vec::with_capacity(nv);
    for i in 0..nv {
        let line = next("vertex")?;
        let xs: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| AfemError::Parse(format!("bad vertex line {i}: {line:?}")))?;
        if xs.len() != 2 {
            return Err(AfemError::Parse(format!(
                "vertex line {i} needs two coordinates"
            )));
        }
        pts.push([xs[0], xs[1]]);
    }
    let nt = count(next("triangle count")?)?;
    let mut tris = Vec::with_capacity(nt);
    for i in 0..nt {
        let line = next("triangle")?;
        let xs: Vec<u64> = line
            .split_whitespace()
            .map(|t| t.parse::<u64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| AfemError::Parse(format!("bad triangle line {i}: {line:?}")))?;
        let (v, m) = match xs.len() {
            3 => ([xs[0], xs[1], xs[2]], [0, 0, 0]),
            6 => ([xs[0], xs[1], xs[2]], [xs[3], xs[4], xs[5]]),
            _ => {
                return Err(AfemError::Parse(format!(
                    "triangle line {i} needs 3 or 6 fields"
                )))
            }
        };
        for c in m {
            marker_kind(c)?;
        }
        tris.push((v.map(|x| x as usize), m.map(|x| x as u8)));
    }
    unflatten(&pts, &tris)
}

/// Little-endian binary form of the text format.
pub fn write_binary<W: Write>(mesh: &Mesh, mut w: W) -> Result<()> {
    let (pts, tris) = flatten(mesh);
    w.write_all(BINARY_MAGIC)?;
    w.write_all(&(pts.len() as u64).to_le_bytes())?;
    for p in &pts {
        w.write_all(&p[0].to_le_bytes())?;
        w.write_all(&p[1].to_le_bytes())?;
    }
    w.write_all(&(tris.len() as u64).to_le_bytes())?;
    for (v, m) in &tris {
        for x in v {
            w.write_all(&(*x as u32).to_le_bytes())?;
        }
        w.write_all(m)?;
    }
    Ok(())
}

pub fn read_binary<R: Read>(mut r: R) -> Result<Mesh> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != BINARY_MAGIC {
        return Err(AfemError::Parse("not a binary afemkit mesh".into()));
    }
    let mut u64buf = [0u8; 8];
    r.read_exact(&mut u64buf)?;
    let nv = u64::from_le_bytes(u64buf) as usize;
    let mut pts = Vec::with_capacity(nv.min(1 << 24));
    for _ in 0..nv {
        let mut p = [0.0; 2];
        for c in &mut p {
            r.read_exact(&mut u64buf)?;
            *c = f64::from_le_bytes(u64buf);
        }
        pts.push(p);
    }
    r.read_exact(&mut u64buf)?;
    let nt = u64::from_le_bytes(u64buf) as usize;
    let mut tris = Vec::with_capacity(nt.min(1 << 24));
    for _ in 0..nt {
        let mut v = [0usize; 3];
        let mut b4 = [0u8; 4];
        for x in &mut v {
            r.read_exact(&mut b4)?;
            *x = u32::from_le_bytes(b4) as usize;
        }
        let mut m = [0u8; 3];
        r.read_exact(&mut m)?;
        tris.push((v, m));
    }
    unflatten(&pts, &tris)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::criss_cross;

    fn sample() -> Mesh {
        let (p, t) = criss_cross(0.0, 1.0, 0.0, 1.0, 2, 2);
        let m = Mesh::initial(
            &p,
            &t,
            &[([0, 1], BoundaryKind::Neumann)],
            EdgeRule::LongestEdge,
        )
        .unwrap();
        m.refine(&[0, 5]).unwrap()
    }

    #[test]
    fn text_round_trip() {
        let m = sample();
        let mut buf = Vec::new();
        write_text(&m, &mut buf).unwrap();
        let back = read_text(&buf[..]).unwrap();
        let mut again = Vec::new();
        write_text(&back, &mut again).unwrap();
        assert_eq!(buf, again);
        assert_eq!(back.n_elements(), m.n_elements());
        assert_eq!(
            back.boundary_edges()
                .filter(|e| e.1 == BoundaryKind::Neumann)
                .count(),
            m.boundary_edges()
                .filter(|e| e.1 == BoundaryKind::Neumann)
                .count()
        );
    }

    #[test]
    fn binary_round_trip() {
        let m = sample();
        let mut buf = Vec::new();
        write_binary(&m, &mut buf).unwrap();
        let back = read_binary(&buf[..]).unwrap();
        let (mut a, mut b) = (Vec::new(), Vec::new());
        write_text(&m, &mut a).unwrap();
        write_text(&back, &mut b).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_garbage() {
        assert!(matches!(
            read_text(&b"hello\n"[..]),
            Err(AfemError::Parse(_))
        ));
        assert!(read_binary(&b"AFKMESH0"[..]).is_err());
    }
}
