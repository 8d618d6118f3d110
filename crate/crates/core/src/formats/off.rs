//! ASCII OFF meshes.

use crate::error::{Result, StmError};
use crate::projection::mesh::TriMesh;

#[derive(Debug, Clone)]
pub struct OffMesh {
    pub mesh: TriMesh,
    /// Polygons before triangulation.
    pub polygons: usize,
    /// Zero-area triangles removed after the fan split.
    pub dropped_degenerate: usize,
}

/// Non-empty lines with `#` comments stripped, tagged with 1-based line numbers.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.split('#').next().unwrap().trim()))
        .filter(|(_, l)| !l.is_empty())
}

fn number<T: std::str::FromStr>(tok: &str, line: usize, what: &str) -> Result<T> {
    tok.parse().map_err(|_| StmError::parse_line(line, format!("{what}: cannot parse {tok:?}")))
}

/// Parses ASCII OFF, including the `OFF<nv> <nf> <ne>` single-line header
/// found in some ModelNet files. Polygons are fan-triangulated.
pub fn parse_off(bytes: &[u8]) -> Result<OffMesh> {
    let text = std::str::from_utf8(bytes).map_err(|e| {
        let at = e.valid_up_to();
        let line = bytes[..at].iter().filter(|&&b| b == b'\n').count() + 1;
        StmError::parse_line(line, "OFF file is not valid UTF-8 text")
    })?;
    let mut lines = content_lines(text);
    let (hline, header) = lines.next().ok_or_else(|| StmError::parse_line(1, "empty OFF file"))?;
    let rest = header
        .strip_prefix("OFF")
        .ok_or_else(|| StmError::parse_line(hline, format!("expected OFF header, got {header:?}")))?;
    if rest.starts_with(|c: char| c.is_alphabetic()) {
        return Err(StmError::parse_line(hline, format!("unsupported OFF variant {header:?}")));
    }
    let (cline, counts) = if rest.trim().is_empty() {
        lines.next().ok_or_else(|| StmError::parse_line(hline + 1, "missing vertex/face counts"))?
    } else {
        (hline, rest.trim())
    };
    let toks: Vec<&str> = counts.split_whitespace().collect();
    if toks.len() != 3 {
        return Err(StmError::parse_line(cline, format!("expected 3 counts, got {counts:?}")));
    }
    let nv: usize = number(toks[0], cline, "vertex count")?;
    let nf: usize = number(toks[1], cline, "face count")?;
    let _: usize = number(toks[2], cline, "edge count")?;

    let mut vertices = Vec::with_capacity(nv.min(1 << 24));
    for k in 0..nv {
        let (ln, l) = lines
            .next()
            .ok_or_else(|| StmError::parse_line(text.lines().count(), format!("file ends after {k} of {nv} vertices")))?;
        let t: Vec<&str> = l.split_whitespace().collect();
        if t.len() != 3 {
            return Err(StmError::parse_line(ln, format!("vertex needs 3 coordinates, got {}", t.len())));
        }
        let p = [number(t[0], ln, "x")?, number(t[1], ln, "y")?, number(t[2], ln, "z")?];
        if p.iter().any(|c: &f64| !c.is_finite()) {
            return Err(StmError::parse_line(ln, "non-finite coordinate"));
        }
        vertices.push(p);
    }
    let mut faces = Vec::with_capacity(nf.min(1 << 24));
    for k in 0..nf {
        let (ln, l) = lines
            .next()
            .ok_or_else(|| StmError::parse_line(text.lines().count(), format!("file ends after {k} of {nf} faces")))?;
        let t: Vec<&str> = l.split_whitespace().collect();
        let n: usize = number(t[0], ln, "polygon size")?;
        if n < 3 {
            return Err(StmError::parse_line(ln, format!("polygon with {n} vertices")));
        }
        if t.len() < n + 1 {
            return Err(StmError::parse_line(ln, format!("polygon lists {} of {n} indices", t.len() - 1)));
        }
        let mut idx = Vec::with_capacity(n);
        for tok in &t[1..=n] {
            let i: u32 = number(tok, ln, "vertex index")?;
            if i as usize >= nv {
                return Err(StmError::parse_line(ln, format!("vertex index {i} out of range (nv = {nv})")));
            }
            idx.push(i);
        }
        // anything after the indices is an optional colour
        for tok in &t[n + 1..] {
            number::<f64>(tok, ln, "face colour")?;
        }
        for j in 1..n - 1 {
            faces.push([idx[0], idx[j], idx[j + 1]]);
        }
    }
    if let Some((ln, l)) = lines.next() {
        return Err(StmError::parse_line(ln, format!("trailing content after last face: {l:?}")));
    }
    let (mesh, dropped) = TriMesh::new(vertices, faces)?;
    Ok(OffMesh { mesh, polygons: nf, dropped_degenerate: dropped })
}

pub fn read_off(path: impl AsRef<std::path::Path>) -> Result<OffMesh> {
    parse_off(&std::fs::read(path)?)
}

/// Writes a triangle mesh as ASCII OFF.
pub fn write_off(w: &mut impl std::io::Write, mesh: &TriMesh) -> Result<()> {
    writeln!(w, "OFF")?;
    writeln!(w, "{} {} 0", mesh.vertices().len(), mesh.faces().len())?;
    for p in mesh.vertices() {
        writeln!(w, "{} {} {}", p[0], p[1], p[2])?;
    }
    for f in mesh.faces() {
        writeln!(w, "3 {} {} {}", f[0], f[1], f[2])?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Location;

    const TETRA: &str = "OFF\n4 4 6\n0 0 0\n1 0 0\n0 1 0\n0 0 1\n3 0 2 1\n3 0 1 3\n3 0 3 2\n3 1 2 3\n";

    fn line_of(e: StmError) -> usize {
        match e {
            StmError::Parse { at: Location::Line(l), .. } => l,
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn tetrahedron() {
        let m = parse_off(TETRA.as_bytes()).unwrap();
        assert_eq!(m.mesh.vertices().len(), 4);
        assert_eq!(m.mesh.faces().len(), 4);
        assert_eq!(m.dropped_degenerate, 0);
    }

    #[test]
    fn glued_header_matches_two_line_form() {
        let glued = TETRA.replacen("OFF\n4 4 6", "OFF4 4 6", 1);
        let a = parse_off(TETRA.as_bytes()).unwrap();
        let b = parse_off(glued.as_bytes()).unwrap();
        assert_eq!(a.mesh, b.mesh);
    }

    #[test]
    fn comments_and_colours() {
        let src = "# made by hand\nOFF\n3 1 0\n0 0 0 # origin\n1 0 0\n0 1 0\n\n3 0 1 2 255 0 0\n";
        assert_eq!(parse_off(src.as_bytes()).unwrap().mesh.faces().len(), 1);
    }

    #[test]
    fn errors_report_lines() {
        let bad_index = TETRA.replace("3 1 2 3", "3 1 2 9");
        assert_eq!(line_of(parse_off(bad_index.as_bytes()).unwrap_err()), 10);
        let bad_count = TETRA.replace("4 4 6", "4 x 6");
        assert_eq!(line_of(parse_off(bad_count.as_bytes()).unwrap_err()), 2);
        let short_vertex = TETRA.replace("1 0 0\n", "1 0\n");
        assert_eq!(line_of(parse_off(short_vertex.as_bytes()).unwrap_err()), 4);
        let trailing = format!("{TETRA}junk\n");
        assert_eq!(line_of(parse_off(trailing.as_bytes()).unwrap_err()), 11);
        assert!(parse_off(b"COFF\n").is_err());
        assert!(parse_off(b"").is_err());
        assert!(parse_off(&TETRA.as_bytes()[..40]).is_err());
    }

    #[test]
    fn degenerate_triangles_are_counted() {
        let src = "OFF\n4 2 0\n0 0 0\n1 0 0\n2 0 0\n0 1 0\n3 0 1 2\n3 0 1 3\n";
        let m = parse_off(src.as_bytes()).unwrap();
        assert_eq!(m.dropped_degenerate, 1);
        assert_eq!(m.mesh.faces().len(), 1);
    }
}
