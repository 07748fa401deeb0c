//! Wavefront OBJ subset: `v`, `vn` and `f` records. Other records are ignored.

use std::fmt::Write as _;
use std::path::Path;

use super::{MeshError, TriMesh};
use crate::geometry::Vec3;

pub fn load_obj(path: &Path) -> Result<TriMesh, MeshError> {
    let text = std::fs::read_to_string(path).map_err(|source| MeshError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_obj(&text, &path.display().to_string())
}

/// Resolves a 1-based (or negative, relative) OBJ index against `count`.
fn resolve_index(raw: i64, count: usize) -> Option<u32> {
    let idx = if raw > 0 {
        raw - 1
    } else if raw < 0 {
        count as i64 + raw
    } else {
        return None;
    };
    (idx >= 0 && (idx as usize) < count).then_some(idx as u32)
}

pub fn parse_obj(text: &str, source_name: &str) -> Result<TriMesh, MeshError> {
    let err = |line: usize, message: String| MeshError::Parse {
        path: source_name.to_string(),
        line,
        message,
    };
    let mut vertices: Vec<Vec3> = Vec::new();
    let mut normals: Vec<Vec3> = Vec::new();
    let mut triangles: Vec<[u32; 3]> = Vec::new();
    // per-corner normal index; used only when it agrees with the vertex index
    let mut normals_match = true;

    let parse_vec3 = |toks: &[&str], line: usize| -> Result<Vec3, MeshError> {
        if toks.len() < 3 {
            return Err(err(line, format!("expected 3 coordinates, got {}", toks.len())));
        }
        let mut v = [0.0f64; 3];
        for (k, t) in toks[..3].iter().enumerate() {
            v[k] = t
                .parse()
                .map_err(|_| err(line, format!("invalid coordinate '{t}'")))?;
        }
        Ok(Vec3::from(v))
    };

    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let mut toks = content.split_whitespace();
        let tag = toks.next().unwrap_or("");
        let rest: Vec<&str> = toks.collect();
        match tag {
            "v" => vertices.push(parse_vec3(&rest, line)?),
            "vn" => normals.push(parse_vec3(&rest, line)?),
            "f" => {
                if rest.len() < 3 {
                    return Err(err(line, format!("face needs at least 3 vertices, got {}", rest.len())));
                }
                let mut corners = Vec::with_capacity(rest.len());
                for tok in &rest {
                    let mut parts = tok.split('/');
                    let v_raw: i64 = parts
                        .next()
                        .unwrap_or("")
                        .parse()
                        .map_err(|_| err(line, format!("invalid face index '{tok}'")))?;
                    let v = resolve_index(v_raw, vertices.len()).ok_or_else(|| {
                        err(line, format!("vertex index {v_raw} out of range ({} defined)", vertices.len()))
                    })?;
                    let _texcoord = parts.next();
                    if let Some(n_tok) = parts.next().filter(|s| !s.is_empty()) {
                        let n_raw: i64 = n_tok
                            .parse()
                            .map_err(|_| err(line, format!("invalid normal index '{tok}'")))?;
                        let n = resolve_index(n_raw, normals.len()).ok_or_else(|| {
                            err(line, format!("normal index {n_raw} out of range ({} defined)", normals.len()))
                        })?;
                        normals_match &= n == v;
                    } else {
                        normals_match = false;
                    }
                    corners.push(v);
                }
                for k in 1..corners.len() - 1 {
                    triangles.push([corners[0], corners[k], corners[k + 1]]);
                }
            }
            _ => {}
        }
    }
    let normals = (normals_match && !triangles.is_empty() && normals.len() == vertices.len())
        .then_some(normals);
    Ok(TriMesh {
        vertices,
        triangles,
        normals,
    })
}

/// Shortest decimal that round-trips the value rounded to 9 significant digits.
fn fmt9(x: f64) -> String {
    let rounded: f64 = format!("{x:.8e}").parse().expect("float");
    format!("{rounded}")
}

pub fn write_obj(mesh: &TriMesh) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "# {} vertices, {} triangles",
        mesh.vertices.len(),
        mesh.triangles.len()
    );
    for v in &mesh.vertices {
        let _ = writeln!(out, "v {} {} {}", fmt9(v.x), fmt9(v.y), fmt9(v.z));
    }
    if let Some(normals) = &mesh.normals {
        for n in normals {
            let _ = writeln!(out, "vn {} {} {}", fmt9(n.x), fmt9(n.y), fmt9(n.z));
        }
        for t in &mesh.triangles {
            let [a, b, c] = t.map(|i| i + 1);
            let _ = writeln!(out, "f {a}//{a} {b}//{b} {c}//{c}");
        }
    } else {
        for t in &mesh.triangles {
            let [a, b, c] = t.map(|i| i + 1);
            let _ = writeln!(out, "f {a} {b} {c}");
        }
    }
    out
}

pub fn save_obj(mesh: &TriMesh, path: &Path) -> Result<(), MeshError> {
    mesh.validate()?;
    std::fs::write(path, write_obj(mesh)).map_err(|source| MeshError::Io {
        path: path.display().to_string(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tetra() -> TriMesh {
        TriMesh::new(
            vec![
                Vec3::new(0.0, 0.0, 0.0),
                Vec3::new(1.0, 0.0, 0.0),
                Vec3::new(0.0, 1.0, 0.0),
                Vec3::new(0.0, 0.0, 1.0),
            ],
            vec![[0, 2, 1], [0, 1, 3], [0, 3, 2], [1, 2, 3]],
        )
        .unwrap()
    }

    #[test]
    fn tetrahedron_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.obj");
        let m = tetra();
        save_obj(&m, &p).unwrap();
        let back = load_obj(&p).unwrap();
        assert_eq!(back.triangles, m.triangles);
        for (a, b) in back.vertices.iter().zip(m.vertices.iter()) {
            assert!((a - b).norm() < 1e-8);
        }
    }

    #[test]
    fn quad_is_fan_triangulated() {
        let m = parse_obj("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n", "q").unwrap();
        assert_eq!(m.vertices.len(), 4);
        assert_eq!(m.triangles, vec![[0, 1, 2], [0, 2, 3]]);
    }

    #[test]
    fn negative_indices_are_relative() {
        // per the OBJ convention -1 is the most recently defined vertex
        let text = "v 0 0 0\nv 1 0 0\nv 0 1 0\nf -3 -2 -1\nv 5 5 5\nf -4 -1 -2\n";
        let m = parse_obj(text, "n").unwrap();
        assert_eq!(m.triangles, vec![[0, 1, 2], [0, 3, 2]]);
    }

    #[test]
    fn slash_forms_and_normals() {
        let text = "# comment\no thing\nv 0 0 0\nv 1 0 0\nv 0 1 0\nvt 0 0\nvn 0 0 1\nvn 0 0 1\nvn 0 0 1\nf 1/1/1 2/1/2 3/1/3\n";
        let m = parse_obj(text, "s").unwrap();
        assert_eq!(m.triangles, vec![[0, 1, 2]]);
        assert_eq!(m.normals.as_ref().unwrap().len(), 3);
    }

    #[test]
    fn errors_carry_line_numbers() {
        match parse_obj("v 0 0 0\nv 1 x 0\n", "bad") {
            Err(MeshError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        match parse_obj("v 0 0 0\n\nf 1 2 3\n", "bad") {
            Err(MeshError::Parse { line, message, .. }) => {
                assert_eq!(line, 3);
                assert!(message.contains("out of range"));
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(parse_obj("v 0 0 0\nf 1 1\n", "bad").is_err());
    }

    proptest! {
        #[test]
        fn round_trip_precision(coords in prop::collection::vec(prop::array::uniform3(-10.0f64..10.0), 3..30)) {
            let n = coords.len() as u32;
            let vertices: Vec<Vec3> = coords.into_iter().map(Vec3::from).collect();
            let triangles = (0..n - 2).map(|i| [i, i + 1, i + 2]).collect();
            let m = TriMesh::new(vertices, triangles).unwrap();
            let back = parse_obj(&write_obj(&m), "p").unwrap();
            prop_assert_eq!(&back.triangles, &m.triangles);
            for (a, b) in back.vertices.iter().zip(m.vertices.iter()) {
                // 9 significant digits
                prop_assert!((a - b).amax() <= 5e-9 * b.amax().max(1.0));
            }
        }
    }
}
